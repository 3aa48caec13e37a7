"""Run configuration read from an INI file.

Every key is optional and falls back to the defaults in :data:`DEFAULTS`.
Unknown sections or keys are rejected, and the model described by the file is
validated before any data is loaded.  ``space = s2`` configures a VolterraNet
classifier on S^2 signals; ``space = s2xr`` configures the dilated network on
sequences of shell signals.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .dilated import DilatedSpec, DilatedStack
from .network.model import LayerSpec, ModelSpec, SpecError

DEFAULTS = {
    "model": {
        "space": "s2",
        "input_bandwidth": "10",
        "input_channels": "1",
        "bandwidths": "4",
        "channels": "3",
        "kernel_bandwidths": "",
        "order": "2",
        "mix_init": "0.5",
        "learn_mix": "true",
        "batchnorm": "false",
        "n_classes": "4",
    },
    "train": {
        "lr": "0.05",
        "batch_size": "32",
        "epochs": "30",
        "seed": "0",
    },
    "data": {
        "dataset": "",
        "checkpoint": "",
    },
    "dilated": {
        "n_shells": "2",
        "head_channels": "4",
        "head_bandwidth": "3",
        "pooling": "invariant",
        "head_relu": "false",
        "stride": "2",
        "stack": "2:1:4, 2:2:4",
        "readout": "last",
    },
    "permtest": {
        "n_perm": "99",
        "train_budget": "40",
        "lr": "0.02",
    },
}

SPACES = ("s2", "s2xr")


class ConfigError(ValueError):
    pass


def _ints(text: str) -> list:
    return [int(t) for t in text.replace(",", " ").split()]


def parse_stack(text: str) -> DilatedStack:
    """``"k:d:c, k:d:c"`` -> :class:`DilatedStack`."""
    layers = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"stack entry {item!r} is not kernel:dilation:channels")
        layers.append(tuple(int(p) for p in parts))
    if not layers:
        raise ConfigError("dilated stack needs at least one layer")
    return DilatedStack(tuple(layers))


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: dict(kv) for s, kv in DEFAULTS.items()})

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def getint(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def getbool(self, section: str, key: str) -> bool:
        v = self.get(section, key).strip().lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {v!r}")
        return v in ("true", "1", "yes")

    @property
    def space(self) -> str:
        return self.get("model", "space")

    @property
    def seed(self) -> int:
        return self.getint("train", "seed")

    def model_spec(self) -> ModelSpec:
        """Corr2 layers (first on S^2, then on SO(3)) each followed by ReLU,
        then the invariant layer and a linear head."""
        bws = _ints(self.get("model", "bandwidths"))
        chs = _ints(self.get("model", "channels"))
        kbs = _ints(self.get("model", "kernel_bandwidths")) or [0] * len(bws)
        if not bws or len(bws) != len(chs) or len(kbs) != len(bws):
            raise ConfigError("bandwidths, channels and kernel_bandwidths need equal lengths")
        layers = []
        for i, (b, c, kb) in enumerate(zip(bws, chs, kbs)):
            layers.append(LayerSpec("corr2_s2" if i == 0 else "corr2_so3", channels=c, bandwidth=b,
                                    kernel_bandwidth=kb, order=self.getint("model", "order"),
                                    learn_mix=self.getbool("model", "learn_mix"),
                                    mix_init=self.getfloat("model", "mix_init")))
            if self.getbool("model", "batchnorm"):
                layers.append(LayerSpec("batchnorm"))
            layers.append(LayerSpec("relu"))
        layers += [LayerSpec("invariant"), LayerSpec("fc", channels=self.getint("model", "n_classes"))]
        return ModelSpec(self.getint("model", "input_bandwidth"),
                         self.getint("model", "input_channels"), tuple(layers))

    def dilated_spec(self) -> DilatedSpec:
        kbs = _ints(self.get("model", "kernel_bandwidths"))
        return DilatedSpec(
            bandwidth=self.getint("model", "input_bandwidth"),
            n_shells=self.getint("dilated", "n_shells"),
            head_channels=self.getint("dilated", "head_channels"),
            head_bandwidth=self.getint("dilated", "head_bandwidth"),
            head_kernel_bandwidth=kbs[0] if kbs else None,
            order=self.getint("model", "order"),
            pooling=self.get("dilated", "pooling"),
            head_relu=self.getbool("dilated", "head_relu"),
            stride=self.getint("dilated", "stride"),
            stack=parse_stack(self.get("dilated", "stack")),
            readout=self.get("dilated", "readout"),
            n_classes=self.getint("model", "n_classes"),
        )

    def validate(self) -> None:
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}, got {self.space!r}")
        try:
            if self.space == "s2":
                self.model_spec()
            else:
                self.dilated_spec()
            for key in ("lr", "batch_size", "epochs"):
                if self.getfloat("train", key) <= 0:
                    raise ConfigError(f"[train] {key} must be positive")
            if self.getint("permtest", "n_perm") < 19:
                raise ConfigError("[permtest] n_perm must be at least 19")
        except (SpecError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    def to_ini(self) -> str:
        lines = []
        for section, kv in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    cfg = RunConfig()
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in cp.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg.values[section][key] = value.strip()
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def defaults_help() -> str:
    return RunConfig().to_ini()
