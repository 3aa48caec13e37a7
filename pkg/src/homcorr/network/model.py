"""Layer stack for VolterraNet-style classifiers on S^2 input.

A :class:`ModelSpec` is an ordered tuple of :class:`LayerSpec` descriptors.
The first spatial layer must be ``corr2_s2`` (consumes S^2), later spatial
layers ``corr2_so3``; exactly one ``invariant`` layer integrates over SO(3)
and must precede every ``fc`` layer.  An optional trailing ``softmax`` marks
the classifier head; :meth:`Model.forward` always returns logits.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import harmonics as hm
from . import autodiff as ad
from .ops import corr_s2_op, corr_so3_op, s2_kernel_size, so3_kernel_size

LAYER_KINDS = ("corr2_s2", "corr2_so3", "relu", "batchnorm", "invariant", "fc", "softmax")


class SpecError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int = 0
    bandwidth: int = 0
    kernel_bandwidth: int = 0
    order: int = 2
    bias: bool = True
    learn_mix: bool = True
    mix_init: float = 0.5


@dataclass(frozen=True)
class ModelSpec:
    input_bandwidth: int
    input_channels: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers))
        validate_spec(self)

    def to_dict(self) -> dict:
        return {"input_bandwidth": self.input_bandwidth, "input_channels": self.input_channels,
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["input_bandwidth"], d["input_channels"], tuple(d["layers"]))

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> int:
        """64-bit hash of the canonical serialization."""
        return int.from_bytes(hashlib.blake2b(self.canonical().encode(), digest_size=8).digest(), "little")

    @property
    def n_classes(self) -> int:
        fcs = [l for l in self.layers if l.kind == "fc"]
        return fcs[-1].channels


def validate_spec(spec: ModelSpec) -> None:
    if spec.input_bandwidth < 1 or spec.input_channels < 1:
        raise SpecError("input bandwidth and channels must be positive")
    domain = "s2"
    B = spec.input_bandwidth
    seen_invariant = False
    for i, l in enumerate(spec.layers):
        if l.kind not in LAYER_KINDS:
            raise SpecError(f"layer {i}: unknown kind {l.kind!r}")
        if l.kind in ("corr2_s2", "corr2_so3"):
            want = "s2" if l.kind == "corr2_s2" else "so3"
            if domain != want:
                raise SpecError(f"layer {i}: {l.kind} cannot consume a {domain} signal")
            if l.channels < 1 or l.bandwidth < 1:
                raise SpecError(f"layer {i}: channels and bandwidth must be positive")
            bk = l.kernel_bandwidth or min(B, l.bandwidth)
            if bk > B:
                raise SpecError(f"layer {i}: kernel bandwidth {bk} exceeds input bandwidth {B}")
            if l.order not in (1, 2):
                raise SpecError(f"layer {i}: order must be 1 or 2")
            if not 0.0 <= l.mix_init <= 1.0:
                raise SpecError(f"layer {i}: mix_init must lie in [0, 1]")
            domain, B = "so3", l.bandwidth
        elif l.kind in ("relu", "batchnorm"):
            if domain == "s2":
                raise SpecError(f"layer {i}: {l.kind} must follow a correlation layer")
        elif l.kind == "invariant":
            if domain != "so3":
                raise SpecError(f"layer {i}: invariant layer needs an SO(3) signal")
            if seen_invariant:
                raise SpecError("invariant layer must appear exactly once")
            seen_invariant = True
            domain = "vec"
        elif l.kind == "fc":
            if domain != "vec":
                raise SpecError(f"layer {i}: fully connected layer must follow the invariant layer")
            if l.channels < 1:
                raise SpecError(f"layer {i}: fc needs a positive output size")
        elif l.kind == "softmax":
            if i != len(spec.layers) - 1 or domain != "vec":
                raise SpecError("softmax may only terminate the network")
    if not seen_invariant:
        raise SpecError("invariant layer must appear exactly once")
    if not any(l.kind == "fc" for l in spec.layers):
        raise SpecError("network needs a fully connected head")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    name = "layer"

    def params(self) -> list:
        return []

    def buffers(self) -> list:
        return []

    def param_report(self) -> dict:
        return {}

    def __call__(self, x, train: bool):
        raise NotImplementedError


class Corr2(Layer):
    """Second-order Volterra correlation ``mix*(f*w1) + (1-mix)*(f*w2a)(f*w2b)``.

    With ``order=1`` only the first-order kernel is kept and the mix is fixed
    at 1.  The mixing weight is an unconstrained scalar clamped to [0, 1].
    """

    def __init__(self, space: str, c_in: int, c_out: int, B_in: int, B_out: int, Bk: int,
                 order: int, bias: bool, learn_mix: bool, mix_init: float, rng):
        self.space = space
        self.name = f"corr2_{space}"
        self.c_out, self.B_out, self.Bk, self.order = c_out, B_out, Bk, order
        size = s2_kernel_size(Bk) if space == "s2" else so3_kernel_size(Bk)
        n_kernels = 3 if order == 2 else 1
        std = math.sqrt(1.0 / (c_in * Bk * Bk))
        self.kernels = ad.parameter(rng.standard_normal((c_in, n_kernels * c_out, size)) * std)
        self.bias = ad.parameter(np.zeros(c_out)) if bias else None
        self.mix = None
        self.mix_value = 1.0 if order == 1 else mix_init
        if order == 2 and learn_mix:
            self.mix = ad.parameter(np.array(mix_init))

    def params(self):
        return [p for p in (self.kernels, self.bias, self.mix) if p is not None]

    def param_report(self):
        r = {"kernels": self.kernels.data.size}
        if self.bias is not None:
            r["bias"] = self.bias.data.size
        if self.mix is not None:
            r["mix"] = 1
        return r

    def __call__(self, x, train):
        op = corr_s2_op if self.space == "s2" else corr_so3_op
        h = op(x, self.kernels, self.Bk, self.B_out)
        c = self.c_out
        if self.order == 1:
            y = h
        else:
            lam = ad.clamp01(self.mix) if self.mix is not None else ad.constant(self.mix_value)
            h1, ha, hb = h[:, :c], h[:, c:2 * c], h[:, 2 * c:]
            y = lam * h1 + (1.0 - lam) * (ha * hb)
        if self.bias is not None:
            y = y + ad.reshape(self.bias, (1, c, 1, 1, 1))
        return y


class ReLU(Layer):
    name = "relu"

    def __call__(self, x, train):
        return ad.relu(x)


class BatchNorm(Layer):
    """Per-channel normalization of SO(3) features with Haar-weighted statistics
    over batch and group, learned affine map and running statistics for eval."""

    name = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = ad.parameter(np.ones(channels))
        self.beta = ad.parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def param_report(self):
        return {"affine": 2 * self.gamma.data.size}

    def __call__(self, x, train):
        C = x.shape[1]
        q = hm.so3_quadrature(x.shape[-1] // 2)
        axes = (2, 3, 4)
        bshape = (1, C, 1, 1, 1)
        if train:
            mu = ad.mean(ad.weighted_sum(x, q, axes), axis=0)
            d = x - ad.reshape(mu, bshape)
            var = ad.mean(ad.weighted_sum(d * d, q, axes), axis=0)
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mu.data
            self.running_var[:] = (1 - m) * self.running_var + m * var.data
        else:
            d = x - self.running_mean.reshape(bshape)
            var = ad.constant(self.running_var)
        scale = ad.power(var + self.eps, -0.5) * self.gamma
        return d * ad.reshape(scale, bshape) + ad.reshape(self.beta, bshape)


class Invariant(Layer):
    """Haar integral over SO(3) per channel."""

    name = "invariant"

    def __call__(self, x, train):
        return ad.weighted_sum(x, hm.so3_quadrature(x.shape[-1] // 2), (2, 3, 4))


class FullyConnected(Layer):
    name = "fc"

    def __init__(self, n_in: int, n_out: int, rng):
        bound = math.sqrt(6.0 / n_in)
        self.weight = ad.parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = ad.parameter(np.zeros(n_out))

    def params(self):
        return [self.weight, self.bias]

    def param_report(self):
        return {"weight": self.weight.data.size, "bias": self.bias.data.size}

    def __call__(self, x, train):
        return x @ self.weight + self.bias


class Softmax(Layer):
    """Marker for the classifier head; logits pass through unchanged."""

    name = "softmax"

    def __call__(self, x, train):
        return x


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class Model:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.layers = []
        B, c, width = spec.input_bandwidth, spec.input_channels, None
        for l in spec.layers:
            if l.kind in ("corr2_s2", "corr2_so3"):
                bk = l.kernel_bandwidth or min(B, l.bandwidth)
                self.layers.append(Corr2("s2" if l.kind == "corr2_s2" else "so3", c, l.channels,
                                         B, l.bandwidth, bk, l.order, l.bias, l.learn_mix,
                                         l.mix_init, rng))
                B, c = l.bandwidth, l.channels
            elif l.kind == "relu":
                self.layers.append(ReLU())
            elif l.kind == "batchnorm":
                self.layers.append(BatchNorm(c))
            elif l.kind == "invariant":
                self.layers.append(Invariant())
                width = c
            elif l.kind == "fc":
                self.layers.append(FullyConnected(width, l.channels, rng))
                width = l.channels
            elif l.kind == "softmax":
                self.layers.append(Softmax())

    # -- parameters --------------------------------------------------------

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self) -> list:
        return [b for layer in self.layers for b in layer.buffers()]

    def get_flat(self) -> np.ndarray:
        ps = self.parameters()
        return np.concatenate([p.data.ravel() for p in ps]) if ps else np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.parameters():
            n = p.data.size
            p.data = flat[i:i + n].reshape(p.data.shape).copy()
            i += n

    def get_buffers(self) -> np.ndarray:
        bs = self.buffers()
        return np.concatenate([b.ravel() for b in bs]) if bs else np.zeros(0)

    def set_buffers(self, flat: np.ndarray) -> None:
        i = 0
        for b in self.buffers():
            b[:] = flat[i:i + b.size]
            i += b.size

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def grads_flat(self) -> np.ndarray:
        return np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
            for p in self.parameters()])

    # -- evaluation --------------------------------------------------------

    def forward(self, x, train: bool = False) -> ad.Value:
        """Logits ``(N, n_classes)`` for S^2 samples ``(N, c_in, 2B, 2B)``."""
        x = ad.as_value(x)
        B, c = self.spec.input_bandwidth, self.spec.input_channels
        if x.ndim != 4 or x.shape[1:] != (c, 2 * B, 2 * B):
            raise SpecError(f"expected input (N, {c}, {2 * B}, {2 * B}), got {x.shape}")
        for i, layer in enumerate(self.layers):
            x = layer(x, train)
            if not np.all(np.isfinite(x.data)):
                raise NonFiniteError(f"non-finite activation after layer {i} ({layer.name})")
        return x

    def activation_pattern(self, x, train: bool = False) -> np.ndarray:
        """Signs of every ReLU input, flattened; used to detect kinks."""
        v = ad.as_value(x)
        masks = []
        for layer in self.layers:
            if isinstance(layer, ReLU):
                masks.append((v.data > 0).ravel())
            v = layer(v, train)
        return np.concatenate(masks) if masks else np.zeros(0, dtype=bool)

    def features(self, x, train: bool = False) -> np.ndarray:
        """Output of the invariant layer."""
        v = ad.as_value(x)
        for layer in self.layers:
            v = layer(v, train)
            if isinstance(layer, Invariant):
                return v.data
        raise SpecError("model has no invariant layer")

    def logits(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        outs = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.n_classes))

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        return self.logits(x, batch_size).argmax(axis=1)


def param_count(model: Model) -> int:
    return model.n_params


def param_report(model: Model) -> list:
    """Per-layer itemized parameter counts."""
    rows = []
    for i, layer in enumerate(model.layers):
        items = layer.param_report()
        rows.append({"index": i, "layer": layer.name, "items": items, "total": sum(items.values())})
    return rows


def format_param_report(model: Model) -> str:
    lines = []
    for r in param_report(model):
        detail = ", ".join(f"{k}={v}" for k, v in r["items"].items())
        lines.append(f"{r['index']:>3} {r['layer']:<12} {r['total']:>8}  {detail}")
    lines.append(f"    {'total':<12} {model.n_params:>8}")
    return "\n".join(lines)
