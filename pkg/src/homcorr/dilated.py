"""Sequences of shell signals on S^2 x R+ and the dilated VolterraNet.

Each voxel of a sequence is a :class:`ShellSignal`: ``n_shells`` S^2 signals
sampled at log-uniformly spaced radii.  The network applies an intra-voxel
Volterra head to every voxel independently, flattens the SO(3) output either by
grid subsampling (:func:`discretize_so3`) or by Haar pooling, and runs a causal
dilated convolution stack along the sequence.

The permutation test compares two models trained on the two groups of a
dataset.  Every model in the test starts from the same initial parameters and
sees minibatches in the same order, so under the null the observed distance
and the permuted distances are exchangeable.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import harmonics as hm
from .equivariant_ops import VolterraLayer, volterra2_s2
from .network import autodiff as ad
from .network.model import Corr2, FullyConnected, Model, SpecError
from .network.ops import dilated_conv1d_op
from .network.optim import AdamState, adam_step
from .signals import s2_points

# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


def shell_radii(n_shells: int, r_min: float = 1.0, r_max: float = 3.0) -> np.ndarray:
    """Log-uniform radial samples."""
    if n_shells < 1:
        raise ValueError("n_shells must be positive")
    return np.geomspace(r_min, r_max, n_shells) if n_shells > 1 else np.array([r_min])


@dataclass
class ShellSignal:
    samples: np.ndarray
    radii: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3 or self.samples.shape[1] != self.samples.shape[2] \
                or self.samples.shape[1] % 2:
            raise ValueError("shell samples must have shape (n_shells, 2B, 2B)")
        if self.radii is None:
            self.radii = shell_radii(self.n_shells)
        self.radii = np.asarray(self.radii, dtype=float)
        if self.radii.shape != (self.n_shells,):
            raise ValueError("one radius per shell required")

    @property
    def B(self) -> int:
        return self.samples.shape[-1] // 2

    @property
    def n_shells(self) -> int:
        return self.samples.shape[0]


@dataclass
class Sequence:
    voxels: list
    label: int = 0
    group: int = 0

    def __post_init__(self):
        if not self.voxels:
            raise ValueError("a sequence needs at least one voxel")
        shapes = {v.samples.shape for v in self.voxels}
        if len(shapes) != 1:
            raise ValueError("voxels must share bandwidth and shell count")

    def __len__(self):
        return len(self.voxels)

    def array(self) -> np.ndarray:
        """Samples ``(T, n_shells, 2B, 2B)``."""
        return np.stack([v.samples for v in self.voxels])


@dataclass(frozen=True)
class DilatedStack:
    """Layers as ``(kernel_size, dilation, channels)`` triples."""

    layers: tuple = ((2, 1, 4), (2, 2, 4))

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(int(v) for v in l) for l in self.layers))
        for k, d, c in self.layers:
            if k < 1 or d < 1 or c < 1:
                raise SpecError("dilated layers need k >= 1, d >= 1 and channels >= 1")

    @property
    def receptive_field(self) -> int:
        """Number of earlier positions visible to each output, ``sum d (k - 1)``."""
        return sum(d * (k - 1) for k, d, _ in self.layers)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def dilated_conv1d(x, w, d: int = 1) -> np.ndarray:
    """Causal dilated convolution ``y(s) = sum_i w(i) x(s - d i)``.

    ``x`` is ``(T,)`` or ``(T, c_in)``; ``w`` is ``(k,)`` or ``(k, c_in, c_out)``.
    """
    x, w = np.asarray(x, dtype=float), np.asarray(w, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty input sequence")
    if d < 1 or w.shape[0] < 1:
        raise ValueError("need k >= 1 and d >= 1")
    scalar = x.ndim == 1
    if scalar:
        x, w = x[:, None], w.reshape(-1, 1, 1)
    T = x.shape[0]
    y = np.zeros((T, w.shape[2]))
    for i in range(w.shape[0]):
        sh = d * i
        if sh < T:
            y[sh:] += x[:T - sh] @ w[i]
    return y[:, 0] if scalar else y


def shell_volterra2(f, layer: VolterraLayer, weights=None, B_out: int | None = None) -> np.ndarray:
    """Per-shell ``volterra2_s2`` mixed by ``weights``.

    ``f`` is a :class:`ShellSignal` or an array ``(n_shells, 2B, 2B)``; each shell is
    fed to ``layer`` as a single input channel.
    """
    x = f.samples if isinstance(f, ShellSignal) else np.asarray(f, dtype=float)
    S = x.shape[0]
    weights = np.full(S, 1.0 / S) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (S,):
        raise ValueError(f"got {weights.size} shell weights for {S} shells")
    out = volterra2_s2(x[:, None], layer, B_out)
    return np.tensordot(weights, out, axes=(0, 0))


def discretize_so3(g, stride: int) -> np.ndarray:
    """Subsample the Euler grid with ``stride`` along each axis and flatten.

    Leading axes are kept.  The flattened order is row-major over
    ``(alpha, beta, gamma)`` grid indices ``(0, stride, 2 stride, ...)``.
    """
    g = np.asarray(g)
    n = g.shape[-1]
    if stride < 1 or n % stride:
        raise ValueError(f"stride {stride} must divide the grid size {n}")
    sub = g[..., ::stride, ::stride, ::stride]
    return sub.reshape(g.shape[:-3] + (-1,))


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DilatedSpec:
    bandwidth: int
    n_shells: int
    head_channels: int = 4
    head_bandwidth: int = 3
    head_kernel_bandwidth: int | None = None
    order: int = 2
    pooling: str = "invariant"
    head_relu: bool = False
    stride: int = 2
    stack: DilatedStack = DilatedStack(((2, 1, 4), (2, 2, 4)))
    readout: str = "last"
    n_classes: int = 2

    def __post_init__(self):
        if self.pooling not in ("discretize", "invariant"):
            raise SpecError("pooling must be 'discretize' or 'invariant'")
        if self.readout not in ("last", "mean"):
            raise SpecError("readout must be 'last' or 'mean'")
        if self.order not in (1, 2):
            raise SpecError("order must be 1 or 2")
        if (2 * self.head_bandwidth) % self.stride:
            raise SpecError(f"stride {self.stride} must divide {2 * self.head_bandwidth}")
        if not isinstance(self.stack, DilatedStack):
            object.__setattr__(self, "stack", DilatedStack(tuple(self.stack)))

    @property
    def feature_dim(self) -> int:
        if self.pooling == "invariant":
            return self.head_channels
        return self.head_channels * (2 * self.head_bandwidth // self.stride) ** 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stack"] = [list(l) for l in self.stack.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DilatedSpec":
        d = dict(d)
        d["stack"] = DilatedStack(tuple(tuple(l) for l in d.get("stack", DilatedStack().layers)))
        return cls(**d)

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class DilatedVolterraNet(Model):
    """Intra-voxel Volterra head, SO(3) flattening, dilated stack, linear readout.

    With ``train_intra=False`` the head is frozen at its initial parameters and
    excluded from :meth:`parameters`.
    """

    def __init__(self, spec: DilatedSpec, seed: int = 0, train_intra: bool = False):
        self.spec = spec
        self.train_intra = train_intra
        rng = np.random.default_rng(seed)
        Bk = spec.head_kernel_bandwidth or min(spec.bandwidth, spec.head_bandwidth)
        self.head = Corr2("s2", 1, spec.head_channels, spec.bandwidth, spec.head_bandwidth, Bk,
                          spec.order, True, True, 0.5, rng)
        self.shell_weights = ad.parameter(np.full(spec.n_shells, 1.0 / spec.n_shells))
        self.conv = []
        c = spec.feature_dim
        for k, _, c_out in spec.stack.layers:
            w = ad.parameter(rng.standard_normal((k, c, c_out)) * math.sqrt(2.0 / (k * c)))
            self.conv.append((w, ad.parameter(np.zeros(c_out))))
            c = c_out
        self.fc = FullyConnected(c, spec.n_classes, rng)
        self.layers = []

    def parameters(self) -> list:
        ps = (self.head.params() + [self.shell_weights]) if self.train_intra else []
        for w, b in self.conv:
            ps += [w, b]
        return ps + self.fc.params()

    # -- forward -----------------------------------------------------------

    def _check(self, x) -> None:
        B, S = self.spec.bandwidth, self.spec.n_shells
        if x.ndim != 5 or x.shape[2:] != (S, 2 * B, 2 * B):
            raise SpecError(f"expected input (N, T, {S}, {2 * B}, {2 * B}), got {x.shape}")
        if x.shape[1] < 1:
            raise SpecError("sequences must have at least one voxel")

    def head_forward(self, x) -> ad.Value:
        """Per-voxel features ``(N, T, feature_dim)``."""
        x = ad.as_value(x)
        self._check(x)
        N, T, S = x.shape[:3]
        flat = ad.reshape(x, (N * T * S, 1) + x.shape[3:])
        h = self.head(flat, True)
        h = ad.reshape(h, (N * T, S) + h.shape[1:])
        h = ad.moveaxis(h, 1, -1)
        h = h @ self.shell_weights
        if self.spec.head_relu:
            h = ad.relu(h)
        if self.spec.pooling == "invariant":
            q = hm.so3_quadrature(self.spec.head_bandwidth)
            h = ad.weighted_sum(h, q, (2, 3, 4))
        else:
            s = self.spec.stride
            h = ad.reshape(h[:, :, ::s, ::s, ::s], (N * T, -1))
        return ad.reshape(h, (N, T, -1))

    def head_features(self, x, batch_size: int = 16) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        outs = [self.head_forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, x.shape[1], self.spec.feature_dim))

    def stack_forward(self, h) -> ad.Value:
        """Dilated stack, readout and linear head on features ``(N, T, F)``."""
        h = ad.as_value(h)
        for j, ((_, d, _), (w, b)) in enumerate(zip(self.spec.stack.layers, self.conv)):
            h = dilated_conv1d_op(h, w, d) + b
            if j < len(self.conv) - 1:
                h = ad.relu(h)
        h = h[:, -1, :] if self.spec.readout == "last" else ad.mean(h, axis=1)
        return self.fc(h, True)

    def forward(self, x, train: bool = False) -> ad.Value:
        return self.stack_forward(self.head_forward(x))

    def logits_from_features(self, feats: np.ndarray) -> np.ndarray:
        return self.stack_forward(feats).data


def dilated_volterranet_forward(seq, model: DilatedVolterraNet) -> np.ndarray:
    """Logits of a single :class:`Sequence` (or ``(T, n_shells, 2B, 2B)`` array)."""
    x = seq.array() if isinstance(seq, Sequence) else np.asarray(seq, dtype=float)
    if x.shape[0] < 1:
        raise ValueError("sequence shorter than 1")
    return model.forward(x[None]).data[0]


def fit_features(model: DilatedVolterraNet, feats: np.ndarray, labels: np.ndarray, epochs: int,
                 lr: float = 1e-2, seed: int = 0, batch_size: int | None = None) -> list:
    """Train the dilated stack on precomputed head features; returns per-step losses."""
    rng = np.random.default_rng(seed)
    adam = AdamState.zeros(model.n_params)
    n = len(labels)
    bs = batch_size or n
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            ps = model.parameters()
            ad.zero_grad(ps)
            loss = ad.cross_entropy(model.stack_forward(feats[idx]), labels[idx])
            loss.backward()
            flat, adam = adam_step(model.get_flat(), model.grads_flat(), adam, lr)
            model.set_flat(flat)
            losses.append(loss.item())
    return losses


# ---------------------------------------------------------------------------
# Model distance and permutation test
# ---------------------------------------------------------------------------


class DegenerateClassError(ValueError):
    pass


def _logits_of(m, probe):
    if isinstance(m, np.ndarray):
        return m
    return m.logits(probe) if probe is not None else m


def model_distance(mA, mB, probe) -> float:
    """Root-mean-square logit difference over the probe set.

    ``mA`` and ``mB`` are models with identical specs (or precomputed logit arrays).
    This output-discrepancy metric is a stand-in; other model distances exist.
    """
    if not isinstance(mA, np.ndarray) and not isinstance(mB, np.ndarray):
        fa = getattr(mA.spec, "fingerprint", None)
        fb = getattr(mB.spec, "fingerprint", None)
        if fa is None or fb is None or fa() != fb():
            raise SpecError("model_distance needs models with identical specs")
    a, b = _logits_of(mA, probe), _logits_of(mB, probe)
    if a.shape != b.shape:
        raise SpecError("logit shapes differ")
    return float(np.sqrt(np.mean((a - b) ** 2))) if a.size else 0.0


@dataclass
class PermutationResult:
    observed_d: float
    n_perm: int
    p_smoothed: float
    p_raw: float
    d_perm: list = field(default_factory=list)
    metric: str = "rms_logit_difference (stand-in model distance)"

    def to_json(self) -> str:
        return json.dumps({"observed_d": self.observed_d, "n_perm": self.n_perm,
                           "p_smoothed": self.p_smoothed, "p_raw": self.p_raw,
                           "d_perm": self.d_perm, "metric": self.metric}, indent=2)


def p_values(observed: float, d_perm) -> tuple:
    """``((1 + #{d_j >= d}) / (1 + n), #{d_j >= d} / n)``."""
    d_perm = np.asarray(d_perm, dtype=float)
    k = int(np.sum(d_perm >= observed))
    n = len(d_perm)
    return (1 + k) / (1 + n), (k / n if n else float("nan"))


def standardize_features(feats: np.ndarray) -> np.ndarray:
    """Z-score each feature over all sequences and positions; constant features become 0."""
    mu = feats.mean(axis=(0, 1))
    sd = feats.std(axis=(0, 1))
    return (feats - mu) / np.where(sd > 0, sd, 1.0)


def stratified_permutation(groups: np.ndarray, labels: np.ndarray, rng) -> np.ndarray:
    """Shuffle group ids within each label, preserving the group-by-label table."""
    out = groups.copy()
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        out[idx] = groups[idx[rng.permutation(len(idx))]]
    return out


def _group_distance(job) -> float:
    spec, init_flat, feats, labels, groups, epochs, lr, train_seed = job
    logits = []
    for gid in (0, 1):
        m = DilatedVolterraNet(spec, seed=0)
        m.set_flat(init_flat)
        mask = groups == gid
        fit_features(m, feats[mask], labels[mask], epochs, lr, train_seed)
        logits.append(m.logits_from_features(feats))
    return model_distance(logits[0], logits[1], None)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("HOMCORR_THREADS", "1")))
    except ValueError:
        return 1


def permutation_test(sequences, groups, labels, n_perm: int = 99, seed: int = 0,
                     train_budget: int = 40, spec: DilatedSpec | None = None, lr: float = 2e-2,
                     features: np.ndarray | None = None, workers: int | None = None,
                     standardize: bool = True) -> PermutationResult:
    """Permutation test of "both groups yield the same model".

    ``sequences`` is an array ``(N, T, n_shells, 2B, 2B)``; ``groups`` holds the
    two group ids (0/1) that are permuted; ``labels`` are the per-sequence
    targets each group model learns.  ``train_budget`` is the number of
    full-batch Adam steps per model.  All models share one initialization and
    the intra-voxel head stays frozen, so head features are computed once.
    Group ids are shuffled within each label so every permuted split keeps the
    observed group-by-label counts.  Head features are z-scored with
    statistics pooled over all sequences, which ignores the group ids.
    """
    groups = np.asarray(groups, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if n_perm < 19:
        raise ValueError("n_perm must be at least 19")
    if set(np.unique(groups)) - {0, 1}:
        raise DegenerateClassError("groups must be 0 or 1")
    counts = np.bincount(groups, minlength=2)
    if counts.min() < 2:
        raise DegenerateClassError(f"each group needs at least 2 sequences, got {counts.tolist()}")
    ss = np.random.SeedSequence(seed)
    init_ss, train_ss, perm_ss = ss.spawn(3)
    init_seed = int(init_ss.generate_state(1)[0])
    train_seed = int(train_ss.generate_state(1)[0])
    if spec is None:
        x = np.asarray(sequences)
        spec = DilatedSpec(bandwidth=x.shape[-1] // 2, n_shells=x.shape[2],
                           head_bandwidth=min(3, x.shape[-1] // 2),
                           n_classes=int(labels.max()) + 1)
    net = DilatedVolterraNet(spec, seed=init_seed)
    feats = net.head_features(sequences) if features is None else np.asarray(features)
    if standardize:
        feats = standardize_features(feats)
    init_flat = net.get_flat()
    rng = np.random.default_rng(perm_ss)
    perms = [stratified_permutation(groups, labels, rng) for _ in range(n_perm)]
    jobs = [(spec, init_flat, feats, labels, g, train_budget, lr, train_seed)
            for g in [groups] + perms]
    workers = workers or _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            ds = list(ex.map(_group_distance, jobs))
    else:
        ds = [_group_distance(j) for j in jobs]
    p_s, p_r = p_values(ds[0], ds[1:])
    return PermutationResult(ds[0], n_perm, p_s, p_r, ds[1:])


# ---------------------------------------------------------------------------
# Synthetic sequences
# ---------------------------------------------------------------------------


def _fiber_signal(dirs, weights, B: int, radii, d_par: float, d_perp: float) -> np.ndarray:
    """Band-limited multi-fiber attenuation ``sum w exp(-r (d_perp + (d_par - d_perp)(x.u)^2))``."""
    x = s2_points(B)
    out = np.zeros((len(radii), 2 * B, 2 * B))
    for s, r in enumerate(radii):
        for u, w in zip(dirs, weights):
            c2 = (x @ u) ** 2
            out[s] += w * np.exp(-r * (d_perp + (d_par - d_perp) * c2))
        out[s] = hm.sht_inverse(hm.sht_forward(out[s], B), B).real
    return out


def _random_unit(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def gen_sequences(n_per_cell: int, length: int, B: int, n_shells: int = 2,
                  group_effect: float = 0.0, mode: str = "swap", noise: float = 0.02,
                  seed: int = 0):
    """Synthetic two-tract, two-group sequences.

    Tract 0 voxels hold one fiber; tract 1 voxels hold two fibers whose
    crossing angle grows along the sequence.  ``group_effect`` acts on group 1
    only.  With ``mode="swap"`` each group-1 sequence uses the other tract's
    template with probability ``group_effect``.  With ``mode="diffusivity"`` the
    parallel diffusivity of group 1 is scaled by ``1 + group_effect``.  With
    ``group_effect = 0`` both groups are identically distributed.

    Returns ``(X, labels, groups)`` with ``X`` of shape ``(N, length, n_shells, 2B, 2B)``.
    """
    if mode not in ("swap", "diffusivity"):
        raise ValueError("mode must be 'swap' or 'diffusivity'")
    rng = np.random.default_rng(seed)
    radii = shell_radii(n_shells)
    X, labels, groups = [], [], []
    for group in (0, 1):
        for label in (0, 1):
            for _ in range(n_per_cell):
                d_par = 1.0
                template = label
                if group == 1 and mode == "diffusivity":
                    d_par += group_effect
                if group == 1 and mode == "swap" and rng.random() < group_effect:
                    template = 1 - label
                u = _random_unit(rng)
                v = _random_unit(rng)
                v -= (v @ u) * u
                v /= np.linalg.norm(v)
                seq = []
                for t in range(length):
                    if template == 0:
                        dirs, w = [u], [1.0]
                    else:
                        ang = math.pi / 2 * (t + 1) / length
                        dirs, w = [u, u * math.cos(ang) + v * math.sin(ang)], [0.5, 0.5]
                    sig = _fiber_signal(dirs, w, B, radii, d_par, 0.2)
                    seq.append(sig + noise * rng.standard_normal(sig.shape))
                X.append(seq)
                labels.append(label)
                groups.append(group)
    order = rng.permutation(len(labels))
    X = np.asarray(X, dtype=float).reshape(-1, length, n_shells, 2 * B, 2 * B)
    return X[order], np.asarray(labels)[order], np.asarray(groups)[order]


# ---------------------------------------------------------------------------
# HSEQ container
# ---------------------------------------------------------------------------

HSEQ_MAGIC = b"HSEQ"
HSEQ_VERSION = 1


class SequenceFormatError(ValueError):
    pass


def save_sequences(path, X: np.ndarray, labels, groups, radii=None) -> None:
    """Write ``X`` ``(N, T, n_shells, 2B, 2B)`` with per-sequence label and group."""
    X = np.asarray(X, dtype="<f8")
    N = len(X)
    B = X.shape[-1] // 2 if N else 0
    S = X.shape[2] if N else 0
    radii = shell_radii(S) if radii is None and S else np.asarray(radii if radii is not None else [])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIII", HSEQ_MAGIC, HSEQ_VERSION, N, B, S))
        fh.write(np.asarray(radii, dtype="<f8").tobytes())
        for x, lab, grp in zip(X, labels, groups):
            fh.write(struct.pack("<III", int(grp), int(lab), x.shape[0]))
            fh.write(x.tobytes())


def load_sequences(path):
    """Return ``(X, labels, groups, radii)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    hdr = struct.calcsize("<4sIIII")
    if len(data) < hdr:
        raise SequenceFormatError("truncated header")
    magic, version, N, B, S = struct.unpack_from("<4sIIII", data)
    if magic != HSEQ_MAGIC or version != HSEQ_VERSION:
        raise SequenceFormatError("not a sequence dataset")
    pos = hdr
    if len(data) < pos + 8 * S:
        raise SequenceFormatError("truncated radii")
    radii = np.frombuffer(data, "<f8", S, pos).copy() if S else np.zeros(0)
    pos += 8 * S
    X, labels, groups = [], [], []
    vox = S * (2 * B) ** 2
    for _ in range(N):
        if len(data) < pos + 12:
            raise SequenceFormatError("truncated sequence header")
        grp, lab, T = struct.unpack_from("<III", data, pos)
        pos += 12
        if len(data) < pos + 8 * T * vox:
            raise SequenceFormatError("truncated samples")
        X.append(np.frombuffer(data, "<f8", T * vox, pos).reshape(T, S, 2 * B, 2 * B).copy())
        pos += 8 * T * vox
        labels.append(lab)
        groups.append(grp)
    if pos != len(data):
        raise SequenceFormatError("trailing bytes")
    lengths = {x.shape[0] for x in X}
    Xa = np.stack(X) if len(lengths) == 1 else X
    return Xa, np.asarray(labels, dtype=int), np.asarray(groups, dtype=int), radii
