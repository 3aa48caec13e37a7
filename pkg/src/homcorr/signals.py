"""Signals on S^2 and SO(3), the rotation group acting on them, and integration.

Sampled signals are plain arrays whose trailing axes are the grid:
``(..., 2B, 2B)`` for S^2 (theta-major) and ``(..., 2B, 2B, 2B)`` for SO(3)
(axes alpha, beta, gamma).  Leading axes are batch/channel axes.

Rotations act by pullback, ``(g.f)(x) = f(g^-1 x)``.  The action is applied in
the spectral domain, so it is exact for band-limited signals.  With the
induced-basis harmonics the coefficients transform under ``conj(D^l(g))``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import harmonics as hm

TWO_PI = 2 * math.pi


def _rz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b: float) -> np.ndarray:
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3) as ZYZ Euler angles, canonicalized on construction.

    ``alpha, gamma`` lie in ``[0, 2 pi)`` and ``beta`` in ``[0, pi]``.  At the
    poles (``beta`` in ``{0, pi}``) the redundant angle is folded into ``alpha``.
    """

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        a, b, g = _canonical(_rz(self.alpha) @ _ry(self.beta) @ _rz(self.gamma))
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls()

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "Rotation":
        return cls(*_canonical(np.asarray(R, dtype=float)))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Haar-distributed random rotation."""
        a, g = rng.uniform(0.0, TWO_PI, size=2)
        b = math.acos(rng.uniform(-1.0, 1.0))
        return cls(a, b, g)

    def matrix(self) -> np.ndarray:
        return _rz(self.alpha) @ _ry(self.beta) @ _rz(self.gamma)

    def compose(self, other: "Rotation") -> "Rotation":
        """``self * other`` (apply ``other`` first)."""
        return Rotation.from_matrix(self.matrix() @ other.matrix())

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        return Rotation.from_matrix(self.matrix().T)

    def as_tuple(self) -> tuple:
        return (self.alpha, self.beta, self.gamma)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate unit vectors ``(..., 3)``."""
        return np.asarray(points) @ self.matrix().T


def _canonical(R: np.ndarray) -> tuple:
    b = math.atan2(math.hypot(R[0, 2], R[1, 2]), R[2, 2])
    if math.hypot(R[0, 2], R[1, 2]) > 1e-12:
        a = math.atan2(R[1, 2], R[0, 2])
        g = math.atan2(R[2, 1], -R[2, 0])
    elif R[2, 2] > 0:
        b, g = 0.0, 0.0
        a = math.atan2(R[1, 0], R[0, 0])
    else:
        b, g = math.pi, 0.0
        a = math.atan2(-R[1, 0], -R[0, 0])
    return a % TWO_PI, b, g % TWO_PI


def compose(g1: Rotation, g2: Rotation) -> Rotation:
    return g1.compose(g2)


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class S2Signal:
    """Multi-channel real samples ``(channels, 2B, 2B)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[1] != s.shape[2] or s.shape[1] % 2:
            raise ValueError(f"bad S2 sample shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("S2 samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def B(self) -> int:
        return self.samples.shape[-1] // 2

    @property
    def channels(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class SO3Signal:
    """Multi-channel real samples ``(channels, 2B, 2B, 2B)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 3:
            s = s[None]
        if s.ndim != 4 or len(set(s.shape[1:])) != 1 or s.shape[1] % 2:
            raise ValueError(f"bad SO3 sample shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("SO3 samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def B(self) -> int:
        return self.samples.shape[-1] // 2

    @property
    def channels(self) -> int:
        return self.samples.shape[0]


# ---------------------------------------------------------------------------
# Group action
# ---------------------------------------------------------------------------


def _bandwidth(f: np.ndarray) -> int:
    return f.shape[-1] // 2


def _action(B: int, g: Rotation) -> np.ndarray:
    return np.conj(hm.wigner_D_dense(B, *g.as_tuple()))


def rotate_s2(f: np.ndarray, g: Rotation) -> np.ndarray:
    """Pullback ``x -> f(g^-1 x)`` of S^2 samples, exact for band-limited ``f``."""
    f = np.asarray(f)
    B = _bandwidth(f)
    c = hm.s2_analysis(f * hm.s2_quadrature(B), B)
    c = np.einsum("lmn,...ln->...lm", _action(B, g), c)
    out = hm.s2_synthesis(c, B)
    return out.real if np.isrealobj(f) else out


def rotate_so3(f: np.ndarray, g: Rotation) -> np.ndarray:
    """Left translation ``h -> f(g^-1 h)`` of SO(3) samples."""
    f = np.asarray(f)
    B = _bandwidth(f)
    c = hm.so3_ft_forward(f, B)
    c = np.einsum("lmk,...lkn->...lmn", _action(B, g), c)
    out = hm.so3_ft_inverse(c, B)
    return out.real if np.isrealobj(f) else out


def rotate_s2_spectrum(c: np.ndarray, g: Rotation) -> np.ndarray:
    """Act on a dense S^2 spectrum ``(..., B, 2B-1)``."""
    return np.einsum("lmn,...ln->...lm", _action(c.shape[-2], g), c)


def rotate_so3_spectrum(c: np.ndarray, g: Rotation) -> np.ndarray:
    """Act on a dense SO(3) spectrum ``(..., B, 2B-1, 2B-1)``."""
    return np.einsum("lmk,...lkn->...lmn", _action(c.shape[-3], g), c)


def integrate_s2(f: np.ndarray) -> np.ndarray:
    """Quadrature of ``f`` over S^2 with total area 4 pi."""
    f = np.asarray(f)
    return np.einsum("...jk,jk->...", f, hm.s2_quadrature(_bandwidth(f)))


def integrate_so3(f: np.ndarray) -> np.ndarray:
    """Haar integral of ``f`` over SO(3) (total mass 1)."""
    f = np.asarray(f)
    return np.einsum("...ijk,ijk->...", f, hm.so3_quadrature(_bandwidth(f)))


def s2_points(B: int) -> np.ndarray:
    """Unit vectors of the S^2 grid, shape ``(2B, 2B, 3)``."""
    theta, phi = hm.s2_grid(B)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)


def random_bandlimited(B: int, channels: int = 1, seed: int = 0, space: str = "s2",
                       batch: tuple = ()) -> np.ndarray:
    """Real band-limited samples with i.i.d. standard normal real coefficients.

    Deterministic for a given ``seed`` (PCG64 via ``numpy.random.default_rng``).
    Returns ``batch + (channels,) + grid``.
    """
    B = hm.check_bandwidth(B)
    rng = np.random.default_rng(seed)
    lead = tuple(batch) + (channels,)
    if space == "s2":
        a = rng.standard_normal(lead + (B, 2 * B - 1)) * hm.s2_mask(B)
        return hm.s2_synthesis(hm.s2_real_to_complex(a), B).real
    if space == "so3":
        P = rng.standard_normal(lead + (B, 2 * B - 1, 2 * B - 1)) * hm.so3_mask(B)
        return hm.so3_ft_inverse(hm.so3_real_to_complex(P), B).real
    raise ValueError(f"unknown space {space!r}")


# ---------------------------------------------------------------------------
# Binary container: b"HSIG", version u32, space u8, B u32, channels u32, then
# float64 little-endian samples in row-major order.
# ---------------------------------------------------------------------------

HSIG_MAGIC = b"HSIG"
HSIG_VERSION = 1
_HSIG_HEADER = struct.Struct("<4sIBII")


class SignalFormatError(ValueError):
    pass


def write_signal(stream, sig) -> None:
    tag = 0 if isinstance(sig, S2Signal) else 1
    stream.write(_HSIG_HEADER.pack(HSIG_MAGIC, HSIG_VERSION, tag, sig.B, sig.channels))
    stream.write(np.ascontiguousarray(sig.samples, dtype="<f8").tobytes())


def read_signal(stream):
    head = stream.read(_HSIG_HEADER.size)
    if len(head) != _HSIG_HEADER.size:
        raise SignalFormatError("truncated signal header")
    magic, version, tag, B, channels = _HSIG_HEADER.unpack(head)
    if magic != HSIG_MAGIC:
        raise SignalFormatError(f"bad magic {magic!r}")
    if version != HSIG_VERSION:
        raise SignalFormatError(f"unsupported signal version {version}")
    if tag not in (0, 1) or B < 1:
        raise SignalFormatError("bad signal header")
    shape = (channels,) + (2 * B,) * (2 if tag == 0 else 3)
    n = int(np.prod(shape)) * 8
    body = stream.read(n)
    if len(body) != n:
        raise SignalFormatError("truncated signal body")
    samples = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
    return S2Signal(samples) if tag == 0 else SO3Signal(samples)


def signal_to_bytes(sig) -> bytes:
    buf = io.BytesIO()
    write_signal(buf, sig)
    return buf.getvalue()


def signal_from_bytes(data: bytes):
    return read_signal(io.BytesIO(data))
