"""Correlation and second-order Volterra operators on S^2 and SO(3).

The fast operators use the convolution theorem.  For real ``f`` and kernel
``w`` on S^2::

    (f * w)(g) = int f(x) w(g^-1 x) dx,      out^l = fhat^l (what^l)^H / (2l + 1)

and for signals on SO(3)::

    (f * w)(g) = int f(h) w(g^-1 h) dh,      out^l = Fhat^l (What^l)^H

where ``out`` is an SO(3) spectrum (see :mod:`homcorr.harmonics` for the
normalization).  Multi-channel operators sum over input channels, like the
channel algebra of an ordinary CNN.

The ``*_bruteforce`` functions evaluate the defining integrals directly on the
grid and serve as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import harmonics as hm
from .signals import Rotation, integrate_s2, integrate_so3, rotate_s2, rotate_so3

BRUTEFORCE_MAX_B = 6
VOLTERRA_BRUTEFORCE_MAX_B = 3


class BandwidthError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class S2Kernel:
    """Spectral kernel for ``(c_in, c_out)`` channel pairs.

    ``spectrum`` is a dense complex array ``(c_in, c_out, Bk, 2Bk-1)``.
    """

    spectrum: np.ndarray

    @property
    def B(self) -> int:
        return self.spectrum.shape[-2]

    @property
    def channels(self) -> tuple:
        return self.spectrum.shape[:2]

    @classmethod
    def from_real(cls, params: np.ndarray) -> "S2Kernel":
        """Build from real coefficients ``(c_in, c_out, Bk, 2Bk-1)``; entries with
        ``|m| > l`` are ignored.  The kernel is then a real function."""
        params = np.asarray(params, dtype=float) * hm.s2_mask(params.shape[-2])
        return cls(hm.s2_real_to_complex(params))

    @classmethod
    def random(cls, Bk: int, c_in: int = 1, c_out: int = 1, seed=0) -> "S2Kernel":
        rng = np.random.default_rng(seed)
        return cls.from_real(rng.standard_normal((c_in, c_out, Bk, 2 * Bk - 1)))

    def samples(self, B: int) -> np.ndarray:
        """Real grid samples ``(c_in, c_out, 2B, 2B)``."""
        return hm.s2_synthesis(hm.s2_pad(self.spectrum, B), B).real


@dataclass(frozen=True)
class SO3Kernel:
    """Spectral kernel on SO(3); ``spectrum`` is ``(c_in, c_out, Bk, 2Bk-1, 2Bk-1)``."""

    spectrum: np.ndarray

    @property
    def B(self) -> int:
        return self.spectrum.shape[-3]

    @property
    def channels(self) -> tuple:
        return self.spectrum.shape[:2]

    @classmethod
    def from_real(cls, params: np.ndarray) -> "SO3Kernel":
        params = np.asarray(params, dtype=float) * hm.so3_mask(params.shape[-3])
        return cls(hm.so3_real_to_complex(params))

    @classmethod
    def random(cls, Bk: int, c_in: int = 1, c_out: int = 1, seed=0) -> "SO3Kernel":
        rng = np.random.default_rng(seed)
        M = 2 * Bk - 1
        return cls.from_real(rng.standard_normal((c_in, c_out, Bk, M, M)))

    def samples(self, B: int) -> np.ndarray:
        return hm.so3_ft_inverse(hm.so3_pad(self.spectrum, B), B).real


@dataclass(frozen=True)
class VolterraLayer:
    """First-order kernel ``w1``, separable second-order pair ``(w2a, w2b)`` and
    the convex mixing weight ``mix`` of the first-order term."""

    w1: object
    w2a: object
    w2b: object
    mix: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError(f"mixing weight must lie in [0, 1], got {self.mix}")
        kinds = {type(self.w1), type(self.w2a), type(self.w2b)}
        if len(kinds) != 1:
            raise TypeError("all kernels of a layer must live on the same space")
        shapes = {self.w1.channels, self.w2a.channels, self.w2b.channels}
        if len(shapes) != 1:
            raise ValueError("kernels must share channel shape")

    @classmethod
    def random(cls, space: str, Bk: int, c_in: int = 1, c_out: int = 1, mix: float = 0.5,
               seed=0) -> "VolterraLayer":
        kern = S2Kernel if space == "s2" else SO3Kernel
        ss = np.random.SeedSequence(seed).spawn(3)
        return cls(*(kern.random(Bk, c_in, c_out, s) for s in ss), mix=mix)


# ---------------------------------------------------------------------------
# Spectral operators
# ---------------------------------------------------------------------------


def _check_channels(f: np.ndarray, w, grid_ndim: int) -> None:
    if f.ndim < grid_ndim + 1:
        raise ValueError("signal needs an explicit channel axis")
    if f.shape[-grid_ndim - 1] != w.channels[0]:
        raise ValueError(
            f"signal has {f.shape[-grid_ndim - 1]} channels, kernel expects {w.channels[0]}")


def corr_s2_spectrum(f: np.ndarray, w: S2Kernel) -> np.ndarray:
    """SO(3) spectrum of ``f * w`` for samples ``(..., c_in, 2B, 2B)``."""
    f = np.asarray(f)
    _check_channels(f, w, 2)
    B = f.shape[-1] // 2
    if w.B > B:
        raise BandwidthError(f"kernel bandwidth {w.B} exceeds signal bandwidth {B}")
    fh = hm.s2_pad(hm.s2_analysis(f * hm.s2_quadrature(B), B), w.B)
    out = np.einsum("...ilm,ioln->...olmn", fh, np.conj(w.spectrum))
    return out / hm.degree_weights(w.B)


def corr_so3_spectrum(f: np.ndarray, w: SO3Kernel) -> np.ndarray:
    """SO(3) spectrum of ``f * w`` for samples ``(..., c_in, 2B, 2B, 2B)``."""
    f = np.asarray(f)
    _check_channels(f, w, 3)
    B = f.shape[-1] // 2
    if w.B > B:
        raise BandwidthError(f"kernel bandwidth {w.B} exceeds signal bandwidth {B}")
    Fh = hm.so3_pad(hm.so3_ft_forward(f, B), w.B)
    return np.einsum("...ilmk,iolnk->...olmn", Fh, np.conj(w.spectrum))


def _materialize(spec: np.ndarray, B_out: int, keep_complex: bool) -> np.ndarray:
    out = hm.so3_ft_inverse(hm.so3_pad(spec, B_out), B_out)
    return out if keep_complex else out.real


def corr_s2(f: np.ndarray, w: S2Kernel, B_out: int | None = None, keep_complex: bool = False):
    """Correlation of S^2 samples with an S^2 kernel, sampled on the SO(3) grid.

    ``f`` has shape ``(..., c_in, 2B, 2B)``; the result has shape
    ``(..., c_out, 2B', 2B', 2B')`` with ``B' = B_out`` (default ``B``).
    """
    f = np.asarray(f)
    return _materialize(corr_s2_spectrum(f, w), B_out or f.shape[-1] // 2, keep_complex)


def corr_so3(f: np.ndarray, w: SO3Kernel, B_out: int | None = None, keep_complex: bool = False):
    """Correlation of SO(3) samples with an SO(3) kernel."""
    f = np.asarray(f)
    return _materialize(corr_so3_spectrum(f, w), B_out or f.shape[-1] // 2, keep_complex)


def volterra2_s2(f: np.ndarray, layer: VolterraLayer, B_out: int | None = None) -> np.ndarray:
    """``mix * (f*w1) + (1 - mix) * (f*w2a)(f*w2b)`` for S^2 input."""
    lam = layer.mix
    out = 0.0
    if lam > 0.0:
        out = lam * corr_s2(f, layer.w1, B_out)
    if lam < 1.0:
        out = out + (1.0 - lam) * corr_s2(f, layer.w2a, B_out) * corr_s2(f, layer.w2b, B_out)
    return out


def volterra2_so3(f: np.ndarray, layer: VolterraLayer, B_out: int | None = None) -> np.ndarray:
    """Second-order Volterra correlation of SO(3) input."""
    lam = layer.mix
    out = 0.0
    if lam > 0.0:
        out = lam * corr_so3(f, layer.w1, B_out)
    if lam < 1.0:
        out = out + (1.0 - lam) * corr_so3(f, layer.w2a, B_out) * corr_so3(f, layer.w2b, B_out)
    return out


def invariant_layer(f: np.ndarray) -> np.ndarray:
    """Haar integral over SO(3) of every leading index (e.g. per channel)."""
    return integrate_so3(f)


def kernel_from_right_blocks(blocks: np.ndarray) -> SO3Kernel:
    """Kernel whose correlation acts as ``Fhat^l -> Fhat^l K^l`` on spectra.

    ``blocks`` is a dense padded ``(c_in, c_out, B, 2B-1, 2B-1)`` array.
    """
    return SO3Kernel(np.conj(np.swapaxes(blocks, -1, -2)))


def kernel_from_outer_vectors(vectors: np.ndarray) -> S2Kernel:
    """S^2 kernel whose correlation maps ``fhat^l -> fhat^l v^l^T``."""
    B = vectors.shape[-2]
    return S2Kernel(np.conj(vectors) * (2 * np.arange(B) + 1.0)[:, None])


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def grid_rotations(B: int) -> list:
    """All rotations of the SO(3) Euler grid, in row-major (alpha, beta, gamma) order."""
    a, b, g = hm.so3_grid(B)
    return [Rotation(x, y, z) for x in a for y in b for z in g]


def _guard(B: int, limit: int, force: bool) -> None:
    if B > limit and not force:
        raise BandwidthError(f"brute force refused at B={B} > {limit}; pass force=True")


def corr_s2_bruteforce(f: np.ndarray, w: np.ndarray, out_rotations, force: bool = False) -> np.ndarray:
    """Evaluate ``int f(x) (g.w)(x) dx`` directly for each rotation ``g``.

    ``f`` and ``w`` are single-channel S^2 samples at the same bandwidth.
    """
    f = np.asarray(f)
    _guard(f.shape[-1] // 2, BRUTEFORCE_MAX_B, force)
    return np.array([integrate_s2(f * rotate_s2(w, g)) for g in out_rotations])


def corr_so3_bruteforce(f: np.ndarray, w: np.ndarray, out_rotations, force: bool = False) -> np.ndarray:
    """Evaluate ``int f(h) (g.w)(h) dh`` directly for each rotation ``g``."""
    f = np.asarray(f)
    _guard(f.shape[-1] // 2, BRUTEFORCE_MAX_B, force)
    return np.array([integrate_so3(f * rotate_so3(w, g)) for g in out_rotations])


def volterra2_bruteforce(f: np.ndarray, w2a: np.ndarray, w2b: np.ndarray, out_rotations,
                         space: str = "s2", force: bool = False) -> np.ndarray:
    """Literal double integral ``int int f(x) f(y) w2(g^-1 x, g^-1 y) dx dy``.

    The second-order kernel is ``w2(x, y) = sum_r w2a[r](x) w2b[r](y)``; pass
    single arrays for one separable term or stacked arrays for a sum of them.
    """
    f = np.asarray(f)
    B = f.shape[-1] // 2
    _guard(B, VOLTERRA_BRUTEFORCE_MAX_B, force)
    if space == "s2":
        rotate, q = rotate_s2, hm.s2_quadrature(B)
    elif space == "so3":
        rotate, q = rotate_so3, hm.so3_quadrature(B)
    else:
        raise ValueError(f"unknown space {space!r}")
    w2a = np.asarray(w2a).reshape((-1,) + f.shape)
    w2b = np.asarray(w2b).reshape((-1,) + f.shape)
    fq = (f * q).ravel()
    out = []
    for g in out_rotations:
        a = rotate(w2a, g).reshape(len(w2a), -1)
        b = rotate(w2b, g).reshape(len(w2b), -1)
        kernel = np.einsum("rx,ry->xy", a, b)
        out.append(fq @ kernel @ fq)
    return np.array(out)
