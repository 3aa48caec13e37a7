"""Special functions and exact harmonic transforms on S^2 and SO(3).

Conventions
-----------
* Rotations use ZYZ Euler angles ``(alpha, beta, gamma)``; the rotation matrix is
  ``Rz(alpha) @ Ry(beta) @ Rz(gamma)``.
* Wigner-D: ``D^l_{mn}(alpha, beta, gamma) = exp(-i m alpha) d^l_{mn}(beta) exp(-i n gamma)``
  with ``d^l(beta) = exp(-i beta J_y)``.  Rows/columns are ordered ``m = -l..l``.
* Spherical harmonics are the basis induced from SO(3) by the zero section
  ``gamma = 0``::

      Y_l^m(theta, phi) = sqrt((2l+1)/(4 pi)) * D^l_{m0}(phi, theta, 0)

  i.e. ``Y_l^m = Pbar_l^m(cos theta) exp(-i m phi) / sqrt(2 pi)`` for ``m >= 0``.
  This is the complex conjugate of the common physics convention.  It obeys
  ``Y_l^{-m} = (-1)^m conj(Y_l^m)``.
* S^2 measure has total area 4 pi.  Haar measure on SO(3) has total mass 1, so
  ``f(g) = sum_l (2l+1) sum_{mn} fhat^l_{mn} D^l_{mn}(g)`` and
  ``fhat^l_{mn} = int f conj(D^l_{mn}) dmu``.

Grids are Driscoll-Healy style equiangular grids of size ``2B`` per angle with
colatitude nodes ``pi (2j+1) / (4B)``.

Spectra are kept in zero-padded dense layouts internally:
S^2 coefficients as ``(..., B, 2B-1)`` indexed ``[l, m + B - 1]`` and SO(3)
coefficients as ``(..., B, 2B-1, 2B-1)`` indexed ``[l, m + B - 1, n + B - 1]``.
Padded SO(3) blocks multiply correctly with ``@`` since the padding is zero.
The public transforms exchange flat ``(..., B**2)`` S^2 coefficient vectors
(index ``l*l + l + m``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def check_bandwidth(B: int) -> int:
    if isinstance(B, bool) or int(B) != B or B < 1:
        raise ValueError(f"bandwidth must be a positive integer, got {B!r}")
    return int(B)


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------


def assoc_legendre(l: int, m: int, x):
    """Fully normalized associated Legendre function ``Pbar_l^m(x)``.

    Normalized so that ``int_{-1}^{1} Pbar_l^m(x)^2 dx = 1`` and includes the
    Condon-Shortley phase.  ``Pbar_0^0 = 1/sqrt(2)``.  Evaluated with the
    standard stable three-term recurrence in ``l``.
    """
    if l < 0 or m < 0 or m > l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("x must lie in [-1, 1]")
    return _legendre_upto(l, m, x)[-1]


def _legendre_upto(lmax: int, m: int, x: np.ndarray) -> list:
    """Return ``[Pbar_m^m(x), ..., Pbar_lmax^m(x)]``."""
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    # Pbar_m^m = (-1)^m sqrt((2m+1)/2 * prod_{k<=m} (2k-1)/(2k)) s^m
    pmm = np.full_like(x, math.sqrt(0.5))
    for k in range(1, m + 1):
        pmm = -pmm * s * math.sqrt((2 * k + 1) / (2 * k))
    out = [pmm]
    if lmax == m:
        return out
    out.append(x * math.sqrt(2 * m + 3) * pmm)
    for l in range(m + 2, lmax + 1):
        a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
        b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
        out.append(a * (x * out[-1] - b * out[-2]))
    return out


def sph_harm(l: int, m: int, theta, phi):
    """Spherical harmonic ``Y_l^m(theta, phi)`` in the induced-basis convention.

    ``theta`` is colatitude and ``phi`` longitude, both in radians.
    """
    if l < 0 or abs(m) > l:
        raise ValueError(f"need |m| <= l, got l={l}, m={m}")
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(theta < -1e-12) or np.any(theta > np.pi + 1e-12):
        raise ValueError("theta must lie in [0, pi]")
    am = abs(m)
    p = _legendre_upto(l, am, np.clip(np.cos(theta), -1.0, 1.0))[-1]
    y = p * np.exp(-1j * am * phi) / math.sqrt(2 * math.pi)
    if m < 0:
        y = (-1) ** am * np.conj(y)
    return y


@lru_cache(maxsize=None)
def _jy_eigen(l: int):
    # J_y = (J+ - J-) / 2i on the basis |l, m>, m = -l..l
    ms = np.arange(-l, l + 1)
    jp = np.zeros((2 * l + 1, 2 * l + 1))
    for k, m in enumerate(ms[:-1]):
        jp[k + 1, k] = math.sqrt((l - m) * (l + m + 1))
    jy = (jp - jp.T) / 2j
    lam, vec = np.linalg.eigh(jy)
    return lam, vec


def wigner_d(l: int, beta):
    """Wigner small-d matrix ``d^l(beta)`` of shape ``(2l+1, 2l+1)``.

    ``beta`` may be an array, in which case the result has shape
    ``beta.shape + (2l+1, 2l+1)``.  Computed from the spectral decomposition of
    the angular momentum operator ``J_y``.
    """
    if l < 0:
        raise ValueError(f"degree must be non-negative, got {l}")
    lam, vec = _jy_eigen(l)
    beta = np.asarray(beta, dtype=float)
    phase = np.exp(-1j * beta[..., None] * lam)
    d = np.einsum("ik,...k,jk->...ij", vec, phase, vec.conj())
    return d.real


def wigner_D(l: int, alpha, beta, gamma):
    """Wigner-D matrix ``D^l(alpha, beta, gamma)`` (ZYZ)."""
    m = np.arange(-l, l + 1)
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    left = np.exp(-1j * m * alpha[..., None])
    right = np.exp(-1j * m * gamma[..., None])
    return left[..., :, None] * wigner_d(l, beta) * right[..., None, :]


# ---------------------------------------------------------------------------
# Grids and quadrature
# ---------------------------------------------------------------------------


def s2_grid(B: int):
    """Colatitude and longitude nodes ``(theta, phi)``, each of length 2B."""
    B = check_bandwidth(B)
    theta = np.pi * (2 * np.arange(2 * B) + 1) / (4 * B)
    phi = np.pi * np.arange(2 * B) / B
    return theta, phi


def so3_grid(B: int):
    """Euler nodes ``(alpha, beta, gamma)``, each of length 2B."""
    theta, phi = s2_grid(B)
    return phi.copy(), theta, phi.copy()


@lru_cache(maxsize=None)
def dh_weights(B: int) -> np.ndarray:
    """Colatitude weights with ``sum_j w_j p(cos theta_j) = int_0^pi p(cos t) sin t dt``
    for every polynomial ``p`` of degree below 2B."""
    theta, _ = s2_grid(B)
    k = np.arange(B)
    w = (2.0 / B) * np.sin(theta) * (np.sin(np.outer(theta, 2 * k + 1)) / (2 * k + 1)).sum(axis=1)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=None)
def s2_quadrature(B: int) -> np.ndarray:
    """Per-sample weights on the 2B x 2B grid; they sum to 4 pi."""
    w = dh_weights(B)
    q = np.repeat((w * np.pi / B)[:, None], 2 * B, axis=1)
    q.flags.writeable = False
    return q


@lru_cache(maxsize=None)
def so3_quadrature(B: int) -> np.ndarray:
    """Per-sample weights on the (alpha, beta, gamma) grid; they sum to 1."""
    w = dh_weights(B) / (2.0 * (2 * B) ** 2)
    q = np.broadcast_to(w[None, :, None], (2 * B, 2 * B, 2 * B)).copy()
    q.flags.writeable = False
    return q


# ---------------------------------------------------------------------------
# Precomputed tables (built once per bandwidth, shared read-only)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _s2_table(B: int) -> np.ndarray:
    """``T[l, m + B - 1, j] = Y_l^m(theta_j, 0)`` (real), zero for |m| > l."""
    theta, _ = s2_grid(B)
    x = np.cos(theta)
    T = np.zeros((B, 2 * B - 1, 2 * B))
    for m in range(B):
        ps = _legendre_upto(B - 1, m, x)
        for l in range(m, B):
            v = ps[l - m] / math.sqrt(2 * math.pi)
            T[l, B - 1 + m] = v
            T[l, B - 1 - m] = (-1) ** m * v
    T.flags.writeable = False
    return T


@lru_cache(maxsize=None)
def _so3_table(B: int) -> np.ndarray:
    """``T[l, m + B - 1, n + B - 1, j] = d^l_{mn}(beta_j)``, zero outside the block."""
    _, beta, _ = so3_grid(B)
    T = np.zeros((B, 2 * B - 1, 2 * B - 1, 2 * B))
    for l in range(B):
        sl = slice(B - 1 - l, B + l)
        T[l, sl, sl] = np.moveaxis(wigner_d(l, beta), 0, -1)
    T.flags.writeable = False
    return T


@lru_cache(maxsize=None)
def _orders(B: int) -> np.ndarray:
    """FFT bin of each order ``m = -(B-1)..B-1`` for a length-2B transform."""
    return np.arange(-(B - 1), B) % (2 * B)


@lru_cache(maxsize=None)
def _flat_index(B: int):
    l = np.repeat(np.arange(B), 2 * np.arange(B) + 1)
    m = np.concatenate([np.arange(-k, k + 1) for k in range(B)])
    return l, m + B - 1


def flat_index(l: int, m: int) -> int:
    """Position of ``(l, m)`` in a flat S^2 coefficient vector."""
    return l * l + l + m


def s2_to_dense(c: np.ndarray, B: int) -> np.ndarray:
    c = np.asarray(c)
    if c.shape[-1] != B * B:
        raise ValueError(f"expected {B * B} coefficients, got {c.shape[-1]}")
    li, mi = _flat_index(B)
    out = np.zeros(c.shape[:-1] + (B, 2 * B - 1), dtype=np.result_type(c, complex))
    out[..., li, mi] = c
    return out


def s2_from_dense(d: np.ndarray) -> np.ndarray:
    B = d.shape[-2]
    li, mi = _flat_index(B)
    return d[..., li, mi]


def degree_weights(B: int) -> np.ndarray:
    """``2l + 1`` broadcastable against a dense SO(3) spectrum."""
    return (2 * np.arange(B) + 1.0)[:, None, None]


# ---------------------------------------------------------------------------
# Transforms.  The raw analysis/synthesis pairs are exact adjoints of each
# other; the forward transforms apply quadrature weights before analysis.
# ---------------------------------------------------------------------------


def _check_grid(f: np.ndarray, B: int, ndim: int) -> None:
    if f.ndim < ndim or any(s != 2 * B for s in f.shape[-ndim:]):
        raise ValueError(f"signal grid {f.shape[-ndim:]} does not match bandwidth {B}")


def s2_analysis(f: np.ndarray, B: int) -> np.ndarray:
    """``sum_{jk} f[j, k] conj(Y_l^m(theta_j, phi_k))`` as a dense spectrum."""
    _check_grid(f, B, 2)
    A = np.fft.ifft(f, axis=-1) * (2 * B)
    A = A[..., _orders(B)]
    return np.einsum("...jm,lmj->...lm", A, _s2_table(B))


def s2_synthesis(c: np.ndarray, B: int) -> np.ndarray:
    """Evaluate ``sum c[l, m] Y_l^m`` on the grid from a dense spectrum."""
    G = np.einsum("...lm,lmj->...jm", c, _s2_table(B))
    full = np.zeros(G.shape[:-1] + (2 * B,), dtype=complex)
    full[..., _orders(B)] = G
    return np.fft.fft(full, axis=-1)


def so3_analysis(f: np.ndarray, B: int) -> np.ndarray:
    """``sum_{grid} f conj(D^l_{mn})`` as a dense padded spectrum."""
    _check_grid(f, B, 3)
    A = np.fft.ifft2(f, axes=(-3, -1)) * (2 * B) ** 2
    o = _orders(B)
    A = A[..., o, :, :][..., o]
    return np.einsum("...mjn,lmnj->...lmn", A, _so3_table(B))


def so3_synthesis(c: np.ndarray, B: int) -> np.ndarray:
    """Evaluate ``sum_l sum_{mn} c[l, m, n] D^l_{mn}`` on the grid."""
    Bc = c.shape[-3]
    if Bc > B:
        raise ValueError(f"spectrum bandwidth {Bc} exceeds grid bandwidth {B}")
    if Bc < B:
        c = so3_pad(c, B)
    G = np.einsum("...lmn,lmnj->...mjn", c, _so3_table(B))
    o = _orders(B)
    tmp = np.zeros(G.shape[:-3] + (2 * B, 2 * B, 2 * B - 1), dtype=complex)
    tmp[..., o, :, :] = G
    full = np.zeros(G.shape[:-3] + (2 * B, 2 * B, 2 * B), dtype=complex)
    full[..., o] = tmp
    return np.fft.fft2(full, axes=(-3, -1))


def so3_pad(c: np.ndarray, B: int) -> np.ndarray:
    """Embed or truncate a dense SO(3) spectrum at bandwidth ``B``."""
    Bc = c.shape[-3]
    out = np.zeros(c.shape[:-3] + (B, 2 * B - 1, 2 * B - 1), dtype=c.dtype)
    k = min(B, Bc)
    src = slice(Bc - k, Bc + k - 1)
    dst = slice(B - k, B + k - 1)
    out[..., :k, dst, dst] = c[..., :k, src, src]
    return out


def s2_pad(c: np.ndarray, B: int) -> np.ndarray:
    """Embed or truncate a dense S^2 spectrum at bandwidth ``B``."""
    Bc = c.shape[-2]
    out = np.zeros(c.shape[:-2] + (B, 2 * B - 1), dtype=c.dtype)
    k = min(B, Bc)
    out[..., :k, B - k:B + k - 1] = c[..., :k, Bc - k:Bc + k - 1]
    return out


def sht_forward(f: np.ndarray, B: int | None = None) -> np.ndarray:
    """Forward spherical harmonic transform of samples ``(..., 2B, 2B)``.

    Returns flat coefficients ``(..., B**2)``; exact for band-limited input.
    """
    f = np.asarray(f)
    if B is None:
        B = f.shape[-1] // 2
    B = check_bandwidth(B)
    return s2_from_dense(s2_analysis(f * s2_quadrature(B), B))


def sht_inverse(c: np.ndarray, B: int | None = None) -> np.ndarray:
    """Inverse spherical harmonic transform; complex samples ``(..., 2B, 2B)``."""
    c = np.asarray(c)
    if B is None:
        B = math.isqrt(c.shape[-1])
    B = check_bandwidth(B)
    return s2_synthesis(s2_to_dense(c, B), B)


def so3_ft_forward(f: np.ndarray, B: int | None = None) -> np.ndarray:
    """Fourier transform on SO(3) of samples ``(..., 2B, 2B, 2B)``.

    Returns the dense padded spectrum ``(..., B, 2B-1, 2B-1)``.
    """
    f = np.asarray(f)
    if B is None:
        B = f.shape[-1] // 2
    B = check_bandwidth(B)
    return so3_analysis(f * so3_quadrature(B), B)


def so3_ft_inverse(c: np.ndarray, B: int | None = None) -> np.ndarray:
    """Inverse SO(3) Fourier transform; complex samples on the Euler grid."""
    c = np.asarray(c)
    if B is None:
        B = c.shape[-3]
    return so3_synthesis(c * degree_weights(c.shape[-3]), check_bandwidth(B))


# ---------------------------------------------------------------------------
# Spectrum containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class S2Spectrum:
    """Flat harmonic coefficients of one S^2 signal."""

    B: int
    coeffs: np.ndarray

    def __post_init__(self):
        check_bandwidth(self.B)
        if np.shape(self.coeffs)[-1:] != (self.B ** 2,):
            raise ValueError("S2 spectrum must hold exactly B**2 coefficients")

    def __getitem__(self, lm):
        l, m = lm
        if not (0 <= l < self.B and abs(m) <= l):
            raise IndexError(lm)
        return self.coeffs[..., flat_index(l, m)]

    def is_real_signal(self, atol: float = 1e-10) -> bool:
        """Check ``f_l^{-m} = (-1)^m conj(f_l^m)``."""
        d = s2_to_dense(self.coeffs, self.B)
        return bool(np.allclose(d, _s2_mirror(d), atol=atol))


def _s2_mirror(d: np.ndarray) -> np.ndarray:
    B = d.shape[-2]
    m = np.arange(-(B - 1), B)
    return ((-1.0) ** np.abs(m)) * np.conj(d[..., ::-1])


@dataclass(frozen=True)
class SO3Spectrum:
    """Per-degree Fourier blocks of one SO(3) signal."""

    B: int
    blocks: tuple

    def __post_init__(self):
        check_bandwidth(self.B)
        if len(self.blocks) != self.B:
            raise ValueError("need one block per degree")
        for l, b in enumerate(self.blocks):
            if np.shape(b)[-2:] != (2 * l + 1, 2 * l + 1):
                raise ValueError(f"block {l} must be {2 * l + 1}x{2 * l + 1}")

    @classmethod
    def from_dense(cls, c: np.ndarray) -> "SO3Spectrum":
        B = c.shape[-3]
        return cls(B, tuple(c[..., l, B - 1 - l:B + l, B - 1 - l:B + l].copy() for l in range(B)))

    def to_dense(self) -> np.ndarray:
        B = self.B
        lead = np.shape(self.blocks[0])[:-2]
        out = np.zeros(lead + (B, 2 * B - 1, 2 * B - 1), dtype=complex)
        for l, b in enumerate(self.blocks):
            out[..., l, B - 1 - l:B + l, B - 1 - l:B + l] = b
        return out

    @property
    def n_coeffs(self) -> int:
        return sum(int(np.prod(np.shape(b)[-2:])) for b in self.blocks)


def so3_coeff_count(B: int) -> int:
    return B * (4 * B * B - 1) // 3


# ---------------------------------------------------------------------------
# Real parameterization, dense Wigner blocks, pointwise evaluation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def real_basis(B: int) -> np.ndarray:
    """Dense per-degree unitary ``U`` mapping real coefficients to complex ones.

    For real ``a``, ``U a`` satisfies the conjugate symmetry of a real S^2
    signal; for real ``P``, ``U P U^T`` satisfies that of a real SO(3) signal.
    """
    M = 2 * B - 1
    U = np.zeros((B, M, M), dtype=complex)
    r = 1 / math.sqrt(2)
    c = B - 1
    for l in range(B):
        U[l, c, c] = 1.0
        for m in range(1, l + 1):
            s = (-1) ** m
            U[l, c + m, c + m] = r
            U[l, c + m, c - m] = -1j * r
            U[l, c - m, c + m] = s * r
            U[l, c - m, c - m] = 1j * s * r
    U.flags.writeable = False
    return U


def s2_real_to_complex(a: np.ndarray) -> np.ndarray:
    """Map real dense coefficients ``(..., B, 2B-1)`` to complex ones."""
    return np.einsum("lmk,...lk->...lm", real_basis(a.shape[-2]), a)


def so3_real_to_complex(P: np.ndarray) -> np.ndarray:
    """Map real dense blocks ``(..., B, 2B-1, 2B-1)`` to complex ones."""
    U = real_basis(P.shape[-3])
    return np.einsum("lmk,...lkq,lnq->...lmn", U, P, U)


def s2_mask(B: int) -> np.ndarray:
    """Boolean ``(B, 2B-1)`` mask of valid ``(l, m)`` entries."""
    m = np.abs(np.arange(-(B - 1), B))
    return m[None, :] <= np.arange(B)[:, None]


def so3_mask(B: int) -> np.ndarray:
    """Boolean ``(B, 2B-1, 2B-1)`` mask of valid ``(l, m, n)`` entries."""
    k = s2_mask(B)
    return k[:, :, None] & k[:, None, :]


def wigner_D_dense(B: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """All blocks ``D^l(alpha, beta, gamma)``, ``l < B``, zero-padded to ``(B, 2B-1, 2B-1)``."""
    out = np.zeros((B, 2 * B - 1, 2 * B - 1), dtype=complex)
    for l in range(B):
        out[l, B - 1 - l:B + l, B - 1 - l:B + l] = wigner_D(l, alpha, beta, gamma)
    return out


def s2_evaluate(c: np.ndarray, theta, phi) -> np.ndarray:
    """Evaluate flat S^2 coefficients ``c`` at arbitrary points."""
    B = math.isqrt(c.shape[-1])
    theta = np.asarray(theta, dtype=float)
    out = 0
    for l in range(B):
        for m in range(-l, l + 1):
            out = out + c[..., flat_index(l, m), None] * sph_harm(l, m, theta, phi).ravel()
    return np.reshape(out, c.shape[:-1] + theta.shape)


def so3_evaluate(c: np.ndarray, alpha, beta, gamma) -> np.ndarray:
    """Evaluate a dense SO(3) spectrum at arbitrary Euler angles."""
    B = c.shape[-3]
    beta = np.asarray(beta, dtype=float)
    out = 0
    for l in range(B):
        D = wigner_D(l, np.ravel(alpha), beta.ravel(), np.ravel(gamma))
        blk = c[..., l, B - 1 - l:B + l, B - 1 - l:B + l]
        out = out + (2 * l + 1) * np.einsum("...mn,pmn->...p", blk, D)
    return np.reshape(out, c.shape[:-3] + beta.shape)
