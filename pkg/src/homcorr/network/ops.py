"""Differentiable spectral operators with hand-written adjoints.

Kernels are parameterized by real coefficients in the real harmonic basis
(``homcorr.harmonics.real_basis``), stored compactly: an S^2 kernel of
bandwidth ``Bk`` has ``Bk**2`` reals per channel pair and an SO(3) kernel has
``Bk (4 Bk**2 - 1) / 3``.  Complex gradients follow the convention
``g = dL/dRe + i dL/dIm``, under which the adjoint of a complex-linear map
``A`` is ``A^H``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import harmonics as hm
from .autodiff import Value


@lru_cache(maxsize=None)
def s2_param_index(Bk: int):
    return np.nonzero(hm.s2_mask(Bk))


@lru_cache(maxsize=None)
def so3_param_index(Bk: int):
    return np.nonzero(hm.so3_mask(Bk))


def s2_kernel_size(Bk: int) -> int:
    return Bk * Bk


def so3_kernel_size(Bk: int) -> int:
    return hm.so3_coeff_count(Bk)


def s2_kernel_dense(p: np.ndarray, Bk: int) -> np.ndarray:
    """Compact real params ``(..., Bk**2)`` -> complex dense spectrum."""
    a = np.zeros(p.shape[:-1] + (Bk, 2 * Bk - 1))
    a[(...,) + s2_param_index(Bk)] = p
    return hm.s2_real_to_complex(a)


def so3_kernel_dense(p: np.ndarray, Bk: int) -> np.ndarray:
    M = 2 * Bk - 1
    a = np.zeros(p.shape[:-1] + (Bk, M, M))
    a[(...,) + so3_param_index(Bk)] = p
    return hm.so3_real_to_complex(a)


def _s2_kernel_adjoint(gW: np.ndarray, Bk: int) -> np.ndarray:
    U = hm.real_basis(Bk)
    ga = np.einsum("lkm,...lk->...lm", np.conj(U), gW).real
    return ga[(...,) + s2_param_index(Bk)]


def _so3_kernel_adjoint(gW: np.ndarray, Bk: int) -> np.ndarray:
    Uc = np.conj(hm.real_basis(Bk))
    ga = np.einsum("lam,...lab,lbn->...lmn", Uc, gW, Uc).real
    return ga[(...,) + so3_param_index(Bk)]


def corr_s2_op(f: Value, p: Value, Bk: int, B_out: int) -> Value:
    """Correlate S^2 samples ``(N, c_in, 2B, 2B)`` with compact kernels
    ``(c_in, c_out, Bk**2)``; returns SO(3) samples ``(N, c_out, 2B_out, ...)``."""
    B = f.shape[-1] // 2
    if Bk > B:
        raise ValueError(f"kernel bandwidth {Bk} exceeds input bandwidth {B}")
    q = hm.s2_quadrature(B)
    fh = hm.s2_pad(hm.s2_analysis(f.data * q, B), Bk)
    W = s2_kernel_dense(p.data, Bk)
    H = np.einsum("bilm,ioln->bolmn", fh, np.conj(W))
    out = hm.so3_synthesis(hm.so3_pad(H, B_out), B_out).real

    def back(g):
        G = hm.so3_pad(hm.so3_analysis(g, B_out), Bk)
        gf = gp = None
        if f.requires_grad:
            gfh = np.einsum("bolmk,iolk->bilm", G, W)
            gf = (hm.s2_synthesis(hm.s2_pad(gfh, B), B) * q).real
        if p.requires_grad:
            gW = np.einsum("bolmn,bilm->ioln", np.conj(G), fh)
            gp = _s2_kernel_adjoint(gW, Bk)
        return gf, gp

    return Value(out, (f, p), "corr_s2", back)


def corr_so3_op(f: Value, p: Value, Bk: int, B_out: int) -> Value:
    """Correlate SO(3) samples ``(N, c_in, 2B, 2B, 2B)`` with compact kernels."""
    B = f.shape[-1] // 2
    if Bk > B:
        raise ValueError(f"kernel bandwidth {Bk} exceeds input bandwidth {B}")
    q = hm.so3_quadrature(B)
    Fh = hm.so3_pad(hm.so3_analysis(f.data * q, B), Bk)
    W = so3_kernel_dense(p.data, Bk)
    H = np.einsum("bilmk,iolnk->bolmn", Fh, np.conj(W))
    dw = hm.degree_weights(Bk)
    out = hm.so3_synthesis(hm.so3_pad(H * dw, B_out), B_out).real

    def back(g):
        G = hm.so3_pad(hm.so3_analysis(g, B_out), Bk) * dw
        gf = gp = None
        if f.requires_grad:
            gF = np.einsum("bolmn,iolnk->bilmk", G, W)
            gf = (hm.so3_synthesis(hm.so3_pad(gF, B), B) * q).real
        if p.requires_grad:
            gW = np.einsum("bolmn,bilmk->iolnk", np.conj(G), Fh)
            gp = _so3_kernel_adjoint(gW, Bk)
        return gf, gp

    return Value(out, (f, p), "corr_so3", back)


def dilated_conv1d_op(x: Value, w: Value, dilation: int) -> Value:
    """Causal dilated convolution of ``x`` ``(N, T, c_in)`` with ``w`` ``(k, c_in, c_out)``.

    ``y[n, s] = sum_i x[n, s - dilation * i] @ w[i]`` with zero left padding.
    """
    N, T, _ = x.shape
    k = w.shape[0]
    y = np.zeros((N, T, w.shape[2]))
    for i in range(k):
        sh = dilation * i
        if sh < T:
            y[:, sh:] += x.data[:, :T - sh] @ w.data[i]

    def back(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for i in range(k):
            sh = dilation * i
            if sh < T:
                gx[:, :T - sh] += g[:, sh:] @ w.data[i].T
                gw[i] = np.einsum("ntc,nto->co", x.data[:, :T - sh], g[:, sh:])
        return gx, gw

    return Value(y, (x, w), "dilated_conv1d", back)
