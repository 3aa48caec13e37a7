"""Property suites behind ``homcorr verify``.

Each suite returns an ordered list of :class:`Property` results holding the
maximum observed error and its tolerance.  Trial counts are arguments so the
CLI can run quick versions and the acceptance tests full ones.  All randomness
comes from the suite seed, so reports are reproducible byte for byte.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import harmonics as hm
from . import dilated as dl
from . import equivariant_ops as eo
from .network import autodiff as ad
from .network.model import Model, ModelSpec
from .signals import Rotation, random_bandlimited, rotate_s2, rotate_so3

SUITES = ("transforms", "equivariance", "volterra", "gradients", "dilated")


@dataclass
class Property:
    suite: str
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error < self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def _rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


# ---------------------------------------------------------------------------
# Fault injection (test harness hook)
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def inject_fault(name: str | None):
    """Temporarily corrupt a primitive.  ``"wigner_sign"`` flips the sign of
    one off-diagonal entry of every ``d^l`` with ``l >= 1``."""
    if name is None:
        yield
        return
    if name != "wigner_sign":
        raise ValueError(f"unknown fault {name!r}")
    original = hm.wigner_d

    def faulty(l, beta):
        d = np.array(original(l, beta))
        if l >= 1:
            d[..., 0, 1] *= -1.0
        return d

    # cached tables built from d^l must not outlive the fault
    cached = (hm._so3_table,)
    for fn in cached:
        fn.cache_clear()
    hm.wigner_d = faulty
    try:
        yield
    finally:
        hm.wigner_d = original
        for fn in cached:
            fn.cache_clear()


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def transforms_suite(seed: int = 0, bandwidths=(2, 4, 8, 16)) -> list:
    rt_s2 = rt_so3 = pars = 0.0
    for B in bandwidths:
        rng = _rng(seed, 1, B)
        c = (rng.standard_normal(B * B) + 1j * rng.standard_normal(B * B))
        f = hm.sht_inverse(c, B)
        rt_s2 = max(rt_s2, np.max(np.abs(hm.sht_forward(f, B) - c)))
        rt_s2 = max(rt_s2, np.max(np.abs(hm.sht_inverse(hm.sht_forward(f, B), B) - f)))
        pars = max(pars, abs(np.sum(hm.s2_quadrature(B) * np.abs(f) ** 2) - np.sum(np.abs(c) ** 2)))
        M = 2 * B - 1
        C = (rng.standard_normal((B, M, M)) + 1j * rng.standard_normal((B, M, M))) * hm.so3_mask(B)
        F = hm.so3_ft_inverse(C, B)
        rt_so3 = max(rt_so3, np.max(np.abs(hm.so3_ft_forward(F, B) - C)))
        rt_so3 = max(rt_so3, np.max(np.abs(hm.so3_ft_inverse(hm.so3_ft_forward(F, B), B) - F)))
        energy = np.sum(hm.so3_quadrature(B) * np.abs(F) ** 2)
        spec_energy = np.sum(hm.degree_weights(B) * np.abs(C) ** 2)
        pars = max(pars, abs(energy - spec_energy))
    return [
        Property("transforms", "s2_round_trip", float(rt_s2), 1e-9),
        Property("transforms", "so3_round_trip", float(rt_so3), 1e-9),
        Property("transforms", "parseval", float(pars), 1e-9),
        Property("transforms", "induced_basis", induced_basis_error(8), 1e-10),
    ]


def induced_basis_error(B: int = 8) -> float:
    """``max |Y_l^m - sqrt((2l+1)/4pi) D^l_{m0}(phi, theta, 0)|`` on the B grid."""
    theta, phi = hm.s2_grid(B)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    err = 0.0
    for l in range(B):
        D = hm.wigner_D(l, P.ravel(), T.ravel(), np.zeros(T.size))
        for m in range(-l, l + 1):
            y = hm.sph_harm(l, m, T, P).ravel()
            rhs = math.sqrt((2 * l + 1) / (4 * math.pi)) * D[..., m + l, l]
            err = max(err, float(np.max(np.abs(y - rhs))))
    return err


def action_error(seed: int, trials: int = 5, B: int = 4) -> float:
    """Spectral pullback vs pointwise evaluation of ``f(g^-1 x)``."""
    err = 0.0
    theta, phi = hm.s2_grid(B)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    pts = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    for t in range(trials):
        rng = _rng(seed, 2, t)
        f = random_bandlimited(B, seed=int(rng.integers(2**31)))[0]
        g = Rotation.random(rng)
        q = g.inverse().apply(pts)
        th = np.arccos(np.clip(q[:, 2], -1, 1))
        ph = np.arctan2(q[:, 1], q[:, 0])
        direct = hm.s2_evaluate(hm.sht_forward(f, B), th, ph).real.reshape(f.shape)
        err = max(err, rel_err(rotate_s2(f, g), direct))
    return err


def corr_equivariance(seed: int, trials: int, bandwidths=range(2, 9)) -> tuple:
    """Max relative equivariance errors of ``corr_s2`` and ``corr_so3``."""
    es2 = eso3 = 0.0
    bws = list(bandwidths)
    for t in range(trials):
        rng = _rng(seed, 3, t)
        B = bws[t % len(bws)]
        g = Rotation.random(rng)
        s = lambda: int(rng.integers(2**31))
        f = random_bandlimited(B, 2, s())
        w = eo.S2Kernel.random(B, 2, 2, s())
        es2 = max(es2, rel_err(eo.corr_s2(rotate_s2(f, g), w), rotate_so3(eo.corr_s2(f, w), g)))
        F = random_bandlimited(B, 2, s(), space="so3")
        W = eo.SO3Kernel.random(B, 2, 2, s())
        eso3 = max(eso3, rel_err(eo.corr_so3(rotate_so3(F, g), W), rotate_so3(eo.corr_so3(F, W), g)))
    return es2, eso3


def imag_residue(seed: int, bandwidths=(2, 4, 8)) -> float:
    """Largest imaginary part of correlation outputs relative to their size.

    Real signals and kernels give real outputs, so this is pure roundoff; the
    operators drop it and this health metric checks it stays tiny.
    """
    worst = 0.0
    for B in bandwidths:
        rng = _rng(seed, 12, B)
        s = lambda: int(rng.integers(2**31))
        outs = [eo.corr_s2(random_bandlimited(B, 2, s()), eo.S2Kernel.random(B, 2, 2, s()),
                           keep_complex=True),
                eo.corr_so3(random_bandlimited(B, 2, s(), space="so3"),
                            eo.SO3Kernel.random(B, 2, 2, s()), keep_complex=True)]
        for out in outs:
            worst = max(worst, float(np.max(np.abs(out.imag)) / np.max(np.abs(out.real))))
    return worst


def equivariance_suite(seed: int = 0, trials: int = 14) -> list:
    es2, eso3 = corr_equivariance(seed, trials)
    return [
        Property("equivariance", "pullback_action", action_error(seed), 1e-10),
        Property("equivariance", "corr_s2", es2, 1e-8),
        Property("equivariance", "corr_so3", eso3, 1e-8),
        Property("equivariance", "imag_residue", imag_residue(seed), 1e-10),
    ]


def corr_oracle_error(seed: int, bandwidths=(2, 3, 4)) -> float:
    err = 0.0
    for B in bandwidths:
        rng = _rng(seed, 4, B)
        s = lambda: int(rng.integers(2**31))
        rots = eo.grid_rotations(B)
        f = random_bandlimited(B, 1, s())
        w = eo.S2Kernel.random(B, 1, 1, s())
        spec = eo.corr_s2(f, w)[0].ravel()
        brute = eo.corr_s2_bruteforce(f[0], w.samples(B)[0, 0], rots)
        err = max(err, rel_err(spec, brute))
        F = random_bandlimited(B, 1, s(), space="so3")
        W = eo.SO3Kernel.random(B, 1, 1, s())
        spec = eo.corr_so3(F, W)[0].ravel()
        brute = eo.corr_so3_bruteforce(F[0], W.samples(B)[0, 0], rots)
        err = max(err, rel_err(spec, brute))
    return err


def volterra_oracle_error(seed: int, B: int = 3) -> tuple:
    """(volterra2 vs double integral, factorization identity) at ``B``."""
    rng = _rng(seed, 5, B)
    s = lambda: int(rng.integers(2**31))
    rots = eo.grid_rotations(B)
    e_vol = e_fac = 0.0
    for space in ("s2", "so3"):
        f = random_bandlimited(B, 1, s(), space=space)
        layer = eo.VolterraLayer.random(space, B, 1, 1, mix=0.0, seed=s())
        a, b = layer.w2a.samples(B)[0, 0], layer.w2b.samples(B)[0, 0]
        vol = eo.volterra2_s2 if space == "s2" else eo.volterra2_so3
        spectral = vol(f, layer, B)[0].ravel()
        brute = eo.volterra2_bruteforce(f[0], a, b, rots, space)
        e_vol = max(e_vol, rel_err(spectral, brute))
        corr = eo.corr_s2_bruteforce if space == "s2" else eo.corr_so3_bruteforce
        product = corr(f[0], a, rots) * corr(f[0], b, rots)
        e_fac = max(e_fac, rel_err(brute, product))
    return e_vol, e_fac


def volterra_equivariance(seed: int, trials: int, bandwidths=(2, 3, 4)) -> tuple:
    es2 = eso3 = 0.0
    for t in range(trials):
        rng = _rng(seed, 6, t)
        B = bandwidths[t % len(bandwidths)]
        B_out = 2 * B - 1
        s = lambda: int(rng.integers(2**31))
        g = Rotation.random(rng)
        mix = float(rng.uniform())
        f = random_bandlimited(B, 1, s())
        L = eo.VolterraLayer.random("s2", B, 1, 2, mix=mix, seed=s())
        es2 = max(es2, rel_err(eo.volterra2_s2(rotate_s2(f, g), L, B_out),
                               rotate_so3(eo.volterra2_s2(f, L, B_out), g)))
        F = random_bandlimited(B, 1, s(), space="so3")
        L = eo.VolterraLayer.random("so3", B, 1, 2, mix=mix, seed=s())
        eso3 = max(eso3, rel_err(eo.volterra2_so3(rotate_so3(F, g), L, B_out),
                                 rotate_so3(eo.volterra2_so3(F, L, B_out), g)))
    return es2, eso3


def separable_characterization_error(seed: int, B: int = 3, terms: int = 3) -> float:
    """A sum of products of correlations equals a sum of ``lambda = 0`` Volterra terms."""
    rng = _rng(seed, 7)
    s = lambda: int(rng.integers(2**31))
    f = random_bandlimited(B, 1, s())
    direct = total = 0.0
    for _ in range(terms):
        L = eo.VolterraLayer.random("s2", B, 1, 1, mix=0.0, seed=s())
        direct = direct + eo.corr_s2(f, L.w2a, 2 * B - 1) * eo.corr_s2(f, L.w2b, 2 * B - 1)
        total = total + eo.volterra2_s2(f, L, 2 * B - 1)
    return rel_err(total, direct)


def volterra_suite(seed: int = 0, trials: int = 9) -> list:
    e_vol, e_fac = volterra_oracle_error(seed)
    es2, eso3 = volterra_equivariance(seed, trials)
    return [
        Property("volterra", "corr_oracle", corr_oracle_error(seed), 1e-8),
        Property("volterra", "volterra_oracle", e_vol, 1e-7),
        Property("volterra", "factorization", e_fac, 1e-10),
        Property("volterra", "separable_sum", separable_characterization_error(seed), 1e-10),
        Property("volterra", "volterra2_s2_equivariance", es2, 1e-8),
        Property("volterra", "volterra2_so3_equivariance", eso3, 1e-8),
    ]


def gradient_model(seed: int = 0) -> Model:
    spec = ModelSpec(3, 1, (
        {"kind": "corr2_s2", "channels": 3, "bandwidth": 3},
        {"kind": "relu"},
        {"kind": "corr2_so3", "channels": 3, "bandwidth": 2},
        {"kind": "relu"},
        {"kind": "invariant"},
        {"kind": "fc", "channels": 4},
    ))
    return Model(spec, seed)


def gradient_check(seed: int = 0, n_check: int = 100, eps: float = 1e-4) -> tuple:
    """Finite differences vs reverse mode on ``n_check`` sampled parameters.

    Parameters whose +-eps perturbation flips a ReLU input sign are skipped:
    the central difference straddles a kink there and measures nothing useful.
    Returns ``(max_rel_error, n_checked, n_skipped)``.
    """
    model = gradient_model(seed)
    rng = _rng(seed, 8)
    x = random_bandlimited(3, 1, int(rng.integers(2**31)), batch=(6,))
    y = rng.integers(0, 4, size=6)
    theta = model.get_flat()

    def loss(flat):
        model.set_flat(flat)
        return ad.cross_entropy(model.forward(x), y).item()

    model.set_flat(theta)
    ad.zero_grad(model.parameters())
    ad.cross_entropy(model.forward(x), y).backward()
    grad = model.grads_flat()
    base = model.activation_pattern(x)
    worst, checked, skipped = 0.0, 0, 0
    for i in rng.permutation(theta.size):
        if checked == n_check:
            break
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        model.set_flat(tp)
        kink = not np.array_equal(model.activation_pattern(x), base)
        model.set_flat(tm)
        kink = kink or not np.array_equal(model.activation_pattern(x), base)
        if kink:
            skipped += 1
            continue
        fd = (loss(tp) - loss(tm)) / (2 * eps)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-10))
        checked += 1
    model.set_flat(theta)
    return worst, checked, skipped


def gradients_suite(seed: int = 0, n_check: int = 100) -> list:
    worst, checked, _ = gradient_check(seed, n_check)
    if checked < n_check:
        worst = float("inf")
    return [Property("gradients", "model_fd_check", worst, 1e-3)]


def _ordinary_causal_conv(x, w):
    """Reference: full numpy convolution truncated to the input length."""
    T = x.shape[0]
    out = np.zeros((T, w.shape[2]))
    for ci in range(w.shape[1]):
        for co in range(w.shape[2]):
            out[:, co] += np.convolve(x[:, ci], w[:, ci, co])[:T]
    return out


def dilated_suite(seed: int = 0) -> list:
    rng = _rng(seed, 9)
    e_d1 = 0.0
    for _ in range(5):
        T, k, ci, co = (int(v) for v in rng.integers(1, 9, size=4))
        x = rng.standard_normal((T, ci))
        w = rng.standard_normal((k, ci, co))
        e_d1 = max(e_d1, float(np.max(np.abs(dl.dilated_conv1d(x, w, 1) - _ordinary_causal_conv(x, w)))))
    ex = max(
        float(np.max(np.abs(dl.dilated_conv1d([1, 2, 3, 4], [1, 1], 1) - [1, 3, 5, 7]))),
        float(np.max(np.abs(dl.dilated_conv1d([1, 2, 3, 4], [1, 1], 2) - [1, 2, 4, 6]))),
        float(np.max(np.abs(dl.dilated_conv1d([1, 2, 3, 4], [1], 3) - [1, 2, 3, 4]))),
    )
    return [
        Property("dilated", "d1_equals_ordinary_conv", e_d1, 1e-12),
        Property("dilated", "hand_examples", ex, 1e-15),
        Property("dilated", "receptive_field", receptive_field_error(seed), 1e-300),
        Property("dilated", "shell_volterra2_equivariance", shell_equivariance_error(seed), 1e-7),
    ]


def receptive_field_error(seed: int, trials: int = 5) -> float:
    """Largest output change at the last position when inputs strictly outside
    the receptive field are perturbed (must be exactly zero), or ``inf`` if an
    input inside the field has no effect."""
    rng = _rng(seed, 10)
    worst = 0.0
    for _ in range(trials):
        layers = tuple((int(rng.integers(1, 4)), int(rng.integers(1, 4)), 3) for _ in range(3))
        stack = dl.DilatedStack(layers)
        spec = dl.DilatedSpec(bandwidth=2, n_shells=1, head_channels=2, head_bandwidth=2,
                              stack=stack)
        net = dl.DilatedVolterraNet(spec, seed=int(rng.integers(2**31)))
        # nonnegative weights and inputs keep every ReLU path active
        net.set_flat(np.abs(net.get_flat()) + 0.1)
        rf = stack.receptive_field
        T = rf + 4
        h = rng.uniform(size=(1, T, spec.feature_dim))
        base = net.stack_forward(h).data
        far = h.copy()
        far[0, : T - 1 - rf] += rng.uniform(size=(T - 1 - rf, spec.feature_dim))
        worst = max(worst, float(np.max(np.abs(net.stack_forward(far).data - base))))
        near = h.copy()
        near[0, T - 1 - rf] += 1.0
        if np.array_equal(net.stack_forward(near).data, base):
            worst = float("inf")
    return worst


def shell_equivariance_error(seed: int, trials: int = 4, B: int = 3) -> float:
    rng = _rng(seed, 11)
    err = 0.0
    for _ in range(trials):
        f = random_bandlimited(B, 3, int(rng.integers(2**31)))
        layer = eo.VolterraLayer.random("s2", B, 1, 2, mix=float(rng.uniform()),
                                        seed=int(rng.integers(2**31)))
        w = rng.uniform(size=3)
        g = Rotation.random(rng)
        lhs = dl.shell_volterra2(rotate_s2(f, g), layer, w, 2 * B - 1)
        rhs = rotate_so3(dl.shell_volterra2(f, layer, w, 2 * B - 1), g)
        err = max(err, rel_err(lhs, rhs))
    return err


RUNNERS = {
    "transforms": transforms_suite,
    "equivariance": equivariance_suite,
    "volterra": volterra_suite,
    "gradients": gradients_suite,
    "dilated": dilated_suite,
}


def run(suite: str = "all", seed: int = 0, fault: str | None = None) -> list:
    names = SUITES if suite == "all" else (suite,)
    for n in names:
        if n not in RUNNERS:
            raise ValueError(f"unknown suite {n!r}")
    results = []
    with inject_fault(fault):
        for n in names:
            results += RUNNERS[n](seed)
    return results


def report(results: list, seed: int, suite: str) -> str:
    failing = [p for p in results if not p.passed]
    body = {
        "suite": suite,
        "seed": seed,
        "passed": not failing,
        "first_failure": f"{failing[0].suite}.{failing[0].name}" if failing else None,
        "properties": [p.to_dict() for p in results],
    }
    return json.dumps(body, indent=2, sort_keys=True)
