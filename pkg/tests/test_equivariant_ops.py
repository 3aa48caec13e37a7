import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homcorr import equivariant_ops as eo
from homcorr import harmonics as hm
from homcorr import signals as sg
from homcorr.signals import Rotation


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def constant_kernel(value):
    """S^2 kernel whose samples are the constant ``value``."""
    params = np.zeros((1, 1, 1, 1))
    params[..., 0, 0] = value * math.sqrt(4 * math.pi)
    return eo.S2Kernel.from_real(params)


class TestKernels:
    def test_real_kernel_samples_are_real(self):
        w = eo.S2Kernel.random(3, 2, 3, seed=1)
        assert w.channels == (2, 3) and w.B == 3
        full = hm.s2_synthesis(hm.s2_pad(w.spectrum, 4), 4)
        assert np.max(np.abs(full.imag)) < 1e-12

    def test_constant_kernel(self):
        np.testing.assert_allclose(constant_kernel(1.5).samples(3), 1.5, atol=1e-13)

    def test_so3_kernel_shapes(self):
        w = eo.SO3Kernel.random(2, 1, 2, seed=0)
        assert w.samples(3).shape == (1, 2, 6, 6, 6)

    def test_layer_validation(self):
        with pytest.raises(ValueError):
            eo.VolterraLayer.random("s2", 2, mix=1.5)
        a, b = eo.S2Kernel.random(2), eo.SO3Kernel.random(2)
        with pytest.raises(TypeError):
            eo.VolterraLayer(a, a, b)
        with pytest.raises(ValueError):
            eo.VolterraLayer(a, a, eo.S2Kernel.random(2, 2, 1))


class TestCorrS2:
    def test_constant_case(self):
        c = 0.7
        out = eo.corr_s2(np.full((1, 6, 6), c), constant_kernel(c))
        np.testing.assert_allclose(out, 4 * math.pi * c * c, atol=1e-12)

    def test_autocorrelation_at_identity(self):
        B = 5
        f = sg.random_bandlimited(B, seed=2)
        w = eo.S2Kernel(hm.s2_analysis(f * hm.s2_quadrature(B), B)[None])
        spec = eo.corr_s2_spectrum(f, w)[0]
        at_e = hm.so3_evaluate(spec, 0.0, 0.0, 0.0).real
        assert at_e == pytest.approx(sg.integrate_s2(f[0] ** 2), rel=1e-9)

    @pytest.mark.parametrize("B", [2, 3, 4])
    def test_matches_bruteforce(self, B):
        f = sg.random_bandlimited(B, seed=B)
        w = eo.S2Kernel.random(B, seed=10 + B)
        fast = eo.corr_s2(f, w)[0]
        brute = eo.corr_s2_bruteforce(f[0], w.samples(B)[0, 0], eo.grid_rotations(B))
        assert rel(fast.ravel(), brute) < 1e-8

    def test_channels_sum(self):
        B = 3
        f = sg.random_bandlimited(B, channels=2, seed=0)
        w = eo.S2Kernel.random(B, 2, 1, seed=1)
        total = eo.corr_s2(f, w)[0]
        parts = [eo.corr_s2(f[i:i + 1], eo.S2Kernel(w.spectrum[i:i + 1]))[0] for i in range(2)]
        assert np.max(np.abs(total - sum(parts))) < 1e-12

    def test_smaller_kernel_and_output_bandwidth(self):
        f = sg.random_bandlimited(4, seed=0)
        w = eo.S2Kernel.random(2, seed=1)
        assert eo.corr_s2(f, w).shape == (1, 8, 8, 8)
        assert eo.corr_s2(f, w, B_out=2).shape == (1, 4, 4, 4)
        with pytest.raises(eo.BandwidthError):
            eo.corr_s2(sg.random_bandlimited(2, seed=0), eo.S2Kernel.random(3))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            eo.corr_s2(sg.random_bandlimited(3, channels=2), eo.S2Kernel.random(3, 1, 1))
        with pytest.raises(ValueError):
            eo.corr_s2(np.zeros((6, 6)), eo.S2Kernel.random(3))

    @settings(max_examples=12, deadline=None)
    @given(B=st.integers(2, 8), seed=st.integers(0, 2**32))
    def test_equivariance(self, B, seed):
        rng = np.random.default_rng(seed)
        f = sg.random_bandlimited(B, channels=2, seed=seed)
        w = eo.S2Kernel.random(B, 2, 2, seed=seed + 1)
        g = Rotation.random(rng)
        lhs = eo.corr_s2(sg.rotate_s2(f, g), w)
        rhs = sg.rotate_so3(eo.corr_s2(f, w), g)
        assert rel(lhs, rhs) < 1e-8


class TestCorrSO3:
    def test_constant_input(self):
        B = 3
        w = eo.SO3Kernel.random(B, seed=4)
        out = eo.corr_so3(np.full((1, 6, 6, 6), 2.0), w)
        expected = 2.0 * sg.integrate_so3(w.samples(B)[0, 0])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("B", [2, 3])
    def test_matches_bruteforce(self, B):
        f = sg.random_bandlimited(B, seed=B, space="so3")
        w = eo.SO3Kernel.random(B, seed=20 + B)
        fast = eo.corr_so3(f, w)[0]
        brute = eo.corr_so3_bruteforce(f[0], w.samples(B)[0, 0], eo.grid_rotations(B))
        assert rel(fast.ravel(), brute) < 1e-8

    def test_concentrated_kernel_smooths(self):
        # a band-limited delta at the identity reproduces f exactly at full bandwidth
        B = 3
        f = sg.random_bandlimited(B, seed=1, space="so3")
        blocks = np.zeros((1, 1, B, 2 * B - 1, 2 * B - 1), complex)
        for l in range(B):
            blocks[..., l, :, :] = np.eye(2 * B - 1) * hm.so3_mask(B)[l][:, :]
        out = eo.corr_so3(f, eo.kernel_from_right_blocks(blocks))
        assert rel(out, f) < 1e-10

    @settings(max_examples=8, deadline=None)
    @given(B=st.integers(2, 6), seed=st.integers(0, 2**32))
    def test_equivariance(self, B, seed):
        rng = np.random.default_rng(seed)
        f = sg.random_bandlimited(B, seed=seed, space="so3")
        w = eo.SO3Kernel.random(B, 1, 2, seed=seed + 1)
        g = Rotation.random(rng)
        lhs = eo.corr_so3(sg.rotate_so3(f, g), w)
        rhs = sg.rotate_so3(eo.corr_so3(f, w), g)
        assert rel(lhs, rhs) < 1e-8


class TestBruteForce:
    def test_identity_self_correlation(self):
        f = sg.random_bandlimited(3, seed=5)[0]
        out = eo.corr_s2_bruteforce(f, f, [Rotation.identity()])
        assert out[0] == pytest.approx(sg.integrate_s2(f * f), rel=1e-12)

    def test_linearity(self):
        f1, f2 = sg.random_bandlimited(3, seed=1)[0], sg.random_bandlimited(3, seed=2)[0]
        w = sg.random_bandlimited(3, seed=3)[0]
        rots = eo.grid_rotations(2)[:10]
        lhs = eo.corr_s2_bruteforce(f1 + f2, w, rots)
        rhs = eo.corr_s2_bruteforce(f1, w, rots) + eo.corr_s2_bruteforce(f2, w, rots)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_cost_guard(self):
        f = np.zeros((14, 14))
        with pytest.raises(eo.BandwidthError):
            eo.corr_s2_bruteforce(f, f, [Rotation.identity()])
        assert eo.corr_s2_bruteforce(f, f, [Rotation.identity()], force=True)[0] == 0.0
        g = np.zeros((8, 8))
        with pytest.raises(eo.BandwidthError):
            eo.volterra2_bruteforce(g, g, g, [Rotation.identity()])
        with pytest.raises(ValueError):
            eo.volterra2_bruteforce(np.zeros((4, 4)), g, g, [], space="r3")

    def test_grid_rotation_order(self):
        rots = eo.grid_rotations(2)
        a, b, g = hm.so3_grid(2)
        assert len(rots) == 64
        np.testing.assert_allclose(rots[1].matrix(), Rotation(a[0], b[0], g[1]).matrix())
        np.testing.assert_allclose(rots[16].matrix(), Rotation(a[1], b[0], g[0]).matrix())


class TestVolterra:
    def test_first_order_limit(self):
        f = sg.random_bandlimited(3, seed=0)
        layer = eo.VolterraLayer.random("s2", 3, mix=1.0, seed=1)
        assert np.array_equal(eo.volterra2_s2(f, layer), eo.corr_s2(f, layer.w1))
        F = sg.random_bandlimited(2, seed=0, space="so3")
        lay3 = eo.VolterraLayer.random("so3", 2, mix=1.0, seed=1)
        assert np.array_equal(eo.volterra2_so3(F, lay3), eo.corr_so3(F, lay3.w1))

    def test_square_is_nonnegative(self):
        f = sg.random_bandlimited(4, seed=3)
        w = eo.S2Kernel.random(4, seed=4)
        out = eo.volterra2_s2(f, eo.VolterraLayer(w, w, w, mix=0.0))
        assert out.min() >= 0.0

    def test_mix_is_convex_combination(self):
        f = sg.random_bandlimited(3, seed=3)
        lay = eo.VolterraLayer.random("s2", 3, mix=0.3, seed=2)
        first = eo.corr_s2(f, lay.w1)
        second = eo.corr_s2(f, lay.w2a) * eo.corr_s2(f, lay.w2b)
        assert np.max(np.abs(eo.volterra2_s2(f, lay) - (0.3 * first + 0.7 * second))) < 1e-13

    def test_s2_oracle(self):
        B = 3
        f = sg.random_bandlimited(B, seed=8)
        lay = eo.VolterraLayer.random("s2", B, mix=0.0, seed=9)
        fast = eo.volterra2_s2(f, lay)[0].ravel()
        brute = eo.volterra2_bruteforce(f[0], lay.w2a.samples(B)[0, 0], lay.w2b.samples(B)[0, 0],
                                        eo.grid_rotations(B))
        assert rel(fast, brute) < 1e-7

    def test_so3_oracle(self):
        B = 2
        F = sg.random_bandlimited(B, seed=8, space="so3")
        lay = eo.VolterraLayer.random("so3", B, mix=0.0, seed=9)
        fast = eo.volterra2_so3(F, lay)[0].ravel()
        brute = eo.volterra2_bruteforce(F[0], lay.w2a.samples(B)[0, 0], lay.w2b.samples(B)[0, 0],
                                        eo.grid_rotations(B), space="so3")
        assert rel(fast, brute) < 1e-7

    def test_factorization_and_symmetry(self):
        B = 2
        f = sg.random_bandlimited(B, seed=1)[0]
        a, b = sg.random_bandlimited(B, seed=2)[0], sg.random_bandlimited(B, seed=3)[0]
        rots = eo.grid_rotations(B)
        double = eo.volterra2_bruteforce(f, a, b, rots)
        product = eo.corr_s2_bruteforce(f, a, rots) * eo.corr_s2_bruteforce(f, b, rots)
        assert rel(double, product) < 1e-10
        assert rel(eo.volterra2_bruteforce(f, b, a, rots), double) < 1e-12
        assert np.all(eo.volterra2_bruteforce(np.zeros_like(f), a, b, rots) == 0.0)

    def test_sum_of_separable_terms(self):
        B = 2
        f = sg.random_bandlimited(B, seed=1)[0]
        a = sg.random_bandlimited(B, channels=2, seed=2)
        b = sg.random_bandlimited(B, channels=2, seed=3)
        rots = eo.grid_rotations(B)[:8]
        both = eo.volterra2_bruteforce(f, a, b, rots)
        each = sum(eo.volterra2_bruteforce(f, a[r], b[r], rots) for r in range(2))
        assert rel(both, each) < 1e-12

    def test_constant_so3_input(self):
        B = 2
        lay = eo.VolterraLayer.random("so3", B, mix=0.4, seed=5)
        F = np.full((1, 4, 4, 4), 1.5)
        out = eo.volterra2_so3(F, lay)
        ints = [sg.integrate_so3(k.samples(B)[0, 0]) for k in (lay.w1, lay.w2a, lay.w2b)]
        expected = 0.4 * 1.5 * ints[0] + 0.6 * (1.5 * ints[1]) * (1.5 * ints[2])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(B=st.integers(2, 4), mix=st.floats(0, 1), seed=st.integers(0, 2**32))
    def test_equivariance_at_doubled_bandwidth(self, B, mix, seed):
        rng = np.random.default_rng(seed)
        f = sg.random_bandlimited(B, seed=seed)
        lay = eo.VolterraLayer.random("s2", B, mix=mix, seed=seed + 1)
        g = Rotation.random(rng)
        Bo = 2 * B - 1
        lhs = eo.volterra2_s2(sg.rotate_s2(f, g), lay, Bo)
        rhs = sg.rotate_so3(eo.volterra2_s2(f, lay, Bo), g)
        assert rel(lhs, rhs) < 1e-8


class TestInvariantLayer:
    def test_constant(self):
        assert eo.invariant_layer(np.full((2, 6, 6, 6), 3.0)) == pytest.approx([3.0, 3.0])

    def test_nonconstant_mode_integrates_to_zero(self):
        a, b, g = hm.so3_grid(3)
        A, Bt, G = np.meshgrid(a, b, g, indexing="ij")
        d100 = hm.wigner_D(1, A, Bt, G)[..., 1, 1].real
        assert abs(eo.invariant_layer(d100)) < 1e-10

    def test_invariance(self):
        rng = np.random.default_rng(0)
        f = sg.random_bandlimited(4, channels=3, seed=1, space="so3")
        g = Rotation.random(rng)
        assert np.max(np.abs(eo.invariant_layer(sg.rotate_so3(f, g)) - eo.invariant_layer(f))) < 1e-10


class TestCharacterization:
    def test_right_block_operator_is_a_correlation(self):
        rng = np.random.default_rng(3)
        B = 4
        M = 2 * B - 1
        blocks = (rng.standard_normal((1, 1, B, M, M)) + 1j * rng.standard_normal((1, 1, B, M, M)))
        blocks *= hm.so3_mask(B)
        f = sg.random_bandlimited(B, seed=2, space="so3")
        # the operator acting as Fhat^l -> Fhat^l K^l, built directly
        direct = hm.so3_ft_inverse(hm.so3_ft_forward(f[0], B) @ blocks[0, 0], B)
        via_corr = eo.corr_so3(f, eo.kernel_from_right_blocks(blocks), keep_complex=True)[0]
        assert rel(via_corr, direct) < 1e-8
        # and it commutes with the left action
        g = Rotation.random(rng)
        lhs = hm.so3_ft_inverse(hm.so3_ft_forward(sg.rotate_so3(f[0], g), B) @ blocks[0, 0], B)
        assert rel(lhs, sg.rotate_so3(direct, g)) < 1e-8

    def test_outer_vector_operator(self):
        rng = np.random.default_rng(4)
        B = 4
        v = (rng.standard_normal((1, 1, B, 2 * B - 1)) + 1j * rng.standard_normal((1, 1, B, 2 * B - 1)))
        v *= hm.s2_mask(B)
        f = sg.random_bandlimited(B, seed=6)
        fh = hm.s2_analysis(f[0] * hm.s2_quadrature(B), B)
        expected = fh[:, :, None] * v[0, 0][:, None, :]
        spec = eo.corr_s2_spectrum(f, eo.kernel_from_outer_vectors(v))[0]
        assert rel(spec, expected) < 1e-12
