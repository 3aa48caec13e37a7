import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation as SciRotation

from homcorr import harmonics as hm
from homcorr import signals as sg
from homcorr.signals import Rotation


def _grid(B):
    theta, phi = hm.s2_grid(B)
    return np.meshgrid(theta, phi, indexing="ij")


def pointwise_pullback(c, B, g):
    """Evaluate f(g^-1 x) by rotating the grid points and evaluating the series."""
    pts = sg.s2_points(B) @ SciRotation.from_euler("ZYZ", g.as_tuple()).as_matrix()  # R^T x
    th = np.arccos(np.clip(pts[..., 2], -1, 1))
    ph = np.arctan2(pts[..., 1], pts[..., 0])
    return hm.s2_evaluate(c, th, ph)


class TestRotation:
    def test_canonical_ranges(self):
        g = Rotation(-1.0, 2.0, 7.0)
        assert 0 <= g.alpha < 2 * math.pi and 0 <= g.gamma < 2 * math.pi
        np.testing.assert_allclose(g.matrix(), Rotation(-1.0 + 2 * math.pi, 2.0, 7.0).matrix())

    def test_negative_beta_folds(self):
        g = Rotation(0.3, -0.5, 0.2)
        assert 0 <= g.beta <= math.pi
        np.testing.assert_allclose(g.matrix(), sg._rz(0.3) @ sg._ry(-0.5) @ sg._rz(0.2), atol=1e-14)

    def test_pole_handling(self):
        for b in (0.0, math.pi):
            g = Rotation(0.4, b, 1.0)
            np.testing.assert_allclose(g.matrix(), sg._rz(0.4) @ sg._ry(b) @ sg._rz(1.0), atol=1e-14)
            assert g.gamma == 0.0

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            g = Rotation.random(rng)
            R = SciRotation.from_euler("ZYZ", g.as_tuple()).as_matrix()
            np.testing.assert_allclose(g.matrix(), R, atol=1e-14)

    def test_compose_and_inverse(self):
        rng = np.random.default_rng(1)
        g1, g2 = Rotation.random(rng), Rotation.random(rng)
        np.testing.assert_allclose(sg.compose(g1, g2).matrix(), g1.matrix() @ g2.matrix(), atol=1e-13)
        np.testing.assert_allclose((g1 @ g1.inverse()).matrix(), np.eye(3), atol=1e-13)

    def test_haar_sampling_is_uniform(self):
        rng = np.random.default_rng(2)
        z = np.array([Rotation.random(rng).apply(np.array([0.0, 0, 1]))[2] for _ in range(4000)])
        # the image of the pole is uniform on S^2, so z is uniform on [-1, 1]
        assert abs(z.mean()) < 0.05 and abs(np.var(z) - 1 / 3) < 0.03


class TestS2Action:
    def test_identity(self):
        f = sg.random_bandlimited(5, seed=1)
        assert np.max(np.abs(sg.rotate_s2(f, Rotation.identity()) - f)) < 1e-12

    def test_rotate_y10_quarter_turn(self):
        # Y_1^0 ~ z; a quarter turn about y carries the pole to +x, so the
        # pulled-back mode is the z component of R^T x, which is x_x
        B = 4
        T, P = _grid(B)
        f = hm.sph_harm(1, 0, T, P).real
        out = sg.rotate_s2(f, Rotation(0.0, math.pi / 2, 0.0))
        expected = math.sqrt(3 / (4 * math.pi)) * np.sin(T) * np.cos(P)
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_matches_pointwise_evaluation(self):
        rng = np.random.default_rng(3)
        B = 6
        f = sg.random_bandlimited(B, seed=7)[0]
        c = hm.sht_forward(f, B)
        for _ in range(5):
            g = Rotation.random(rng)
            assert np.max(np.abs(sg.rotate_s2(f, g) - pointwise_pullback(c, B, g).real)) < 1e-10

    def test_action_axiom(self):
        rng = np.random.default_rng(4)
        f = sg.random_bandlimited(6, channels=2, seed=2)
        g1, g2 = Rotation.random(rng), Rotation.random(rng)
        lhs = sg.rotate_s2(sg.rotate_s2(f, g2), g1)
        assert np.max(np.abs(lhs - sg.rotate_s2(f, sg.compose(g1, g2)))) < 1e-9

    def test_real_stays_real_and_measure_invariance(self):
        rng = np.random.default_rng(5)
        f = sg.random_bandlimited(7, seed=3)
        g = Rotation.random(rng)
        assert np.max(np.abs(sg.rotate_s2(f.astype(complex), g).imag)) < 1e-10
        assert sg.integrate_s2(sg.rotate_s2(f, g)) == pytest.approx(sg.integrate_s2(f), abs=1e-10)

    def test_spectrum_action_matches_sample_action(self):
        rng = np.random.default_rng(6)
        B = 4
        f = sg.random_bandlimited(B, seed=4)[0]
        g = Rotation.random(rng)
        d = hm.s2_to_dense(hm.sht_forward(f, B), B)
        via_spec = hm.s2_synthesis(sg.rotate_s2_spectrum(d, g), B).real
        assert np.max(np.abs(via_spec - sg.rotate_s2(f, g))) < 1e-12


class TestSO3Action:
    def test_identity_and_constant(self):
        f = sg.random_bandlimited(3, seed=1, space="so3")
        assert np.max(np.abs(sg.rotate_so3(f, Rotation.identity()) - f)) < 1e-12
        c = np.full((6, 6, 6), 2.5)
        assert np.max(np.abs(sg.rotate_so3(c, Rotation(0.3, 1.0, 2.0)) - c)) < 1e-12

    def test_left_translation_pointwise(self):
        rng = np.random.default_rng(7)
        B = 3
        f = sg.random_bandlimited(B, seed=5, space="so3")[0]
        C = hm.so3_ft_forward(f, B)
        g = Rotation.random(rng)
        out = sg.rotate_so3(f, g)
        a, b, c = hm.so3_grid(B)
        ginv = g.inverse().matrix()
        for i, j, k in [(0, 1, 2), (3, 4, 5), (5, 0, 1), (2, 2, 2)]:
            h = Rotation.from_matrix(ginv @ Rotation(a[i], b[j], c[k]).matrix())
            ref = hm.so3_evaluate(C, *h.as_tuple()).real
            assert out[i, j, k] == pytest.approx(ref, abs=1e-10)

    def test_action_axiom_and_invariance(self):
        rng = np.random.default_rng(8)
        f = sg.random_bandlimited(4, seed=6, space="so3")
        g1, g2 = Rotation.random(rng), Rotation.random(rng)
        lhs = sg.rotate_so3(sg.rotate_so3(f, g2), g1)
        assert np.max(np.abs(lhs - sg.rotate_so3(f, g1 @ g2))) < 1e-9
        assert sg.integrate_so3(lhs) == pytest.approx(sg.integrate_so3(f), abs=1e-10)


class TestIntegration:
    def test_constants(self):
        assert sg.integrate_so3(np.ones((8, 8, 8))) == pytest.approx(1.0, abs=1e-14)
        assert sg.integrate_s2(np.ones((8, 8))) == pytest.approx(4 * math.pi, abs=1e-13)

    def test_harmonics_integrate_to_zero(self):
        T, P = _grid(5)
        for l in range(1, 5):
            for m in range(-l, l + 1):
                assert abs(sg.integrate_s2(hm.sph_harm(l, m, T, P))) < 1e-12

    def test_batch_axes(self):
        f = sg.random_bandlimited(3, channels=2, seed=0, batch=(4,))
        assert sg.integrate_s2(f).shape == (4, 2)


class TestRandomBandlimited:
    def test_deterministic(self):
        a = sg.random_bandlimited(6, channels=2, seed=11)
        b = sg.random_bandlimited(6, channels=2, seed=11)
        assert np.array_equal(a, b)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**63 - 2))
    def test_different_seeds_differ(self, seed):
        a = sg.random_bandlimited(6, seed=seed)
        b = sg.random_bandlimited(6, seed=seed + 1)
        assert np.max(np.abs(a - b)) > 0.1

    @pytest.mark.parametrize("space", ["s2", "so3"])
    def test_bandlimited(self, space):
        f = sg.random_bandlimited(4, seed=3, space=space)[0]
        if space == "s2":
            back = hm.sht_inverse(hm.sht_forward(f, 4), 4).real
        else:
            back = hm.so3_ft_inverse(hm.so3_ft_forward(f, 4), 4).real
        assert np.max(np.abs(back - f)) < 1e-10

    def test_unknown_space(self):
        with pytest.raises(ValueError):
            sg.random_bandlimited(3, space="r3")


class TestContainer:
    @pytest.mark.parametrize("space", ["s2", "so3"])
    def test_round_trip(self, space):
        f = sg.random_bandlimited(3, channels=2, seed=1, space=space)
        sig = sg.S2Signal(f) if space == "s2" else sg.SO3Signal(f)
        back = sg.signal_from_bytes(sg.signal_to_bytes(sig))
        assert type(back) is type(sig) and np.array_equal(back.samples, sig.samples)

    def test_stream_holds_several(self):
        buf = io.BytesIO()
        sigs = [sg.S2Signal(sg.random_bandlimited(2, seed=s)) for s in range(3)]
        for s in sigs:
            sg.write_signal(buf, s)
        buf.seek(0)
        for s in sigs:
            assert np.array_equal(sg.read_signal(buf).samples, s.samples)

    def test_truncated_and_bad_magic(self):
        data = sg.signal_to_bytes(sg.S2Signal(np.zeros((4, 4))))
        with pytest.raises(sg.SignalFormatError):
            sg.signal_from_bytes(data[:-3])
        with pytest.raises(sg.SignalFormatError):
            sg.signal_from_bytes(data[:5])
        with pytest.raises(sg.SignalFormatError):
            sg.signal_from_bytes(b"XXXX" + data[4:])

    def test_validation(self):
        with pytest.raises(ValueError):
            sg.S2Signal(np.zeros((3, 4)))
        with pytest.raises(ValueError):
            sg.S2Signal(np.full((4, 4), np.nan))
        with pytest.raises(ValueError):
            sg.SO3Signal(np.zeros((4, 4, 6)))
        assert sg.S2Signal(np.zeros((4, 4))).channels == 1
