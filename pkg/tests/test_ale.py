import numpy as np
import pytest

from eulerplate import ale
from eulerplate.ale import GeometryThresholds, InterfaceState
from eulerplate.errors import DegenerateJacobian, OverflowGuard
from eulerplate.fields import Grid


def _exact_extension(grid, k1, k2):
    X1, X2, X3 = grid.mesh()
    kap = 2 * np.pi * np.hypot(k1, k2)
    return np.cos(2 * np.pi * (k1 * X1 + k2 * X2)) * np.sinh(kap * X3) / np.sinh(kap)


class TestHarmonicExtension:
    def test_flat_plate_gives_identity_map(self, grid32):
        m = ale.identity_map(grid32)
        eye = np.eye(3)[:, :, None, None, None]
        assert np.max(np.abs(m.a - eye)) < 1e-14
        assert np.max(np.abs(m.b - eye)) < 1e-14
        assert np.max(np.abs(m.J - 1)) < 1e-13

    @pytest.mark.parametrize("k", [(1, 0), (0, 3), (2, 2), (6, 8)])
    def test_single_mode(self, grid32, k):
        x1, x2 = grid32.mesh2()
        w = np.cos(2 * np.pi * (k[0] * x1 + k[1] * x2))
        X3 = grid32.mesh()[2]
        err = np.max(np.abs(ale.harmonic_extension(grid32, w) - X3 - _exact_extension(grid32, *k)))
        assert err < 1e-12

    def test_boundary_values(self, grid32, make_plate):
        w = make_plate(grid32, 0.05, 3)
        psi = ale.harmonic_extension(grid32, w)
        assert np.max(np.abs(psi[..., 0])) < 1e-15
        np.testing.assert_allclose(psi[..., -1], 1 + w, atol=1e-14)

    def test_stable_form_survives_high_modes(self):
        g = Grid(256, 8, 17)
        x1, _ = g.mesh2()
        w = 1e-6 * np.cos(2 * np.pi * 120 * x1)
        psi = ale.harmonic_extension(g, w)
        assert np.all(np.isfinite(psi))
        with pytest.raises(OverflowGuard):
            ale.harmonic_extension(g, w, stable=False)


class TestMap:
    def test_piola_identity(self, grid32, make_plate):
        w = make_plate(grid32, 0.05, 0)
        m = ale.build_map(grid32, InterfaceState(w, 0 * w))
        assert ale.piola_residual(grid32, m) < 1e-9

    def test_a_is_inverse_gradient_and_b_is_Ja(self, grid32, make_plate):
        w = make_plate(grid32, 0.03, 1)
        m = ale.build_map(grid32, InterfaceState(w, 0 * w))
        Deta = np.zeros_like(m.a)
        Deta[0, 0] = Deta[1, 1] = 1.0
        Deta[2, 0], Deta[2, 1], Deta[2, 2] = m.d1psi, m.d2psi, m.J
        prod = np.einsum("ik...,kj...->ij...", Deta, m.a)
        assert np.max(np.abs(prod - np.eye(3)[:, :, None, None, None])) < 1e-13
        np.testing.assert_allclose(m.b, m.J * m.a, atol=1e-14)

    def test_time_rates(self, grid32, make_plate):
        w = make_plate(grid32, 0.03, 4)
        wt = make_plate(grid32, 0.1, 5)
        m = ale.build_map(grid32, InterfaceState(w, wt))
        np.testing.assert_allclose(m.a_t(), m.a_t_product(), atol=1e-13)
        # finite difference of a along w + s w_t
        h = 1e-4
        mp = ale.build_map(grid32, InterfaceState(w + h * wt, wt))
        mm = ale.build_map(grid32, InterfaceState(w - h * wt, wt))
        assert np.max(np.abs((mp.a - mm.a) / (2 * h) - m.a_t())) < 1e-6
        assert np.max(np.abs((mp.b - mm.b) / (2 * h) - m.b_t)) < 1e-6

    def test_degenerate_interface(self, grid32):
        x1, _ = grid32.mesh2()
        with pytest.raises(DegenerateJacobian):
            ale.build_map(grid32, InterfaceState(-1.2 * np.cos(2 * np.pi * x1) ** 2, 0 * x1))

    def test_interface_mean_check(self, grid32):
        s = InterfaceState(grid32.zeros2(), grid32.zeros2() + 1e-3)
        with pytest.raises(ValueError):
            s.check()


class TestMonitor:
    def test_flags_large_deformation(self, grid32):
        x1, _ = grid32.mesh2()
        m = ale.build_map(grid32, InterfaceState(0.1 * np.cos(2 * np.pi * x1), 0 * x1))
        rep = ale.monitor_geometry(m, GeometryThresholds(a_eps=0.25))
        assert not rep.ok and any("a - I" in f for f in rep.flags)
        assert rep.min_J < 1 < rep.max_J

    def test_small_deformation_passes(self, grid32):
        x1, _ = grid32.mesh2()
        m = ale.build_map(grid32, InterfaceState(1e-3 * np.cos(2 * np.pi * x1), 0 * x1))
        assert ale.monitor_geometry(m).ok
