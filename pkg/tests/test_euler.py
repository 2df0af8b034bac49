import numpy as np
import pytest

from eulerplate import ale, euler
from eulerplate.ale import InterfaceState
from eulerplate.errors import BoundaryInflow, GeometryAbort, KernelUnderdetermined


def shear(grid):
    X1, _, X3 = grid.mesh()
    return np.stack([np.sin(np.pi * X3) + 0 * X1, 0 * X1, 0 * X1])


def curl_potential_field(grid, amap):
    """v with b v = curl A, so that the ALE divergence vanishes, and its plate trace."""
    X1, X2, X3 = grid.mesh()
    A1 = 0.3 * X3**2 * (1 - X3) * np.cos(2 * np.pi * X2)
    A2 = X3**2 * np.sin(2 * np.pi * X1) / (2 * np.pi) + 0.2 * np.sin(np.pi * X3) ** 2 * np.cos(2 * np.pi * (X1 + X2))
    G = grid.grad(np.stack([A1, A2, 0 * A1]))
    V = np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])
    V += np.array([0.1, -0.2, 0.0])[:, None, None, None]
    m = amap
    v = np.stack([V[0] / m.J, V[1] / m.J, (m.d1psi * V[0] + m.d2psi * V[1] + m.J * V[2]) / m.J])
    return v, V[2][..., -1]


class TestMomentum:
    def test_shear_is_steady(self, grid32):
        m = ale.identity_map(grid32)
        rhs = euler.momentum_rhs(grid32, shear(grid32), grid32.zeros(), m)
        assert np.max(np.abs(rhs)) < 1e-14

    def test_pressure_gradient_flat(self, grid32):
        X1, _, X3 = grid32.mesh()
        q = np.cos(2 * np.pi * X1) * X3**2
        gq = euler.pressure_gradient(grid32, q, ale.identity_map(grid32))
        np.testing.assert_allclose(gq[2], 2 * X3 * np.cos(2 * np.pi * X1), atol=1e-11)

    def test_residual_helpers(self, grid32):
        m = ale.identity_map(grid32)
        v = shear(grid32)
        assert euler.divergence_residual(grid32, v, m) < 1e-13
        assert euler.kinematic_residuals(grid32, v, m, grid32.zeros2()) == (0.0, 0.0)
        assert euler.boundary_transport_residual(v, m) == 0.0
        assert euler.mean_flow_of(grid32, v)[0] == pytest.approx(2 / np.pi, rel=1e-12)


class TestVorticity:
    def test_shear_vorticity(self, grid32):
        X1, _, X3 = grid32.mesh()
        z = euler.ale_vorticity(grid32, shear(grid32), ale.identity_map(grid32))
        np.testing.assert_allclose(z[1], np.pi * np.cos(np.pi * X3) + 0 * X1, atol=1e-11)
        assert np.max(np.abs(z[0])) < 1e-14 and np.max(np.abs(z[2])) < 1e-14

    def test_inflow_rejected(self, grid16):
        v = grid16.zeros(3)
        v[2] += 1e-3
        with pytest.raises(BoundaryInflow):
            euler.vorticity_rhs(grid16, grid16.zeros(3), v, ale.identity_map(grid16))


class TestDivCurl:
    @pytest.mark.parametrize("eps", [0.0, 0.005])
    def test_round_trip(self, eps, make_plate):
        from eulerplate.fields import Grid

        g = Grid(32, 32, 33)
        x1, x2 = g.mesh2()
        w = eps * (np.cos(2 * np.pi * x1) + 0.5 * np.sin(2 * np.pi * (x1 + x2)))
        m0 = ale.build_map(g, InterfaceState(w, 0 * w))
        v, wt = curl_potential_field(g, m0)
        m = ale.build_map(g, InterfaceState(w, wt))
        zeta = euler.ale_vorticity(g, v, m)
        rec = euler.div_curl_reconstruct(g, zeta, wt, euler.mean_flow_of(g, v), m)
        assert np.max(np.abs(rec - v)) < 1e-9

    def test_mean_flow_required(self, grid16):
        m = ale.identity_map(grid16)
        with pytest.raises(KernelUnderdetermined):
            euler.div_curl_reconstruct(grid16, grid16.zeros(3), grid16.zeros2(), None, m)

    def test_large_deformation_rejected(self, grid16):
        x1, _ = grid16.mesh2()
        m = ale.build_map(grid16, InterfaceState(0.08 * np.cos(2 * np.pi * x1), 0 * x1))
        with pytest.raises(GeometryAbort):
            euler.div_curl_reconstruct(grid16, grid16.zeros(3), grid16.zeros2(), (0.0, 0.0), m)


class TestProjection:
    def test_removes_gradient_part(self, grid32):
        X1, X2, X3 = grid32.mesh()
        m = ale.identity_map(grid32)
        phi = np.cos(2 * np.pi * X1) * np.cos(np.pi * X3) * 1e-3
        v = shear(grid32) + grid32.grad(phi)
        before = euler.divergence_residual(grid32, v, m)
        vp, size = euler.project_divergence(grid32, v, m)
        assert euler.divergence_residual(grid32, vp, m) < 1e-6 * before
        assert size > 0
