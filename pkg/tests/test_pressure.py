import numpy as np
import pytest

from eulerplate import ale, pressure
from eulerplate.ale import InterfaceState
from eulerplate.errors import CompatibilityViolation, GeometryAbort
from eulerplate.fields import Grid


def flat_problem(grid, g1, kind):
    d = np.broadcast_to(np.eye(3)[:, :, None, None, None], (3, 3) + grid.shape).copy()
    return pressure.EllipticProblem(d, np.zeros(grid.shape), grid.zeros2(), g1, kind)


def divergence_free_pair(grid, w, wt_scale=1.0):
    """Velocity with b_ji d_j v_i = 0 for the map of ``w`` and its plate trace."""
    X1, X2, X3 = grid.mesh()
    A1 = 0.3 * X3**2 * (1 - X3) * np.cos(2 * np.pi * X2)
    A2 = X3**2 * np.sin(2 * np.pi * X1) / (2 * np.pi) + 0.2 * np.sin(np.pi * X3) ** 2 * np.cos(2 * np.pi * (X1 + X2))
    G = grid.grad(np.stack([A1, A2, 0 * A1]))
    V = np.stack([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]]) * wt_scale
    m0 = ale.build_map(grid, InterfaceState(w, 0 * w))
    v = np.stack([V[0] / m0.J, V[1] / m0.J, (m0.d1psi * V[0] + m0.d2psi * V[1] + m0.J * V[2]) / m0.J])
    return v, V[2][..., -1]


class TestBaseSolves:
    @pytest.mark.parametrize("n3", [17, 25])
    def test_robin_mode(self, n3):
        g = Grid(32, 32, n3)
        X1, _, X3 = g.mesh()
        k = 2 * np.pi
        q = pressure.solve_elliptic(g, flat_problem(g, np.cos(k * X1[..., 0]), pressure.ROBIN)).q
        exact = np.cosh(k * X3) * np.cos(k * X1) / (k * np.sinh(k) + np.cosh(k))
        assert np.max(np.abs(q - exact)) < 1e-10

    @pytest.mark.parametrize("n3", [17, 25])
    def test_neumann_mode(self, n3):
        g = Grid(32, 32, n3)
        X1, _, X3 = g.mesh()
        k = 2 * np.pi
        q = pressure.solve_elliptic(g, flat_problem(g, np.cos(k * X1[..., 0]), pressure.NEUMANN)).q
        exact = np.cosh(k * X3) * np.cos(k * X1) / (k * np.sinh(k))
        assert np.max(np.abs(q - exact)) < 1e-10
        assert abs(np.mean(q[..., -1])) < 1e-14

    def test_neumann_rejects_incompatible_data(self, grid16):
        with pytest.raises(CompatibilityViolation):
            pressure.solve_elliptic(grid16, flat_problem(grid16, grid16.zeros2() + 1.0, pressure.NEUMANN))


class TestVariableCoefficients:
    def test_manufactured_solution(self, grid32, make_plate):
        w = make_plate(grid32, 0.005, 7)
        m = ale.build_map(grid32, InterfaceState(w, 0 * w))
        X1, X2, X3 = grid32.mesh()
        q_exact = np.cos(2 * np.pi * X1) * X3**2 * (1 + 0.5 * np.sin(2 * np.pi * X2))
        d = m.d()
        flux = np.einsum("ij...,j...->i...", d, grid32.grad(q_exact))
        rhs = pressure.ddiv(grid32, flux)
        g1 = flux[2][..., -1] + q_exact[..., -1]
        g0 = flux[2][..., 0]
        prob = pressure.EllipticProblem(d, rhs, g0, g1, pressure.ROBIN)
        res = pressure.solve_elliptic(grid32, prob)
        assert np.max(np.abs(res.q - q_exact)) < 1e-8
        assert res.contraction < 0.5
        assert np.max(np.abs(pressure.elliptic_residual(grid32, prob, res.q))) < 1e-7

    def test_geometry_abort(self, grid16):
        x1, _ = grid16.mesh2()
        m = ale.build_map(grid16, InterfaceState(0.05 * np.cos(2 * np.pi * x1), 0 * x1))
        prob = pressure.EllipticProblem(m.d(), np.zeros(grid16.shape), grid16.zeros2(), grid16.zeros2(), "robin")
        with pytest.raises(GeometryAbort):
            pressure.solve_elliptic(grid16, prob, eps0=0.25)


class TestAssembly:
    def test_forms_agree_on_divergence_free_fields(self, grid32, make_plate):
        w = make_plate(grid32, 0.01, 2, kmax=1)
        v, wt = divergence_free_pair(grid32, w, 0.1)
        m = ale.build_map(grid32, InterfaceState(w, wt))
        assert np.max(np.abs(pressure.ale_divergence(m, grid32.grad(v)))) < 1e-7
        raw = pressure.assemble_interior_rhs(grid32, v, m, "raw")
        simp = pressure.assemble_interior_rhs(grid32, v, m, "simplified")
        scale = np.max(np.abs(simp))
        # the forms truncate products at different points, so they agree to truncation level
        assert np.max(np.abs(pressure.ddiv(grid32, raw) - simp)) < 1e-5 * scale

    def test_mean_correction_restores_compatibility(self, make_plate):
        grid32 = Grid(32, 32, 25)
        rng = np.random.default_rng(11)
        w = make_plate(grid32, 0.02, 12)
        wt = make_plate(grid32, 0.05, 13)
        wtt = make_plate(grid32, 0.3, 14)
        X1, X2, X3 = grid32.mesh()
        v = 0.05 * np.stack([np.cos(2 * np.pi * (X1 + X3)), np.sin(2 * np.pi * X2) * X3, X3 * (1 + 0.1 * np.cos(2 * np.pi * X1))])
        v += 0.01 * rng.normal() * X3
        m = ale.build_map(grid32, InterfaceState(w, wt))
        st = InterfaceState(w, wt)
        with_e = pressure.neumann_problem(grid32, v, m, st, wtt)
        without = pressure.neumann_problem(grid32, v, m, st, wtt, with_correction=False)
        r_with = pressure.check_compatibility(grid32, with_e.rhs, with_e.g1, with_e.g0)
        r_without = pressure.check_compatibility(grid32, without.rhs, without.g1, without.g0)
        assert r_with < 1e-9
        assert r_without > 1e3 * r_with

    def test_robin_boundary_zero_for_rest(self, grid16):
        m = ale.identity_map(grid16)
        st = InterfaceState(grid16.zeros2(), grid16.zeros2())
        g0, g1 = pressure.assemble_robin_boundary(grid16, grid16.zeros(3), m, st, 0.1)
        assert np.all(g0 == 0) and np.max(np.abs(g1)) == 0

    def test_unknown_form(self, grid16):
        m = ale.identity_map(grid16)
        with pytest.raises(ValueError):
            pressure.assemble_interior_rhs(grid16, grid16.zeros(3), m, "other")
