"""Pressure problems on the reference channel.

The pressure solves the variable-coefficient problem

    d_i (d_ij d_j q) = F            in the channel,
    d_3k d_k q (+ q) = g1            on the plate (Robin adds + q),
    d_3k d_k q       = g0            on the bottom,

with d_ij = b_ik a_jk. Boundary data are fluxes along +x3 on both walls.
It is solved by a fixed-point iteration around the Laplacian: each sweep
moves (d - I) grad q of the previous iterate to the right-hand side and
inverts the constant-coefficient operator mode by mode, with the vertical
boundary-value problem discretized by collocation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ale import AleMap, InterfaceState
from .errors import CompatibilityViolation, GeometryAbort, NonConvergence
from .fields import Grid

logger = logging.getLogger(__name__)

ROBIN = "robin"
NEUMANN = "neumann"


# small helpers shared with the fluid module -------------------------------


def vel_grad(grid: Grid, v: np.ndarray) -> np.ndarray:
    """G[i, j] = d_j v_i with dealiased derivatives, shape (3, 3, n1, n2, n3)."""
    return grid.grad(v, dealias=True)


def ddiv(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Dealiased divergence sum_j d_j f_j of a vector field."""
    fh = grid.fft3(f) * grid._mask3
    return grid.ifft3(fh[0] * grid._ikx3 + fh[1] * grid._iky3 + fh[2] @ grid.D3T)


def transport_velocity(amap: AleMap, v: np.ndarray) -> np.ndarray:
    """U_k = a_km v_m - delta_k3 psi_t / J, the ALE advection velocity."""
    U3 = amap.a[2, 0] * v[0] + amap.a[2, 1] * v[1] + amap.a[2, 2] * (v[2] - amap.psi_t)
    return np.stack([v[0], v[1], U3])


def geometry_gradients(grid: Grid, amap: AleMap) -> dict:
    """Gradients of the non-constant entries of b (J, d1psi, d2psi)."""
    cache = amap._cache
    if "geo_grad" not in cache:
        gJ, g1, g2 = grid.grad(np.stack([amap.J, amap.d1psi, amap.d2psi]))
        cache["geo_grad"] = {"J": gJ, "d1psi": g1, "d2psi": g2}
    return cache["geo_grad"]


def grad_b(grid: Grid, amap: AleMap) -> np.ndarray:
    """db[j, i, k] = d_k b_ji, shape (3, 3, 3, n1, n2, n3)."""
    cache = amap._cache
    if "grad_b" not in cache:
        gg = geometry_gradients(grid, amap)
        out = np.zeros((3, 3, 3) + grid.shape)
        out[0, 0] = gg["J"]
        out[1, 1] = gg["J"]
        out[2, 0] = -gg["d1psi"]
        out[2, 1] = -gg["d2psi"]
        cache["grad_b"] = out
    return cache["grad_b"]


def ale_divergence(amap: AleMap, G: np.ndarray) -> np.ndarray:
    """b_ji d_j v_i from a velocity gradient G[i, j] = d_j v_i."""
    return amap.J * (G[0, 0] + G[1, 1]) - amap.d1psi * G[0, 2] - amap.d2psi * G[1, 2] + G[2, 2]


def advection(amap: AleMap, v: np.ndarray, G: np.ndarray) -> np.ndarray:
    """N_i = U_k d_k v_i."""
    U = transport_velocity(amap, v)
    return np.einsum("k...,ik...->i...", U, G)


# right-hand sides ---------------------------------------------------------


def assemble_interior_rhs(grid: Grid, v: np.ndarray, amap: AleMap, form: str = "simplified", G=None):
    """Interior source of the pressure problem.

    ``raw`` returns the divergence-form vector f_j = (d_t b_ji) v_i - b_ji U_k d_k v_i.
    ``simplified`` returns the scalar
    d_j((d_t b_ji) v_i) - b_ji (d_j U_k) d_k v_i + U_k (d_k b_ji) d_j v_i,
    which equals div f whenever b_ji d_j v_i = 0. ``G`` may pass a
    precomputed ``vel_grad(grid, v)``.
    """
    G = vel_grad(grid, v) if G is None else G
    btv = np.einsum("ji...,i...->j...", amap.b_t, v)
    if form == "raw":
        N = advection(amap, v, G)
        return btv - np.einsum("ji...,i...->j...", amap.b, N)
    if form != "simplified":
        raise ValueError(f"unknown form {form!r}")
    U = transport_velocity(amap, v)
    GU = vel_grad(grid, U)  # GU[k, j] = d_j U_k
    gg = geometry_gradients(grid, amap)
    J, p1, p2 = amap.J, amap.d1psi, amap.d2psi
    term1 = ddiv(grid, btv)
    # b_ji (d_j U_k) (d_k v_i), using the sparsity of b
    bGU = (J * GU[:, 0] - p1 * GU[:, 2], J * GU[:, 1] - p2 * GU[:, 2], GU[:, 2])
    term2 = sum(np.sum(bGU[i] * G[i], axis=0) for i in range(3))
    # U_k (d_k b_ji) (d_j v_i)
    UgJ, Ug1, Ug2 = (np.sum(U * gg[name], axis=0) for name in ("J", "d1psi", "d2psi"))
    term3 = UgJ * (G[0, 0] + G[1, 1]) - Ug1 * G[0, 2] - Ug2 * G[1, 2]
    return grid.dealias(term1 - term2 + term3)


def _boundary_advective_group(grid: Grid, v: np.ndarray, amap: AleMap, w_t: np.ndarray) -> np.ndarray:
    """(1/J)(sum_{j<=2} v_k b_jk d_j w_t + w_t d3 b_3i v_i - d_j b_3i v_k b_jk v_i) on the plate."""
    gg = geometry_gradients(grid, amap)
    J = amap.J[..., -1]
    v1, v2, v3 = (v[i][..., -1] for i in range(3))
    p1, p2 = amap.d1psi[..., -1], amap.d2psi[..., -1]
    Bv = (J * v1, J * v2, -p1 * v1 - p2 * v2 + v3)
    tang = Bv[0] * grid.diff2(w_t, 1) + Bv[1] * grid.diff2(w_t, 2)
    # d_j b_3i v_i = -(d_j d1psi) v1 - (d_j d2psi) v2
    dbv = [-gg["d1psi"][j][..., -1] * v1 - gg["d2psi"][j][..., -1] * v2 for j in range(3)]
    return (tang + w_t * dbv[2] - sum(Bv[j] * dbv[j] for j in range(3))) / J


def _plate_normal_rate(v: np.ndarray, amap: AleMap) -> np.ndarray:
    """(d_t b_3i) v_i on the plate."""
    return -amap.d1psi_t[..., -1] * v[0][..., -1] - amap.d2psi_t[..., -1] * v[1][..., -1]


def _raw_boundary_group(grid: Grid, v: np.ndarray, amap: AleMap, G=None) -> np.ndarray:
    G = vel_grad(grid, v) if G is None else G
    N = advection(amap, v, G)
    return np.einsum("i...,i...->...", amap.b[2], N)[..., -1]


def assemble_robin_boundary(
    grid: Grid, v: np.ndarray, amap: AleMap, state: InterfaceState, nu: float, form: str = "simplified", G=None
):
    """Robin data (g0, g1) obtained by substituting the plate equation into the plate-side flux."""
    g1 = grid.bilap2(state.w) - nu * grid.lap2(state.w_t) + _plate_normal_rate(v, amap)
    if form == "simplified":
        g1 = g1 - _boundary_advective_group(grid, v, amap, state.w_t)
    elif form == "raw":
        g1 = g1 - _raw_boundary_group(grid, v, amap, G)
    else:
        raise ValueError(f"unknown form {form!r}")
    return grid.zeros2(), grid.dealias2(g1)


def assemble_neumann_boundary(
    grid: Grid, v: np.ndarray, amap: AleMap, w_tt: np.ndarray, state: InterfaceState, form: str = "simplified"
):
    """Neumann data (g0, g1) for the given-coefficient problem with prescribed w_tt."""
    g1 = -np.asarray(w_tt) + _plate_normal_rate(v, amap)
    if form == "simplified":
        g1 = g1 - _boundary_advective_group(grid, v, amap, state.w_t)
    elif form == "raw":
        g1 = g1 - _raw_boundary_group(grid, v, amap)
    else:
        raise ValueError(f"unknown form {form!r}")
    return grid.zeros2(), grid.dealias2(g1)


def mean_correction_terms(grid: Grid, v: np.ndarray, amap: AleMap) -> np.ndarray:
    """The eight integrals whose sum is the mean correction, in order.

    With D = b_ji d_j v_i, Phi = b_3i v_i and oriented wall integrals
    [X] = int_plate X - int_bottom X:

        1  int d_k(a_km v_m) D          2  -[v_m a_3m D]
        3  -int d3(a33 psi_t) D         4  [psi_t a33 D]
        5  [(Phi - psi_t) b_3i d3 v_i / J]
        6  sum_{k<=2} [a_km v_m d_k(Phi - psi_t)]
        7  [(Phi - psi_t) (d3 b_3i) v_i / J]
        8  int_bottom v_k a_jk (d_j b_3i) v_i
    """
    G = vel_grad(grid, v)
    D = ale_divergence(amap, G)
    av = np.einsum("km...,m...->k...", amap.a, v)
    a33 = amap.a[2, 2]
    Phi = np.einsum("i...,i...->...", amap.b[2], v)
    db = grad_b(grid, amap)

    def oriented(X):
        return float(np.mean(X[..., -1]) - np.mean(X[..., 0]))

    t1 = float(grid.integrate_omega(ddiv(grid, av) * D))
    t2 = -oriented(av[2] * D)
    t3 = -float(grid.integrate_omega(grid.dealias((a33 * amap.psi_t) @ grid.D3T) * D))
    t4 = oriented(amap.psi_t * a33 * D)
    defect = Phi - amap.psi_t
    b3dv = np.einsum("i...,i...->...", amap.b[2], G[:, 2])
    t5 = oriented(defect * b3dv * a33)
    t6 = 0.0
    for wall in (0, -1):
        sign = 1.0 if wall == -1 else -1.0
        dw = defect[..., wall]
        t6 += sign * float(np.mean(av[0][..., wall] * grid.diff2(dw, 1) + av[1][..., wall] * grid.diff2(dw, 2)))
    d3b3v = np.einsum("i...,i...->...", db[2, :, 2], v)
    t7 = oriented(defect * d3b3v * a33)
    # v_k a_jk d_j b_3i v_i on the bottom
    dbv = np.einsum("ij...,i...->j...", db[2], v)
    t8 = float(np.mean(np.einsum("j...,j...->...", av, dbv)[..., 0]))
    return np.array([t1, t2, t3, t4, t5, t6, t7, t8])


def compute_mean_correction(grid: Grid, v: np.ndarray, amap: AleMap, volume: float = 1.0) -> float:
    """Constant added to the interior source so the Neumann problem is solvable."""
    return float(np.sum(mean_correction_terms(grid, v, amap)) / volume)


def check_compatibility(grid: Grid, f, g1: np.ndarray, g0=None) -> float:
    """|int f - (int_plate g1 - int_bottom g0)|; ``f`` may be a scalar source or a flux vector."""
    f = np.asarray(f)
    if f.ndim == 4:
        total = float(np.mean(f[2][..., -1]) - np.mean(f[2][..., 0]))
    else:
        total = float(grid.integrate_omega(f))
    flux = float(np.mean(g1))
    if g0 is not None:
        flux -= float(np.mean(g0))
    return abs(total - flux)


# elliptic solver ----------------------------------------------------------


@dataclass
class EllipticProblem:
    """Variable-coefficient pressure problem.

    ``rhs`` is the scalar interior source; a divergence-form flux vector is
    accepted and converted with the dealiased divergence.
    """

    d: np.ndarray
    rhs: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    bc_kind: str = ROBIN

    def __post_init__(self):
        if self.bc_kind not in (ROBIN, NEUMANN):
            raise ValueError(f"bc_kind must be {ROBIN!r} or {NEUMANN!r}")


@dataclass
class PressureField:
    q: np.ndarray
    iterations: int = 0
    diffs: list = field(default_factory=list)

    @property
    def contraction(self) -> float:
        """Largest ratio of successive iterate differences above the rounding floor."""
        if len(self.diffs) < 2:
            return 0.0
        floor = 1e-13 * max(float(np.max(np.abs(self.q))), 1e-300)
        pairs = [(a, b) for a, b in zip(self.diffs[:-1], self.diffs[1:]) if b > floor and a > 0]
        return max((b / a for a, b in pairs), default=0.0)


def _base_inverse(grid: Grid, kind: str) -> np.ndarray:
    key = ("elliptic_inv", kind)
    if key in grid.cache:
        return grid.cache[key]
    n = grid.n3
    eye = np.eye(n)
    A = np.empty(grid.ksq.shape + (n, n))
    A[...] = grid.D33
    A -= grid.ksq[:, :, None, None] * eye
    A[..., 0, :] = grid.D3[0]
    A[..., -1, :] = grid.D3[-1]
    if kind == ROBIN:
        A[..., -1, -1] += 1.0
    else:
        # zero mode: fix the plate value; the remaining flux condition is implied
        A[0, 0, -1, :] = eye[-1]
    inv = np.linalg.inv(A)
    grid.cache[key] = inv
    return inv


def solve_base(grid: Grid, rhs: np.ndarray, g0: np.ndarray, g1: np.ndarray, kind: str) -> np.ndarray:
    """Exact per-mode solve of the Laplacian with flux/Robin rows on the walls."""
    inv = _base_inverse(grid, kind)
    r = grid.fft3(rhs)
    r[..., 0] = grid.fft2(g0)
    r[..., -1] = grid.fft2(g1)
    if kind == NEUMANN:
        r[0, 0, -1] = 0.0
    r *= grid._mask3
    qh = np.matmul(inv, r[..., None])[..., 0]
    return grid.ifft3(qh)


def _flux(grid: Grid, P: np.ndarray, q: np.ndarray) -> np.ndarray:
    gq = grid.grad(q, dealias=True)
    return np.einsum("ij...,j...->i...", P, gq)


def elliptic_residual(grid: Grid, problem: EllipticProblem, q: np.ndarray) -> np.ndarray:
    """Pointwise interior residual d_i(d_ij d_j q) - F (boundary rows set to zero)."""
    res = ddiv(grid, _flux(grid, problem.d, q)) - _as_scalar(grid, problem.rhs)
    res[..., 0] = 0.0
    res[..., -1] = 0.0
    return res


def _as_scalar(grid: Grid, rhs) -> np.ndarray:
    rhs = np.asarray(rhs)
    return ddiv(grid, rhs) if rhs.ndim == 4 else rhs


def solve_elliptic(
    grid: Grid,
    problem: EllipticProblem,
    tol: float = 1e-10,
    max_iter: int = 200,
    eps0: float = 0.25,
    q0=None,
    compat_tol: float = 1e-8,
) -> PressureField:
    """Fixed-point solve around the constant-coefficient problem."""
    eye = np.eye(3)[:, :, None, None, None]
    P = problem.d - eye
    dev = float(np.max(np.abs(P)))
    if dev > eps0:
        raise GeometryAbort(f"|d - I| = {dev:.3g} exceeds {eps0}")
    rhs = _as_scalar(grid, problem.rhs)
    kind = problem.bc_kind
    if kind == NEUMANN:
        res = check_compatibility(grid, rhs, problem.g1, problem.g0)
        if res > compat_tol:
            raise CompatibilityViolation(f"Neumann data incompatible: residual {res:.3e}")

    q = grid.zeros() if q0 is None else np.array(q0, dtype=float)
    diffs = []
    for it in range(1, max_iter + 1):
        F = _flux(grid, P, q)
        q_new = solve_base(
            grid,
            rhs - ddiv(grid, F),
            problem.g0 - F[2][..., 0],
            problem.g1 - F[2][..., -1],
            kind,
        )
        if kind == NEUMANN:
            q_new -= np.mean(q_new[..., -1])
        diff = float(np.max(np.abs(q_new - q)))
        diffs.append(diff)
        q = q_new
        if diff <= tol:
            out = PressureField(q, it, diffs)
            logger.debug("elliptic %s: %d iterations, contraction %.3g", kind, it, out.contraction)
            return out
    raise NonConvergence(f"elliptic {kind} solve: no convergence in {max_iter} iterations (last diff {diffs[-1]:.3e})")


def robin_problem(grid: Grid, v, amap: AleMap, state: InterfaceState, nu: float, form: str = "simplified", G=None):
    """Coupled pressure problem with the plate acceleration eliminated."""
    rhs = assemble_interior_rhs(grid, v, amap, form, G)
    g0, g1 = assemble_robin_boundary(grid, v, amap, state, nu, form, G)
    return EllipticProblem(amap.d(), _as_scalar(grid, rhs), g0, g1, ROBIN)


def neumann_problem(
    grid: Grid, v, amap: AleMap, state: InterfaceState, w_tt, with_correction: bool = True, G=None
):
    """Given-coefficient problem with prescribed plate acceleration and mean correction."""
    rhs = assemble_interior_rhs(grid, v, amap, "simplified", G)
    if with_correction:
        rhs = rhs + compute_mean_correction(grid, v, amap)
    g0, g1 = assemble_neumann_boundary(grid, v, amap, w_tt, state)
    return EllipticProblem(amap.d(), rhs, g0, g1, NEUMANN)
