"""Fluid dynamics in ALE variables.

Momentum:   d_t v_i = -U_k d_k v_i - a_ki d_k q,
Divergence: a_ki d_k v_i = 0,
Vorticity:  zeta_i = eps_ijk a_mj d_m v_k, transported by U and stretched,
where U = (v1, v2, (b_3k v_k - psi_t) / J) is the ALE advection velocity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ale import AleMap
from .errors import BoundaryInflow, DegenerateJacobian, GeometryAbort, KernelUnderdetermined, NonConvergence
from .fields import Grid
from .pressure import NEUMANN, ale_divergence, solve_base, transport_velocity, vel_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FluidState:
    """ALE velocity ``v`` (shape (3, n1, n2, n3)) and the horizontal mean flow."""

    v: np.ndarray
    mean_flow: tuple = (0.0, 0.0)
    t: float = 0.0


def mean_flow_of(grid: Grid, v: np.ndarray) -> tuple:
    """Volume averages of v1 and v2 over the reference channel."""
    return (float(grid.integrate_omega(v[0])), float(grid.integrate_omega(v[1])))


def pressure_gradient(grid: Grid, q: np.ndarray, amap: AleMap) -> np.ndarray:
    """(a_ki d_k q)_i."""
    gq = grid.grad(q, dealias=True)
    a = amap.a
    return np.stack([gq[0] + a[2, 0] * gq[2], gq[1] + a[2, 1] * gq[2], a[2, 2] * gq[2]])


def momentum_rhs(grid: Grid, v: np.ndarray, q: np.ndarray, amap: AleMap, G=None) -> np.ndarray:
    """Time derivative of the ALE velocity (``G`` may pass a precomputed ``vel_grad``)."""
    if float(amap.J.min()) <= 0.0:
        raise DegenerateJacobian("min d3 psi <= 0")
    G = vel_grad(grid, v) if G is None else G
    U = transport_velocity(amap, v)
    rhs = -np.einsum("k...,ik...->i...", U, G) - pressure_gradient(grid, q, amap)
    return grid.dealias(rhs)


def ale_div(grid: Grid, v: np.ndarray, amap: AleMap) -> np.ndarray:
    """Pointwise a_ki d_k v_i."""
    G = vel_grad(grid, v)
    return np.einsum("ki...,ik...->...", amap.a, G)


def divergence_residual(grid: Grid, v: np.ndarray, amap: AleMap) -> float:
    return float(np.max(np.abs(ale_div(grid, v, amap))))


def kinematic_residuals(grid: Grid, v: np.ndarray, amap: AleMap, w_t: np.ndarray):
    """(max |v3| on the bottom, max |b_3i v_i - w_t| on the plate)."""
    phi = np.einsum("i...,i...->...", amap.b[2], v)
    return float(np.max(np.abs(v[2][..., 0]))), float(np.max(np.abs(phi[..., -1] - w_t)))


def boundary_transport_residual(v: np.ndarray, amap: AleMap) -> float:
    """max over both walls of |v1 b31 + v2 b32 + (v3 - psi_t) b33|."""
    flux = np.einsum("i...,i...->...", amap.b[2], v) - amap.psi_t
    return float(max(np.max(np.abs(flux[..., 0])), np.max(np.abs(flux[..., -1]))))


def _transformed_grad(amap: AleMap, G: np.ndarray) -> np.ndarray:
    """A[k, j] = a_mj d_m v_k."""
    return np.einsum("km...,mj...->kj...", G, amap.a)


def _curl_from(A: np.ndarray) -> np.ndarray:
    return np.stack([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])


def ale_vorticity(grid: Grid, v: np.ndarray, amap: AleMap) -> np.ndarray:
    """zeta_i = eps_ijk a_mj d_m v_k."""
    return _curl_from(_transformed_grad(amap, vel_grad(grid, v)))


def vorticity_rhs(grid: Grid, zeta: np.ndarray, v: np.ndarray, amap: AleMap, inflow_tol: float = 1e-6) -> np.ndarray:
    """d_t zeta_i = -U_k d_k zeta_i + zeta_k a_mk d_m v_i.

    The walls must be characteristic (no inflow) for the transport to be
    well posed without boundary data.
    """
    res = boundary_transport_residual(v, amap)
    if res > inflow_tol:
        raise BoundaryInflow(f"boundary normal transport speed {res:.3e} exceeds {inflow_tol:.1e}")
    U = transport_velocity(amap, v)
    Gz = vel_grad(grid, zeta)
    A = _transformed_grad(amap, vel_grad(grid, v))
    rhs = -np.einsum("k...,ik...->i...", U, Gz) + np.einsum("k...,ik...->i...", zeta, A)
    return grid.dealias(rhs)


# div-curl reconstruction --------------------------------------------------


def _dirichlet_inverse(grid: Grid) -> np.ndarray:
    key = "divcurl_dirichlet"
    if key not in grid.cache:
        n = grid.n3
        A = np.empty(grid.ksq.shape + (n, n))
        A[...] = grid.D33
        A -= grid.ksq[:, :, None, None] * np.eye(n)
        A[..., 0, :] = np.eye(n)[0]
        A[..., -1, :] = np.eye(n)[-1]
        # zero mode unused here; keep it invertible
        A[0, 0] = np.eye(n)
        grid.cache[key] = np.linalg.inv(A)
    return grid.cache[key]


def _zero_mode_inverses(grid: Grid):
    key = "divcurl_zero"
    if key not in grid.cache:
        n = grid.n3
        M_bottom = grid.D3.copy()
        M_bottom[0] = np.eye(n)[0]
        M_mean = grid.D3.copy()
        M_mean[0] = grid.weights
        grid.cache[key] = (np.linalg.inv(M_bottom), np.linalg.inv(M_mean))
    return grid.cache[key]


def solve_div_curl_base(grid: Grid, Z: np.ndarray, Gd: np.ndarray, h0, h1, mean_flow) -> np.ndarray:
    """Constant-coefficient problem: curl v = Z, div v = Gd, v3 = h0, h1 on the walls.

    Writing v = grad phi + curl A + (mean flow), every nonzero horizontal mode
    reduces to a Dirichlet problem for v3,
        (D^2 - |k|^2) v3 = D Gd - (i k1 Z2 - i k2 Z1),
    after which the horizontal components follow algebraically from the
    divergence and the vertical vorticity. The zero mode integrates
    D v3 = Gd from the bottom and D v1 = Z2, D v2 = -Z1 with prescribed
    volume means.
    """
    n12 = grid.n1 * grid.n2
    Zh = grid.fft3(Z)
    Gh = grid.fft3(Gd)
    al = grid._ikx3
    be = grid._iky3
    rhs3 = Gh @ grid.D3T - (al * Zh[1] - be * Zh[0])
    rhs3[..., 0] = grid.fft2(h0)
    rhs3[..., -1] = grid.fft2(h1)
    v3h = np.einsum("ijab,ijb->ija", _dirichlet_inverse(grid), rhs3)
    denom = np.where(grid.ksq > 0, -grid.ksq, 1.0)[:, :, None]
    src = Gh - v3h @ grid.D3T
    v1h = (al * src - be * Zh[2]) / denom
    v2h = (be * src + al * Zh[2]) / denom

    inv_bottom, inv_mean = _zero_mode_inverses(grid)
    r = Gh[0, 0].copy()
    r[0] = grid.fft2(h0)[0, 0]
    v3h[0, 0] = inv_bottom @ r
    r = Zh[1, 0, 0].copy()
    r[0] = mean_flow[0] * n12
    v1h[0, 0] = inv_mean @ r
    r = -Zh[0, 0, 0].copy()
    r[0] = mean_flow[1] * n12
    v2h[0, 0] = inv_mean @ r

    out = np.stack([v1h, v2h, v3h]) * grid._mask3
    return grid.ifft3(out)


def div_curl_reconstruct(
    grid: Grid,
    zeta: np.ndarray,
    w_t: np.ndarray,
    mean_flow,
    amap: AleMap,
    tol: float = 1e-10,
    max_iter: int = 200,
    eps0: float = 0.25,
    v0=None,
    return_info: bool = False,
):
    """Velocity with ALE vorticity ``zeta``, zero ALE divergence and b_3j v_j = psi_t on the walls.

    Fixed-point iteration: the difference between the ALE and the flat
    curl/divergence/normal trace of the previous iterate is moved to the
    right-hand side of the constant-coefficient problem.
    """
    if mean_flow is None:
        raise KernelUnderdetermined("mean_flow is required to fix the constant horizontal flows")
    eye = np.eye(3)[:, :, None, None, None]
    dev = float(np.max(np.abs(amap.b - eye)))
    if dev > eps0:
        raise GeometryAbort(f"|b - I| = {dev:.3g} exceeds {eps0}")
    v = grid.zeros(3) if v0 is None else np.array(v0, dtype=float)
    p1_0, p2_0 = amap.d1psi[..., 0], amap.d2psi[..., 0]
    p1_1, p2_1 = amap.d1psi[..., -1], amap.d2psi[..., -1]
    diffs = []
    for it in range(1, max_iter + 1):
        G = vel_grad(grid, v)
        A = _transformed_grad(amap, G)
        Z = zeta + _curl_from(G) - _curl_from(A)
        Gd = np.trace(G, axis1=0, axis2=1) - np.einsum("kk...->...", A)
        h0 = p1_0 * v[0][..., 0] + p2_0 * v[1][..., 0]
        h1 = w_t + p1_1 * v[0][..., -1] + p2_1 * v[1][..., -1]
        v_new = solve_div_curl_base(grid, Z, Gd, h0, h1, mean_flow)
        diff = float(np.max(np.abs(v_new - v)))
        diffs.append(diff)
        v = v_new
        if diff <= tol:
            logger.debug("div-curl: %d iterations", it)
            return (v, diffs) if return_info else v
    raise NonConvergence(f"div-curl reconstruction: no convergence in {max_iter} iterations")


def project_divergence(grid: Grid, v: np.ndarray, amap: AleMap) -> tuple:
    """Remove the gradient part of the ALE divergence by a flat Helmholtz projection.

    Solves Lap phi = a_ki d_k v_i with zero wall flux and returns
    ``(v - grad phi, max |grad phi|)``. Normal wall values are unchanged.
    """
    div = ale_div(grid, v, amap)
    div = div - grid.integrate_omega(div)
    phi = solve_base(grid, div, grid.zeros2(), grid.zeros2(), NEUMANN)
    gphi = grid.grad(phi, dealias=True)
    return v - gphi, float(np.max(np.abs(gphi)))


def ale_divergence_field(grid: Grid, v: np.ndarray, amap: AleMap) -> np.ndarray:
    """b_ji d_j v_i, the divergence weighted by J."""
    return ale_divergence(amap, vel_grad(grid, v))
