"""ALE geometry built from the plate state.

The map is eta(x) = (x1, x2, psi(x)) where psi is the harmonic extension of
1 + w into the channel. From it we form

    J = d3 psi,
    a = (grad eta)^{-1}:  rows (1,0,0), (0,1,0), (-d1psi/J, -d2psi/J, 1/J),
    b = J a:              rows (J,0,0), (0,J,0), (-d1psi, -d2psi, 1),

and the time rates obtained by replacing psi with psi_t where it enters
linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateJacobian, OverflowGuard
from .fields import Grid

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class InterfaceState:
    """Plate displacement ``w`` and velocity ``w_t`` on the top wall."""

    w: np.ndarray
    w_t: np.ndarray
    t: float = 0.0

    def check(self, tol: float = 1e-12) -> None:
        if np.any(1.0 + self.w <= 0.0):
            raise DegenerateJacobian("interface touches the bottom (1 + w <= 0)")
        mean = float(np.mean(self.w_t))
        if abs(mean) > tol:
            raise ValueError(f"plate velocity has nonzero mean {mean:.3e}")


def _profiles(grid: Grid, stable: bool = True) -> np.ndarray:
    """sinh(kx3)/sinh(k) per horizontal mode, shape (n1, n2//2+1, n3).

    The zero mode gets the linear profile x3.
    """
    key = ("sinh_profiles", stable)
    if key in grid.cache:
        return grid.cache[key]
    kappa = grid.kabs[:, :, None]
    x3 = grid.x3[None, None, :]
    if stable:
        with np.errstate(invalid="ignore", divide="ignore"):
            prof = np.exp(kappa * (x3 - 1.0)) * (-np.expm1(-2.0 * kappa * x3)) / (-np.expm1(-2.0 * kappa))
    else:
        if np.max(kappa) > _EXP_LIMIT:
            raise OverflowGuard(
                f"naive sinh evaluation overflows for 2pi|k| = {np.max(kappa):.1f}; use the stable form"
            )
        with np.errstate(invalid="ignore", divide="ignore"):
            prof = np.sinh(kappa * x3) / np.sinh(kappa)
    prof = np.where(kappa > 0, prof, x3)
    prof = np.ascontiguousarray(prof)
    grid.cache[key] = prof
    return prof


def harmonic_extension(grid: Grid, w: np.ndarray, stable: bool = True) -> np.ndarray:
    """Harmonic function equal to 1 + w on the plate and 0 on the bottom."""
    return harmonic_extension_rate(grid, w, stable) + grid.x3[None, None, :]


def harmonic_extension_rate(grid: Grid, w_t: np.ndarray, stable: bool = True) -> np.ndarray:
    """Harmonic function equal to w_t on the plate and 0 on the bottom."""
    wh = grid.fft2(w_t)
    return grid.ifft3(wh[:, :, None] * _profiles(grid, stable))


@dataclass
class AleMap:
    """Geometry coefficients on the reference channel.

    Matrices are stored as arrays of shape (3, 3, n1, n2, n3) with the
    first index the row. ``d1psi``/``d2psi`` and their rates are kept for
    the assembly code.
    """

    grid: Grid
    psi: np.ndarray
    psi_t: np.ndarray
    J: np.ndarray
    J_t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    b_t: np.ndarray
    d1psi: np.ndarray
    d2psi: np.ndarray
    d1psi_t: np.ndarray
    d2psi_t: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def Jinv(self) -> np.ndarray:
        return self.a[2, 2]

    def a_t(self) -> np.ndarray:
        """Rate of ``a`` by differentiating the closed form in time."""
        if "a_t" not in self._cache:
            Ji = self.Jinv
            at = np.zeros_like(self.a)
            at[2, 0] = -self.d1psi_t * Ji + self.d1psi * self.J_t * Ji**2
            at[2, 1] = -self.d2psi_t * Ji + self.d2psi * self.J_t * Ji**2
            at[2, 2] = -self.J_t * Ji**2
            self._cache["a_t"] = at
        return self._cache["a_t"]

    def a_t_product(self) -> np.ndarray:
        """Rate of ``a`` from ``a_t = -a (grad eta_t) a``; used as a cross-check."""
        Deta_t = np.zeros_like(self.a)
        Deta_t[2, 0] = self.d1psi_t
        Deta_t[2, 1] = self.d2psi_t
        Deta_t[2, 2] = self.J_t
        return -np.einsum("ik...,kl...,lj...->ij...", self.a, Deta_t, self.a)

    def d(self) -> np.ndarray:
        """Elliptic coefficients d_ij = b_ik a_jk."""
        if "d" not in self._cache:
            self._cache["d"] = np.einsum("ik...,jk...->ij...", self.b, self.a)
        return self._cache["d"]


def build_map(grid: Grid, state: InterfaceState) -> AleMap:
    """Assemble psi, psi_t, a, b, their rates and J from the plate state."""
    w, w_t = np.asarray(state.w), np.asarray(state.w_t)
    if np.any(1.0 + w <= 0.0):
        raise DegenerateJacobian("interface touches the bottom (1 + w <= 0)")
    prof = _profiles(grid)
    wh = grid.fft2(w)[:, :, None] * prof
    wth = grid.fft2(w_t)[:, :, None] * prof
    x3 = grid.x3[None, None, :]

    psi = grid.ifft3(wh) + x3
    psi_t = grid.ifft3(wth)
    d1psi = grid.ifft3(grid.ikx[:, :, None] * wh)
    d2psi = grid.ifft3(grid.iky[:, :, None] * wh)
    d1psi_t = grid.ifft3(grid.ikx[:, :, None] * wth)
    d2psi_t = grid.ifft3(grid.iky[:, :, None] * wth)
    J = psi @ grid.D3T
    J_t = psi_t @ grid.D3T

    minJ = float(J.min())
    if minJ <= 0.0:
        raise DegenerateJacobian(f"min d3 psi = {minJ:.3e} <= 0")
    Jinv = 1.0 / J

    one = np.ones(grid.shape)
    zero = np.zeros(grid.shape)
    a = np.array(
        [
            [one, zero, zero],
            [zero, one, zero],
            [-d1psi * Jinv, -d2psi * Jinv, Jinv],
        ]
    )
    b = np.array(
        [
            [J, zero, zero],
            [zero, J, zero],
            [-d1psi, -d2psi, one],
        ]
    )
    b_t = np.array(
        [
            [J_t, zero, zero],
            [zero, J_t, zero],
            [-d1psi_t, -d2psi_t, zero],
        ]
    )
    return AleMap(grid, psi, psi_t, J, J_t, a, b, b_t, d1psi, d2psi, d1psi_t, d2psi_t)


def identity_map(grid: Grid) -> AleMap:
    """Map of the flat plate at rest."""
    return build_map(grid, InterfaceState(grid.zeros2(), grid.zeros2()))


def piola_residual(grid: Grid, amap: AleMap) -> float:
    """max_j || sum_i d_i b_ij ||_inf (column divergences of the cofactor matrix)."""
    worst = 0.0
    for j in range(3):
        col = sum(grid.diff(amap.b[i, j], i + 1) for i in range(3))
        worst = max(worst, float(np.max(np.abs(col))))
    return worst


@dataclass(frozen=True)
class GeometryThresholds:
    j_min: float = 0.5
    j_max: float = 1.5
    a_eps: float = 0.25


@dataclass
class MonitorReport:
    a_dev: float
    b_dev: float
    j_dev: float
    min_J: float
    max_J: float
    flags: list

    @property
    def ok(self) -> bool:
        return not self.flags


def monitor_geometry(amap: AleMap, thresholds: GeometryThresholds = GeometryThresholds()) -> MonitorReport:
    """Deviation of the map from the identity and the Jacobian band check."""
    # only the third row of a and the J, d1psi, d2psi entries of b differ from I
    j_dev = float(np.max(np.abs(amap.J - 1.0)))
    a_dev = max(float(np.max(np.abs(amap.a[2, 0]))), float(np.max(np.abs(amap.a[2, 1]))))
    a_dev = max(a_dev, float(np.max(np.abs(amap.a[2, 2] - 1.0))))
    b_dev = max(j_dev, float(np.max(np.abs(amap.d1psi))), float(np.max(np.abs(amap.d2psi))))
    min_J, max_J = float(amap.J.min()), float(amap.J.max())
    flags = []
    if min_J < thresholds.j_min:
        flags.append(f"min J = {min_J:.4g} below {thresholds.j_min}")
    if max_J > thresholds.j_max:
        flags.append(f"max J = {max_J:.4g} above {thresholds.j_max}")
    if a_dev > thresholds.a_eps:
        flags.append(f"|a - I| = {a_dev:.4g} above {thresholds.a_eps}")
    return MonitorReport(a_dev, b_dev, j_dev, min_J, max_J, flags)
