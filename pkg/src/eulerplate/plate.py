"""Damped fourth-order plate on the top wall.

Each horizontal mode k obeys

    w'' + nu |2 pi k|^2 w' + |2 pi k|^4 w = q_k,

a damped oscillator that is integrated exactly over a step for forcing
held constant (or linear) in time.
"""

from __future__ import annotations

import logging

import numpy as np

from .ale import InterfaceState
from .errors import MeanViolation
from .fields import Grid

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-10


def propagator(grid: Grid, nu: float, tau: float):
    """Per-mode 2x2 transfer matrix of the unforced plate over time ``tau``.

    Returns ``(c11, c12, c21, c22)`` with
    ``w(tau) = c11 w + c12 w_t`` and ``w_t(tau) = c21 w + c22 w_t``.
    """
    key = ("plate_prop", float(nu), float(tau))
    if key in grid.cache:
        return grid.cache[key]
    ksq = grid.ksq
    omega2 = ksq**2
    gamma = 0.5 * nu * ksq
    big2 = omega2 - gamma**2
    degenerate = np.abs(big2) <= 1e-14 * np.maximum(omega2, 1.0)

    C = np.ones_like(ksq)
    S = np.full_like(ksq, tau)
    osc = (big2 > 0) & ~degenerate
    over = (big2 < 0) & ~degenerate
    Om = np.sqrt(np.where(osc, big2, 1.0))
    C = np.where(osc, np.cos(Om * tau), C)
    S = np.where(osc, np.sin(Om * tau) / Om, S)
    mu = np.sqrt(np.where(over, -big2, 1.0))
    C = np.where(over, np.cosh(mu * tau), C)
    S = np.where(over, np.sinh(mu * tau) / mu, S)

    e = np.exp(-gamma * tau)
    out = (e * (C + gamma * S), e * S, -e * omega2 * S, e * (C - gamma * S))
    grid.cache[key] = out
    return out


def forcing_response(grid: Grid, nu: float, tau: float):
    """Response coefficients to unit forcing held constant, and to unit slope.

    Returns ``(f1, f2, h1, h2)`` such that forcing ``q0 + q1 s`` on
    ``0 <= s <= tau`` adds ``f1 q0 + h1 q1`` to w and ``f2 q0 + h2 q1`` to w_t.
    """
    key = ("plate_force", float(nu), float(tau))
    if key in grid.cache:
        return grid.cache[key]
    c11, c12, c21, c22 = propagator(grid, nu, tau)
    k4 = grid.ksq**2
    zero = k4 == 0
    k4s = np.where(zero, 1.0, k4)
    ksqs = np.where(zero, 1.0, grid.ksq)
    f1 = np.where(zero, 0.5 * tau**2, (1.0 - c11) / k4s)
    f2 = np.where(zero, tau, -c21 / k4s)
    h1 = np.where(zero, tau**3 / 6.0, (tau - nu / ksqs * (1.0 - c11) - c12) / k4s)
    h2 = np.where(zero, 0.5 * tau**2, (1.0 + nu * c21 / ksqs - c22) / k4s)
    out = (f1, f2, h1, h2)
    grid.cache[key] = out
    return out


def project_zero_mean(q: np.ndarray, tol: float = MEAN_TOL, what: str = "plate forcing") -> np.ndarray:
    """Remove the mean of a surface field; refuse if it is above ``tol``."""
    mean = float(np.mean(q))
    if abs(mean) > tol:
        raise MeanViolation(f"{what} mean {mean:.3e} exceeds {tol:.1e}")
    if mean != 0.0:
        logger.debug("projected %s mean %.3e", what, mean)
    return q - mean


def advance_spectral(grid, wh, wth, nu, tau, qh=None, qslope_h=None):
    """Advance spectral plate data by ``tau`` with optional constant and linear forcing."""
    c11, c12, c21, c22 = propagator(grid, nu, tau)
    w_new = c11 * wh + c12 * wth
    wt_new = c21 * wh + c22 * wth
    if qh is not None or qslope_h is not None:
        f1, f2, h1, h2 = forcing_response(grid, nu, tau)
        if qh is not None:
            w_new = w_new + f1 * qh
            wt_new = wt_new + f2 * qh
        if qslope_h is not None:
            w_new = w_new + h1 * qslope_h
            wt_new = wt_new + h2 * qslope_h
    return w_new, wt_new


def plate_step(grid: Grid, state: InterfaceState, forcing: np.ndarray, nu: float, dt: float) -> InterfaceState:
    """Advance the plate by ``dt`` with the pressure trace held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    q = project_zero_mean(np.asarray(forcing))
    wh, wth = advance_spectral(grid, grid.fft2(state.w), grid.fft2(state.w_t), nu, dt, qh=grid.fft2(q))
    return InterfaceState(grid.ifft2(wh), grid.ifft2(wth), state.t + dt)


def plate_trajectory(grid: Grid, state: InterfaceState, times, q_samples, nu: float):
    """Plate states at ``times`` under forcing interpolated linearly between samples.

    ``q_samples[j]`` is the pressure trace at ``times[j]``; the first entry of
    the result is ``state`` itself.
    """
    wh, wth = grid.fft2(state.w), grid.fft2(state.w_t)
    out = [InterfaceState(state.w, state.w_t, times[0])]
    qh_prev = grid.fft2(project_zero_mean(np.asarray(q_samples[0])))
    for j in range(1, len(times)):
        tau = times[j] - times[j - 1]
        qh_next = grid.fft2(project_zero_mean(np.asarray(q_samples[j])))
        wh, wth = advance_spectral(grid, wh, wth, nu, tau, qh=qh_prev, qslope_h=(qh_next - qh_prev) / tau)
        out.append(InterfaceState(grid.ifft2(wh), grid.ifft2(wth), times[j]))
        qh_prev = qh_next
    return out


def plate_acceleration(grid: Grid, state: InterfaceState, q_trace: np.ndarray, nu: float) -> np.ndarray:
    """w_tt from the plate equation with the given pressure trace."""
    wh, wth = grid.fft2(state.w), grid.fft2(state.w_t)
    acc = grid.fft2(q_trace) - grid.ksq**2 * wh - nu * grid.ksq * wth
    return grid.ifft2(acc)


def _parseval(grid: Grid, fh: np.ndarray, weight=None) -> float:
    scale = 1.0 / (grid.n1 * grid.n2)
    p = grid.mult * np.abs(fh * scale) ** 2
    if weight is not None:
        p = p * weight
    return float(np.sum(p))


def plate_energy(grid: Grid, state: InterfaceState):
    """(kinetic, bending) energies: 1/2 ||w_t||^2 and 1/2 ||Lap w||^2."""
    e_kin = 0.5 * _parseval(grid, grid.fft2(state.w_t))
    e_bend = 0.5 * _parseval(grid, grid.fft2(state.w), grid.ksq**2)
    return e_kin, e_bend


def damping_dissipation(grid: Grid, state: InterfaceState, nu: float) -> float:
    """Instantaneous dissipation rate nu ||grad w_t||^2."""
    if nu == 0:
        return 0.0
    return nu * _parseval(grid, grid.fft2(state.w_t), grid.ksq)
