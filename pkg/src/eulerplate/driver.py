"""Coupled fluid-plate solvers, initial data, diagnostics and experiments.

Three integration modes share the same building blocks:

* ``semi_implicit``: fourth-order integrating-factor Runge-Kutta on
  (v, w, w_t). The plate's linear operator is propagated exactly per mode,
  the pressure comes from the Robin problem that already contains the plate
  acceleration, and its trace drives the plate.
* ``vorticity_form``: the same loop evolving the ALE vorticity and the mean
  flow instead of v; the velocity is rebuilt by div-curl reconstruction at
  every stage.
* ``picard_window``: the fixed-point construction that alternates a
  given-coefficient fluid solve (Neumann pressure with mean correction) and
  a plate solve over a short window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields as dc_fields, replace

import numpy as np

from . import ale, euler, plate, pressure
from .ale import AleMap, GeometryThresholds, InterfaceState
from .errors import GeometryAbort, NoContraction, ValidationFailure
from .euler import FluidState
from .fields import Grid

logger = logging.getLogger(__name__)

MODES = ("semi_implicit", "picard_window", "vorticity_form")

CSV_COLUMNS = (
    "t",
    "e_fluid",
    "e_kin_plate",
    "e_bend_plate",
    "e_total",
    "dissip_rate",
    "dissip_cum",
    "div_res",
    "piola_res",
    "kin_res_g0",
    "kin_res_g1",
    "compat_res",
    "min_J",
    "max_J",
    "a_dev",
    "norm_v",
    "norm_w",
    "norm_wt",
)


# configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    n1: int = 32
    n2: int = 32
    n3: int = 17
    dt: float = 1e-4
    t_end: float = 0.01
    nu: float = 0.0
    mode: str = "semi_implicit"
    form: str = "simplified"
    elliptic_tol: float = 1e-10
    elliptic_max_iter: int = 200
    eps0: float = 0.25
    div_tol: float = 1e-7
    inflow_tol: float = 1e-6
    divcurl_tol: float = 1e-11
    j_min: float = 0.5
    j_max: float = 1.5
    a_eps: float = 0.25
    cfl: float = 0.5
    cadence: int = 1
    seed: int | None = None
    window: float = 0.01
    picard_tol: float = 1e-10
    picard_max_iter: int = 8
    picard_eps0: float = 0.25
    norm_delta: float = 0.5
    force: bool = False

    def check(self) -> None:
        for name in ("n1", "n2"):
            n = getattr(self, name)
            if n < 8 or n % 2:
                raise ValueError(f"{name} must be even and >= 8")
        if self.n3 < 9:
            raise ValueError("n3 must be >= 9")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError("nu must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.form not in ("raw", "simplified"):
            raise ValueError("form must be 'raw' or 'simplified'")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")

    @property
    def thresholds(self) -> GeometryThresholds:
        return GeometryThresholds(self.j_min, self.j_max, self.a_eps)

    def grid(self) -> Grid:
        return Grid(self.n1, self.n2, self.n3)


# initial data --------------------------------------------------------------


def _potential_column(grid: Grid, target_hat: np.ndarray) -> np.ndarray:
    """Divergence-free field with v3 equal to the given spectral profile.

    With Theta = Lap_h^{-1} T, the field v = (-d1 d3 Theta, -d2 d3 Theta, T)
    has zero discrete divergence because the spectral and collocation
    derivatives commute.
    """
    ksq = np.where(grid.ksq > 0, grid.ksq, 1.0)[:, :, None]
    theta = -target_hat / ksq
    theta[0, 0] = 0.0
    d3theta = theta @ grid.D3T
    v1 = grid.ifft3(-grid._ikx3 * d3theta)
    v2 = grid.ifft3(-grid._iky3 * d3theta)
    v3 = grid.ifft3(target_hat)
    return np.stack([v1, v2, v3])


def compatible_initial_data(
    grid: Grid,
    amplitude: float = 1e-3,
    modes=((1, 0),),
    vortical: float = 0.0,
    swirl: float = 0.0,
    shear: float = 0.0,
    seed: int | None = None,
):
    """Initial velocity and plate velocity satisfying the compatibility conditions.

    The plate velocity is ``amplitude * sum_k c_k cos(2 pi k.x + phase_k)``
    (unit coefficients and zero phases unless ``seed`` is given). The fluid
    velocity is the potential flow with that normal trace on the plate, plus
    optional rotational parts whose normal component vanishes on both walls:
    a column mode with profile sin^2(pi x3) (``vortical``), a horizontal swirl
    curl(0, 0, x3^2 (1-x3)^2 sin 2 pi x1) (``swirl``) and a shear
    u(x3) = sin(pi x3) (``shear``).

    Returns ``(v0, w1)``.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    x1, x2 = grid.mesh2()
    X1, X2, X3 = grid.mesh()
    w1 = grid.zeros2()
    potential_hat = np.zeros(grid.ksq.shape + (grid.n3,), dtype=complex)
    column_hat = np.zeros_like(potential_hat)
    prof = ale._profiles(grid)
    chi = np.sin(np.pi * grid.x3) ** 2
    for k1, k2 in modes:
        if (k1, k2) == (0, 0):
            raise ValueError("the zero mode cannot carry plate velocity")
        coef, phase = 1.0, 0.0
        if rng is not None:
            coef, phase = rng.uniform(0.5, 1.0), rng.uniform(0.0, 2 * np.pi)
        mode = coef * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + phase)
        w1 += amplitude * mode
        mh = grid.fft2(amplitude * mode)
        potential_hat += mh[:, :, None] * prof
        column_hat += mh[:, :, None] * chi[None, None, :]
    v0 = _potential_column(grid, potential_hat)
    if vortical:
        v0 = v0 + vortical / amplitude * _potential_column(grid, column_hat) if amplitude else v0
    if swirl:
        theta = swirl * X3**2 * (1 - X3) ** 2 * np.sin(2 * np.pi * X1)
        v0 = v0 + np.stack([grid.diff(theta, 2), -grid.diff(theta, 1), np.zeros(grid.shape)])
    if shear:
        v0 = v0 + np.stack([shear * np.sin(np.pi * X3), np.zeros(grid.shape), np.zeros(grid.shape)])
    return v0, w1


@dataclass
class ValidationCheck:
    name: str
    label: str
    residual: float
    passed: bool


@dataclass
class ValidationReport:
    checks: list
    tol: float

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "tol": self.tol,
            "checks": [
                {"name": c.name, "condition": c.label, "residual": c.residual, "passed": c.passed} for c in self.checks
            ],
        }


def validate_initial_data(grid: Grid, v0: np.ndarray, w1: np.ndarray, w0=None, tol: float = 1e-10) -> ValidationReport:
    """Check the compatibility conditions the initial data must satisfy."""
    w0 = grid.zeros2() if w0 is None else np.asarray(w0)
    amap = ale.build_map(grid, InterfaceState(w0, w1))
    G = grid.grad(v0)
    div = np.einsum("ki...,ik...->...", amap.a, G)
    normal = np.einsum("i...,i...->...", amap.b[2], v0)[..., -1]
    values = [
        ("kinematic_plate", "normal velocity equals plate velocity on the plate", np.max(np.abs(normal - w1))),
        ("bottom_impermeable", "v3 = 0 on the bottom", np.max(np.abs(v0[2][..., 0]))),
        ("divergence_free", "ALE divergence of v0 vanishes", np.max(np.abs(div))),
        ("plate_velocity_mean", "plate velocity has zero mean", abs(np.mean(w1))),
        ("normal_flux_mean", "normal velocity has zero mean on the plate", abs(np.mean(normal))),
    ]
    checks = [ValidationCheck(n, lab, float(r), bool(r <= tol)) for n, lab, r in values]
    return ValidationReport(checks, tol)


# coupled state and diagnostics ---------------------------------------------


@dataclass
class CoupledState:
    fluid: FluidState
    interface: InterfaceState
    map: AleMap | None = None
    q_last: np.ndarray | None = None
    w_tt_last: np.ndarray | None = None
    zeta: np.ndarray | None = None
    dissip_cum: float = 0.0
    _stage: object = field(default=None, repr=False)

    @property
    def t(self) -> float:
        return self.interface.t


def initial_state(grid: Grid, v0: np.ndarray, w1: np.ndarray, w0=None, t: float = 0.0) -> CoupledState:
    w0 = grid.zeros2() if w0 is None else np.asarray(w0)
    return CoupledState(
        FluidState(np.asarray(v0, dtype=float), euler.mean_flow_of(grid, v0), t),
        InterfaceState(w0, np.asarray(w1, dtype=float), t),
    )


@dataclass
class DiagnosticsRecord:
    t: float
    e_fluid: float
    e_kin_plate: float
    e_bend_plate: float
    e_total: float
    dissip_rate: float
    dissip_cum: float
    div_res: float
    piola_res: float
    kin_res_g0: float
    kin_res_g1: float
    compat_res: float
    min_J: float
    max_J: float
    a_dev: float
    norm_v: float
    norm_w: float
    norm_wt: float

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def fluid_energy(grid: Grid, v: np.ndarray, amap: AleMap) -> float:
    return 0.5 * float(grid.integrate_omega(amap.J * np.sum(v * v, axis=0)))


def diagnostics(grid: Grid, state: CoupledState, cfg: RunConfig, compat_res: float = float("nan")) -> DiagnosticsRecord:
    amap = state.map if state.map is not None else ale.build_map(grid, state.interface)
    v = state.fluid.v
    e_f = fluid_energy(grid, v, amap)
    e_k, e_b = plate.plate_energy(grid, state.interface)
    rate = plate.damping_dissipation(grid, state.interface, cfg.nu)
    g0, g1 = euler.kinematic_residuals(grid, v, amap, state.interface.w_t)
    mon = ale.monitor_geometry(amap, cfg.thresholds)
    d = cfg.norm_delta
    norm_v = math.sqrt(sum(grid.sobolev_norm_3d(v[i], 2.5 + d) ** 2 for i in range(3)))
    return DiagnosticsRecord(
        t=state.t,
        e_fluid=e_f,
        e_kin_plate=e_k,
        e_bend_plate=e_b,
        e_total=e_f + e_k + e_b,
        dissip_rate=rate,
        dissip_cum=state.dissip_cum,
        div_res=euler.divergence_residual(grid, v, amap),
        piola_res=ale.piola_residual(grid, amap),
        kin_res_g0=g0,
        kin_res_g1=g1,
        compat_res=compat_res,
        min_J=mon.min_J,
        max_J=mon.max_J,
        a_dev=mon.a_dev,
        norm_v=norm_v,
        norm_w=grid.sobolev_norm_2d(state.interface.w, 4.0 + d),
        norm_wt=grid.sobolev_norm_2d(state.interface.w_t, 2.0 + d),
    )


# semi-implicit and vorticity-form stepping ---------------------------------


@dataclass
class _StageEval:
    dy: tuple
    qh: np.ndarray
    q: np.ndarray
    amap: AleMap
    v: np.ndarray
    dissip: float
    div: float


class CoupledSolver:
    """Integrating-factor RK4 for the coupled system.

    The exact plate propagator E(tau) advances (w, w_t) per mode; the
    pressure trace enters as forcing at the stage times, so the scheme is
    fourth order for the full system and free of the plate's stiffness.
    """

    def __init__(self, grid: Grid, cfg: RunConfig):
        cfg.check()
        self.grid = grid
        self.cfg = cfg
        self.projections = []
        # (t, divergence, bottom and plate kinematic residuals) at every step
        self.constraints = []

    # fluid variables: (v,) for semi-implicit, (zeta, mean_flow) for vorticity form
    def _fluid_vars(self, state: CoupledState) -> tuple:
        if self.cfg.mode == "vorticity_form":
            zeta = state.zeta
            if zeta is None:
                amap = state.map if state.map is not None else ale.build_map(self.grid, state.interface)
                zeta = euler.ale_vorticity(self.grid, state.fluid.v, amap)
            return (zeta, np.array(state.fluid.mean_flow, dtype=float))
        return (state.fluid.v,)

    def evaluate(self, y: tuple, wh, wth, q_guess=None, v_guess=None) -> _StageEval:
        g, cfg = self.grid, self.cfg
        st = InterfaceState(g.ifft2(wh), g.ifft2(wth))
        amap = ale.build_map(g, st)
        mon = ale.monitor_geometry(amap, cfg.thresholds)
        if not mon.ok:
            raise GeometryAbort("; ".join(mon.flags))
        if cfg.mode == "vorticity_form":
            zeta, mf = y
            v = euler.div_curl_reconstruct(
                g, zeta, st.w_t, tuple(mf), amap, tol=cfg.divcurl_tol, eps0=cfg.eps0, v0=v_guess
            )
        else:
            v = y[0]
        G = pressure.vel_grad(g, v)
        prob = pressure.robin_problem(g, v, amap, st, cfg.nu, cfg.form, G)
        q = pressure.solve_elliptic(
            g, prob, tol=cfg.elliptic_tol, max_iter=cfg.elliptic_max_iter, eps0=cfg.eps0, q0=q_guess
        ).q
        dv = euler.momentum_rhs(g, v, q, amap, G)
        if cfg.mode == "vorticity_form":
            dz = euler.vorticity_rhs(g, zeta, v, amap, cfg.inflow_tol)
            dmf = np.array([g.integrate_omega(dv[0]), g.integrate_omega(dv[1])])
            dy = (dz, dmf)
        else:
            dy = (dv,)
        qtr = q[..., -1]
        qh = g.fft2(qtr - np.mean(qtr))
        div = float(np.max(np.abs(np.einsum("ki...,ik...->...", amap.a, G))))
        return _StageEval(dy, qh, q, amap, v, plate.damping_dissipation(g, st, cfg.nu), div)

    def _ensure_stage(self, state: CoupledState) -> _StageEval:
        if state._stage is None:
            g = self.grid
            y = self._fluid_vars(state)
            state._stage = self.evaluate(y, g.fft2(state.interface.w), g.fft2(state.interface.w_t), state.q_last)
            state.map = state._stage.amap
            state.q_last = state._stage.q
            v, amap = state._stage.v, state._stage.amap
            g0, g1 = euler.kinematic_residuals(g, v, amap, state.interface.w_t)
            self.constraints.append((state.t, state._stage.div, g0, g1))
            state.w_tt_last = plate.plate_acceleration(g, state.interface, state._stage.q[..., -1], self.cfg.nu)
            if self.cfg.mode == "vorticity_form":
                state.zeta = y[0]
        return state._stage

    def step(self, state: CoupledState, dt: float) -> CoupledState:
        g, nu = self.grid, self.cfg.nu
        h = dt
        k1 = self._ensure_stage(state)
        y = self._fluid_vars(state)
        wh, wth = g.fft2(state.interface.w), g.fft2(state.interface.w_t)

        def axpy(base, ks, coefs):
            return tuple(b + sum(c * k[i] for c, k in zip(coefs, ks)) for i, b in enumerate(base))

        half = plate.propagator(g, nu, h / 2)
        full = plate.propagator(g, nu, h)

        def prop(P, a, b):
            return P[0] * a + P[1] * b, P[2] * a + P[3] * b

        # stage 2
        w2, wt2 = prop(half, wh, wth + 0.5 * h * k1.qh)
        k2 = self.evaluate(axpy(y, [k1.dy], [0.5 * h]), w2, wt2, k1.q, k1.v)
        # stage 3
        wE, wtE = prop(half, wh, wth)
        k3 = self.evaluate(axpy(y, [k2.dy], [0.5 * h]), wE, wtE + 0.5 * h * k2.qh, k2.q, k2.v)
        # stage 4
        wF, wtF = prop(full, wh, wth)
        p3w, p3wt = prop(half, 0.0, k3.qh)
        k4 = self.evaluate(axpy(y, [k3.dy], [h]), wF + h * p3w, wtF + h * p3wt, k3.q, k3.v)

        p1w, p1wt = prop(full, 0.0, k1.qh)
        p23w, p23wt = prop(half, 0.0, k2.qh + k3.qh)
        w_new = wF + h / 6 * (p1w + 2 * p23w)
        wt_new = wtF + h / 6 * (p1wt + 2 * p23wt + k4.qh)
        y_new = axpy(y, [k1.dy, k2.dy, k3.dy, k4.dy], [h / 6, h / 3, h / 3, h / 6])
        dissip = state.dissip_cum + h / 6 * (k1.dissip + 2 * k2.dissip + 2 * k3.dissip + k4.dissip)

        t_new = state.t + h
        interface = InterfaceState(g.ifft2(w_new), g.ifft2(wt_new), t_new)
        if self.cfg.mode == "vorticity_form":
            zeta, mf = y_new
            amap = ale.build_map(g, interface)
            v = euler.div_curl_reconstruct(
                g, zeta, interface.w_t, tuple(mf), amap, tol=self.cfg.divcurl_tol, eps0=self.cfg.eps0, v0=k4.v
            )
            fluid = FluidState(v, (float(mf[0]), float(mf[1])), t_new)
            new = CoupledState(fluid, interface, amap, k4.q, None, zeta, dissip)
        else:
            v = y_new[0]
            new = CoupledState(FluidState(v, euler.mean_flow_of(g, v), t_new), interface, None, k4.q, None, None, dissip)
            amap = ale.build_map(g, interface)
            new.map = amap
            res = euler.divergence_residual(g, v, amap)
            if res > 10 * self.cfg.div_tol:
                v_p, size = euler.project_divergence(g, v, amap)
                logger.warning("t=%.6g: divergence residual %.3e, projected (|grad phi| = %.3e)", t_new, res, size)
                self.projections.append((t_new, res, size))
                new.fluid = FluidState(v_p, euler.mean_flow_of(g, v_p), t_new)
        self._ensure_stage(new)
        return new

    def cfl_dt(self, state: CoupledState) -> float:
        """Largest step allowed by the advective CFL condition."""
        g = self.grid
        amap = state.map if state.map is not None else ale.build_map(g, state.interface)
        U = pressure.transport_velocity(amap, state.fluid.v)
        dz = float(np.min(np.diff(g.x3)))
        rate = np.max(np.abs(U[0])) * g.n1 + np.max(np.abs(U[1])) * g.n2 + np.max(np.abs(U[2])) / dz
        return math.inf if rate == 0 else self.cfg.cfl / float(rate)


def step_semi_implicit(grid: Grid, state: CoupledState, dt: float, nu: float, cfg: RunConfig | None = None) -> CoupledState:
    """One step of the default coupled integrator."""
    cfg = replace(cfg or RunConfig(n1=grid.n1, n2=grid.n2, n3=grid.n3), nu=nu, mode="semi_implicit", dt=dt)
    return CoupledSolver(grid, cfg).step(state, dt)


@dataclass
class RunResult:
    records: list
    state: CoupledState
    states: list
    exit_reason: str = "completed"
    extra: dict = field(default_factory=dict)


def run(
    grid: Grid,
    state: CoupledState,
    cfg: RunConfig,
    keep_states: bool = False,
    n_steps: int | None = None,
    on_record=None,
) -> RunResult:
    """March the coupled system to ``cfg.t_end`` (or for ``n_steps`` steps).

    ``on_record(record, state)`` is called for every diagnostics record as it
    is produced, so callers can stream output that survives a later abort.
    """
    cfg.check()
    if cfg.mode == "picard_window":
        return run_picard(grid, state, cfg, keep_states=keep_states, n_steps=n_steps, on_record=on_record)
    solver = CoupledSolver(grid, cfg)
    solver._ensure_stage(state)
    if n_steps is None:
        n_steps = int(round(cfg.t_end / cfg.dt))
    records = [diagnostics(grid, state, cfg)]
    if on_record:
        on_record(records[-1], state)
    states = [state] if keep_states else []
    for n in range(1, n_steps + 1):
        sub = max(1, math.ceil(cfg.dt / solver.cfl_dt(state)))
        if sub > 1:
            logger.info("t=%.6g: CFL substepping x%d", state.t, sub)
        for _ in range(sub):
            state = solver.step(state, cfg.dt / sub)
        if n % cfg.cadence == 0 or n == n_steps:
            records.append(diagnostics(grid, state, cfg))
            if on_record:
                on_record(records[-1], state)
            if keep_states:
                states.append(state)
    return RunResult(
        records, state, states, extra={"projections": solver.projections, "constraints": np.array(solver.constraints)}
    )


# given-coefficient Euler solve ---------------------------------------------


class SampledPath:
    """Plate path sampled on a uniform time grid, looked up at exact sample times."""

    def __init__(self, t0: float, spacing: float, w, w_t, w_tt):
        self.t0, self.spacing = t0, spacing
        self.w, self.w_t, self.w_tt = w, w_t, w_tt

    def __call__(self, t: float):
        j = int(round((t - self.t0) / self.spacing))
        if abs(self.t0 + j * self.spacing - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= j < len(self.w):
            raise ValueError(f"time {t} is not a sample of the path")
        return self.w[j], self.w_t[j], self.w_tt[j]


@dataclass
class GivenCoefficientResult:
    times: np.ndarray
    v: list
    q_half: list
    divergence: list
    defect_g1: list
    defect_g0: list
    compat: list


def solve_euler_given_coefficients(
    grid: Grid,
    w_path,
    v0: np.ndarray,
    dt: float,
    n_steps: int,
    t0: float = 0.0,
    cfg: RunConfig | None = None,
) -> GivenCoefficientResult:
    """RK4 for the fluid with the geometry prescribed by ``w_path(t) -> (w, w_t, w_tt)``.

    The pressure solves the Neumann problem with the mean correction at each
    stage. Pressure traces are returned on the half-step grid (stages 2 and 3
    averaged at midpoints) so a plate solve can use them.
    """
    cfg = cfg or RunConfig(n1=grid.n1, n2=grid.n2, n3=grid.n3)
    q_guess = [None]

    def stage(t, v):
        w, w_t, w_tt = w_path(t)
        st = InterfaceState(w, w_t, t)
        amap = ale.build_map(grid, st)
        mon = ale.monitor_geometry(amap, cfg.thresholds)
        if not mon.ok:
            raise GeometryAbort("; ".join(mon.flags))
        G = pressure.vel_grad(grid, v)
        prob = pressure.neumann_problem(grid, v, amap, st, w_tt, G=G)
        compat = pressure.check_compatibility(grid, prob.rhs, prob.g1, prob.g0)
        res = pressure.solve_elliptic(
            grid, prob, tol=cfg.elliptic_tol, max_iter=cfg.elliptic_max_iter, eps0=cfg.eps0, q0=q_guess[0]
        )
        q_guess[0] = res.q
        return euler.momentum_rhs(grid, v, res.q, amap, G), res.q, amap, compat

    def record(v, amap, w_t, out):
        G = pressure.vel_grad(grid, v)
        out.divergence.append(float(np.max(np.abs(pressure.ale_divergence(amap, G)))))
        g0, g1 = euler.kinematic_residuals(grid, v, amap, w_t)
        out.defect_g0.append(g0)
        out.defect_g1.append(g1)

    times = t0 + dt * np.arange(n_steps + 1)
    out = GivenCoefficientResult(times, [np.array(v0, dtype=float)], [], [], [], [], [])
    v = out.v[0]
    k1, q1, amap1, c1 = stage(times[0], v)
    record(v, amap1, w_path(times[0])[1], out)
    out.compat.append(c1)
    for n in range(n_steps):
        t = times[n]
        k2, q2, _, _ = stage(t + dt / 2, v + 0.5 * dt * k1)
        k3, q3, _, _ = stage(t + dt / 2, v + 0.5 * dt * k2)
        k4, _, _, _ = stage(t + dt, v + dt * k3)
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.q_half.append(q1[..., -1])
        out.q_half.append(0.5 * (q2[..., -1] + q3[..., -1]))
        k1, q1, amap1, c1 = stage(t + dt, v)
        out.v.append(v)
        out.compat.append(c1)
        record(v, amap1, w_path(t + dt)[1], out)
    out.q_half.append(q1[..., -1])
    return out


# Picard window iteration ---------------------------------------------------


@dataclass
class PicardReport:
    metrics: list
    ratios: list
    sweeps: int
    converged: bool
    compat: float = float("nan")


def _zero_mean(q):
    return q - np.mean(q)


def picard_window(grid: Grid, state: CoupledState, window_T: float, tol: float, max_iter: int, nu: float, cfg: RunConfig):
    """Fixed-point iteration over one window; returns ``(state_at_window_end, report)``."""
    if not nu > 0:
        raise ValueError("the window iteration requires nu > 0")
    cfg = replace(cfg, nu=nu)
    dt = cfg.dt
    n_steps = max(1, int(round(window_T / dt)))
    half = dt / 2
    t0 = state.t
    times = t0 + half * np.arange(2 * n_steps + 1)
    d = cfg.norm_delta
    eps0 = cfg.picard_eps0

    # initial plate iterate: pressure trace of the coupled problem at t0 held fixed
    amap0 = ale.build_map(grid, state.interface)
    prob0 = pressure.robin_problem(grid, state.fluid.v, amap0, state.interface, nu, cfg.form)
    q0 = pressure.solve_elliptic(grid, prob0, tol=cfg.elliptic_tol, max_iter=cfg.elliptic_max_iter, eps0=cfg.eps0).q
    q_samples = [_zero_mean(q0[..., -1])] * len(times)

    def plate_path(q_samples):
        traj = plate.plate_trajectory(grid, state.interface, times, q_samples, nu)
        w = [s.w for s in traj]
        wt = [s.w_t for s in traj]
        wtt = [plate.plate_acceleration(grid, s, q, nu) for s, q in zip(traj, q_samples)]
        return w, wt, wtt

    w, wt, wtt = plate_path(q_samples)
    v_prev = [state.fluid.v] * (n_steps + 1)
    metrics, ratios = [], []
    fluid = None
    for sweep in range(1, max_iter + 1):
        path = SampledPath(t0, half, w, wt, wtt)
        fluid = solve_euler_given_coefficients(grid, path, state.fluid.v, dt, n_steps, t0, cfg)
        q_samples = [_zero_mean(q) for q in fluid.q_half]
        w_n, wt_n, wtt_n = plate_path(q_samples)
        alpha = max(
            grid.sobolev_norm_2d(a - b, 3 + d) ** 2
            + grid.sobolev_norm_2d(c - e, 1 + d) ** 2
            + grid.sobolev_norm_2d(f - h, d) ** 2
            for a, b, c, e, f, h in zip(w_n, w, wt_n, wt, wtt_n, wtt)
        )
        beta = max(
            sum(grid.sobolev_norm_3d(a[i] - b[i], 3 + d) ** 2 for i in range(3)) for a, b in zip(fluid.v, v_prev)
        )
        metric = alpha + eps0 * beta
        metrics.append(metric)
        if len(metrics) > 1:
            ratios.append(metric / metrics[-2] if metrics[-2] > 0 else 0.0)
        logger.info("window sweep %d: alpha %.3e beta %.3e metric %.3e", sweep, alpha, beta, metric)
        w, wt, wtt, v_prev = w_n, wt_n, wtt_n, fluid.v
        if metric <= max(tol * metrics[0], 1e-300) or metric == 0.0:
            break
    else:
        raise NoContraction(
            f"window {window_T:g}: metric {metrics[-1]:.3e} after {max_iter} sweeps (ratios {ratios})"
        )

    t_end = times[-1]
    interface = InterfaceState(w[-1], wt[-1], t_end)
    v_end = fluid.v[-1]
    new = CoupledState(FluidState(v_end, euler.mean_flow_of(grid, v_end), t_end), interface)
    new.map = ale.build_map(grid, interface)
    new.w_tt_last = wtt[-1]
    diss = [plate.damping_dissipation(grid, InterfaceState(a, b), nu) for a, b in zip(w, wt)]
    # Simpson on the half-step grid
    new.dissip_cum = state.dissip_cum + half / 3 * sum(
        diss[2 * j] + 4 * diss[2 * j + 1] + diss[2 * j + 2] for j in range(n_steps)
    )
    report = PicardReport(metrics, ratios, len(metrics), True, float(max(fluid.compat)))
    new._stage = None
    return new, report


def run_picard(
    grid: Grid, state: CoupledState, cfg: RunConfig, keep_states: bool = False, n_steps=None, on_record=None
) -> RunResult:
    """Chain window iterations to ``t_end``, halving the window on failure (floor 4 dt)."""
    t_end = cfg.t_end if n_steps is None else state.t + n_steps * cfg.dt
    records = [diagnostics(grid, state, cfg)]
    if on_record:
        on_record(records[-1], state)
    states = [state] if keep_states else []
    reports = []
    window = cfg.window
    while state.t < t_end - 1e-12:
        span = min(window, t_end - state.t)
        try:
            new, rep = picard_window(grid, state, span, cfg.picard_tol, cfg.picard_max_iter, cfg.nu, cfg)
        except NoContraction:
            if window / 2 < 4 * cfg.dt:
                raise
            window /= 2
            logger.warning("window iteration did not contract; halving window to %g", window)
            continue
        state = new
        reports.append(rep)
        records.append(diagnostics(grid, state, cfg, rep.compat))
        if on_record:
            on_record(records[-1], state)
        if keep_states:
            states.append(state)
    return RunResult(records, state, states, extra={"picard": reports, "window": window})


# audits and sweeps ---------------------------------------------------------


@dataclass
class AuditReport:
    e0: float
    max_drift: float
    series: np.ndarray


def energy_audit(records) -> AuditReport:
    """Relative drift of fluid + plate energy plus accumulated damping."""
    series = np.array([r.e_total + r.dissip_cum for r in records])
    e0 = float(series[0])
    if e0 == 0.0:
        drift = float(np.max(np.abs(series - e0)))
    else:
        drift = float(np.max(np.abs(series - e0)) / abs(e0))
    return AuditReport(e0, drift, series)


def state_distance(grid: Grid, s1: CoupledState, s2: CoupledState) -> float:
    """L2 distance of (v, w, w_t) between two states."""
    dv = s1.fluid.v - s2.fluid.v
    total = sum(grid.integrate_omega(dv[i] ** 2) for i in range(3))
    total += np.mean((s1.interface.w - s2.interface.w) ** 2) + np.mean((s1.interface.w_t - s2.interface.w_t) ** 2)
    return float(np.sqrt(total))


@dataclass
class ConvergenceReport:
    nus: list
    distances: list
    budgets: list
    distances_decreasing: bool
    budgets_decreasing: bool


def nu_sweep(grid: Grid, cfg: RunConfig, nus, v0, w1) -> ConvergenceReport:
    """Run identical initial data for each nu and compare trajectories at matched times."""
    runs = []
    for nu in nus:
        c = replace(cfg, nu=float(nu))
        runs.append(run(grid, initial_state(grid, v0, w1), c, keep_states=True))
    distances = []
    for r1, r2 in zip(runs[:-1], runs[1:]):
        distances.append(max(state_distance(grid, a, b) for a, b in zip(r1.states, r2.states)))
    budgets = [r.state.dissip_cum for r in runs]
    dec = all(b < a for a, b in zip(distances[:-1], distances[1:]))
    bdec = all(b < a for a, b in zip(budgets[:-1], budgets[1:]))
    return ConvergenceReport(list(nus), distances, budgets, dec, bdec)


def require_valid(report: ValidationReport) -> None:
    if not report.ok:
        raise ValidationFailure(report)


def config_field_names() -> list:
    return [f.name for f in dc_fields(RunConfig)]
