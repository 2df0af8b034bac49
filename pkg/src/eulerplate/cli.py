"""Command line entry point: ``eulerplate {run, validate, sweep, norms}``.

Configuration is an INI file whose sections and keys are listed in
``config_schema.json``; unknown sections or keys are rejected. Every command
prints one JSON summary on standard output and exits with 0 (success),
2 (validation failure), 3 (geometry abort) or 4 (solver non-convergence).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import ale, driver, fields
from .errors import EulerPlateError, ValidationFailure
from .fields import Grid

logger = logging.getLogger("eulerplate")

EXIT_OK, EXIT_VALIDATION, EXIT_GEOMETRY, EXIT_SOLVER = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("eulerplate").joinpath("config_schema.json").read_text())


def _convert(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from exc


def parse_config(text: str | None) -> dict:
    """Flat ``{key: value}`` with defaults filled in from the schema."""
    schema = load_schema()
    out = {key: spec["default"] for sec in schema.values() for key, spec in sec.items()}
    if not text:
        return out
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in schema[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out[key] = _convert(schema[section][key]["type"], raw, f"[{section}] {key}")
    return out


def run_config(values: dict) -> driver.RunConfig:
    names = set(driver.config_field_names())
    kwargs = {k: v for k, v in values.items() if k in names}
    seed = values.get("seed", -1)
    kwargs["seed"] = None if seed is None or seed < 0 else int(seed)
    cfg = driver.RunConfig(**kwargs)
    try:
        cfg.check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _parse_modes(text: str):
    modes = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        k1, k2 = item.split(":")
        modes.append((int(k1), int(k2)))
    return tuple(modes)


def initial_data(grid: Grid, values: dict, seed=None):
    """``(v0, w0, w1)`` from the [initial] section."""
    gen = values["generator"]
    w0 = grid.zeros2()
    if gen == "zero":
        v0, w1 = grid.zeros(3), grid.zeros2()
    elif gen == "shear":
        v0, w1 = driver.compatible_initial_data(grid, 0.0, modes=(), shear=values["shear"] or 1.0)
    elif gen == "compatible":
        v0, w1 = driver.compatible_initial_data(
            grid,
            values["amplitude"],
            modes=_parse_modes(values["modes"]),
            vortical=values["vortical"],
            swirl=values["swirl"],
            shear=values["shear"],
            seed=seed,
        )
    elif gen == "snapshot":
        snap_grid, data = fields.read_snapshot(values["path"])
        if snap_grid != grid:
            raise ConfigError(f"snapshot grid {snap_grid} differs from configured {grid}")
        v0 = np.stack([data["v1"], data["v2"], data["v3"]])
        w1 = data["w_t"][:, :, 0]
        if "w" in data:
            w0 = data["w"][:, :, 0]
    else:
        raise ConfigError(f"unknown generator {gen!r}")
    X1, _ = grid.mesh2()
    w1 = w1 + values["w1_offset"] + values["w1_perturb"] * np.cos(2 * np.pi * X1)
    return v0, w0, w1


def _emit(summary: dict) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))


def _exit_for(exc: BaseException) -> int:
    return getattr(exc, "exit_code", 1)


def _load(args) -> dict:
    text = Path(args.config).read_text() if getattr(args, "config", None) else None
    values = parse_config(text)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "mode", None):
        values["mode"] = args.mode
    if getattr(args, "nu", None) is not None:
        values["nu"] = args.nu
    if getattr(args, "until", None) is not None:
        values["t_end"] = args.until
    if getattr(args, "cadence", None) is not None:
        values["cadence"] = args.cadence
    if getattr(args, "out", None):
        values["dir"] = args.out
    return values


def _snapshot(path: Path, grid: Grid, state: driver.CoupledState) -> None:
    v = state.fluid.v
    data = {"v1": v[0], "v2": v[1], "v3": v[2], "w": state.interface.w, "w_t": state.interface.w_t}
    if state.q_last is not None:
        data["q"] = state.q_last
    fields.write_snapshot(path, grid, data)


def cmd_run(args) -> int:
    values = _load(args)
    cfg = run_config(values)
    grid = cfg.grid()
    out = Path(values["dir"])
    out.mkdir(parents=True, exist_ok=True)
    v0, w0, w1 = initial_data(grid, values, cfg.seed)
    report = driver.validate_initial_data(grid, v0, w1, w0)
    summary = {"command": "run", "mode": cfg.mode, "nu": cfg.nu, "validation": report.as_dict()}
    if not report.ok and not cfg.force:
        summary.update(exit_reason="validation failure", failed=report.failures())
        _emit(summary)
        return EXIT_VALIDATION

    csv_path = out / "diagnostics.csv"
    every = int(values["snapshots"])
    count = [0]
    last = [None]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(driver.CSV_COLUMNS)

        def on_record(rec, state):
            writer.writerow([repr(float(x)) for x in rec.row()])
            fh.flush()
            if count[0] == 0 or (every and count[0] % every == 0):
                _snapshot(out / f"snapshot_{count[0]:06d}.aepf", grid, state)
            count[0] += 1
            last[0] = (rec, state)

        code, reason = EXIT_OK, "completed"
        result = None
        try:
            result = driver.run(grid, driver.initial_state(grid, v0, w1, w0), cfg, on_record=on_record)
        except EulerPlateError as exc:
            code, reason = _exit_for(exc), f"{type(exc).__name__}: {exc}"
    if last[0] is not None:
        _snapshot(out / "snapshot_final.aepf", grid, last[0][1])
    summary.update(exit_reason=reason, diagnostics=str(csv_path), rows=count[0])
    if result is not None:
        audit = driver.energy_audit(result.records)
        final = result.records[-1]
        summary.update(
            energy_drift=audit.max_drift,
            t_final=final.t,
            final={c: getattr(final, c) for c in driver.CSV_COLUMNS},
            projections=len(result.extra.get("projections", [])),
        )
    elif last[0] is not None:
        summary.update(t_final=last[0][0].t)
    _emit(summary)
    return code


def cmd_validate(args) -> int:
    if args.snapshot:
        grid, data = fields.read_snapshot(args.snapshot)
        v0 = np.stack([data["v1"], data["v2"], data["v3"]])
        w1 = data["w_t"][:, :, 0]
        w0 = data["w"][:, :, 0] if "w" in data else None
        source = args.snapshot
    else:
        values = _load(args)
        cfg = run_config(values)
        grid = cfg.grid()
        v0, w0, w1 = initial_data(grid, values, cfg.seed)
        source = args.config or "defaults"
    report = driver.validate_initial_data(grid, v0, w1, w0)
    summary = {"command": "validate", "source": source, **report.as_dict(), "failed": report.failures()}
    _emit(summary)
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, str) else repr(float(x)) for x in row])


def _orders(params, dists, ratio):
    orders = []
    for i, d in enumerate(dists):
        if i + 1 < len(dists) and d > 0 and dists[i + 1] > 0:
            orders.append(math.log(d / dists[i + 1]) / math.log(ratio))
        else:
            orders.append(float("nan"))
    return orders


def sweep_dt(grid: Grid, cfg: driver.RunConfig, v0, w0, w1, levels: int):
    """Final states for dt, dt/2, ...; distances to the finest run and observed orders."""
    dts = [cfg.dt / 2**j for j in range(levels + 1)]
    finals = []
    for dt in dts:
        c = replace(cfg, dt=dt, cadence=10**9)
        finals.append(driver.run(grid, driver.initial_state(grid, v0, w1, w0), c).state)
    dists = [driver.state_distance(grid, s, finals[-1]) for s in finals[:-1]]
    # self-convergence order from successive differences
    diffs = [driver.state_distance(grid, a, b) for a, b in zip(finals[:-1], finals[1:])]
    return dts[:-1], dists, _orders(dts, diffs, 2.0)


def sweep_resolution(n3_values, n1: int = 16, kmax: int = 2):
    """Error of the Chebyshev-differentiated Jacobian of the harmonic extension against
    the exact cosh profile, for a set of n3."""
    errs = []
    for n3 in n3_values:
        g = Grid(n1, n1, n3)
        X1, _, X3 = g.mesh()
        x1, _ = g.mesh2()
        worst = 0.0
        for k in range(1, kmax + 1):
            kap = 2 * np.pi * k
            psi = ale.harmonic_extension(g, np.cos(kap * x1))
            exact = 1 + kap * np.cos(kap * X1) * np.cosh(kap * X3) / np.sinh(kap)
            worst = max(worst, float(np.max(np.abs(g.diff(psi, 3) - exact))))
        errs.append(worst)
    return errs


def cmd_sweep(args) -> int:
    values = _load(args)
    cfg = run_config(values)
    grid = cfg.grid()
    out = Path(values["dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = {"command": "sweep", "kind": args.kind}
    try:
        if args.kind == "resolution":
            n3s = [int(x) for x in values["n3_values"].split(",")]
            errs = sweep_resolution(n3s)
            rows = list(zip(n3s, errs, [float("nan")] * len(n3s)))
            summary.update(n3=n3s, errors=errs)
        else:
            v0, w0, w1 = initial_data(grid, values, cfg.seed)
            report = driver.validate_initial_data(grid, v0, w1, w0)
            if not report.ok and not cfg.force:
                raise ValidationFailure(report)
            if args.kind == "dt":
                dts, dists, orders = sweep_dt(grid, cfg, v0, w0, w1, int(values["dt_levels"]))
                rows = list(zip(dts, dists, orders))
                summary.update(dt=dts, distance_to_finest=dists, observed_order=orders)
            else:
                nus = [float(x) for x in values["nus"].split(",")]
                rep = driver.nu_sweep(grid, replace(cfg, mode="semi_implicit"), nus, v0, w1)
                rows = [(nus[i], rep.distances[i] if i < len(rep.distances) else float("nan"), float("nan"))
                        for i in range(len(nus))]
                summary.update(
                    nus=nus,
                    successive_distances=rep.distances,
                    damping_budgets=rep.budgets,
                    distances_decreasing=rep.distances_decreasing,
                    budgets_decreasing=rep.budgets_decreasing,
                )
    except EulerPlateError as exc:
        summary.update(exit_reason=f"{type(exc).__name__}: {exc}")
        _emit(summary)
        return _exit_for(exc)
    table = out / f"sweep_{args.kind}.csv"
    _write_table(table, ("parameter", "distance_to_finest", "observed_order"), rows)
    summary.update(exit_reason="completed", table=str(table))
    _emit(summary)
    return EXIT_OK


def cmd_norms(args) -> int:
    grid, data = fields.read_snapshot(args.snapshot)
    orders = [float(x) for x in args.orders.split(",")]
    surface = {"w", "w_t"}
    table = {}
    for name, values in data.items():
        if name in surface:
            table[name] = {f"{s:g}": grid.sobolev_norm_2d(values[:, :, 0], s) for s in orders}
        else:
            table[name] = {f"{s:g}": grid.sobolev_norm_3d(values, s) for s in orders}
    _emit({"command": "norms", "snapshot": args.snapshot, "orders": orders, "norms": table})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulerplate", description="ALE Euler flow under a damped plate")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for randomized initial data")
        sp.add_argument("--mode", choices=driver.MODES, help="integration mode")
        sp.add_argument("--nu", type=float, help="plate damping")
        sp.add_argument("--until", type=float, help="final time")
        sp.add_argument("--cadence", type=int, help="steps between diagnostics rows")

    r = sub.add_parser("run", help="integrate the coupled system")
    common(r)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check the initial-data compatibility conditions")
    common(v)
    v.add_argument("--snapshot", help="validate a snapshot instead of configured initial data")
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("sweep", help="convergence studies")
    s.add_argument("kind", choices=("nu", "resolution", "dt"))
    common(s)
    s.set_defaults(func=cmd_sweep)
    n = sub.add_parser("norms", help="Sobolev norms of the fields in a snapshot")
    n.add_argument("snapshot")
    n.add_argument("--orders", default="0,1,2,2.5,3", help="comma-separated norm orders")
    n.set_defaults(func=cmd_norms)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
