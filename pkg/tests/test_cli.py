import csv
import json

import numpy as np
import pytest

from eulerplate import cli, driver, fields
from eulerplate.fields import Grid

SMALL = """
[grid]
n1 = 16
n2 = 16
n3 = 17
[time]
dt = {dt}
t_end = {t_end}
[initial]
generator = {gen}
amplitude = {amp}
"""


def write_cfg(tmp_path, gen="compatible", amp=1e-3, dt=1e-3, t_end=0.003, extra=""):
    p = tmp_path / "run.ini"
    p.write_text(SMALL.format(gen=gen, amp=amp, dt=dt, t_end=t_end) + extra)
    return str(p)


def summary(capsys):
    return json.loads(capsys.readouterr().out)


class TestConfigParsing:
    def test_defaults(self):
        values = cli.parse_config(None)
        cfg = cli.run_config(values)
        assert (cfg.n1, cfg.n3, cfg.mode) == (32, 17, "semi_implicit")

    def test_unknown_key_rejected(self):
        with pytest.raises(cli.ConfigError, match="bogus"):
            cli.parse_config("[grid]\nbogus = 3\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.parse_config("[plates]\nn1 = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(cli.ConfigError):
            cli.parse_config("[time]\ndt = fast\n")
        with pytest.raises(cli.ConfigError):
            cli.run_config(cli.parse_config("[physics]\nnu = -1\n"))

    def test_every_key_documented(self):
        schema = cli.load_schema()
        keys = {k for sec in schema.values() for k in sec}
        assert set(driver.config_field_names()) <= keys
        assert all("doc" in entry for sec in schema.values() for entry in sec.values())


class TestRun:
    def test_zero_data(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, gen="zero")
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        out = summary(capsys)
        assert out["exit_reason"] == "completed" and out["energy_drift"] == 0.0
        with open(tmp_path / "o" / "diagnostics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(driver.CSV_COLUMNS)
        body = np.array(rows[1:], dtype=float)
        assert len(body) == 4
        cols = list(driver.CSV_COLUMNS)
        energies = body[:, [cols.index(c) for c in ("e_fluid", "e_total", "div_res", "kin_res_g1", "norm_v")]]
        assert np.all(energies == 0)
        np.testing.assert_allclose(body[:, cols.index("min_J")], 1.0, atol=1e-14)
        assert (tmp_path / "o" / "snapshot_final.aepf").exists()

    def test_incompatible_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="w1_perturb = 0.01\n")
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        out = summary(capsys)
        assert out["failed"] == ["kinematic_plate"]
        assert {c["name"] for c in out["validation"]["checks"]} >= {"kinematic_plate", "bottom_impermeable"}

    def test_small_data_energy(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, dt=1e-4, t_end=0.002)
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert summary(capsys)["energy_drift"] < 1e-6

    def test_flags_override(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, gen="zero")
        argv = ["run", "--config", cfg, "--out", str(tmp_path / "o"), "--nu", "0.1", "--until", "0.002", "--cadence", "2"]
        assert cli.main(argv) == 0
        out = summary(capsys)
        assert out["nu"] == 0.1 and out["t_final"] == pytest.approx(0.002) and out["rows"] == 2

    def test_deterministic_csv(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="vortical = 1e-3\n")
        texts = []
        for name in ("a", "b"):
            assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / name), "--seed", "5"]) == 0
            texts.append((tmp_path / name / "diagnostics.csv").read_bytes())
        capsys.readouterr()
        assert texts[0] == texts[1]


class TestValidate:
    def test_compatible_generator(self, tmp_path, capsys):
        assert cli.main(["validate", "--config", write_cfg(tmp_path)]) == 0
        assert summary(capsys)["ok"]

    def test_plate_velocity_mean(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="w1_offset = 1e-3\n")
        assert cli.main(["validate", "--config", cfg]) == 2
        assert "plate_velocity_mean" in summary(capsys)["failed"]

    def test_bottom_trace_snapshot(self, tmp_path, capsys):
        g = Grid(16, 16, 17)
        X1, _, X3 = g.mesh()
        v3 = 1e-3 * np.cos(2 * np.pi * X1) * (1 - X3)
        snap = tmp_path / "bad.aepf"
        z = g.zeros()
        fields.write_snapshot(snap, g, {"v1": z, "v2": z, "v3": v3, "w": g.zeros2(), "w_t": g.zeros2()})
        assert cli.main(["validate", "--snapshot", str(snap)]) == 2
        assert "bottom_impermeable" in summary(capsys)["failed"]


class TestNormsAndSweeps:
    def test_norms(self, tmp_path, capsys):
        g = Grid(16, 16, 17)
        X1, _, X3 = g.mesh()
        snap = tmp_path / "s.aepf"
        u = np.sin(np.pi * X3) + 0 * X1
        fields.write_snapshot(snap, g, {"v1": u, "w": g.zeros2(), "w_t": g.zeros2()})
        assert cli.main(["norms", str(snap), "--orders", "0,1"]) == 0
        table = summary(capsys)["norms"]
        assert table["v1"]["0"] == pytest.approx(np.sqrt(0.5), rel=1e-10)
        assert table["w"]["1"] == 0.0

    def test_resolution_sweep_spectral(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="[sweep]\nn3_values = 9,13,17,25\n")
        assert cli.main(["sweep", "resolution", "--config", cfg, "--out", str(tmp_path)]) == 0
        errs = summary(capsys)["errors"]
        assert errs[0] > 1e-2 and errs[3] < 1e-11
        assert all(a > b for a, b in zip(errs[:3], errs[1:4]))
        assert (tmp_path / "sweep_resolution.csv").exists()

    def test_dt_sweep_order(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, amp=1e-2, dt=4e-3, t_end=0.016, extra="vortical = 5e-3\n[sweep]\ndt_levels = 3\n")
        assert cli.main(["sweep", "dt", "--config", cfg, "--out", str(tmp_path)]) == 0
        orders = summary(capsys)["observed_order"]
        assert orders[0] >= 2

    def test_nu_sweep_zero_data(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, gen="zero", extra="[sweep]\nnus = 0.1,0.01\n")
        assert cli.main(["sweep", "nu", "--config", cfg, "--out", str(tmp_path)]) == 0
        with open(tmp_path / "sweep_nu.csv") as fh:
            assert next(csv.reader(fh)) == ["parameter", "distance_to_finest", "observed_order"]
