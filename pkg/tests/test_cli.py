import csv

import numpy as np
import pytest
import yaml

from wingopt import cli, config, output
from wingopt.coupling import LoadMap
from wingopt.optimizer import TABLE_PAYLOAD_FACTORS

COARSE = {"preset": "strut_twist", "grid": {"h": 0.05}, "wing": {"n_sections": 6, "n_chord": 20}}


@pytest.fixture
def coarse_yaml(tmp_path):
    path = tmp_path / "case.yaml"
    path.write_text(yaml.safe_dump(COARSE))
    return path


@pytest.mark.parametrize("name", sorted(config.PRESETS))
def test_presets_build(name):
    desk = config.preset(name)
    full = config.preset(name, "full")
    assert desk.grid_shape == (84, 248, 21)
    assert full.grid_shape == (336, 992, 82)
    assert np.prod(full.grid_shape) == pytest.approx(27.3e6, rel=2e-3)
    assert full.wing.n_sections == 40 and full.wing.n_chord == 100
    assert full.skin_thickness == pytest.approx(0.01) and full.r_s == pytest.approx(0.0125)
    assert ("chord" in desk.shape.variables) == name.endswith("chord")
    assert desk.strut.enabled == name.startswith("strut")
    assert desk.optimizer.iterations == 150 and full.optimizer.iterations == 450


def test_full_scale_bounds():
    assert config.preset("strut_twist", "full").constraints.takeoff == 6e11
    assert config.preset("nostrut_twist", "full").constraints.takeoff == 120e11


def test_config_errors(tmp_path):
    with pytest.raises(ValueError):
        config.preset("nope")
    with pytest.raises(ValueError):
        config.preset("strut_twist", "huge")
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: {spacing: 1}\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        config.load(bad)
    assert cli.main(["run", "--config", str(bad), "--outdir", str(tmp_path / "o")]) == 1
    with pytest.raises(ValueError):
        config.preset("strut_twist", overrides={"grid": {"h": 0.02},
                                                "filters": {"skin_thickness": 0.03}})


def test_config_roundtrip(tmp_path):
    cfg = config.preset("nostrut_twist_chord")
    config.dump(cfg, tmp_path / "c.yaml")
    assert config.load(tmp_path / "c.yaml") == cfg


def test_continuation_from_config():
    c = cli.continuation_from(config.preset("strut_twist"))
    assert c.offsets == (0, 3, 13, 23, 33, 43, 53, 63, 73, 85)
    assert c.factors == TABLE_PAYLOAD_FACTORS
    geo = config.preset("strut_twist", overrides={"optimizer": {"schedule": {"payloads": "geometric"}}})
    assert cli.continuation_from(geo).factors is None


def test_zero_iteration_run(tmp_path, coarse_yaml):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(coarse_yaml), "--outdir", str(out),
                     "--iterations", "0"]) == 0
    summary = (out / "summary.txt").read_text().splitlines()
    rows = [l for l in summary if l.split()[0] in ("initial", "final")]
    assert len(rows) == 1 and rows[0].startswith("initial")
    # interior nominal field starts at gamma = 0.5
    assert rows[0].split()[-1] == "50.00%"
    hist = output.read_history(out / "history.csv")
    assert hist["iter"].tolist() == [0.0] and hist["payload_N"][0] == pytest.approx(9520.0)
    head = output.read_vtk_header(out / "fields_0000.vtk")
    assert head[0].startswith("# vtk DataFile") and head[2] == "BINARY"
    assert "iter=0" in head[1] and "beta=0.01" in head[1] and "h=0.05" in head[1]
    assert any(l.startswith("DIMENSIONS 35 101 10") for l in head)
    assert any(l.startswith("SPACING 0.05") for l in head)
    data = (out / "fields_0000.vtk").read_bytes()
    for name in ("rho_n", "rho_e", "xi", "E", "strain_energy_density"):
        assert f"SCALARS {name} float".encode() in data
    wing = (out / "wing_0000.vtk").read_bytes()
    assert b"cp_cruise" in wing and b"POLYGONS" in wing
    with open(out / "span_0000.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eta", "alpha_deg", "chord_m", "lift_per_m", "drag_per_m"]
    eta = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.diff(eta) > 0) and 0 < eta.min() and eta.max() < 1
    cfg = config.load(out / "config.yaml")
    assert cfg.grid.h == 0.05


def test_runs_are_reproducible(tmp_path, coarse_yaml):
    hist = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert cli.main(["run", "--config", str(coarse_yaml), "--outdir", str(out),
                         "--iterations", "2", "--snapshot-period", "1"]) == 0
        with open(out / "history.csv") as fh:
            hist.append([r[:-1] for r in csv.reader(fh)])   # wall time differs
        assert sorted(p.name for p in out.glob("fields_*.vtk")) == [
            "fields_0000.vtk", "fields_0001.vtk", "fields_0002.vtk"]
    assert hist[0] == hist[1]
    assert len(hist[0]) == 4
    assert "final" in (tmp_path / "r0" / "summary.txt").read_text()


def test_grid_exit_aborts(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump({**COARSE, "grid": {"h": 0.05, "size": [1.68, 3.0, 0.41]}}))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(path), "--outdir", str(out)]) == 2
    assert "exceeds grid" in (out / "summary.txt").read_text()


def test_verify_passes_and_detects_sign_error(coarse_yaml, monkeypatch, capsys):
    assert cli.main(["verify", "--quick", "--config", str(coarse_yaml)]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text and "tol 1.0e-09" in text
    original = LoadMap.transfer
    monkeypatch.setattr(LoadMap, "transfer", lambda self, p: -original(self, p))
    assert cli.main(["verify", "--quick", "--config", str(coarse_yaml)]) == 1
    text = capsys.readouterr().out
    assert "FAIL  load transfer conservation" in text
