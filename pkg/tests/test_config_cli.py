"""Configuration schema, presets, hashing, and the command-line entry
points (run artifacts, exit codes, determinism)."""

import hashlib
import json

import numpy as np
import pytest

from dpcp import __version__, cli, config as cfgmod, fem
from dpcp import microstructure as micro, postprocess as post

# ---------------------------------------------------------------------------
# configuration schema


def test_defaults_reproduce_reference_setup():
    cfg = cfgmod.SimulationConfig()
    assert (cfg.nx, cfg.ny) == (64, 64)
    assert cfg.domain_size == 80.0
    assert cfg.total_time == pytest.approx(500.0)
    assert cfg.n_steps == 50000
    assert cfg.nominal_strain == pytest.approx(0.05)


def test_desk_preset_step_count():
    cfg = cfgmod.apply_preset(cfgmod.SimulationConfig(), "desk")
    assert (cfg.nx, cfg.ny) == (32, 32)
    assert cfg.total_time == pytest.approx(200.0)
    assert cfg.n_steps == 2000
    assert cfg.nominal_strain == pytest.approx(0.02)


def test_paper_preset_keeps_defaults():
    cfg = cfgmod.apply_preset(cfgmod.SimulationConfig(), "paper")
    assert cfg == cfgmod.SimulationConfig()


def test_unknown_preset_rejected():
    with pytest.raises(cfgmod.ConfigError, match="unknown preset"):
        cfgmod.apply_preset(cfgmod.SimulationConfig(), "hpc")


def test_parse_empty_gives_defaults():
    assert cfgmod.parse_config("") == cfgmod.SimulationConfig()


def test_parse_reads_sections_and_overrides():
    cfg = cfgmod.parse_config(
        "geometry:\n"
        "  nx: 16\n"
        "  ny: 16\n"
        "microstructure:\n"
        "  d_ferrite: 7.5\n"
        "  seed: 9\n"
        "numerics:\n"
        "  dt: 0.5\n"
        "  corotate_lattice: true\n"
        "material:\n"
        "  ferrite:\n"
        "    friction_110: 25.0\n")
    assert cfg.nx == 16 and cfg.ny == 16
    assert cfg.d_ferrite == 7.5 and cfg.seed == 9
    assert cfg.dt == 0.5 and cfg.corotate_lattice is True
    assert cfg.ferrite == {"friction_110": 25.0}
    assert cfg.martensite == {}


def test_dump_parse_round_trip():
    cfg = cfgmod.SimulationConfig(nx=24, ny=24, d_ferrite=7.5, seed=3,
                                  dt=0.2, corotate_lattice=True,
                                  ferrite={"young_modulus": 199000.0},
                                  workers=2)
    assert cfgmod.parse_config(cfgmod.dump_config(cfg)) == cfg


def test_config_hash_tracks_content():
    a = cfgmod.SimulationConfig()
    b = cfgmod.SimulationConfig()
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    c = cfgmod.SimulationConfig(seed=2)
    assert cfgmod.config_hash(a) != cfgmod.config_hash(c)


def test_unknown_keys_report_line_numbers():
    text = ("geometry:\n"
            "  nx: 16\n"
            "  spacing: 2.0\n"
            "propulsion:\n"
            "  thrust: 1\n")
    with pytest.raises(cfgmod.ConfigError) as err:
        cfgmod.parse_config(text)
    problems = err.value.problems
    assert any(p.startswith("line 3:") and "spacing" in p for p in problems)
    assert any(p.startswith("line 4:") and "propulsion" in p
               for p in problems)


def test_wrong_type_reports_expectation():
    with pytest.raises(cfgmod.ConfigError, match="expects int"):
        cfgmod.parse_config("geometry:\n  nx: coarse\n")
    with pytest.raises(cfgmod.ConfigError, match="expects bool"):
        cfgmod.parse_config("numerics:\n  corotate_lattice: maybe\n")


def test_top_level_must_be_mapping():
    with pytest.raises(cfgmod.ConfigError, match="top level"):
        cfgmod.parse_config("- geometry\n- loading\n")


def test_unknown_material_parameter_rejected():
    with pytest.raises(cfgmod.ConfigError, match="unknown ferrite"):
        cfgmod.parse_config("material:\n  ferrite:\n    color: 3.0\n")


def test_validation_collects_all_bounds():
    with pytest.raises(cfgmod.ConfigError) as err:
        cfgmod.parse_config("numerics:\n  dt: -0.5\n  theta: 0.0\n"
                            "output:\n  workers: 0\n")
    text = "\n".join(err.value.problems)
    assert "dt must be positive" in text
    assert "theta must lie" in text
    assert "workers must be at least 1" in text


def test_material_override_feeds_simulation():
    cfg = cfgmod.SimulationConfig(nx=8, ny=8, dt=0.5,
                                  ferrite={"young_modulus": 150000.0})
    ms = micro.single_phase(cfg.domain_size, 8, 8)
    sim = fem.Simulation(cfg, ms=ms)
    assert sim.materials[micro.FERRITE].young_modulus == 150000.0
    assert sim.materials[micro.MARTENSITE].young_modulus == 237300.0


def test_version_string_prefix():
    assert cli._version_string().startswith(__version__)


# ---------------------------------------------------------------------------
# command-line entry points

TINY_RUN = ("geometry:\n"
            "  nx: 16\n"
            "  ny: 16\n"
            "numerics:\n"
            "  dt: 0.5\n"
            "loading:\n"
            "  total_displacement: 0.08\n")


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("DPCP_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def _write_config(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_simulate_writes_run_artifacts(tmp_path, out_root):
    cfg_path = _write_config(tmp_path, TINY_RUN + (
        "output:\n"
        "  snapshot_interval: 10\n"
        "  checkpoint_interval: 10\n"))
    assert cli.main(["simulate", cfg_path, "--name", "tiny"]) == 0
    out = out_root / "runs" / "tiny"

    curves = post.read_curves(out / "curves.csv")
    assert len(curves["t_s"]) == 20
    assert curves["sigma_n_MPa"][-1] > 0.0
    for name in ("snapshot_000000.vtk", "snapshot_000010.vtk",
                 "snapshot_000020.vtk", "checkpoint.npz",
                 "microstructure.csv", "stress_strain.png",
                 "stress_partition.png", "strain_partition.png",
                 "density_histories.png"):
        assert (out / name).exists(), name

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert manifest["steps_completed"] == 20
    assert manifest["steps_planned"] == 20
    assert manifest["version"].startswith(__version__)
    assert manifest["config_sha256"] == cfgmod.config_hash(
        cfgmod.load_config(cfg_path))
    assert "manifest.json" not in manifest["files"]
    digest = hashlib.sha256((out / "curves.csv").read_bytes()).hexdigest()
    assert manifest["files"]["curves.csv"] == digest


def test_simulate_repeat_is_byte_identical(tmp_path, out_root):
    cfg_path = _write_config(tmp_path, TINY_RUN)
    assert cli.main(["simulate", cfg_path, "--name", "a"]) == 0
    assert cli.main(["simulate", cfg_path, "--name", "b"]) == 0
    root = out_root / "runs"
    assert ((root / "a" / "curves.csv").read_bytes()
            == (root / "b" / "curves.csv").read_bytes())
    assert ((root / "a" / "microstructure.csv").read_bytes()
            == (root / "b" / "microstructure.csv").read_bytes())


def test_zero_step_run_still_documents_itself(tmp_path, out_root):
    cfg_path = _write_config(tmp_path, (
        "geometry:\n  nx: 16\n  ny: 16\n"
        "numerics:\n  dt: 1.0\n"
        "loading:\n  total_displacement: 0.002\n"))
    assert cli.main(["simulate", cfg_path, "--name", "zero"]) == 0
    out = out_root / "runs" / "zero"
    curves = post.read_curves(out / "curves.csv")
    assert len(curves["t_s"]) == 0
    assert not (out / "stress_strain.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["steps_completed"] == 0


def test_config_error_exits_two(tmp_path, out_root, capsys):
    cfg_path = _write_config(tmp_path, "geometry:\n  nx: fine\n")
    assert cli.main(["simulate", cfg_path]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unbuildable_microstructure_exits_one(tmp_path, out_root, capsys):
    # d_F = 7.5 um on a 16x16 grid cannot hit the target phase fraction.
    cfg_path = _write_config(tmp_path, TINY_RUN + (
        "microstructure:\n  d_ferrite: 7.5\n"))
    assert cli.main(["simulate", cfg_path, "--name", "bad"]) == 1
    assert "aborted: band calibration" in capsys.readouterr().err


def test_study_single_size_artifacts(tmp_path, out_root, capsys):
    cfg_path = _write_config(tmp_path, TINY_RUN)
    assert cli.main(["study", cfg_path, "--name", "s1",
                     "--dF", "15"]) == 0
    out = out_root / "runs" / "s1"
    assert (out / "dF_15" / "curves.csv").exists()
    assert (out / "study_stress_strain.png").exists()
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0].startswith("d_F_um,t_s,")
    assert len(lines) == 1 + 20
    assert all(line.startswith("15.0,") for line in lines[1:])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["completed"] == [15.0]
    # A single size offers nothing to order, so no trend report.
    assert "trend report" not in capsys.readouterr().out


def test_study_partial_failure_keeps_going(tmp_path, out_root, capsys):
    cfg_path = _write_config(tmp_path, TINY_RUN)
    assert cli.main(["study", cfg_path, "--name", "s2",
                     "--dF", "7.5,15"]) == 1
    captured = capsys.readouterr()
    assert "d_F=7.5 failed" in captured.err
    out = out_root / "runs" / "s2"
    assert (out / "dF_15" / "curves.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["grain_sizes"] == [7.5, 15.0]
    assert manifest["completed"] == [15.0]


def test_microstructure_export(tmp_path, out_root, capsys):
    cfg_path = _write_config(tmp_path, TINY_RUN)
    assert cli.main(["microstructure", cfg_path, "--name", "ms",
                     "--export"]) == 0
    assert "martensite fraction" in capsys.readouterr().out
    out = out_root / "runs" / "ms"
    for name in ("microstructure.csv", "microstructure.vtk",
                 "phase_map.png", "manifest.json"):
        assert (out / name).exists(), name


def test_point_driver_output_layout(tmp_path):
    path_file = tmp_path / "path.csv"
    rows = ["t_s,dxx,dyy,dzz,dyz,dxz,dxy"]
    for k in range(3):
        rows.append("%g,-5e-5,1e-4,-5e-5,0,0,0" % (k * 0.5))
    path_file.write_text("\n".join(rows) + "\n")
    out_file = tmp_path / "point.csv"
    assert cli.main(["point-driver", str(path_file), "--phase", "ferrite",
                     "--output", str(out_file)]) == 0
    lines = out_file.read_text().splitlines()
    header = lines[0].split(",")
    assert len(header) == 1 + 4 * 24
    assert header[0] == "t_s" and header[1] == "tau_MPa_00"
    assert len(lines) == 1 + 3
    data = np.array([line.split(",") for line in lines[1:]], dtype=float)
    assert np.all(np.isfinite(data))
    # Stored density stays at its initial value until slip accumulates.
    assert np.all(data[:, 1 + 3 * 24:] >= 1.0)


def test_point_driver_rejects_malformed_path(tmp_path, capsys):
    path_file = tmp_path / "bad.csv"
    path_file.write_text("t_s,dyy\n0.0,1e-4\n1.0,1e-4\n")
    assert cli.main(["point-driver", str(path_file)]) == 2
    assert "expected 7 columns" in capsys.readouterr().err
