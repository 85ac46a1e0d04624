import json

import pytest

from kinklab import io
from kinklab.cli import main
from kinklab.statics import SeedSpec
from kinklab.trapfit import FitParameters, synthetic_observation


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_relax_writes_critical_point_and_manifest(tmp_path, capsys):
    code, out, _ = run(capsys, "relax", "--n", 31, "--gamma-y", 100, "--seed-kind", "odd_kink",
                       "--out", tmp_path)
    assert code == 0 and out.startswith("relax:") and out.count("\n") == 1
    doc = io.read_json(tmp_path / "critical_point.json")
    assert doc["type"] == "critical_point" and doc["manifest"] == "manifest.json"
    assert doc["n_negative"] == 0
    manifest = io.read_json(tmp_path / "manifest.json")
    assert manifest["subcommand"] == "relax"
    assert {o["path"] for o in manifest["outputs"]} >= {"critical_point.json"}


def test_usage_error_exits_2_with_json_on_stderr(capsys):
    code, _, err = run(capsys, "relax", "--no-such-flag")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 2


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert run(capsys, "levitate")[0] == 2


def test_computational_failure_exits_1(tmp_path, capsys):
    code, _, err = run(capsys, "relax", "--n", 3, "--seed-kind", "odd_kink", "--offset", 10,
                       "--out", tmp_path)
    assert code == 1
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit_code"] == 1 and doc["message"]


def test_unknown_config_key_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("gamma_why = 3\n")
    assert run(capsys, "relax", "--config", cfg, "--out", tmp_path)[0] == 2


def test_flags_override_config_which_overrides_defaults(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n = 9\nseed = 4\n[relax]\ngamma_y = 40.0\nseed_kind = \"zigzag\"\n")
    code, _, _ = run(capsys, "relax", "--config", cfg, "--gamma-y", 45, "--out", tmp_path)
    assert code == 0
    params = io.read_json(tmp_path / "manifest.json")["parameters"]
    assert params["n"] == 9 and params["seed"] == 4        # from the config file
    assert params["gamma_y"] == 45.0                        # flag wins
    assert params["ratio"] == 2.0                           # built-in default


def test_jobs_default_comes_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KINKLAB_JOBS", "3")
    run(capsys, "relax", "--n", 5, "--gamma-y", 30, "--seed-kind", "chain", "--out", tmp_path)
    assert io.read_json(tmp_path / "manifest.json")["parameters"]["jobs"] == 3


def _outputs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "manifest.json"}


def test_pn_scan_output_does_not_depend_on_jobs(tmp_path, capsys):
    args = ["pn", "--n", 31, "--scan", 90, 100, "--max-offset", 2]
    assert run(capsys, *args, "--jobs", 1, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, *args, "--jobs", 2, "--out", tmp_path / "b")[0] == 0
    a, b = _outputs(tmp_path / "a"), _outputs(tmp_path / "b")
    assert a == b and len(a) == 4


def test_ensemble_is_seeded_and_reproducible_from_manifest(tmp_path, capsys):
    args = ["simulate", "--n", 9, "--gamma-y", 30, "--seed-kind", "zigzag", "--thermal", 0.002,
            "--ensemble", 2, "--periods", 2, "--seed", 7]
    assert run(capsys, *args, "--jobs", 2, "--out", tmp_path / "a")[0] == 0
    assert run(capsys, "simulate", "--config", tmp_path / "a" / "manifest.json",
               "--out", tmp_path / "b")[0] == 0
    a, b = _outputs(tmp_path / "a"), _outputs(tmp_path / "b")
    assert a == b
    t0 = io.read_csv(tmp_path / "a" / "trajectory_000.csv")
    t1 = io.read_csv(tmp_path / "a" / "trajectory_001.csv")
    assert t0[-1]["x"] != t1[-1]["x"]                     # different members, different seeds


def test_manifest_for_another_command_is_rejected(tmp_path, capsys):
    run(capsys, "relax", "--n", 5, "--seed-kind", "chain", "--out", tmp_path)
    assert run(capsys, "modes", "--config", tmp_path / "manifest.json")[0] == 2


def test_modes_reads_a_critical_point(tmp_path, capsys):
    run(capsys, "relax", "--n", 9, "--gamma-y", 30, "--seed-kind", "zigzag", "--out", tmp_path)
    code, out, _ = run(capsys, "modes", "--input", tmp_path / "critical_point.json",
                       "--out", tmp_path / "m")
    assert code == 0 and out.startswith("modes:")


def test_render_writes_image_and_spots(tmp_path, capsys):
    run(capsys, "relax", "--n", 9, "--gamma-y", 30, "--seed-kind", "zigzag", "--out", tmp_path)
    code, _, _ = run(capsys, "render", "--input", tmp_path / "critical_point.json",
                     "--out", tmp_path / "r")
    assert code == 0
    assert (tmp_path / "r" / "image.pgm").read_bytes().startswith(b"P5")
    spots = io.read_csv(tmp_path / "r" / "spots.csv")
    assert len(spots) == 9


def test_sweep_finds_the_kink_window(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--n", 31, "--param", "gamma_y", "--branch", "odd_kink",
                       "--seed-at", 90, "--from", 160, "--to", 20, "--out", tmp_path)
    assert code == 0
    events = [e["parameter"] for f in tmp_path.glob("*.json") if f.name != "manifest.json"
              for e in io.read_json(f).get("events", [])]
    assert any(abs(p - 106.16) < 0.1 for p in events)
    assert any(abs(p - 65.17) < 0.1 for p in events)


def test_quick_report_passes_and_is_reproducible(tmp_path, capsys):
    code, out, _ = run(capsys, "report", "--suite", "quick", "--strict", "--out", tmp_path / "a")
    assert code == 0
    doc = io.read_json(tmp_path / "a" / "report.json")
    assert doc["type"] == "report" and doc["passed"]
    assert run(capsys, "report", "--config", tmp_path / "a" / "manifest.json",
               "--out", tmp_path / "b")[0] == 0
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")


def test_every_randomized_command_accepts_seed(capsys):
    for cmd in ("relax", "modes", "sweep", "pn", "simulate", "render", "fit", "report"):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        assert "--seed" in capsys.readouterr().out


def test_fit_recovers_parameters_from_frames(tmp_path, capsys):
    truth = FitParameters(0.000328, -0.0002, 0.0019, 0.286, -1.92, -44.5)
    obs = synthetic_observation(truth, SeedSpec("zigzag", 12, planar=False))
    frame = io.write_observation_csv(tmp_path / "frame.csv", obs.coords)
    code, out, _ = run(capsys, "fit", "--frames", frame, "--guess", *truth.vector(),
                       "--freeze", "a_x", "azimuth", "elevation", "--out", tmp_path / "f")
    assert code == 0 and out.startswith("fit:")
    doc = io.read_json(tmp_path / "f" / "fit.json")
    assert doc["mean_residual_um"] < 1e-3
    assert doc["parameters"]["q"] == pytest.approx(0.286, rel=1e-4)
