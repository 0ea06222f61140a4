from __future__ import annotations

import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from pdecalib import cli
from pdecalib.__main__ import main
from pdecalib.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, parse_set, resolve_config, run, run_id
from pdecalib.models import ConfigurationError, SingularSystemError
from pdecalib.presets import PRESETS, get_preset, presets
from pdecalib.storage import read_csv

SMALL = ["grid.n=21", "network.layer_widths=[4]", "optimizer.max_iters=10"]


def _write_config(tmp_path: Path, data: dict) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _run_dir(tmp_path: Path, overrides: dict, sets: list[str]) -> Path:
    return tmp_path / run_id(resolve_config(None, overrides, sets))


# ── Config resolution ────────────────────────────────────────


def test_parse_set_reads_json_values():
    assert parse_set("grid.n=640") == {"grid": {"n": 640}}
    assert parse_set("problem.kind=wave") == {"problem": {"kind": "wave"}}
    assert parse_set("network.layer_widths=[8, 8]") == {"network": {"layer_widths": [8, 8]}}
    with pytest.raises(ConfigurationError):
        parse_set("grid.n")


def test_precedence_preset_file_flags_set(tmp_path):
    path = _write_config(tmp_path, {"grid": {"n": 81}, "seed": 4})
    from_file = resolve_config(path, {"command": "calibrate", "preset": "paper-fig1"})
    assert from_file.grid.n == 81
    assert from_file.seed == 4
    assert from_file.network.layer_widths == (20, 20)

    flagged = resolve_config(path, {"command": "calibrate", "preset": "paper-fig1", "seed": 9}, ["grid.n=41"])
    assert flagged.seed == 9
    assert flagged.grid.n == 41
    assert flagged.preset == "paper-fig1"


def test_missing_grid_size_is_named(tmp_path, capsys):
    path = _write_config(
        tmp_path,
        {"command": "calibrate", "grid": {}, "snapshots": {"times": [0.1], "dt": 0.001}, "out": str(tmp_path)},
    )
    assert run(path) == EXIT_CONFIG
    assert "grid.n" in capsys.readouterr().out


def test_unknown_preset_is_a_config_error(capsys):
    assert run(None, {"command": "calibrate", "preset": "no-such-preset"}) == EXIT_CONFIG
    assert "unknown preset" in capsys.readouterr().out


def test_grid_required_for_data_commands():
    with pytest.raises(ValidationError, match="grid is required"):
        resolve_config(None, {"command": "calibrate"})
    assert resolve_config(None, {"command": "verify-bounds"}).grid is None


# ── Presets ──────────────────────────────────────────────────


def test_presets_are_listed_and_copied():
    assert "paper-fig1" in presets()
    first = get_preset("paper-fig1")
    first["grid"]["n"] = 3
    assert PRESETS["paper-fig1"]["grid"]["n"] == 1001
    with pytest.raises(ConfigurationError):
        get_preset("paper-fig9")


def test_fig1_preset_values():
    config = resolve_config(None, {"command": "calibrate", "preset": "paper-fig1"})
    assert config.grid.n == 1001
    assert config.snapshots.times == (0.1,)
    assert config.snapshots.dt == 0.001
    assert config.network.layer_widths == (20, 20)
    assert config.noise.std == 0.0


def test_time_sweep_preset_size():
    sweep = resolve_config(None, {"command": "sweep", "preset": "paper-fig2-dt"}).sweep
    assert len(sweep.dts) * len(sweep.hs) * sweep.seeds == 105


def test_wave_preset_anchors_are_on_the_lattice():
    config = resolve_config(None, {"command": "calibrate", "preset": "paper-wave-c1"})
    assert config.snapshots.times[0] == pytest.approx(0.3313)
    for t in config.snapshots.times:
        assert abs(round(t / 1e-4) * 1e-4 - t) <= 1e-12
    assert config.network.output_transform.kind == "bounded"


DATA = ["grid.n=21", "snapshots.times=[0.1]", "snapshots.dt=0.01"]


@pytest.mark.parametrize(("kind", "expected"), [("diffusion", 0.0), ("wave", 0.0), ("burgers", 0.01)])
def test_regularization_defaults_by_problem_kind(kind, expected):
    config = resolve_config(None, {"command": "calibrate"}, [f"problem.kind={kind}", *DATA])
    assert config.regularization == expected


def test_explicit_regularization_is_kept():
    config = resolve_config(None, {"command": "calibrate"}, ["problem.kind=burgers", "regularization=0", *DATA])
    assert config.regularization == 0.0
    assert resolve_config(None, {"command": "calibrate", "preset": "paper-burgers"}).regularization == 0.01


def test_convergence_presets_raise_the_iteration_cap():
    for name in ("paper-fig2-dt", "paper-fig2-h"):
        assert resolve_config(None, {"command": "sweep", "preset": name}).optimizer.max_iters == 20000
    assert resolve_config(None, {"command": "calibrate", "preset": "paper-fig1"}).optimizer.max_iters == 5000


def test_sensitivity_preset_drops_noise_dominated_rows():
    config = resolve_config(None, {"command": "sensitivity", "preset": "paper-sens-diffusion"})
    assert config.min_snr == 10.0
    assert resolve_config(None, {"command": "calibrate", "preset": "paper-fig1"}).min_snr == 0.0


def test_run_id_is_snake_case():
    rid = run_id(resolve_config(None, {"command": "calibrate", "preset": "paper-fig1", "seed": 3}))
    assert rid.startswith("calibrate_")
    assert rid.endswith("3")
    assert " " not in rid and "-" not in rid


# ── Commands ─────────────────────────────────────────────────


def test_calibrate_writes_deterministic_artifacts(tmp_path):
    outputs = []
    for name in ("a", "b"):
        overrides = {"command": "calibrate", "preset": "paper-fig1", "out": str(tmp_path / name)}
        assert run(None, overrides, SMALL) == EXIT_OK
        out = _run_dir(tmp_path / name, overrides, SMALL)
        for artifact in ("network.npz", "network.json", "trace.csv", "curve.csv", "manifest.json"):
            assert (out / artifact).exists()
        outputs.append(out)

    assert (outputs[0] / "curve.csv").read_bytes() == (outputs[1] / "curve.csv").read_bytes()
    manifest = json.loads((outputs[0] / "manifest.json").read_text())
    assert manifest["config"]["grid"]["n"] == 21
    assert manifest["results"]["iterations"] <= 10
    assert "error_bound" in manifest["results"]
    header, rows = read_csv(outputs[0] / "curve.csv")
    assert header == ["x", "f_exact", "f_theta"]
    assert len(rows) == 21


def test_simulate_writes_trajectory(tmp_path):
    overrides = {"command": "simulate", "out": str(tmp_path)}
    sets = ["grid.n=11", "snapshots.times=[0.01]", "snapshots.dt=0.001"]
    assert run(None, overrides, sets) == EXIT_OK
    out = _run_dir(tmp_path, overrides, sets)
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["t", "x", "u"]
    assert len(rows) == 12 * 11
    assert (out / "final.npz").exists()


def test_verify_bounds_small_suite(tmp_path):
    overrides = {"command": "verify-bounds", "out": str(tmp_path)}
    sets = ['bounds_suite={"bounds": [0.5], "n_layers": [2], "width": 4, "networks": 3, "samples": 20}']
    assert run(None, overrides, sets) == EXIT_OK
    out = _run_dir(tmp_path, overrides, sets)
    _, rows = read_csv(out / "bounds.csv")
    assert len(rows) == 1
    assert json.loads((out / "manifest.json").read_text())["results"]["violations"] == 0


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def _fail(*args, **kwargs):
        raise SingularSystemError("zero pivot in row 0")

    monkeypatch.setattr(cli.experiments, "calibrate", _fail)
    overrides = {"command": "calibrate", "preset": "paper-fig1", "out": str(tmp_path)}
    assert run(None, overrides, SMALL) == EXIT_NUMERICAL
    assert "forward failed" in capsys.readouterr().out


# ── Entry point ──────────────────────────────────────────────


def test_main_lists_presets(capsys):
    assert main(["--list-presets"]) == 0
    listed = capsys.readouterr().out
    for name in presets():
        assert name in listed


def test_main_without_command_prints_usage():
    assert main([]) == 2


def test_main_runs_a_command(tmp_path):
    argv = ["calibrate", "--preset", "paper-fig1", "--out", str(tmp_path), "--seed", "1", "-q"]
    for item in SMALL:
        argv += ["--set", item]
    assert main(argv) == EXIT_OK
    assert any(tmp_path.glob("*/manifest.json"))
