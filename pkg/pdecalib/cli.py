"""Run resolution and the command handlers behind the ``pdecalib`` entry point.

A run config is resolved from, in increasing precedence: a named preset,
a JSON config file, command-line flags, and ``--set dotted.key=value``
overrides. Every run writes its artifacts into ``<out>/<run id>/`` together
with ``manifest.json`` echoing the resolved config.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from caseconverter import snakecase
from colorama import Fore, Style
from pydantic import ValidationError

from . import experiments, forward, storage
from .field_net import verify_bounds
from .models import CalibrationError, ConfigurationError, Grid1D, RunConfig
from .presets import get_preset
from .residual import SnapshotSet
from .sensitivity import QuantityFunctional, region

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ── Config resolution ────────────────────────────────────────


def _merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; values in *update* win."""
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def parse_set(item: str) -> dict[str, Any]:
    """``grid.n=640`` -> {"grid": {"n": 640}}; values are read as JSON when they parse."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"--set expects dotted.key=value, got {item!r}")
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    nested: dict[str, Any] = {}
    cursor = nested
    parts = key.strip().split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return nested


def _read_config_file(path: str | Path) -> dict[str, Any]:
    p = storage.resolve_path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {p} must hold a JSON object")
    return data


def resolve_config(
    config_path: str | Path | None,
    overrides: Mapping[str, Any] | None = None,
    sets: Sequence[str] = (),
) -> RunConfig:
    file_data = _read_config_file(config_path) if config_path else {}
    overrides = dict(overrides or {})
    preset = overrides.get("preset") or file_data.get("preset")

    data: dict[str, Any] = get_preset(preset) if preset else {}
    _merge(data, file_data)
    _merge(data, overrides)
    for item in sets:
        _merge(data, parse_set(item))
    if preset:
        data["preset"] = preset
    return RunConfig.model_validate(data)


def _dotted(loc: Sequence[int | str]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def format_validation_error(exc: ValidationError) -> str:
    return "; ".join(f"{_dotted(err['loc'])}: {err['msg']}" for err in exc.errors())


# ── Reporting ────────────────────────────────────────────────


def run_id(config: RunConfig) -> str:
    label = config.preset or f"{config.problem.kind} {config.problem.field}"
    return snakecase(f"{config.command} {label} seed {config.seed}")


def _summary(ok: bool, text: str) -> None:
    colour = Fore.GREEN if ok else Fore.RED
    print(colour + text + Style.RESET_ALL)


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


# ── Commands ─────────────────────────────────────────────────

Handler = Callable[[RunConfig, Path], tuple[str, dict[str, Any]]]


def _data(config: RunConfig) -> tuple[experiments.ManufacturedProblem, Grid1D, SnapshotSet]:
    assert config.grid is not None and config.snapshots is not None
    problem = experiments.manufactured_problem(config.problem)
    grid = config.grid.build()
    snapshots = experiments.make_snapshots(problem, grid, config.snapshots, config.noise)
    return problem, grid, snapshots


def _calibrate(
    config: RunConfig, problem: experiments.ManufacturedProblem, snapshots: SnapshotSet
) -> experiments.CalibrationResult:
    return experiments.calibrate(
        problem, snapshots, config.network, config.optimizer, config.regularization, config.seed, config.min_snr
    )


def _calibration_results(result: experiments.CalibrationResult) -> dict[str, Any]:
    assert result.report is not None
    return {
        "final_loss": result.trace.final_loss,
        "iterations": result.trace.iterations,
        "stop_reason": result.trace.stop_reason,
        "linf": result.report.linf_interior,
        "l2": result.report.l2_interior,
        "n": result.problem.grid.n,
        "groups": len(result.problem.observations),
    }


def _save_calibration(out: Path, result: experiments.CalibrationResult) -> None:
    storage.save_network(out / "network", result.architecture, result.theta)
    result.trace.to_csv(out / "trace.csv")


def cmd_simulate(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    assert config.grid is not None and config.snapshots is not None
    problem = experiments.manufactured_problem(config.problem)
    grid = config.grid.build()
    spec = config.snapshots
    dt = spec.sim_dt or spec.dt
    stride = max(1, round(spec.dt / dt))
    t_end = max(spec.times) + (spec.m - 1) * spec.dt
    steps = math.ceil(round(t_end / dt, 9) / stride) * stride
    record = list(range(0, steps + 1, stride))

    trajectory = experiments.simulate_problem(problem, grid, dt, steps, record=record)
    times = np.array(record, dtype=float) * dt
    forward.export_trajectory(out / "trajectory.csv", times, grid, trajectory)
    forward.checkpoint_final(out / "final", times, grid, trajectory)
    results = {"steps": steps, "dt": dt, "records": len(record), "max_abs_u": float(np.max(np.abs(trajectory)))}
    return f"simulated {steps} steps of dt={dt:g} up to t={steps * dt:g}", results


def cmd_calibrate(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    problem, grid, snapshots = _data(config)
    result = _calibrate(config, problem, snapshots)
    _save_calibration(out, result)
    assert result.report is not None
    experiments.export_curve(out / "curve.csv", grid.points, problem.exact_field(grid.points), result.field_values)

    results = _calibration_results(result)
    if problem.exact_solution is not None:
        bound = experiments.check_theorem(problem, result, snapshots.groups[0].t)
        results["error_bound"] = {
            "applicable": bound.applicable,
            "bound": _finite_or_none(bound.bound),
            "observed": bound.observed,
            "holds": bound.holds,
            "terms": bound.terms,
            "reason": bound.reason,
        }
    return f"loss {result.trace.final_loss:.3e}, linf {result.report.linf_interior:.3e}", results


def cmd_sweep(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    assert config.grid is not None and config.snapshots is not None
    if not config.sweep.dts or not config.sweep.hs:
        raise ConfigurationError("sweep.dts and sweep.hs must both be non-empty")
    problem = experiments.manufactured_problem(config.problem)
    configs = [(dt, h) for dt in config.sweep.dts for h in config.sweep.hs]
    rows = experiments.convergence_sweep(
        problem,
        configs,
        config.sweep.seeds,
        config.snapshots,
        config.network,
        config.optimizer,
        noise=config.noise,
        regularization=config.regularization,
        min_snr=config.min_snr,
        x_range=(config.grid.x_min, config.grid.x_max),
        master_seed=config.seed,
        jobs=config.jobs,
    )
    experiments.write_sweep(out / "sweep.csv", rows)
    medians = experiments.median_table(rows)
    storage.write_csv(out / "sweep_median.csv", ["dt", "h", "n", "linf_median"], medians)

    failed = sum(not row.ok for row in rows)
    return f"{len(rows)} runs, {failed} failed", {"runs": len(rows), "failed": failed, "slopes": _slopes(medians)}


def _slopes(medians: Sequence[tuple[float, float, int, float]]) -> dict[str, dict[str, float]]:
    """Log-log slope of the median error along every row (fixed n) and column (fixed dt)."""
    by_n: dict[int, list[tuple[float, float]]] = {}
    by_dt: dict[float, list[tuple[float, float]]] = {}
    for dt, h, n, linf in medians:
        by_n.setdefault(n, []).append((dt, linf))
        by_dt.setdefault(dt, []).append((h, linf))
    slopes: dict[str, dict[str, float]] = {"dt_at_n": {}, "h_at_dt": {}}
    for n, pairs in sorted(by_n.items()):
        if len(pairs) >= 2:
            slopes["dt_at_n"][str(n)] = experiments.loglog_slope(*zip(*pairs))
    for dt, pairs in sorted(by_dt.items()):
        if len(pairs) >= 2:
            slopes["h_at_dt"][repr(dt)] = experiments.loglog_slope(*zip(*pairs))
    return slopes


def cmd_sensitivity(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    problem, grid, snapshots = _data(config)
    result = _calibrate(config, problem, snapshots)
    _save_calibration(out, result)
    settings = config.sensitivity
    functional = QuantityFunctional(kind=settings.functional, x_star=settings.x_star)
    f_exact = problem.exact_field(grid.points)

    regions: dict[str, Any] = {}
    for delta in settings.deltas:
        sens = region(result.theta, result.architecture, functional, grid, delta, settings.n_alpha)
        sens.export(out / f"region_{delta:g}.csv", f_exact)
        regions[repr(delta)] = {
            **sens.metadata(),
            "max_width": float(sens.width.max()),
            "contains_exact": bool(np.all(sens.contains(f_exact)[1:-1])),
        }
    results = {**_calibration_results(result), "regions": regions}
    return f"loss {result.trace.final_loss:.3e}, {len(regions)} regions", results


def cmd_baseline(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    problem, grid, snapshots = _data(config)
    result = _calibrate(config, problem, snapshots)
    _save_calibration(out, result)
    baseline = experiments.baseline_calibrate(
        problem, snapshots, config.optimizer, config.baseline_method, config.min_snr
    )
    experiments.export_curve(
        out / "curve.csv", grid.points, problem.exact_field(grid.points), result.field_values, baseline.values
    )
    assert result.report is not None
    tv_net = experiments.total_variation(result.report.f_estimate)
    tv_base = experiments.total_variation(baseline.report.f_estimate)
    results = {
        **_calibration_results(result),
        "baseline": {
            "method": baseline.method,
            "final_loss": baseline.final_loss,
            "iterations": baseline.iterations,
            "linf": baseline.report.linf_interior,
            "l2": baseline.report.l2_interior,
            "underdetermined": baseline.underdetermined,
            "total_variation": tv_base,
        },
        "total_variation": tv_net,
    }
    return f"TV network {tv_net:.3e} vs least squares {tv_base:.3e}", results


def cmd_verify_bounds(config: RunConfig, out: Path) -> tuple[str, dict[str, Any]]:
    suite = config.bounds_suite
    rows = verify_bounds(suite.bounds, suite.n_layers, suite.width, suite.networks, suite.samples, config.seed)
    header = list(type(rows[0]).model_fields)
    storage.write_csv(out / "bounds.csv", header, ([getattr(row, key) for key in header] for row in rows))
    violations = sum(row.first_violations + row.second_violations for row in rows)
    return f"{sum(row.networks for row in rows)} networks, {violations} bound violations", {"violations": violations}


COMMANDS: dict[str, Handler] = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "sensitivity": cmd_sensitivity,
    "baseline": cmd_baseline,
    "verify-bounds": cmd_verify_bounds,
}


# ── Entry ────────────────────────────────────────────────────


def run(
    config_path: str | Path | None,
    overrides: Mapping[str, Any] | None = None,
    sets: Sequence[str] = (),
) -> int:
    """Resolve the config, execute the command and write its artifacts; return the exit code."""
    try:
        config = resolve_config(config_path, overrides, sets)
    except ValidationError as exc:
        _summary(False, f"invalid configuration: {format_validation_error(exc)}")
        return EXIT_CONFIG
    except ConfigurationError as exc:
        _summary(False, f"invalid configuration: {exc}")
        return EXIT_CONFIG

    rid = run_id(config)
    out = config.out_dir / rid
    logger.info("%s: writing artifacts to %s", config.command, out)
    try:
        text, results = COMMANDS[config.command](config, out)
    except ConfigurationError as exc:
        _summary(False, f"{rid}: invalid configuration: {exc}")
        return EXIT_CONFIG
    except CalibrationError as exc:
        _summary(False, f"{rid}: {exc.module} failed: {exc}")
        return EXIT_NUMERICAL

    storage.write_json(
        out / "manifest.json",
        {"run_id": rid, "config": config.model_dump(mode="json"), "results": results},
    )
    _summary(True, f"{rid}: {text} -> {out}")
    return EXIT_OK

