from __future__ import annotations

import math

import numpy as np
import pytest

from pdecalib.experiments import (
    SWEEP_HEADER,
    DiagnosticConstants,
    ManufacturedProblem,
    SweepRow,
    baseline_calibrate,
    burgers_problem,
    calibrate,
    check_theorem,
    consistency_check,
    convergence_sweep,
    diffusion_problem,
    error_report,
    lattice_time,
    loglog_slope,
    make_snapshots,
    manufactured_problem,
    median_table,
    observation_error,
    theorem_bound,
    total_variation,
    wave_problem,
    write_sweep,
)
from pdecalib.models import (
    ConfigurationError,
    Grid1D,
    NetworkArchitecture,
    NoiseSpec,
    OptimizerConfig,
    ProblemConfig,
    SnapshotSpec,
)
from pdecalib.residual import SnapshotGroup, SnapshotSet, residual_vector
from pdecalib.storage import read_csv


# ── Problems and snapshots ───────────────────────────────────


def test_problem_factory_dispatches_on_kind():
    assert manufactured_problem(ProblemConfig(kind="wave", field="c2")).kind == "wave"
    assert manufactured_problem(ProblemConfig(kind="burgers")).diffusivity == pytest.approx(0.1)
    assert diffusion_problem().diffusivity is None


def test_wave_speeds():
    x = np.array([-0.7, -0.3, 0.0, 0.2, 0.5])
    np.testing.assert_allclose(wave_problem(ProblemConfig(kind="wave", field="c2")).exact_field(x), [2.0, 1.0, 0.2, 1.0, 1.5])
    np.testing.assert_allclose(wave_problem().exact_field(np.array([0.5])), [2.0])


def test_burgers_profile_is_finite_where_field_vanishes():
    problem = burgers_problem()
    values = problem.initial(np.array([0.0, 0.5, 1.0]))
    assert np.all(np.isfinite(values))
    assert problem.exact_field(np.array([0.5]))[0] == pytest.approx(0.0)


def test_noiseless_snapshots_are_the_closed_form(diffusion_data):
    x = diffusion_data.grid.points
    u0, u1 = diffusion_data.groups[0].snapshots
    exact = diffusion_problem().exact_solution
    np.testing.assert_array_equal(u0, exact(x, 0.1))
    np.testing.assert_array_equal(u1, exact(x, 0.1 + 1e-3))
    assert observation_error(diffusion_data) == 0.0


def test_noise_is_seeded():
    problem, grid = diffusion_problem(), Grid1D(n=21)
    spec = SnapshotSpec(times=(0.1,), m=2, dt=1e-3)
    a = make_snapshots(problem, grid, spec, NoiseSpec(std=1e-3, seed=5))
    b = make_snapshots(problem, grid, spec, NoiseSpec(std=1e-3, seed=5))
    c = make_snapshots(problem, grid, spec, NoiseSpec(std=1e-3, seed=6))
    np.testing.assert_array_equal(a.groups[0].snapshots, b.groups[0].snapshots)
    assert not np.array_equal(a.groups[0].snapshots, c.groups[0].snapshots)
    assert 0.0 < observation_error(a) <= 6e-3
    np.testing.assert_array_equal(a.clean[0].snapshots, make_snapshots(problem, grid, spec).groups[0].snapshots)


def test_simulated_snapshots_track_the_closed_form():
    problem, grid = diffusion_problem(), Grid1D(n=401)
    simulated = make_snapshots(problem, grid, SnapshotSpec(times=(0.1,), m=2, dt=1e-3, sim_dt=5e-4))
    exact = make_snapshots(problem, grid, SnapshotSpec(times=(0.1,), m=2, dt=1e-3))
    assert np.max(np.abs(simulated.groups[0].snapshots - exact.groups[0].snapshots)) <= 1e-4


def test_snapshot_times_must_be_on_the_lattice():
    with pytest.raises(ConfigurationError, match="lattice"):
        make_snapshots(diffusion_problem(), Grid1D(n=21), SnapshotSpec(times=(0.1,), m=2, dt=1e-3, sim_dt=3e-4))


def test_wave_snapshots_need_a_simulation_step():
    with pytest.raises(ConfigurationError, match="sim_dt"):
        make_snapshots(wave_problem(), Grid1D(n=21), SnapshotSpec(times=(0.1,), m=3, dt=1e-3))


def test_lattice_time_rounds_to_the_step():
    assert lattice_time(0.33333, 1e-4) == pytest.approx(0.3333)


# ── Metrics ──────────────────────────────────────────────────


def test_error_report_uses_interior_nodes():
    grid = Grid1D(n=11)
    exact = np.zeros(grid.n)
    estimate = np.full(grid.n, 0.1)
    estimate[0] = estimate[-1] = 5.0
    report = error_report(grid, exact, estimate)
    assert report.x.shape == (9,)
    assert report.linf_interior == pytest.approx(0.1)
    assert report.l2_interior == pytest.approx(0.1 * math.sqrt(grid.h * 9))
    assert report.linf_on((0.2, 0.8)) == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        report.linf_on((2.0, 3.0))


def test_total_variation_and_slope():
    assert total_variation(np.array([0.0, 1.0, 0.0, 2.0])) == pytest.approx(4.0)
    hs = [0.1, 0.05, 0.025]
    assert loglog_slope(hs, [3 * h**2 for h in hs]) == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        loglog_slope([0.1], [0.2])


# ── Consistency and the error bound ──────────────────────────


def test_consistency_is_second_order():
    problem = diffusion_problem()
    coarse = consistency_check(problem, Grid1D(n=1001), 1e-3)
    fine = consistency_check(problem, Grid1D(n=2001), 5e-4)
    assert coarse / fine >= 3.5
    assert consistency_check(problem, Grid1D(n=2001), 5e-4) == fine


def test_residual_problem_regularization_defaults_by_kind():
    grid = Grid1D(n=11)
    u = np.full(grid.n, 0.5)
    data = SnapshotSet(grid=grid, dt=0.01, groups=[SnapshotGroup(0.0, np.vstack([u, u]))])
    arch = NetworkArchitecture(layer_widths=(4,))
    assert burgers_problem().residual_problem(data, arch).regularization == 0.01
    assert diffusion_problem().residual_problem(data, arch).regularization == 0.0
    assert burgers_problem().residual_problem(data, arch, 0.0).regularization == 0.0


def test_exact_field_loss_falls_at_fourth_order():
    problem = diffusion_problem()
    steps, per_row = [], []
    for n, dt in [(251, 4e-3), (501, 2e-3), (1001, 1e-3)]:
        grid = Grid1D(n=n)
        snapshots = make_snapshots(problem, grid, SnapshotSpec(times=(0.1,), m=2, dt=dt))
        residual = problem.residual_problem(snapshots, NetworkArchitecture())
        rows = residual_vector(residual, problem.exact_field(grid.points))
        steps.append(dt)
        per_row.append(float(np.sum(rows * rows)) / rows.size)
    assert loglog_slope(steps, per_row) == pytest.approx(4.0, abs=0.6)



def test_consistency_vanishes_for_linear_solution():
    linear = ManufacturedProblem(
        config=ProblemConfig(kind="diffusion"),
        exact_field=lambda x: 1.0 + 0.0 * x,
        initial=lambda x: 2.0 * x,
        exact_solution=lambda x, t: 2.0 * x + 0.0 * t,
    )
    assert consistency_check(linear, Grid1D(n=21), 0.01) <= 1e-9


def test_consistency_needs_closed_form():
    with pytest.raises(ConfigurationError):
        consistency_check(wave_problem(), Grid1D(n=21), 0.01)


def _constants(delta2: float = 2.0, delta4: float = 40.0) -> DiagnosticConstants:
    return DiagnosticConstants(delta2=delta2, delta4=delta4, F0=2.0, F2=1.0, F2f=2.0, window=(0.2, 0.8))


def test_bound_not_applicable_without_curvature():
    grid = Grid1D(n=41)
    report = error_report(grid, np.zeros(grid.n), np.full(grid.n, 0.01))
    bound = theorem_bound(report, _constants(delta2=0.0), 0.0, 0.0, 1e-3, grid.h, 1.0)
    assert not bound.applicable
    assert not bound.holds
    coarse = theorem_bound(report, _constants(delta2=1e-4), 0.0, 0.0, 1e-3, grid.h, 1.0)
    assert not coarse.applicable
    assert "sqrt" in coarse.reason


def test_bound_terms():
    grid = Grid1D(n=41)
    h, dt = grid.h, 1e-3
    report = error_report(grid, np.zeros(grid.n), np.full(grid.n, 0.01))
    one = theorem_bound(report, _constants(), 1e-6, 1e-4, dt, h, 3.0)
    two = theorem_bound(report, _constants(), 2e-6, 1e-4, dt, h, 3.0)
    assert one.applicable
    assert two.terms["noise"] == pytest.approx(2 * one.terms["noise"])
    assert one.terms["time"] == pytest.approx(2 * 3.0 / 2.0 * dt * dt)
    assert one.terms["space"] == pytest.approx((2 * 3.0 / 2.0 + 1.5) * h * h)
    assert one.terms["optimization"] == pytest.approx(1e-4)
    assert one.bound == pytest.approx(sum(one.terms.values()))
    assert one.observed == pytest.approx(0.01)


# ── Calibration ──────────────────────────────────────────────


@pytest.fixture(scope="module")
def small_calibration():
    problem = diffusion_problem()
    data = make_snapshots(problem, Grid1D(n=41), SnapshotSpec(times=(0.1,), m=2, dt=1e-3))
    arch = NetworkArchitecture(layer_widths=(10,))
    return problem, calibrate(problem, data, arch, OptimizerConfig(max_iters=500), seed=0)


def test_calibration_fits_the_field(small_calibration):
    _, result = small_calibration
    assert result.trace.final_loss <= 1e-2 * result.trace.losses[0]
    assert result.report.linf_on((0.2, 0.8)) <= 0.1
    assert result.field_values.shape == (41,)


def test_calibration_is_deterministic(small_calibration):
    problem, result = small_calibration
    again = calibrate(problem, result.problem.observations, result.architecture, OptimizerConfig(max_iters=500), seed=0)
    np.testing.assert_array_equal(again.theta, result.theta)


def test_error_bound_holds_on_small_run(small_calibration):
    problem, result = small_calibration
    bound = check_theorem(problem, result, t=0.1)
    assert bound.applicable
    assert bound.holds


def test_calibration_rejects_empty_data():
    empty = SnapshotSet(grid=Grid1D(n=11), dt=1e-3, groups=[])
    with pytest.raises(ConfigurationError):
        calibrate(diffusion_problem(), empty, NetworkArchitecture(layer_widths=(4,)))


# ── Baseline ─────────────────────────────────────────────────


@pytest.mark.parametrize("method", ["lbfgs", "newton-cg"])
def test_noiseless_baseline_recovers_the_field(method):
    problem = diffusion_problem()
    grid = Grid1D(n=81)
    data = make_snapshots(problem, grid, SnapshotSpec(times=(0.1,), m=2, dt=1e-3))
    result = baseline_calibrate(problem, data, method=method)
    assert result.method == method
    assert result.values.shape == (grid.n,)
    assert result.report.linf_on((0.2, 0.8)) <= 1e-2


def test_baseline_flags_uninformative_data():
    grid = Grid1D(n=11)
    flat = np.ones((2, grid.n))
    data = SnapshotSet(grid=grid, dt=1e-3, groups=[SnapshotGroup(0.1, flat)])
    result = baseline_calibrate(diffusion_problem(ProblemConfig(kind="diffusion")), data)
    assert result.underdetermined
    np.testing.assert_array_equal(result.uncovered, np.arange(1, grid.n - 1))


def test_baseline_rejects_unknown_method(diffusion_data):
    with pytest.raises(ConfigurationError):
        baseline_calibrate(diffusion_problem(), diffusion_data, method="simplex")


# ── Sweep ────────────────────────────────────────────────────


SWEEP_ARGS = dict(
    spec=SnapshotSpec(times=(0.1,), m=2, dt=1e-3),
    architecture=NetworkArchitecture(layer_widths=(4,)),
    optimizer=OptimizerConfig(max_iters=15),
)


def test_sweep_does_not_depend_on_worker_count():
    configs = [(1e-3, 0.2), (1e-3, 0.1)]
    serial = convergence_sweep(diffusion_problem(), configs, 2, jobs=1, **SWEEP_ARGS)
    parallel = convergence_sweep(diffusion_problem(), configs, 2, jobs=2, **SWEEP_ARGS)
    assert serial == parallel
    assert [(row.h, row.seed) for row in serial] == [(0.1, 0), (0.1, 1), (0.2, 0), (0.2, 1)]
    assert [row.n for row in serial] == [20, 20, 10, 10]


def test_sweep_keeps_failed_runs(tmp_path):
    rows = convergence_sweep(diffusion_problem(), [(1e-3, 0.3), (1e-3, 0.2)], 1, **SWEEP_ARGS)
    failed = [row for row in rows if not row.ok]
    assert len(failed) == 1
    assert failed[0].h == 0.3
    assert failed[0].stop_reason == "failed"
    assert failed[0].linf is None

    header, written = read_csv(write_sweep(tmp_path / "sweep.csv", rows))
    assert header == SWEEP_HEADER
    assert len(written) == 2


def test_median_table_skips_failures():
    rows = [
        SweepRow(dt=1e-3, h=0.1, n=20, seed=0, linf=1.0, stop_reason="relative_decrease"),
        SweepRow(dt=1e-3, h=0.1, n=20, seed=1, linf=3.0, stop_reason="relative_decrease"),
        SweepRow(dt=1e-3, h=0.1, n=20, seed=2, linf=2.0, stop_reason="relative_decrease"),
        SweepRow(dt=1e-3, h=0.1, n=20, seed=3, error="boom"),
    ]
    assert median_table(rows) == [(1e-3, 0.1, 20, 2.0)]
