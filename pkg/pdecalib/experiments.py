"""Manufactured problems, calibration runs and the checks built on them.

- manufactured diffusion, wave (c1 / c2) and Burgers problems
- snapshot generation with optional Gaussian noise
- network calibration and the discrete least-squares baseline
- (dt, h) convergence sweeps on a bounded process pool
- consistency residuals and the a-priori error bound with estimated constants
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import minimize as scipy_minimize

from . import lbfgs, storage
from .field_net import NetworkParams, forward_batch, init_params, second_deriv_input_batch
from .forward import BoundaryFn, SourceFn, simulate
from .models import (
    CalibrationError,
    ConfigurationError,
    Grid1D,
    NetworkArchitecture,
    NoiseSpec,
    OptimizerConfig,
    OutputTransform,
    ProblemConfig,
    SnapshotSpec,
    TimeStepping,
    default_regularization,
)
from .residual import (
    LeastSquaresObjective,
    ResidualProblem,
    SnapshotGroup,
    SnapshotSet,
    least_squares_problem,
    residual_vector,
)

logger = logging.getLogger(__name__)

FieldFn = Callable[[np.ndarray], np.ndarray]
SolutionFn = Callable[[np.ndarray, float], np.ndarray]

_LATTICE_TOL = 1e-12


# ── Manufactured problems ────────────────────────────────────


def _gaussian_bump(x: np.ndarray) -> np.ndarray:
    """1 + exp(-(x - 0.5)^2); the diffusion conductivity and the smooth wave speed."""
    return 1.0 + np.exp(-((np.asarray(x, dtype=float) - 0.5) ** 2))


def _gaussian_bump_xx(x: np.ndarray) -> np.ndarray:
    y = np.asarray(x, dtype=float) - 0.5
    return (4.0 * y * y - 2.0) * np.exp(-y * y)


def _sine_decay(x: np.ndarray, t: float) -> np.ndarray:
    return np.exp(-math.pi**2 * t) * np.sin(math.pi * np.asarray(x, dtype=float))


def _sine_decay_xx(x: np.ndarray, t: float) -> np.ndarray:
    return -math.pi**2 * _sine_decay(x, t)


def _sine_decay_xxxx(x: np.ndarray, t: float) -> np.ndarray:
    return math.pi**4 * _sine_decay(x, t)


def _sine_decay_source(x: np.ndarray, t: float) -> np.ndarray:
    """s = u_t - c u_xx for the decaying sine and the bump conductivity."""
    return math.pi**2 * (_gaussian_bump(x) - 1.0) * _sine_decay(x, t)


def _step_speed(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.select(
        [x < -0.5, x < -0.1, x < 0.1, x < 0.3],
        [2.0, 1.0, 0.2, 1.0],
        default=1.5,
    )


def _gaussian_pulse(x: np.ndarray) -> np.ndarray:
    return np.exp(-10.0 * np.asarray(x, dtype=float) ** 2)


def _percolation(x: np.ndarray) -> np.ndarray:
    return -1.0 + np.exp(-((np.asarray(x, dtype=float) - 0.5) ** 2))


def _percolation_xx(x: np.ndarray) -> np.ndarray:
    return _gaussian_bump_xx(x)


def _segregation_profile(x: np.ndarray, t: float, speed: float, diffusivity: float, clamp: float) -> np.ndarray:
    """Travelling segregation profile used as Burgers initial and boundary data.

    f is clamped away from zero in the denominator only: sign(f) * max(|f|, clamp),
    with sign(0) taken as -1.
    """
    x = np.asarray(x, dtype=float)
    f = _percolation(x)
    safe = np.where(f > 0.0, 1.0, -1.0) * np.maximum(np.abs(f), clamp)
    return (speed - f) / (2.0 * safe) * (-1.0 + (x - speed * t) * np.tanh(speed - f) / (2.0 * diffusivity))


@dataclass(frozen=True)
class ManufacturedProblem:
    """A forward problem with a known coefficient field.

    ``exact_solution`` is set when u has a closed form; otherwise snapshots
    come from a forward simulation. ``window`` is the x-range used for the
    diagnostic constants of the error bound.
    """

    config: ProblemConfig
    exact_field: FieldFn
    initial: FieldFn
    exact_solution: SolutionFn | None = None
    source: SourceFn | None = None
    boundary_data: SolutionFn | None = None
    solution_xx: SolutionFn | None = None
    solution_xxxx: SolutionFn | None = None
    field_xx: FieldFn | None = None
    output_transform: OutputTransform = field(default_factory=OutputTransform)
    window: tuple[float, float] = (-1.0, 1.0)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def diffusivity(self) -> float | None:
        return self.config.diffusivity if self.kind == "burgers" else None

    def boundary(self, grid: Grid1D) -> BoundaryFn | None:
        if self.boundary_data is None:
            return None
        ends = np.array([grid.x_min, grid.x_max])
        data = self.boundary_data

        def _bc(t: float) -> tuple[float, float]:
            left, right = data(ends, t)
            return float(left), float(right)

        return _bc

    def residual_problem(
        self,
        observations: SnapshotSet,
        architecture: NetworkArchitecture,
        regularization: float | None = None,
        min_snr: float = 0.0,
    ) -> ResidualProblem:
        """Residual loss for this problem; *regularization* defaults by problem kind."""
        if regularization is None:
            regularization = default_regularization(self.kind)
        return ResidualProblem(
            kind=self.config.kind,
            observations=observations,
            architecture=architecture,
            regularization=regularization,
            source=self.source,
            diffusivity=self.diffusivity,
            min_snr=min_snr,
        )


def diffusion_problem(config: ProblemConfig | None = None) -> ManufacturedProblem:
    """u = exp(-pi^2 t) sin(pi x), c = 1 + exp(-(x - 0.5)^2), source from substitution."""
    config = config or ProblemConfig(kind="diffusion")
    return ManufacturedProblem(
        config=config,
        exact_field=_gaussian_bump,
        initial=partial(_sine_decay, t=0.0),
        exact_solution=_sine_decay,
        source=_sine_decay_source,
        boundary_data=_sine_decay,
        solution_xx=_sine_decay_xx,
        solution_xxxx=_sine_decay_xxxx,
        field_xx=_gaussian_bump_xx,
        window=(0.2, 0.8),
    )


def wave_problem(config: ProblemConfig | None = None) -> ManufacturedProblem:
    """u(x, 0) = exp(-10 x^2), u_t(x, 0) = 0, speed c1 (smooth) or c2 (piecewise constant)."""
    config = config or ProblemConfig(kind="wave")
    smooth = config.field == "c1"
    return ManufacturedProblem(
        config=config,
        exact_field=_gaussian_bump if smooth else _step_speed,
        initial=_gaussian_pulse,
        field_xx=_gaussian_bump_xx if smooth else None,
        output_transform=OutputTransform.bounded(0.0, 2.0),
    )


def burgers_problem(config: ProblemConfig | None = None) -> ManufacturedProblem:
    """Variable-coefficient Burgers with f = -1 + exp(-(x - 0.5)^2)."""
    config = config or ProblemConfig(kind="burgers")
    profile = partial(
        _segregation_profile, speed=config.wave_speed, diffusivity=config.diffusivity, clamp=config.clamp
    )
    return ManufacturedProblem(
        config=config,
        exact_field=_percolation,
        initial=partial(profile, t=0.0),
        boundary_data=profile,
        field_xx=_percolation_xx,
    )


def manufactured_problem(config: ProblemConfig) -> ManufacturedProblem:
    factories = {"diffusion": diffusion_problem, "wave": wave_problem, "burgers": burgers_problem}
    return factories[config.kind](config)


# ── Snapshots ────────────────────────────────────────────────


def _lattice_step(t: float, dt: float) -> int:
    step = round(t / dt)
    if abs(step * dt - t) > _LATTICE_TOL:
        raise ConfigurationError(f"time {t!r} is not on the simulation lattice of step {dt!r}")
    return step


def lattice_time(t: float, dt: float) -> float:
    """Round *t* to the nearest multiple of *dt*."""
    return round(t / dt) * dt


def simulate_problem(
    problem: ManufacturedProblem, grid: Grid1D, dt: float, steps: int, record: Sequence[int] | None = None
) -> np.ndarray:
    return simulate(
        problem.kind,  # type: ignore[arg-type]
        problem.exact_field(grid.points),
        grid,
        TimeStepping(dt=dt, steps=steps),
        problem.initial(grid.points),
        boundary=problem.boundary(grid),
        source=problem.source,
        diffusivity=problem.diffusivity,
        record=record,
    )


def make_snapshots(
    problem: ManufacturedProblem, grid: Grid1D, spec: SnapshotSpec, noise: NoiseSpec | None = None
) -> SnapshotSet:
    """Read snapshot groups off the exact solution or a forward simulation, then add noise.

    Group k holds u(t_k + j * spec.dt), j = 0 .. m-1. Without ``spec.sim_dt``
    the closed-form solution is used; with it, every requested time must lie
    on the simulation lattice.
    """
    noise = noise or NoiseSpec()
    offsets = spec.dt * np.arange(spec.m)
    x = grid.points

    if spec.sim_dt is None and problem.exact_solution is not None:
        clean = [np.vstack([problem.exact_solution(x, t + o) for o in offsets]) for t in spec.times]
    else:
        if spec.sim_dt is None:
            raise ConfigurationError(f"{problem.kind} problem has no closed form; snapshots.sim_dt is required")
        _lattice_step(spec.dt, spec.sim_dt)
        steps = [[_lattice_step(t + o, spec.sim_dt) for o in offsets] for t in spec.times]
        if min(min(s) for s in steps) < 0:
            raise ConfigurationError("snapshot times must be >= 0")
        wanted = sorted({s for group in steps for s in group})
        trajectory = simulate_problem(problem, grid, spec.sim_dt, wanted[-1], record=wanted)
        row = {s: i for i, s in enumerate(wanted)}
        clean = [trajectory[[row[s] for s in group]] for group in steps]

    if noise.std > 0.0:
        rng = np.random.default_rng(noise.seed)
        noisy = [u + rng.normal(0.0, noise.std, size=u.shape) for u in clean]
    else:
        noisy = [u.copy() for u in clean]

    logger.debug("made %d snapshot groups of %d on %d points (noise std %g)", len(clean), spec.m, grid.n, noise.std)
    return SnapshotSet(
        grid=grid,
        dt=spec.dt,
        groups=[SnapshotGroup(t=float(t), snapshots=u) for t, u in zip(spec.times, noisy)],
        noise=noise,
        clean=[SnapshotGroup(t=float(t), snapshots=u) for t, u in zip(spec.times, clean)],
    )


def observation_error(snapshots: SnapshotSet) -> float:
    """Infinity norm of the added noise (0 when no clean copy is kept)."""
    if not snapshots.clean:
        return 0.0
    return max(
        float(np.max(np.abs(noisy.snapshots - clean.snapshots)))
        for noisy, clean in zip(snapshots.groups, snapshots.clean)
    )


# ── Error metrics ────────────────────────────────────────────


@dataclass(frozen=True)
class ErrorReport:
    """Pointwise error of a calibrated field on the interior nodes [-1 + h, 1 - h].

    ``l2_interior`` is the grid L2 norm sqrt(h * sum e_i^2).
    """

    x: np.ndarray
    f_exact: np.ndarray
    f_estimate: np.ndarray
    linf_interior: float
    l2_interior: float

    def linf_on(self, window: tuple[float, float]) -> float:
        mask = (self.x >= window[0]) & (self.x <= window[1])
        if not np.any(mask):
            raise ConfigurationError(f"window {window} holds no interior node")
        return float(np.max(np.abs(self.f_estimate[mask] - self.f_exact[mask])))


def error_report(grid: Grid1D, f_exact: np.ndarray, f_estimate: np.ndarray) -> ErrorReport:
    x = grid.interior
    exact = np.asarray(f_exact, dtype=float)[1:-1]
    estimate = np.asarray(f_estimate, dtype=float)[1:-1]
    err = estimate - exact
    return ErrorReport(
        x=x,
        f_exact=exact,
        f_estimate=estimate,
        linf_interior=float(np.max(np.abs(err))),
        l2_interior=float(math.sqrt(grid.h * float(err @ err))),
    )


def total_variation(values: np.ndarray) -> float:
    """Sum |f_{i+1} - f_i|."""
    return float(np.sum(np.abs(np.diff(np.asarray(values, dtype=float)))))


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    if len(xs) < 2 or len(xs) != len(ys):
        raise ConfigurationError("slope needs at least two (x, y) pairs of equal length")
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)[0])


def export_curve(
    path: str | Path,
    x: np.ndarray,
    f_exact: np.ndarray,
    f_theta: np.ndarray,
    f_baseline: np.ndarray | None = None,
) -> Path:
    header = ["x", "f_exact", "f_theta"]
    columns = [x, f_exact, f_theta]
    if f_baseline is not None:
        header.append("f_baseline")
        columns.append(f_baseline)
    return storage.write_csv(path, header, zip(*columns))


# ── Calibration ──────────────────────────────────────────────


@dataclass
class CalibrationResult:
    theta: np.ndarray
    architecture: NetworkArchitecture
    trace: lbfgs.OptimizationTrace
    problem: ResidualProblem
    field_values: np.ndarray
    report: ErrorReport | None = None

    @property
    def params(self) -> NetworkParams:
        return NetworkParams.unflatten(self.architecture, self.theta)


def calibrate(
    problem: ManufacturedProblem,
    snapshots: SnapshotSet,
    architecture: NetworkArchitecture,
    optimizer: OptimizerConfig | None = None,
    regularization: float | None = None,
    seed: int = 0,
    min_snr: float = 0.0,
) -> CalibrationResult:
    """Fit the network to the snapshots by minimising the scheme-residual loss."""
    residual = problem.residual_problem(snapshots, architecture, regularization, min_snr)
    theta0 = init_params(architecture, seed).flatten()
    trace = lbfgs.minimize(residual.objective(), theta0, optimizer, architecture=architecture)

    values = residual.field_values(trace.theta)
    report = error_report(snapshots.grid, problem.exact_field(snapshots.grid.points), values)
    logger.info(
        "calibrated %s on %d points: loss %.3e, linf %.3e (%s)",
        problem.kind, snapshots.grid.n, trace.final_loss, report.linf_interior, trace.stop_reason,
    )
    return CalibrationResult(
        theta=trace.theta,
        architecture=architecture,
        trace=trace,
        problem=residual,
        field_values=values,
        report=report,
    )


# ── Least-squares baseline ───────────────────────────────────


@dataclass
class BaselineResult:
    values: np.ndarray
    report: ErrorReport
    final_loss: float
    iterations: int
    method: str
    underdetermined: bool
    uncovered: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def baseline_calibrate(
    problem: ManufacturedProblem,
    snapshots: SnapshotSet,
    optimizer: OptimizerConfig | None = None,
    method: str = "lbfgs",
    min_snr: float = 0.0,
) -> BaselineResult:
    """Minimise the residual loss over the nodal values f_1 ... f_n directly.

    Nodes no residual row depends on keep their starting value of 1; the
    result is flagged underdetermined when any interior node is such a node.
    """
    optimizer = optimizer or OptimizerConfig()
    objective: LeastSquaresObjective = least_squares_problem(
        problem.kind,  # type: ignore[arg-type]
        snapshots,
        source=problem.source,
        diffusivity=problem.diffusivity,
        min_snr=min_snr,
    )
    uncovered = objective.uncovered()
    if uncovered.size:
        logger.warning("least squares: %d interior nodes are not constrained by the data", uncovered.size)
    start = np.ones(objective.size)

    if method == "lbfgs":
        unprojected = optimizer.model_copy(update={"projection": None})
        trace = lbfgs.minimize(objective, start, unprojected)
        values, final_loss, iterations = trace.theta, trace.final_loss, trace.iterations
    elif method == "newton-cg":
        result = scipy_minimize(
            objective,
            start,
            jac=True,
            hessp=objective.hessp,
            method="Newton-CG",
            options={"maxiter": optimizer.max_iters, "xtol": 1e-12},
        )
        values, final_loss, iterations = np.asarray(result.x), float(result.fun), int(result.nit)
    else:
        raise ConfigurationError(f"unknown baseline method {method!r}")

    report = error_report(snapshots.grid, problem.exact_field(snapshots.grid.points), values)
    logger.info("baseline (%s): loss %.3e, linf %.3e", method, final_loss, report.linf_interior)
    return BaselineResult(
        values=values,
        report=report,
        final_loss=final_loss,
        iterations=iterations,
        method=method,
        underdetermined=bool(uncovered.size),
        uncovered=uncovered,
    )


# ── Convergence sweep ────────────────────────────────────────


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float
    h: float
    n: int
    seed: int
    linf: float | None = None
    l2: float | None = None
    stop_reason: str = "failed"
    iters: int | None = None
    final_loss: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


SWEEP_HEADER = ["dt", "h", "n", "seed", "linf", "l2", "stop_reason", "iters", "final_loss"]


@dataclass(frozen=True)
class _SweepJob:
    problem: ProblemConfig
    spec: SnapshotSpec
    noise: NoiseSpec
    architecture: NetworkArchitecture
    optimizer: OptimizerConfig
    regularization: float | None
    min_snr: float
    x_range: tuple[float, float]
    dt: float
    h: float
    seed: int
    entropy: tuple[int, int, int]


def _run_sweep_job(job: _SweepJob) -> SweepRow:
    init_seed, noise_seed = (int(s) for s in np.random.SeedSequence(list(job.entropy)).generate_state(2))
    n = round((job.x_range[1] - job.x_range[0]) / job.h)
    try:
        grid = Grid1D.from_spacing(job.h, *job.x_range)
        problem = manufactured_problem(job.problem)
        spec = job.spec.model_copy(update={"dt": job.dt})
        noise = job.noise.model_copy(update={"seed": noise_seed})
        snapshots = make_snapshots(problem, grid, spec, noise)
        result = calibrate(
            problem, snapshots, job.architecture, job.optimizer, job.regularization, init_seed, job.min_snr
        )
    except (CalibrationError, FloatingPointError) as exc:
        logger.warning("sweep run dt=%g h=%g seed=%d failed: %s", job.dt, job.h, job.seed, exc)
        return SweepRow(dt=job.dt, h=job.h, n=n, seed=job.seed, error=str(exc))
    assert result.report is not None
    return SweepRow(
        dt=job.dt,
        h=job.h,
        n=n,
        seed=job.seed,
        linf=result.report.linf_interior,
        l2=result.report.l2_interior,
        stop_reason=result.trace.stop_reason,
        iters=result.trace.iterations,
        final_loss=result.trace.final_loss,
    )


def convergence_sweep(
    problem: ManufacturedProblem,
    configs: Sequence[tuple[float, float]],
    seeds: int | Sequence[int],
    spec: SnapshotSpec,
    architecture: NetworkArchitecture,
    optimizer: OptimizerConfig | None = None,
    *,
    noise: NoiseSpec | None = None,
    regularization: float | None = None,
    min_snr: float = 0.0,
    x_range: tuple[float, float] = (-1.0, 1.0),
    master_seed: int = 0,
    jobs: int = 1,
) -> list[SweepRow]:
    """One calibration per (dt, h) config and seed.

    The table reports n = (x_max - x_min) / h, the number of grid intervals.
    Rows come back sorted by (h, dt, seed); failed runs are kept with their
    error message. Results do not depend on *jobs*.
    """
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    optimizer = optimizer or OptimizerConfig()
    noise = noise or NoiseSpec()
    work = [
        _SweepJob(
            problem=problem.config,
            spec=spec,
            noise=noise,
            architecture=architecture,
            optimizer=optimizer,
            regularization=regularization,
            min_snr=min_snr,
            x_range=x_range,
            dt=dt,
            h=h,
            seed=seed,
            entropy=(master_seed, index, seed),
        )
        for index, (dt, h) in enumerate(configs)
        for seed in seed_list
    ]
    logger.info("sweep: %d configs x %d seeds on %d worker(s)", len(configs), len(seed_list), jobs)
    if jobs <= 1 or len(work) <= 1:
        rows = [_run_sweep_job(job) for job in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_sweep_job, work))
    failed = sum(not row.ok for row in rows)
    if failed:
        logger.warning("sweep: %d of %d runs failed", failed, len(rows))
    return sorted(rows, key=lambda row: (row.h, row.dt, row.seed))


def median_table(rows: Sequence[SweepRow]) -> list[tuple[float, float, int, float]]:
    """(dt, h, n, median linf) per config over its successful seeds."""
    grouped: dict[tuple[float, float, int], list[float]] = {}
    for row in rows:
        if row.ok and row.linf is not None:
            grouped.setdefault((row.dt, row.h, row.n), []).append(row.linf)
    return [(dt, h, n, float(np.median(v))) for (dt, h, n), v in sorted(grouped.items())]


def write_sweep(path: str | Path, rows: Sequence[SweepRow]) -> Path:
    return storage.write_csv(path, SWEEP_HEADER, ([getattr(row, key) for key in SWEEP_HEADER] for row in rows))


# ── Consistency and the a-priori bound ───────────────────────


def consistency_check(problem: ManufacturedProblem, grid: Grid1D, dt: float, t: float = 0.1) -> float:
    """Max |scheme residual| with the exact solution and the exact field substituted."""
    if problem.exact_solution is None:
        raise ConfigurationError(f"{problem.kind} problem has no closed-form solution")
    m = 3 if problem.kind == "wave" else 2
    snapshots = make_snapshots(problem, grid, SnapshotSpec(times=(t,), m=m, dt=dt))
    residual = problem.residual_problem(snapshots, NetworkArchitecture())
    return float(np.max(np.abs(residual_vector(residual, problem.exact_field(grid.points)))))


@dataclass(frozen=True)
class DiagnosticConstants:
    """Constants of the error bound, estimated by sampling.

    delta2 = min |u_xx| and delta4 = max |u_xxxx| over the window and the
    snapshot interval; F0 = max |f_theta|, F2 = max |f_theta''| and
    F2f = max |f''| over the whole domain.
    """

    delta2: float
    delta4: float
    F0: float
    F2: float
    F2f: float
    window: tuple[float, float]


def diagnostic_constants(
    problem: ManufacturedProblem,
    result: CalibrationResult,
    t: float,
    dt: float,
    window: tuple[float, float] | None = None,
    refine: int = 10,
) -> DiagnosticConstants:
    """Sample the exact solution and both fields on a grid *refine* times finer than the data grid.

    u_xx and u_xxxx come from centred differences of the exact solution;
    f_theta'' is exact (forward-mode through the network).
    """
    if problem.exact_solution is None:
        raise ConfigurationError(f"{problem.kind} problem has no closed-form solution")
    grid = result.problem.grid
    window = window or problem.window
    ds = max(grid.h / refine, 1e-3)
    xs = np.arange(window[0], window[1] + 0.5 * ds, ds)
    pad = np.concatenate([xs[0] - ds * np.arange(2, 0, -1), xs, xs[-1] + ds * np.arange(1, 3)])

    delta2, delta4 = math.inf, 0.0
    for time in (t, t + dt):
        u = problem.exact_solution(pad, time)
        uxx = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / ds**2
        uxxxx = (u[4:] - 4.0 * u[3:-1] + 6.0 * u[2:-2] - 4.0 * u[1:-3] + u[:-4]) / ds**4
        delta2 = min(delta2, float(np.min(np.abs(uxx[1:-1]))))
        delta4 = max(delta4, float(np.max(np.abs(uxxxx))))

    fine = np.arange(grid.x_min, grid.x_max + 0.5 * ds, ds)
    arch = result.architecture
    params = result.params
    f_theta = forward_batch(params, arch, fine)
    f_theta_xx = second_deriv_input_batch(params, arch, fine)[:, 0, 0]
    if problem.field_xx is not None:
        f_xx = problem.field_xx(fine)
    else:
        f = problem.exact_field(fine)
        f_xx = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / ds**2
    return DiagnosticConstants(
        delta2=delta2,
        delta4=delta4,
        F0=float(np.max(np.abs(f_theta))),
        F2=float(np.max(np.abs(f_theta_xx))),
        F2f=float(np.max(np.abs(f_xx))),
        window=window,
    )


@dataclass(frozen=True)
class TheoremBound:
    applicable: bool
    bound: float
    observed: float
    terms: dict[str, float]
    reason: str = ""

    @property
    def holds(self) -> bool:
        return self.applicable and self.observed <= self.bound


def theorem_bound(
    report: ErrorReport,
    constants: DiagnosticConstants,
    eps_o: float,
    eps_opt: float,
    dt: float,
    h: float,
    c1: float,
) -> TheoremBound:
    """Evaluate the a-priori error bound

        2 C1/d2 dt^2 + (2 C1/d2 + (F2 + F2f)/2) h^2 + 2/d2 eps_opt + 4/d2 (1/dt + 2 F0/h^2) eps_o

    and compare it with the observed max error over the diagnostic window.
    Not applicable unless d2 > 0 and h < sqrt(6 d2 / d4).
    """
    observed = report.linf_on(constants.window)
    d2, d4 = constants.delta2, constants.delta4
    if not d2 > 0.0:
        return TheoremBound(False, math.inf, observed, {}, "delta2 is not positive")
    if d4 > 0.0 and not h < math.sqrt(6.0 * d2 / d4):
        return TheoremBound(False, math.inf, observed, {}, f"h={h} violates h < sqrt(6 delta2 / delta4)")
    terms = {
        "time": 2.0 * c1 / d2 * dt * dt,
        "space": (2.0 * c1 / d2 + 0.5 * (constants.F2 + constants.F2f)) * h * h,
        "optimization": 2.0 / d2 * eps_opt,
        "noise": 4.0 / d2 * (1.0 / dt + 2.0 * constants.F0 / (h * h)) * eps_o,
    }
    return TheoremBound(True, sum(terms.values()), observed, terms)


def check_theorem(
    problem: ManufacturedProblem, result: CalibrationResult, t: float, window: tuple[float, float] | None = None
) -> TheoremBound:
    """Estimate C1, eps_opt, eps_o and the diagnostic constants for *result*, then evaluate the bound."""
    if result.report is None:
        raise ConfigurationError("calibration result has no error report")
    obs = result.problem.observations
    grid, dt = obs.grid, obs.dt
    c1 = consistency_check(problem, grid, dt, t) / (dt * dt + grid.h * grid.h)
    eps_opt = float(np.max(np.abs(residual_vector(result.problem, result.field_values))))
    constants = diagnostic_constants(problem, result, t, dt, window)
    bound = theorem_bound(result.report, constants, observation_error(obs), eps_opt, dt, grid.h, c1)
    logger.info(
        "error bound (%s): observed %.3e vs bound %.3e",
        "applicable" if bound.applicable else bound.reason, bound.observed, bound.bound,
    )
    return bound
