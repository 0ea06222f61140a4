from __future__ import annotations

import math

import numpy as np
import pytest

from pdecalib.experiments import diffusion_problem, make_snapshots, wave_problem
from pdecalib.forward import burgers_rows, burgers_step
from pdecalib.lbfgs import gradient_check
from pdecalib.models import (
    ConfigurationError,
    Grid1D,
    NetworkArchitecture,
    NoiseSpec,
    NonFiniteError,
    OutputTransform,
    SnapshotSpec,
)
from pdecalib.residual import (
    ResidualProblem,
    SnapshotGroup,
    SnapshotSet,
    burgers_residuals,
    coefficient_spread,
    diffusion_residuals,
    least_squares_problem,
    loss_and_grad,
    residual_vector,
    signal_to_noise_mask,
    wave_residuals,
)

ARCH = NetworkArchitecture(layer_widths=(5, 5))


def _single(grid: Grid1D, dt: float, *snapshots: np.ndarray, t: float = 0.0) -> SnapshotSet:
    return SnapshotSet(grid=grid, dt=dt, groups=[SnapshotGroup(t=t, snapshots=np.vstack(snapshots))])


def _burgers_data(grid: Grid1D, dt: float = 0.01, d: float = 0.1) -> SnapshotSet:
    x = grid.points
    u0 = 0.5 + 0.2 * np.sin(math.pi * x)
    f = -1.0 + np.exp(-((x - 0.5) ** 2))
    u1 = burgers_step(u0, f, d, grid, dt, (u0[0], u0[-1]))
    return _single(grid, dt, u0, u1)


@pytest.fixture
def wave_data() -> SnapshotSet:
    return make_snapshots(wave_problem(), Grid1D(n=41), SnapshotSpec(times=(0.1,), m=3, dt=0.01, sim_dt=0.005))


# ── Trivial cases ────────────────────────────────────────────


def test_constant_data_gives_zero_diffusion_residual(rng):
    grid = Grid1D(n=21)
    u = np.full(grid.n, 0.3)
    problem = ResidualProblem("diffusion", _single(grid, 0.01, u, u), ARCH)
    np.testing.assert_array_equal(residual_vector(problem, rng.standard_normal(grid.n)), 0.0)


def test_zero_network_leaves_time_difference():
    grid = Grid1D(n=21)
    u0 = np.sin(math.pi * grid.points)
    u1 = 0.9 * u0
    problem = ResidualProblem("diffusion", _single(grid, 0.01, u0, u1), ARCH)
    rows = diffusion_residuals(problem, np.zeros(ARCH.n_params))
    np.testing.assert_allclose(rows[0], (u1[1:-1] - u0[1:-1]) / 0.01)


def test_wave_residual_vanishes_on_linear_data(rng):
    grid = Grid1D(n=21)
    x = grid.points
    snaps = [x + k * 0.01 * (1.0 - 2.0 * x) for k in range(3)]
    problem = ResidualProblem("wave", _single(grid, 0.01, *snaps), ARCH)
    np.testing.assert_allclose(wave_residuals(problem, rng.standard_normal(ARCH.n_params)), 0.0, atol=1e-9)


def test_bounded_output_keeps_residual_finite(wave_data):
    arch = NetworkArchitecture(layer_widths=(5,), output_transform=OutputTransform.bounded(0.0, 2.0))
    problem = ResidualProblem("wave", wave_data, arch)
    loss, grad = loss_and_grad(problem, np.full(arch.n_params, 1e6))
    assert math.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_burgers_residual_vanishes_on_zero_state(rng):
    grid = Grid1D(n=21)
    zero = np.zeros(grid.n)
    problem = ResidualProblem("burgers", _single(grid, 0.01, zero, zero), ARCH, diffusivity=0.1)
    np.testing.assert_array_equal(burgers_residuals(problem, rng.standard_normal(ARCH.n_params)), 0.0)


def test_burgers_residual_of_a_pure_diffusion_step():
    grid = Grid1D(n=41)
    u0 = 0.5 + 0.2 * np.sin(math.pi * grid.points)
    u1 = burgers_step(u0, np.zeros(grid.n), 0.1, grid, 0.01, (u0[0], u0[-1]))
    problem = ResidualProblem("burgers", _single(grid, 0.01, u0, u1), ARCH, diffusivity=0.1)
    assert np.max(np.abs(residual_vector(problem, np.zeros(grid.n)))) <= 1e-10


def test_burgers_residual_matches_forward_scheme(rng):
    grid = Grid1D(n=41)
    data = _burgers_data(grid)
    problem = ResidualProblem("burgers", data, ARCH, diffusivity=0.1)
    f = rng.standard_normal(grid.n)
    u0, u1 = data.groups[0].snapshots
    np.testing.assert_allclose(
        residual_vector(problem, f)[0], burgers_rows(u1, u0, f, 0.1, grid, 0.01), rtol=1e-12, atol=1e-14
    )


def test_residual_is_affine_in_field_values(diffusion_data, rng):
    problem = diffusion_problem().residual_problem(diffusion_data, ARCH)
    f, g = rng.standard_normal((2, diffusion_data.grid.n))
    zero = np.zeros_like(f)
    lhs = residual_vector(problem, f + g) - residual_vector(problem, f)
    rhs = residual_vector(problem, g) - residual_vector(problem, zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_residual_kind_is_checked(diffusion_data):
    problem = diffusion_problem().residual_problem(diffusion_data, ARCH)
    with pytest.raises(ConfigurationError):
        wave_residuals(problem, np.zeros(ARCH.n_params))


# ── Loss ─────────────────────────────────────────────────────


def test_zero_residual_loss_and_regularization():
    grid = Grid1D(n=11)
    u = np.ones(grid.n)
    data = _single(grid, 0.01, u, u)
    loss, grad = loss_and_grad(ResidualProblem("diffusion", data, ARCH), np.zeros(ARCH.n_params))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)

    theta = np.zeros(ARCH.n_params)
    theta[0] = 2.0
    loss, grad = loss_and_grad(ResidualProblem("diffusion", data, ARCH, regularization=0.01), theta)
    assert loss == pytest.approx(0.04)
    np.testing.assert_allclose(grad, 0.02 * theta)


def _gradient_problem(kind: str, data: SnapshotSet, wave: SnapshotSet) -> tuple[ResidualProblem, NetworkArchitecture]:
    if kind == "diffusion":
        return diffusion_problem().residual_problem(data, ARCH, regularization=0.01), ARCH
    if kind == "wave":
        arch = NetworkArchitecture(layer_widths=(5, 5), output_transform=OutputTransform.bounded(0.0, 2.0))
        return ResidualProblem("wave", wave, arch), arch
    return ResidualProblem("burgers", _burgers_data(Grid1D(n=41)), ARCH, regularization=0.01, diffusivity=0.1), ARCH


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", ["diffusion", "wave", "burgers"])
def test_gradient_matches_central_differences(kind, seed, diffusion_data, wave_data):
    problem, arch = _gradient_problem(kind, diffusion_data, wave_data)
    theta = 0.5 * np.random.default_rng(seed).standard_normal(arch.n_params)
    assert gradient_check(problem.objective(), theta, step=1e-5) <= 1e-5


def test_non_finite_data_reports_location():
    grid = Grid1D(n=11)
    u = np.sin(math.pi * grid.points)
    bad = u.copy()
    bad[3] = np.nan
    data = SnapshotSet(
        grid=grid,
        dt=0.01,
        groups=[SnapshotGroup(0.0, np.vstack([u, u])), SnapshotGroup(0.1, np.vstack([u, bad]))],
    )
    with pytest.raises(NonFiniteError) as info:
        loss_and_grad(ResidualProblem("diffusion", data, ARCH), np.zeros(ARCH.n_params))
    assert info.value.group == 1
    assert info.value.index in {2, 3, 4}


def test_loss_ignores_group_order(random_theta):
    problem = diffusion_problem()
    grid = Grid1D(n=21)
    data = make_snapshots(problem, grid, SnapshotSpec(times=(0.05, 0.1, 0.2), m=2, dt=1e-3))
    reordered = SnapshotSet(grid=grid, dt=data.dt, groups=list(reversed(data.groups)))
    theta = random_theta(ARCH)
    forward_loss, _ = loss_and_grad(problem.residual_problem(data, ARCH), theta)
    reversed_loss, _ = loss_and_grad(problem.residual_problem(reordered, ARCH), theta)
    assert reversed_loss == pytest.approx(forward_loss, rel=1e-12)


# ── Validation ───────────────────────────────────────────────


def test_multiplicity_must_match_kind(diffusion_data):
    with pytest.raises(ConfigurationError, match="3 snapshots"):
        ResidualProblem("wave", diffusion_data, ARCH)


def test_empty_snapshot_set_raises():
    empty = SnapshotSet(grid=Grid1D(n=11), dt=0.01, groups=[])
    with pytest.raises(ConfigurationError, match="empty"):
        ResidualProblem("diffusion", empty, ARCH)
    with pytest.raises(ConfigurationError, match="empty"):
        least_squares_problem("diffusion", empty)


def test_burgers_needs_diffusivity():
    grid = Grid1D(n=11)
    u = np.zeros(grid.n)
    with pytest.raises(ConfigurationError, match="diffusivity"):
        ResidualProblem("burgers", _single(grid, 0.01, u, u), ARCH)


def test_duplicate_group_times_rejected():
    grid = Grid1D(n=11)
    u = np.zeros((2, grid.n))
    with pytest.raises(ConfigurationError, match="distinct"):
        SnapshotSet(grid=grid, dt=0.01, groups=[SnapshotGroup(0.1, u), SnapshotGroup(0.1, u)])


# ── Discrete least squares ───────────────────────────────────


def test_least_squares_pointwise_solution_recovers_field():
    problem = diffusion_problem()
    grid = Grid1D(n=201)
    data = make_snapshots(problem, grid, SnapshotSpec(times=(0.1,), m=2, dt=1e-3))
    objective = least_squares_problem("diffusion", data, source=problem.source)
    affine = objective.affine
    exact = problem.exact_field(grid.points)
    window = np.flatnonzero((grid.points >= 0.2) & (grid.points <= 0.8))
    values = exact.copy()
    values[window] = -affine.offset[0][window - 1] / affine.coeffs[0][0][window - 1]
    assert np.max(np.abs(objective.grad(values)[window])) <= 1e-9
    assert np.max(np.abs(values - exact)[window]) <= 1e-3


def test_least_squares_hessp_matches_gradient_differences(rng):
    objective = least_squares_problem("burgers", _burgers_data(Grid1D(n=31)), diffusivity=0.1)
    values = rng.standard_normal(objective.size)
    direction = rng.standard_normal(objective.size)
    numeric = (objective.grad(values + direction) - objective.grad(values - direction)) / 2.0
    np.testing.assert_allclose(objective.hessp(values, direction), numeric, rtol=1e-9, atol=1e-12)


def test_least_squares_on_zero_data_is_flat(rng):
    grid = Grid1D(n=11)
    zero = np.zeros(grid.n)
    objective = least_squares_problem("diffusion", _single(grid, 0.01, zero, zero))
    assert objective.value(rng.standard_normal(grid.n)) == 0.0
    np.testing.assert_array_equal(objective.uncovered(), np.arange(1, grid.n - 1))


# ── Signal-to-noise row mask ─────────────────────────────────


def _noisy_diffusion(std: float) -> SnapshotSet:
    spec = SnapshotSpec(times=(0.1,), m=2, dt=1e-3)
    return make_snapshots(diffusion_problem(), Grid1D(n=101), spec, NoiseSpec(std=std, seed=3))


def test_coefficient_spread_of_second_differences():
    data = _noisy_diffusion(1e-5)
    h = data.grid.h
    (spread,) = coefficient_spread("diffusion", data)
    np.testing.assert_allclose(spread, 1e-5 * math.sqrt(3.0) / h**2)
    np.testing.assert_allclose(coefficient_spread("wave", data)[0], 1e-5 * math.sqrt(6.0) / h**2)


def test_rows_without_signal_are_dropped(rng):
    data = _noisy_diffusion(1e-5)
    problem = diffusion_problem().residual_problem(data, ARCH, min_snr=10.0)
    x = data.grid.points
    centre = int(np.argmin(np.abs(x)))
    quarter = int(np.argmin(np.abs(x - 0.5)))

    keep = signal_to_noise_mask("diffusion", data, diffusion_problem().residual_problem(data, ARCH).affine, 10.0)
    assert not keep[0, centre - 1]
    assert keep[0, quarter - 1]

    rows = residual_vector(problem, rng.standard_normal(data.grid.n))
    assert np.all(rows[~keep] == 0.0)
    assert np.all(rows[keep] != 0.0)
    uncovered = least_squares_problem("diffusion", data, source=problem.source, min_snr=10.0).uncovered()
    assert centre in uncovered
    assert quarter not in uncovered


def test_mask_leaves_noiseless_data_alone(diffusion_data, rng):
    values = rng.standard_normal(diffusion_data.grid.n)
    plain = diffusion_problem().residual_problem(diffusion_data, ARCH)
    guarded = diffusion_problem().residual_problem(diffusion_data, ARCH, min_snr=10.0)
    np.testing.assert_array_equal(residual_vector(guarded, values), residual_vector(plain, values))


def test_negative_min_snr_rejected(diffusion_data):
    with pytest.raises(ConfigurationError):
        ResidualProblem("diffusion", diffusion_data, ARCH, min_snr=-1.0)
