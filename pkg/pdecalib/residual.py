"""Scheme-residual losses over observed snapshots.

Every residual used here is affine in the nodal field values:

    r = offset + sum_k coeff_k * f[x_{i + shift_k}]

(diffusion and wave touch only f(x_i); Burgers touches f(x_{i-1}) and
f(x_{i+1})). The coefficients depend only on the data, so they are built
once per problem and shared by the network loss and the discrete
least-squares baseline. Boundary rows are never part of the loss.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .field_net import NetworkParams, forward_batch, vjp_params
from .forward import SourceFn, second_difference
from .models import ConfigurationError, Grid1D, NetworkArchitecture, NoiseSpec, NonFiniteError

logger = logging.getLogger(__name__)

ResidualKind = Literal["diffusion", "wave", "burgers"]

_MULTIPLICITY: dict[str, int] = {"diffusion": 2, "wave": 3, "burgers": 2}


# ── Observations ─────────────────────────────────────────────


@dataclass(frozen=True)
class SnapshotGroup:
    """m consecutive snapshots U_0 ... U_{m-1}, the first taken at time t."""

    t: float
    snapshots: np.ndarray

    @property
    def m(self) -> int:
        return self.snapshots.shape[0]


@dataclass
class SnapshotSet:
    grid: Grid1D
    dt: float
    groups: list[SnapshotGroup]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    clean: list[SnapshotGroup] | None = None

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigurationError(f"snapshot interval must be positive, got {self.dt}")
        for k, group in enumerate(self.groups):
            if group.snapshots.ndim != 2 or group.snapshots.shape[1] != self.grid.n:
                raise ConfigurationError(
                    f"group {k}: snapshots have shape {group.snapshots.shape}, grid has {self.grid.n} points"
                )
            if group.m < 2:
                raise ConfigurationError(f"group {k}: need at least 2 snapshots, got {group.m}")
        times = [g.t for g in self.groups]
        if len(set(times)) != len(times):
            raise ConfigurationError("snapshot group times must be distinct")

    @property
    def m(self) -> int:
        return self.groups[0].m if self.groups else 0

    def __len__(self) -> int:
        return len(self.groups)


# ── Affine residual ──────────────────────────────────────────


@dataclass(frozen=True)
class AffineResidual:
    """Residual rows for every group: shape (groups, n - 2), row i at node i + 1."""

    offset: np.ndarray
    coeffs: tuple[np.ndarray, ...]
    shifts: tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return self.offset.shape[1] + 2

    def _window(self, shift: int) -> slice:
        return slice(1 + shift, self.n_nodes - 1 + shift)

    def linear_part(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.offset)
        for coeff, shift in zip(self.coeffs, self.shifts):
            out += coeff * values[self._window(shift)]
        return out

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise ConfigurationError(f"field values have shape {values.shape}, expected ({self.n_nodes},)")
        return self.offset + self.linear_part(values)

    def pullback(self, rows: np.ndarray) -> np.ndarray:
        """Node cotangent sum_rows 2 * rows * dr/df_node (the gradient of sum rows^2 if rows = r)."""
        cot = np.zeros(self.n_nodes)
        for coeff, shift in zip(self.coeffs, self.shifts):
            cot[self._window(shift)] += 2.0 * np.sum(rows * coeff, axis=0)
        return cot

    def coverage(self) -> np.ndarray:
        """Sum of squared coefficients per node; zero means the data say nothing about that node."""
        cov = np.zeros(self.n_nodes)
        for coeff, shift in zip(self.coeffs, self.shifts):
            cov[self._window(shift)] += np.sum(coeff * coeff, axis=0)
        return cov

    def masked(self, keep: np.ndarray) -> AffineResidual:
        """The same residual with every row outside *keep* set to zero."""
        return AffineResidual(
            np.where(keep, self.offset, 0.0),
            tuple(np.where(keep, coeff, 0.0) for coeff in self.coeffs),
            self.shifts,
        )


def _stack(rows: list[np.ndarray], width: int) -> np.ndarray:
    return np.vstack(rows) if rows else np.zeros((0, width))


def _diffusion_affine(obs: SnapshotSet, source: SourceFn | None) -> AffineResidual:
    h, dt, x = obs.grid.h, obs.dt, obs.grid.points
    offsets, coeffs = [], []
    for group in obs.groups:
        u0, u1 = group.snapshots[0], group.snapshots[1]
        offset = (u1[1:-1] - u0[1:-1]) / dt
        if source is not None:
            offset = offset - 0.5 * (source(x, group.t)[1:-1] + source(x, group.t + dt)[1:-1])
        offsets.append(offset)
        coeffs.append(-0.5 * (second_difference(u1, h) + second_difference(u0, h)))
    width = obs.grid.n - 2
    return AffineResidual(_stack(offsets, width), (_stack(coeffs, width),), (0,))


def _wave_affine(obs: SnapshotSet) -> AffineResidual:
    h, dt = obs.grid.h, obs.dt
    offsets, coeffs = [], []
    for group in obs.groups:
        u0, u1, u2 = group.snapshots[0], group.snapshots[1], group.snapshots[2]
        offsets.append((u2[1:-1] - 2.0 * u1[1:-1] + u0[1:-1]) / (dt * dt))
        coeffs.append(-second_difference(u1, h))
    width = obs.grid.n - 2
    return AffineResidual(_stack(offsets, width), (_stack(coeffs, width),), (0,))


def _burgers_affine(obs: SnapshotSet, diffusivity: float) -> AffineResidual:
    h, dt = obs.grid.h, obs.dt
    a = dt / (8.0 * h)
    b = diffusivity * dt / (2.0 * h * h)
    offsets, upper, lower = [], [], []
    for group in obs.groups:
        u0, u1 = group.snapshots[0], group.snapshots[1]
        s = u0 + u1
        flux = a * s * (2.0 - s)
        offsets.append(
            -b * u1[2:] + (1.0 + 2.0 * b) * u1[1:-1] - b * u1[:-2]
            - u0[1:-1] - b * (u0[2:] - 2.0 * u0[1:-1] + u0[:-2])
        )
        upper.append(flux[2:])
        lower.append(-flux[:-2])
    width = obs.grid.n - 2
    return AffineResidual(_stack(offsets, width), (_stack(lower, width), _stack(upper, width)), (-1, 1))


def coefficient_spread(kind: ResidualKind, observations: SnapshotSet) -> tuple[np.ndarray, ...]:
    """Standard deviation that the observation noise puts on each residual coefficient.

    One array per coefficient of :func:`build_affine`, shaped like its rows.
    The Burgers flux spread is linearised about the observed state.
    """
    std, h, dt = observations.noise.std, observations.grid.h, observations.dt
    width = observations.grid.n - 2
    shape = (len(observations), width)
    if kind == "diffusion":
        return (np.full(shape, std * math.sqrt(3.0) / (h * h)),)
    if kind == "wave":
        return (np.full(shape, std * math.sqrt(6.0) / (h * h)),)
    a = dt / (8.0 * h)
    spread = [
        a * np.abs(2.0 - 2.0 * (g.snapshots[0] + g.snapshots[1])) * std * math.sqrt(2.0) for g in observations.groups
    ]
    return _stack([s[:-2] for s in spread], width), _stack([s[2:] for s in spread], width)


def signal_to_noise_mask(
    kind: ResidualKind, observations: SnapshotSet, affine: AffineResidual, min_snr: float
) -> np.ndarray:
    """Rows with at least one coefficient min_snr noise deviations away from zero.

    A row whose coefficients are all buried in noise pulls the field towards
    zero at its node, so it carries no usable information about the field.
    """
    keep = np.ones(affine.offset.shape, dtype=bool)
    if min_snr <= 0.0 or observations.noise.std <= 0.0:
        return keep
    keep[:] = False
    for coeff, spread in zip(affine.coeffs, coefficient_spread(kind, observations)):
        keep |= np.abs(coeff) >= min_snr * spread
    return keep


def build_affine(
    kind: ResidualKind,
    observations: SnapshotSet,
    *,
    source: SourceFn | None = None,
    diffusivity: float | None = None,
    min_snr: float = 0.0,
) -> AffineResidual:
    logger.debug("building %s residual over %d groups on %d points", kind, len(observations), observations.grid.n)
    if kind == "diffusion":
        affine = _diffusion_affine(observations, source)
    elif kind == "wave":
        affine = _wave_affine(observations)
    elif kind == "burgers":
        if diffusivity is None or diffusivity <= 0:
            raise ConfigurationError("burgers residual needs a positive diffusivity")
        affine = _burgers_affine(observations, diffusivity)
    else:
        raise ConfigurationError(f"unknown residual kind {kind!r}")
    if min_snr < 0:
        raise ConfigurationError(f"min_snr must be >= 0, got {min_snr}")
    keep = signal_to_noise_mask(kind, observations, affine, min_snr)
    if keep.all():
        return affine
    logger.info("dropping %d of %d residual rows below signal-to-noise %g", keep.size - keep.sum(), keep.size, min_snr)
    return affine.masked(keep)


# ── Problem ──────────────────────────────────────────────────


@dataclass
class ResidualProblem:
    """Observations, known terms and the network that represents the unknown field.

    ``source`` is the known diffusion source s(x, t); ``diffusivity`` the
    Burgers constant D. ``regularization`` is lambda in lambda * ||theta||^2.
    Rows below ``min_snr`` (see :func:`signal_to_noise_mask`) are left out.
    """

    kind: ResidualKind
    observations: SnapshotSet
    architecture: NetworkArchitecture
    regularization: float = 0.0
    source: SourceFn | None = None
    diffusivity: float | None = None
    min_snr: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _MULTIPLICITY:
            raise ConfigurationError(f"unknown residual kind {self.kind!r}")
        if self.regularization < 0:
            raise ConfigurationError(f"regularization must be >= 0, got {self.regularization}")
        if self.min_snr < 0:
            raise ConfigurationError(f"min_snr must be >= 0, got {self.min_snr}")
        if not self.observations.groups:
            raise ConfigurationError("snapshot set is empty: nothing to fit")
        need = _MULTIPLICITY[self.kind]
        for k, group in enumerate(self.observations.groups):
            if group.m != need:
                raise ConfigurationError(f"{self.kind} residual needs {need} snapshots per group, group {k} has {group.m}")
        if self.kind == "burgers" and (self.diffusivity is None or self.diffusivity <= 0):
            raise ConfigurationError("burgers residual needs a positive diffusivity")
        if self.architecture.input_dim != 1:
            raise ConfigurationError("coefficient fields are functions of x only (input_dim must be 1)")

    @cached_property
    def affine(self) -> AffineResidual:
        return build_affine(
            self.kind, self.observations, source=self.source, diffusivity=self.diffusivity, min_snr=self.min_snr
        )

    @property
    def grid(self) -> Grid1D:
        return self.observations.grid

    def field_values(self, theta: np.ndarray) -> np.ndarray:
        params = NetworkParams.unflatten(self.architecture, theta)
        return forward_batch(params, self.architecture, self.grid.points)

    def objective(self) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
        return lambda theta: loss_and_grad(self, theta)


def residual_vector(problem: ResidualProblem, field_values: np.ndarray) -> np.ndarray:
    """Residual rows (groups, n - 2) for arbitrary nodal field values."""
    return problem.affine.evaluate(field_values)


def _residuals_of_kind(problem: ResidualProblem, theta: np.ndarray, kind: ResidualKind) -> np.ndarray:
    if problem.kind != kind:
        raise ConfigurationError(f"problem is {problem.kind}, not {kind}")
    return residual_vector(problem, problem.field_values(theta))


def diffusion_residuals(problem: ResidualProblem, theta: np.ndarray) -> np.ndarray:
    return _residuals_of_kind(problem, theta, "diffusion")


def wave_residuals(problem: ResidualProblem, theta: np.ndarray) -> np.ndarray:
    return _residuals_of_kind(problem, theta, "wave")


def burgers_residuals(problem: ResidualProblem, theta: np.ndarray) -> np.ndarray:
    return _residuals_of_kind(problem, theta, "burgers")


def _check_finite(rows: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(rows))
    if bad.size:
        group, row = (int(v) for v in bad[0])
        raise NonFiniteError(f"non-finite residual in group {group} at grid index {row + 1}", group=group, index=row + 1)


def loss_and_grad(problem: ResidualProblem, theta: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared residuals plus lambda * ||theta||^2, and its exact gradient."""
    theta = np.asarray(theta, dtype=float)
    params = NetworkParams.unflatten(problem.architecture, theta)
    xs = problem.grid.points
    rows = problem.affine.evaluate(forward_batch(params, problem.architecture, xs))
    _check_finite(rows)

    lam = problem.regularization
    loss = float(np.sum(rows * rows)) + lam * float(theta @ theta)
    grad = vjp_params(params, problem.architecture, xs, problem.affine.pullback(rows)) + 2.0 * lam * theta
    return loss, grad


# ── Discrete least squares ───────────────────────────────────


@dataclass
class LeastSquaresObjective:
    """The same residual loss with the nodal values f_1 ... f_n as unknowns."""

    affine: AffineResidual

    @property
    def size(self) -> int:
        return self.affine.n_nodes

    def __call__(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        rows = self.affine.evaluate(values)
        _check_finite(rows)
        return float(np.sum(rows * rows)), self.affine.pullback(rows)

    def value(self, values: np.ndarray) -> float:
        return self(values)[0]

    def grad(self, values: np.ndarray) -> np.ndarray:
        return self(values)[1]

    def hessp(self, values: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """2 M^T M p; the objective is quadratic so *values* does not matter."""
        return self.affine.pullback(self.affine.linear_part(np.asarray(direction, dtype=float)))

    def uncovered(self, nodes: Sequence[int] | None = None) -> np.ndarray:
        """Indices (among *nodes*, default interior) that no residual row constrains."""
        cov = self.affine.coverage()
        idx = np.arange(1, self.size - 1) if nodes is None else np.asarray(nodes)
        scale = max(float(cov.max()), 1.0)
        return idx[cov[idx] <= 1e-24 * scale]


def least_squares_problem(
    kind: ResidualKind,
    observations: SnapshotSet,
    *,
    source: SourceFn | None = None,
    diffusivity: float | None = None,
    min_snr: float = 0.0,
) -> LeastSquaresObjective:
    if not observations.groups:
        raise ConfigurationError("snapshot set is empty: nothing to fit")
    need = _MULTIPLICITY.get(kind)
    if need is not None and any(g.m != need for g in observations.groups):
        raise ConfigurationError(f"{kind} residual needs {need} snapshots per group, got {observations.m}")
    return LeastSquaresObjective(
        build_affine(kind, observations, source=source, diffusivity=diffusivity, min_snr=min_snr)
    )
