"""Projected L-BFGS with a strong-Wolfe line search.

The search direction comes from the usual two-loop recursion over the last
``memory`` curvature pairs; the step length from
:func:`scipy.optimize.line_search` (strong Wolfe conditions). With a
projection configured, each accepted step is projected back onto the
constraint set before the curvature pair is formed.

Stopping rules, checked after every accepted step:

- relative decrease: |f_{k+1} - f_k| <= eps1 * max(|f_k|, 1e-300)
- gradient norm:     ||grad f_{k+1}||_inf <= eps2
- iteration budget:  max_iters accepted steps
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.optimize import line_search

from . import storage
from .field_net import project_flat
from .models import ConfigurationError, NetworkArchitecture, OptimizationError, OptimizerConfig

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]
StopReason = Literal["relative_decrease", "gradient_norm", "max_iters", "line_search_failure"]

_CURVATURE_FLOOR = 1e-10
_TINY = 1e-300
# scipy reports line-search failures as RuntimeWarning subclasses with this prefix.
_LINE_SEARCH_MESSAGE = "The line search algorithm"


@dataclass
class OptimizationTrace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    stop_reason: StopReason = "max_iters"
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def iterations(self) -> int:
        return len(self.losses) - 1

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def to_csv(self, path: str | Path) -> Path:
        rows = [(i, loss, g) for i, (loss, g) in enumerate(zip(self.losses, self.grad_norms))]
        return storage.write_csv(path, ["iteration", "loss", "grad_norm"], rows)


class _CachedObjective:
    """Memoise the last (value, gradient) so split f / f' callers pay once."""

    def __init__(self, objective: Objective) -> None:
        self._objective = objective
        self._key: bytes | None = None
        self._value = 0.0
        self._grad = np.zeros(0)
        self.calls = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        key = x.tobytes()
        if key != self._key:
            value, grad = self._objective(x)
            self.calls += 1
            self._key = key
            self._value = float(value)
            self._grad = np.asarray(grad, dtype=float)
        return self._value, self._grad

    def value(self, x: np.ndarray) -> float:
        return self(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self(x)[1]


class LBFGSHessianApproximation:
    """Inverse Hessian approximation from stored (s, y) pairs."""

    def __init__(self, memory: int) -> None:
        self._pairs: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=memory)

    def __len__(self) -> int:
        return len(self._pairs)

    def clear(self) -> None:
        self._pairs.clear()

    def append(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store the pair if its curvature s.y is large enough; report whether it was kept."""
        sy = float(s @ y)
        if sy <= _CURVATURE_FLOOR:
            return False
        self._pairs.append((s, y, 1.0 / sy))
        return True

    def inverse_action(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion: approximate H^{-1} g."""
        q = g.copy()
        alphas: list[float] = []
        for s, y, rho in reversed(self._pairs):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if self._pairs:
            s, y, _ = self._pairs[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(self._pairs, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return q


def minimize(
    objective: Objective,
    theta0: np.ndarray,
    config: OptimizerConfig | None = None,
    *,
    architecture: NetworkArchitecture | None = None,
) -> OptimizationTrace:
    """Minimise *objective* from *theta0*.

    *objective* maps a flat vector to ``(value, gradient)``. *architecture* is
    required when ``config.projection`` is enabled, to know which blocks of
    the flat vector are weight matrices.
    """
    config = config or OptimizerConfig()
    projection = config.projection if config.projection and config.projection.enabled else None
    if projection is not None and architecture is None:
        raise ConfigurationError("projection requires the network architecture")

    def _project(x: np.ndarray) -> np.ndarray:
        if projection is None:
            return x
        assert architecture is not None
        return project_flat(architecture, x, projection)

    fun = _CachedObjective(objective)
    x = _project(np.array(theta0, dtype=float))
    f, g = fun(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise OptimizationError(f"objective is not finite at the start point (value={f})")

    trace = OptimizationTrace(losses=[f], grad_norms=[_inf_norm(g)], theta=x.copy())
    if trace.grad_norms[0] <= config.eps2:
        trace.stop_reason = "gradient_norm"
        return trace

    hessian = LBFGSHessianApproximation(config.memory)
    f_prev: float | None = None
    logger.debug("L-BFGS start: loss %.6e, |g| %.3e, %d parameters", f, trace.grad_norms[0], x.size)

    for it in range(1, config.max_iters + 1):
        step = _take_step(fun, x, f, g, f_prev, hessian, config, _project)
        if step is None:
            trace.stop_reason = "line_search_failure"
            logger.warning("L-BFGS: line search failed at iteration %d (loss %.6e)", it, f)
            break
        x_new, f_new, g_new = step

        if not hessian.append(x_new - x, g_new - g):
            logger.debug("  curvature pair discarded at iteration %d", it)
        f_prev, f_old = f, f
        x, f, g = x_new, f_new, g_new
        trace.losses.append(f)
        trace.grad_norms.append(_inf_norm(g))
        trace.theta = x.copy()
        if it % 100 == 0:
            logger.debug("L-BFGS: iteration %d, loss %.6e, |g| %.3e", it, f, trace.grad_norms[-1])

        if abs(f - f_old) <= config.eps1 * max(abs(f_old), _TINY):
            trace.stop_reason = "relative_decrease"
            break
        if trace.grad_norms[-1] <= config.eps2:
            trace.stop_reason = "gradient_norm"
            break
    else:
        trace.stop_reason = "max_iters"

    logger.info(
        "L-BFGS stopped (%s) after %d iterations, %d evaluations, loss %.6e",
        trace.stop_reason, trace.iterations, fun.calls, trace.final_loss,
    )
    return trace


def _take_step(
    fun: _CachedObjective,
    x: np.ndarray,
    f: float,
    g: np.ndarray,
    f_prev: float | None,
    hessian: LBFGSHessianApproximation,
    config: OptimizerConfig,
    project: Callable[[np.ndarray], np.ndarray],
) -> tuple[np.ndarray, float, np.ndarray] | None:
    """One accepted step, or None if no descent step could be found."""
    for _ in range(2):
        direction = -hessian.inverse_action(g)
        if not float(direction @ g) < 0.0:
            hessian.clear()
            direction = -g
        if len(hessian) == 0:
            # Without curvature information start from a unit-length step.
            direction = direction / max(1.0, float(np.linalg.norm(direction)))
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=_LINE_SEARCH_MESSAGE, category=RuntimeWarning)
            alpha, *_ = line_search(
                fun.value, fun.grad, x, direction, gfk=g, old_fval=f, old_old_fval=f_prev,
                c1=config.c1, c2=config.c2, maxiter=config.max_line_search,
            )
        if alpha is not None:
            accepted = _accept(fun, x, f, direction, float(alpha), project)
            if accepted is not None:
                return accepted
        if len(hessian) == 0:
            return None
        # Retry once from steepest descent with a fresh memory.
        hessian.clear()
        f_prev = None
    return None


def _accept(
    fun: _CachedObjective,
    x: np.ndarray,
    f: float,
    direction: np.ndarray,
    alpha: float,
    project: Callable[[np.ndarray], np.ndarray],
) -> tuple[np.ndarray, float, np.ndarray] | None:
    """Project the line-search point; halve the step until the loss does not increase."""
    for _ in range(30):
        candidate = project(x + alpha * direction)
        f_new, g_new = fun(candidate)
        if np.isfinite(f_new) and np.all(np.isfinite(g_new)) and f_new <= f:
            return candidate, f_new, g_new.copy()
        alpha *= 0.5
    return None


def gradient_check(
    objective: Objective,
    theta: np.ndarray,
    step: float = 1e-6,
    n_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error of the analytic gradient against central differences.

    The error is max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor) over the
    checked coordinates, so it does not depend on the scale of the objective.
    With *n_coords* set, a random subset of that many coordinates is checked.
    """
    if step <= 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {step}")
    theta = np.asarray(theta, dtype=float)
    _, analytic = objective(theta)
    coords = np.arange(theta.size)
    if n_coords is not None and n_coords < theta.size:
        coords = np.sort(np.random.default_rng(seed).choice(theta.size, size=n_coords, replace=False))
    numeric = np.empty(coords.size)
    for k, i in enumerate(coords):
        bump = np.zeros_like(theta)
        bump[i] = step
        numeric[k] = (objective(theta + bump)[0] - objective(theta - bump)[0]) / (2.0 * step)
    checked = np.asarray(analytic, dtype=float)[coords]
    scale = max(_inf_norm(checked), _inf_norm(numeric), floor)
    return _inf_norm(checked - numeric) / scale


def _inf_norm(g: np.ndarray) -> float:
    return float(np.max(np.abs(g))) if g.size else 0.0
