"""Forward simulators used to generate ground-truth snapshot data.

- Crank-Nicolson for u_t = c(x) u_xx + s(x, t) with Dirichlet boundaries
- leapfrog for u_tt = c(x) u_xx with homogeneous Dirichlet boundaries
- implicit variable-coefficient Burgers, u_t + (u(1-u) f(x))_x = D u_xx,
  solved per step with Newton's method on the tridiagonal Jacobian

All step functions are pure; ``simulate`` marches them in time.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Literal

import numpy as np

from . import storage
from .models import (
    ConfigurationError,
    Grid1D,
    NewtonConvergenceError,
    SingularSystemError,
    TimeStepping,
)

logger = logging.getLogger(__name__)

_PIVOT_FLOOR = 1e-14

SimulationKind = Literal["diffusion", "wave", "burgers"]
SourceFn = Callable[[np.ndarray, float], np.ndarray]
BoundaryFn = Callable[[float], tuple[float, float]]


# ── Tridiagonal solver ───────────────────────────────────────


def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system with the Thomas algorithm.

    ``lower[i]`` couples row i+1 to column i and ``upper[i]`` couples row i
    to column i+1, so both have length n-1.
    """
    b = np.asarray(diag, dtype=float).tolist()
    n = len(b)
    a = np.asarray(lower, dtype=float).tolist()
    c = np.asarray(upper, dtype=float).tolist()
    d = np.asarray(rhs, dtype=float).tolist()
    if len(a) != n - 1 or len(c) != n - 1 or len(d) != n:
        raise ConfigurationError(
            f"tridiagonal sizes inconsistent: lower {len(a)}, diag {n}, upper {len(c)}, rhs {len(d)}"
        )

    c_prime = [0.0] * n
    d_prime = [0.0] * n
    pivot = b[0]
    if abs(pivot) < _PIVOT_FLOOR:
        raise SingularSystemError("zero pivot in row 0")
    if n > 1:
        c_prime[0] = c[0] / pivot
    d_prime[0] = d[0] / pivot
    for i in range(1, n):
        pivot = b[i] - a[i - 1] * c_prime[i - 1]
        if abs(pivot) < _PIVOT_FLOOR:
            raise SingularSystemError(f"zero pivot in row {i}")
        if i < n - 1:
            c_prime[i] = c[i] / pivot
        d_prime[i] = (d[i] - a[i - 1] * d_prime[i - 1]) / pivot

    x = [0.0] * n
    x[-1] = d_prime[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d_prime[i] - c_prime[i] * x[i + 1]
    return np.array(x)


def second_difference(v: np.ndarray, h: float) -> np.ndarray:
    """Centered (v_{i+1} - 2 v_i + v_{i-1}) / h^2 at interior points; length n-2."""
    return (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)


def _check_lengths(grid: Grid1D, **arrays: np.ndarray) -> None:
    for name, array in arrays.items():
        if np.shape(array) != (grid.n,):
            raise ConfigurationError(f"{name} has shape {np.shape(array)}, grid has {grid.n} points")


# ── Diffusion ────────────────────────────────────────────────


def cn_diffusion_step(
    v: np.ndarray,
    c: np.ndarray,
    source_now: np.ndarray,
    source_next: np.ndarray,
    bc: tuple[float, float],
    grid: Grid1D,
    dt: float,
) -> np.ndarray:
    """One Crank-Nicolson step; the source is averaged over both time levels."""
    _check_lengths(grid, v=v, c=c, source_now=source_now, source_next=source_next)
    r = dt / (2.0 * grid.h * grid.h)
    ci = c[1:-1]

    diag = np.ones(grid.n)
    lower = np.zeros(grid.n - 1)
    upper = np.zeros(grid.n - 1)
    diag[1:-1] = 1.0 + 2.0 * r * ci
    lower[:-1] = -r * ci
    upper[1:] = -r * ci

    rhs = np.empty(grid.n)
    rhs[1:-1] = (
        v[1:-1]
        + r * ci * (v[2:] - 2.0 * v[1:-1] + v[:-2])
        + 0.5 * dt * (source_now[1:-1] + source_next[1:-1])
    )
    rhs[0], rhs[-1] = bc
    return thomas_solve(lower, diag, upper, rhs)


# ── Wave ─────────────────────────────────────────────────────


def check_cfl(c: np.ndarray, grid: Grid1D, dt: float) -> float:
    """Return the CFL number and refuse to run when it exceeds one.

    The number is max(c_max, sqrt(c_max)) * dt / h. It bounds the plain
    ratio c_max * dt / h and also the leapfrog stability ratio
    sqrt(c_max) * dt / h, which is the larger of the two when c_max < 1.
    """
    c_max = float(np.max(np.abs(c)))
    ratio = max(c_max, math.sqrt(c_max)) * dt / grid.h
    if ratio > 1.0:
        raise ConfigurationError(f"CFL condition violated: ratio {ratio:.3g} > 1 (dt={dt}, h={grid.h})")
    return ratio


def wave_step(v_prev: np.ndarray, v_curr: np.ndarray, c: np.ndarray, grid: Grid1D, dt: float) -> np.ndarray:
    """Leapfrog update for u_tt = c u_xx; zero Dirichlet values at both ends."""
    _check_lengths(grid, v_prev=v_prev, v_curr=v_curr, c=c)
    check_cfl(c, grid, dt)
    v_next = np.zeros(grid.n)
    v_next[1:-1] = 2.0 * v_curr[1:-1] - v_prev[1:-1] + dt * dt * c[1:-1] * second_difference(v_curr, grid.h)
    return v_next


def wave_bootstrap(u0: np.ndarray, c: np.ndarray, grid: Grid1D, dt: float) -> np.ndarray:
    """Second-order first step assuming u_t(x, 0) = 0."""
    _check_lengths(grid, u0=u0, c=c)
    v1 = np.zeros(grid.n)
    v1[1:-1] = u0[1:-1] + 0.5 * dt * dt * c[1:-1] * second_difference(u0, grid.h)
    return v1


def wave_energy(v_prev: np.ndarray, v_curr: np.ndarray, c: np.ndarray, grid: Grid1D, dt: float) -> float:
    """Discrete energy conserved exactly by the leapfrog scheme (c > 0 required).

    E = h * sum_i ((v^{N+1} - v^N) / dt)^2 / c_i + h * sum_{i+1/2} D+v^{N+1} D+v^N
    """
    ci = c[1:-1]
    if np.any(ci <= 0):
        raise ConfigurationError("wave energy needs a strictly positive coefficient")
    kinetic = np.sum(((v_curr[1:-1] - v_prev[1:-1]) / dt) ** 2 / ci)
    potential = np.sum(np.diff(v_curr) * np.diff(v_prev)) / (grid.h * grid.h)
    return float(grid.h * (kinetic + potential))


# ── Burgers ──────────────────────────────────────────────────


def burgers_rows(
    v_new: np.ndarray, v_old: np.ndarray, f: np.ndarray, diffusivity: float, grid: Grid1D, dt: float
) -> np.ndarray:
    """LHS - RHS of the implicit Burgers scheme at rows j = 2..n-1."""
    a = dt / (8.0 * grid.h)
    b = diffusivity * dt / (2.0 * grid.h * grid.h)
    s = v_new + v_old
    flux = a * s * (2.0 - s) * f
    return (
        -b * v_new[2:]
        + (1.0 + 2.0 * b) * v_new[1:-1]
        - b * v_new[:-2]
        - v_old[1:-1]
        - b * (v_old[2:] - 2.0 * v_old[1:-1] + v_old[:-2])
        + flux[2:]
        - flux[:-2]
    )


def _burgers_jacobian(
    v_new: np.ndarray, v_old: np.ndarray, f: np.ndarray, diffusivity: float, grid: Grid1D, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = dt / (8.0 * grid.h)
    b = diffusivity * dt / (2.0 * grid.h * grid.h)
    slope = a * (2.0 - 2.0 * (v_new + v_old)) * f

    diag = np.ones(grid.n)
    lower = np.zeros(grid.n - 1)
    upper = np.zeros(grid.n - 1)
    diag[1:-1] = 1.0 + 2.0 * b
    upper[1:] = slope[2:] - b
    lower[:-1] = -slope[:-2] - b
    return lower, diag, upper


def burgers_newton(
    v_old: np.ndarray,
    f: np.ndarray,
    diffusivity: float,
    grid: Grid1D,
    dt: float,
    bc: tuple[float, float],
    newton_tol: float = 1e-10,
    newton_max: int = 50,
) -> tuple[np.ndarray, int, float]:
    """Solve one Burgers step; return (v_new, Newton iterations, final residual norm)."""
    _check_lengths(grid, v_old=v_old, f=f)
    if diffusivity <= 0:
        raise ConfigurationError(f"diffusivity must be positive, got {diffusivity}")
    v = np.array(v_old, dtype=float)
    v[0], v[-1] = bc
    norm = math.inf
    for iteration in range(newton_max + 1):
        residual = burgers_rows(v, v_old, f, diffusivity, grid, dt)
        norm = float(np.max(np.abs(residual)))
        if not math.isfinite(norm):
            break
        if norm <= newton_tol:
            return v, iteration, norm
        if iteration == newton_max:
            break
        rhs = np.zeros(grid.n)
        rhs[1:-1] = -residual
        v = v + thomas_solve(*_burgers_jacobian(v, v_old, f, diffusivity, grid, dt), rhs)
    raise NewtonConvergenceError(
        f"Newton did not reach {newton_tol:g} within {newton_max} iterations (residual {norm:.3e})",
        residual_norm=norm,
    )


def burgers_step(
    v_old: np.ndarray,
    f: np.ndarray,
    diffusivity: float,
    grid: Grid1D,
    dt: float,
    bc: tuple[float, float],
    newton_tol: float = 1e-10,
    newton_max: int = 50,
) -> np.ndarray:
    return burgers_newton(v_old, f, diffusivity, grid, dt, bc, newton_tol, newton_max)[0]


# ── Time marching ────────────────────────────────────────────


def simulate(
    kind: SimulationKind,
    field: np.ndarray,
    grid: Grid1D,
    stepping: TimeStepping,
    initial: np.ndarray,
    *,
    boundary: BoundaryFn | None = None,
    source: SourceFn | None = None,
    diffusivity: float | None = None,
    record: Sequence[int] | None = None,
) -> np.ndarray:
    """March *initial* for ``stepping.steps`` steps and return the trajectory.

    Returns shape (steps + 1, n), or (len(record), n) when *record* lists the
    step indices to keep.
    """
    field = np.asarray(field, dtype=float)
    v0 = np.asarray(initial, dtype=float)
    _check_lengths(grid, field=field, initial=v0)
    keep = sorted(set(range(stepping.steps + 1) if record is None else record))
    if keep and (keep[0] < 0 or keep[-1] > stepping.steps):
        raise ConfigurationError(f"recorded steps must lie in [0, {stepping.steps}]")
    slot = {step: i for i, step in enumerate(keep)}
    out = np.empty((len(keep), grid.n))

    def _store(step: int, v: np.ndarray) -> None:
        if step in slot:
            out[slot[step]] = v

    _store(0, v0)
    if stepping.steps == 0:
        return out
    dt = stepping.dt
    x = grid.points

    if kind == "diffusion":
        src = source or (lambda xs, t: np.zeros_like(xs))
        bnd = boundary or (lambda t: (float(v0[0]), float(v0[-1])))
        v = v0
        s_now = src(x, stepping.t0)
        for step in range(1, stepping.steps + 1):
            t_next = stepping.t0 + step * dt
            s_next = src(x, t_next)
            v = cn_diffusion_step(v, field, s_now, s_next, bnd(t_next), grid, dt)
            s_now = s_next
            _store(step, v)
    elif kind == "wave":
        check_cfl(field, grid, dt)
        v_prev = v0.copy()
        v_prev[0] = v_prev[-1] = 0.0
        v = wave_bootstrap(v0, field, grid, dt)
        _store(1, v)
        for step in range(2, stepping.steps + 1):
            v_prev, v = v, wave_step(v_prev, v, field, grid, dt)
            _store(step, v)
    elif kind == "burgers":
        if diffusivity is None:
            raise ConfigurationError("burgers simulation needs a diffusivity")
        bnd = boundary or (lambda t: (float(v0[0]), float(v0[-1])))
        v = v0
        for step in range(1, stepping.steps + 1):
            v = burgers_step(v, field, diffusivity, grid, dt, bnd(stepping.t0 + step * dt))
            _store(step, v)
    else:
        raise ConfigurationError(f"unknown simulation kind {kind!r}")

    logger.debug("simulated %s: %d steps of dt=%g on %d points", kind, stepping.steps, dt, grid.n)
    return out


# ── Export ───────────────────────────────────────────────────


def export_trajectory(path: str | Path, times: np.ndarray, grid: Grid1D, trajectory: np.ndarray) -> Path:
    """CSV with header ``t,x,u``, one row per (time, grid point)."""
    x = grid.points
    rows = ((float(t), float(xi), float(u)) for t, snapshot in zip(times, trajectory) for xi, u in zip(x, snapshot))
    return storage.write_csv(path, ["t", "x", "u"], rows)


def checkpoint_final(path: str | Path, times: np.ndarray, grid: Grid1D, trajectory: np.ndarray) -> Path:
    """Binary checkpoint of the last two snapshots (calibration input)."""
    if trajectory.shape[0] < 2:
        raise ConfigurationError("checkpoint needs at least two snapshots")
    return storage.save_arrays(
        path, t=np.asarray(times[-2:], dtype=float), x=grid.points, u=np.asarray(trajectory[-2:], dtype=float)
    )
