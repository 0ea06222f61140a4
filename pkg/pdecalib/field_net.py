"""Dense tanh networks f_theta: R^d -> R for representing coefficient fields.

Hidden layers are y_{l+1} = tanh(W_l y_l + b_l); the last layer is affine,
optionally followed by a bounded transform lo + (hi - lo) * (tanh(z) + 1) / 2.

Flat parameter layout (used by the optimizer and checkpoints):
W_1 (row-major), b_1, W_2, b_2, ..., W_{n_l}, b_{n_l}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict

from .models import (
    ConfigurationError,
    DerivativeBounds,
    NetworkArchitecture,
    OutputTransform,
    ProjectionConstraint,
)

logger = logging.getLogger(__name__)

# Relative slack allowed when checking sampled derivatives against their bound.
_BOUND_SLACK = 1e-4


# ── Parameters ───────────────────────────────────────────────


@dataclass(frozen=True)
class NetworkParams:
    """Weights W_1..W_{n_l} (shape out x in) and biases b_1..b_{n_l}."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for array in (*self.weights, *self.biases):
            array.setflags(write=False)

    @classmethod
    def from_arrays(cls, weights: list[np.ndarray], biases: list[np.ndarray]) -> NetworkParams:
        return cls(
            weights=tuple(np.array(w, dtype=float) for w in weights),
            biases=tuple(np.array(b, dtype=float).reshape(-1) for b in biases),
        )

    def flatten(self) -> np.ndarray:
        parts: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, arch: NetworkArchitecture, flat: np.ndarray) -> NetworkParams:
        flat = np.asarray(flat, dtype=float)
        if flat.ndim != 1 or flat.size != arch.n_params:
            raise ConfigurationError(
                f"flat parameter vector has shape {flat.shape}, architecture needs ({arch.n_params},)"
            )
        weights: list[np.ndarray] = []
        biases: list[np.ndarray] = []
        offset = 0
        for rows, cols in arch.weight_shapes:
            weights.append(flat[offset:offset + rows * cols].reshape(rows, cols).copy())
            offset += rows * cols
            biases.append(flat[offset:offset + rows].copy())
            offset += rows
        return cls(weights=tuple(weights), biases=tuple(biases))

    def check(self, arch: NetworkArchitecture) -> None:
        """Raise ConfigurationError unless the shapes match *arch* and all entries are finite."""
        shapes = arch.weight_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ConfigurationError(
                f"parameters have {len(self.weights)} layers, architecture has {len(shapes)}"
            )
        for i, ((rows, cols), w, b) in enumerate(zip(shapes, self.weights, self.biases), start=1):
            if w.shape != (rows, cols) or b.shape != (rows,):
                raise ConfigurationError(
                    f"layer {i}: W{w.shape} b{b.shape}, expected W({rows}, {cols}) b({rows},)"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigurationError(f"layer {i} has non-finite parameters")


def init_params(arch: NetworkArchitecture, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for rows, cols in arch.weight_shapes:
        limit = math.sqrt(6.0 / (rows + cols))
        weights.append(rng.uniform(-limit, limit, size=(rows, cols)))
        biases.append(np.zeros(rows))
    return NetworkParams.from_arrays(weights, biases)


# ── Evaluation ───────────────────────────────────────────────


def _as_points(arch: NetworkArchitecture, xs: np.ndarray | float) -> np.ndarray:
    """Coerce input to shape (N, d)."""
    pts = np.asarray(xs, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if arch.input_dim == 1 else pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != arch.input_dim:
        raise ConfigurationError(
            f"input has shape {np.shape(xs)}, network expects points in R^{arch.input_dim}"
        )
    return pts


def _hidden_pass(params: NetworkParams, pts: np.ndarray) -> list[np.ndarray]:
    """Return [x, y_2, ..., y_{n_l}]: the input and every hidden activation."""
    activations = [pts]
    y = pts
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        y = np.tanh(y @ w.T + b)
        activations.append(y)
    return activations


def _output_layer(params: NetworkParams, y: np.ndarray) -> np.ndarray:
    return (y @ params.weights[-1].T + params.biases[-1])[:, 0]


def _transform(z: np.ndarray, transform: OutputTransform) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Output value and its first and second derivatives w.r.t. the last pre-activation."""
    if transform.kind == "identity":
        return z, np.ones_like(z), np.zeros_like(z)
    half = 0.5 * (transform.hi - transform.lo)
    t = np.tanh(z)
    slope = 1.0 - t * t
    return transform.lo + half * (t + 1.0), half * slope, -2.0 * half * t * slope


def forward_batch(params: NetworkParams, arch: NetworkArchitecture, xs: np.ndarray) -> np.ndarray:
    """f_theta at every row of *xs*; returns shape (N,)."""
    pts = _as_points(arch, xs)
    params.check(arch)
    z = _output_layer(params, _hidden_pass(params, pts)[-1])
    return _transform(z, arch.output_transform)[0]


def forward(params: NetworkParams, arch: NetworkArchitecture, x: np.ndarray | float) -> float:
    pts = _as_points(arch, x)
    if pts.shape[0] != 1:
        raise ConfigurationError(f"forward takes a single point, got {pts.shape[0]}")
    return float(forward_batch(params, arch, pts)[0])


def _input_jets(
    params: NetworkParams, arch: NetworkArchitecture, pts: np.ndarray, second: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Forward-mode pass: last pre-activation z, dz/dx (N, d), d2z/dx2 (N, d, d)."""
    n, d = pts.shape
    jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    hess = np.zeros((n, d, d, d)) if second else None
    y = pts
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        y = np.tanh(y @ w.T + b)
        slope = 1.0 - y * y
        z_jac = np.einsum("ij,njd->nid", w, jac)
        if hess is not None:
            z_hess = np.einsum("ij,njab->niab", w, hess)
            hess = (
                slope[:, :, None, None] * z_hess
                - 2.0 * (y * slope)[:, :, None, None] * np.einsum("nia,nib->niab", z_jac, z_jac)
            )
        jac = slope[:, :, None] * z_jac
    w_last = params.weights[-1]
    z = (y @ w_last.T + params.biases[-1])[:, 0]
    z_jac = np.einsum("ij,njd->nid", w_last, jac)[:, 0, :]
    z_hess = np.einsum("ij,njab->niab", w_last, hess)[:, 0] if hess is not None else None
    return z, z_jac, z_hess


def grad_input_batch(params: NetworkParams, arch: NetworkArchitecture, xs: np.ndarray) -> np.ndarray:
    """Exact df/dx at every point; shape (N, d)."""
    pts = _as_points(arch, xs)
    params.check(arch)
    z, z_jac, _ = _input_jets(params, arch, pts, second=False)
    _, slope, _ = _transform(z, arch.output_transform)
    return slope[:, None] * z_jac


def grad_input(params: NetworkParams, arch: NetworkArchitecture, x: np.ndarray | float) -> np.ndarray:
    return grad_input_batch(params, arch, _as_points(arch, x))[0]


def second_deriv_input_batch(params: NetworkParams, arch: NetworkArchitecture, xs: np.ndarray) -> np.ndarray:
    """Exact d2f/dx2 at every point; shape (N, d, d)."""
    pts = _as_points(arch, xs)
    params.check(arch)
    z, z_jac, z_hess = _input_jets(params, arch, pts, second=True)
    _, slope, curvature = _transform(z, arch.output_transform)
    assert z_hess is not None
    return slope[:, None, None] * z_hess + curvature[:, None, None] * np.einsum("na,nb->nab", z_jac, z_jac)


def second_deriv_input(params: NetworkParams, arch: NetworkArchitecture, x: np.ndarray | float) -> np.ndarray:
    return second_deriv_input_batch(params, arch, _as_points(arch, x))[0]


# ── Parameter gradients (reverse mode) ───────────────────────


def vjp_params(
    params: NetworkParams, arch: NetworkArchitecture, xs: np.ndarray, cotangent: np.ndarray
) -> np.ndarray:
    """Sum_k cotangent[k] * d f_theta(xs[k]) / d theta, in the flat layout."""
    pts = _as_points(arch, xs)
    params.check(arch)
    cot = np.asarray(cotangent, dtype=float).reshape(-1)
    if cot.size != pts.shape[0]:
        raise ConfigurationError(f"cotangent has {cot.size} entries for {pts.shape[0]} points")

    activations = _hidden_pass(params, pts)
    z = _output_layer(params, activations[-1])
    _, slope, _ = _transform(z, arch.output_transform)
    delta = (cot * slope)[:, None]

    grads_w: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    for layer in range(len(params.weights) - 1, -1, -1):
        below = activations[layer]
        grads_w.append(delta.T @ below)
        grads_b.append(delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (1.0 - below * below)

    parts: list[np.ndarray] = []
    for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def grad_params(params: NetworkParams, arch: NetworkArchitecture, x: np.ndarray | float) -> np.ndarray:
    """Exact gradient of f_theta(x) w.r.t. every entry of theta (flat layout)."""
    pts = _as_points(arch, x)
    if pts.shape[0] != 1:
        raise ConfigurationError(f"grad_params takes a single point, got {pts.shape[0]}")
    return vjp_params(params, arch, pts, np.ones(1))


# ── Projection and derivative bounds ─────────────────────────


def _project_array(array: np.ndarray, bound: float) -> np.ndarray:
    norm = np.linalg.norm(array, 2) if array.ndim == 2 else np.linalg.norm(array)
    if norm <= bound:
        return array
    factor = bound / norm
    projected = array * factor
    # Rounding can leave the norm a few ulps above the bound; shrink until it is not,
    # so that projecting again is a no-op.
    for _ in range(8):
        new_norm = np.linalg.norm(projected, 2) if array.ndim == 2 else np.linalg.norm(projected)
        if new_norm <= bound:
            break
        factor = np.nextafter(factor, 0.0)
        projected = array * factor
    return projected


def project(params: NetworkParams, constraint: ProjectionConstraint) -> NetworkParams:
    """pi(W, C) = W / max(1, ||W||_2 / C) applied to every W_i and to b_{n_l}."""
    if not constraint.enabled:
        return params
    weights = [_project_array(w, constraint.bound) for w in params.weights]
    biases = list(params.biases)
    biases[-1] = _project_array(biases[-1], constraint.bound)
    if all(a is b for a, b in zip(weights, params.weights)) and biases[-1] is params.biases[-1]:
        return params
    return NetworkParams.from_arrays(weights, biases)


def project_flat(arch: NetworkArchitecture, flat: np.ndarray, constraint: ProjectionConstraint) -> np.ndarray:
    return project(NetworkParams.unflatten(arch, flat), constraint).flatten()


def satisfies(params: NetworkParams, constraint: ProjectionConstraint) -> bool:
    return all(np.linalg.norm(w, 2) <= constraint.bound for w in params.weights) and bool(
        np.linalg.norm(params.biases[-1]) <= constraint.bound
    )


def derivative_bounds(arch: NetworkArchitecture, constraint: ProjectionConstraint) -> DerivativeBounds:
    """Uniform bounds on |f'| and |f''| for a network satisfying the constraint."""
    c = constraint.bound
    n_l = arch.n_layers
    if abs(c - 1.0) < 1e-12:
        second = 2.0 * (n_l - 1) * c ** (n_l + 1)
    else:
        second = 2.0 * c ** (n_l + 1) * (c ** (n_l - 1) - 1.0) / (c - 1.0)
    return DerivativeBounds(first_order=c**n_l, second_order=second)


# ── Bound verification suite ─────────────────────────────────


class BoundCheckRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    bound: float
    n_layers: int
    networks: int
    max_first: float
    max_second: float
    first_bound: float
    second_bound: float
    first_violations: int
    second_violations: int


def verify_bounds(
    bounds: list[float],
    n_layers: list[int],
    width: int = 20,
    networks: int = 1000,
    samples: int = 1000,
    seed: int = 0,
    x_range: float = 3.0,
) -> list[BoundCheckRow]:
    """Sample random projected networks and compare |f'|, |f''| with their bounds.

    *networks* are spread over the (C, n_l) combinations, the first ones taking
    one extra network each when the split is uneven. Weights are
    drawn large enough that the projection is active for almost every layer.
    """
    rng = np.random.default_rng(seed)
    combos = [(c, n_l) for c in bounds for n_l in n_layers]
    base, extra = divmod(networks, len(combos))
    rows: list[BoundCheckRow] = []
    for index, (c, n_l) in enumerate(combos):
        per_combo = base + (1 if index < extra else 0)
        arch = NetworkArchitecture(input_dim=1, layer_widths=(width,) * (n_l - 1))
        constraint = ProjectionConstraint(bound=c)
        limits = derivative_bounds(arch, constraint)
        max_first = max_second = 0.0
        bad_first = bad_second = 0
        for _ in range(per_combo):
            raw = NetworkParams.from_arrays(
                [rng.normal(size=shape) for shape in arch.weight_shapes],
                [rng.normal(size=shape[0]) for shape in arch.weight_shapes],
            )
            params = project(raw, constraint)
            xs = rng.uniform(-x_range, x_range, size=(samples, 1))
            first = np.abs(grad_input_batch(params, arch, xs)[:, 0])
            second = np.abs(second_deriv_input_batch(params, arch, xs)[:, 0, 0])
            max_first = max(max_first, float(first.max()))
            max_second = max(max_second, float(second.max()))
            if first.max() > limits.first_order + _BOUND_SLACK * max(1.0, limits.first_order):
                bad_first += 1
            if second.max() > limits.second_order + _BOUND_SLACK * max(1.0, limits.second_order):
                bad_second += 1
        if bad_first or bad_second:
            logger.warning("bound violations for C=%s, n_l=%d: %d first, %d second", c, n_l, bad_first, bad_second)
        rows.append(
            BoundCheckRow(
                bound=c,
                n_layers=n_l,
                networks=per_combo,
                max_first=max_first,
                max_second=max_second,
                first_bound=limits.first_order,
                second_bound=limits.second_order,
                first_violations=bad_first,
                second_violations=bad_second,
            )
        )
    return rows
