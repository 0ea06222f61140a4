"""Sensitivity regions of a calibrated field.

For a scalar quantity q(theta) of the calibrated field (its value at a
point, or its maximum over the grid) the region is the family of curves
f_{theta + alpha * grad q} for |alpha| <= delta. The gradient is used raw,
so alpha carries the units of 1 / |grad q|^2 times the units of q.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from . import storage
from .field_net import NetworkParams, forward_batch, grad_params
from .models import ConfigurationError, Grid1D, NetworkArchitecture

logger = logging.getLogger(__name__)


class QuantityFunctional(BaseModel):
    """``value_at_point`` reads f(x_star); ``max_over_domain`` takes the max over the grid nodes."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["value_at_point", "max_over_domain"] = "value_at_point"
    x_star: float = 0.0


def anchor_point(
    theta: np.ndarray, arch: NetworkArchitecture, functional: QuantityFunctional, grid: Grid1D
) -> tuple[float, int | None]:
    """Where the quantity is read: (x, grid index) with index None for value_at_point.

    The discrete argmax takes the lowest index on ties.
    """
    if functional.kind == "value_at_point":
        if not grid.x_min <= functional.x_star <= grid.x_max:
            raise ConfigurationError(f"x_star={functional.x_star} lies outside [{grid.x_min}, {grid.x_max}]")
        return functional.x_star, None
    values = forward_batch(NetworkParams.unflatten(arch, theta), arch, grid.points)
    index = int(np.argmax(values))
    return float(grid.points[index]), index


def quantity_grad(
    theta: np.ndarray, arch: NetworkArchitecture, functional: QuantityFunctional, grid: Grid1D
) -> tuple[float, np.ndarray]:
    """q(theta) and its gradient; for the max the argmax node is frozen at *theta*."""
    x, _ = anchor_point(theta, arch, functional, grid)
    params = NetworkParams.unflatten(arch, theta)
    value = float(forward_batch(params, arch, np.array([x]))[0])
    return value, grad_params(params, arch, x)


@dataclass(frozen=True)
class SensitivityRegion:
    x: np.ndarray
    alphas: np.ndarray
    curves: np.ndarray
    quantity: float
    grad_norm: float
    anchor: float
    delta: float

    @property
    def base(self) -> np.ndarray:
        """The calibrated curve (alpha = 0)."""
        return self.curves[len(self.alphas) // 2]

    @property
    def env_min(self) -> np.ndarray:
        return self.curves.min(axis=0)

    @property
    def env_max(self) -> np.ndarray:
        return self.curves.max(axis=0)

    @property
    def width(self) -> np.ndarray:
        return self.env_max - self.env_min

    def contains(self, values: np.ndarray, tol: float = 0.0) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (values >= self.env_min - tol) & (values <= self.env_max + tol)

    def metadata(self) -> dict[str, float | int]:
        return {
            "delta": self.delta,
            "n_alpha": len(self.alphas),
            "grad_norm": self.grad_norm,
            "anchor": self.anchor,
            "quantity": self.quantity,
        }

    def export(self, path: str | Path, f_exact: np.ndarray | None = None) -> Path:
        """CSV ``x,f_theta,env_min,env_max[,f_exact]`` next to a ``.json`` with the metadata."""
        header = ["x", "f_theta", "env_min", "env_max"]
        columns = [self.x, self.base, self.env_min, self.env_max]
        if f_exact is not None:
            header.append("f_exact")
            columns.append(np.asarray(f_exact, dtype=float))
        out = storage.write_csv(path, header, zip(*columns))
        storage.write_json(out.with_suffix(".json"), self.metadata())
        return out


def region(
    theta: np.ndarray,
    arch: NetworkArchitecture,
    functional: QuantityFunctional,
    grid: Grid1D,
    delta: float,
    n_alpha: int = 21,
) -> SensitivityRegion:
    """Curves f_{theta + alpha grad q} on the grid for alpha uniform in [-delta, delta]."""
    if delta < 0:
        raise ConfigurationError(f"delta must be >= 0, got {delta}")
    if n_alpha < 1 or n_alpha % 2 == 0:
        raise ConfigurationError(f"n_alpha must be a positive odd number, got {n_alpha}")
    theta = np.asarray(theta, dtype=float)
    value, grad = quantity_grad(theta, arch, functional, grid)
    anchor, _ = anchor_point(theta, arch, functional, grid)

    # alpha_k = k * step: regions with equal step share their common alphas exactly.
    mid = n_alpha // 2
    step = delta / mid if mid else 0.0
    alphas = np.arange(-mid, mid + 1) * step
    xs = grid.points
    curves = np.empty((n_alpha, grid.n))
    for k, alpha in enumerate(alphas):
        shifted = theta if k == mid else theta + alpha * grad
        curves[k] = forward_batch(NetworkParams.unflatten(arch, shifted), arch, xs)

    grad_norm = float(np.linalg.norm(grad))
    logger.debug("sensitivity region: delta %g, %d curves, |grad q| %.3e at x=%g", delta, n_alpha, grad_norm, anchor)
    return SensitivityRegion(
        x=xs,
        alphas=alphas,
        curves=curves,
        quantity=value,
        grad_norm=grad_norm,
        anchor=anchor,
        delta=float(delta),
    )
