"""Pydantic models and error types shared across the package.

Everything that is configuration (architectures, optimizer settings, grids,
noise, run configs) is a validated pydantic model so that a JSON run config
either loads cleanly or fails with the dotted key that was wrong.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ── Errors ───────────────────────────────────────────────────


class CalibrationError(RuntimeError):
    """Base class for every failure raised by pdecalib."""

    module = "pdecalib"


class ConfigurationError(CalibrationError, ValueError):
    """Invalid parameters, CFL violations, lattice mismatches, empty data."""

    module = "config"


class SingularSystemError(CalibrationError):
    """A tridiagonal solve met a zero pivot."""

    module = "forward"


class NewtonConvergenceError(CalibrationError):
    """Newton iteration for the Burgers step did not converge."""

    module = "forward"

    def __init__(self, message: str, residual_norm: float) -> None:
        super().__init__(message)
        self.residual_norm = residual_norm


class NonFiniteError(CalibrationError):
    """A residual or objective value is NaN or infinite."""

    module = "residual"

    def __init__(self, message: str, group: int | None = None, index: int | None = None) -> None:
        super().__init__(message)
        self.group = group
        self.index = index


class OptimizationError(CalibrationError):
    """The optimizer could not start (non-finite objective at the start point)."""

    module = "lbfgs"


# ── Network ──────────────────────────────────────────────────


class OutputTransform(BaseModel):
    """Final-layer transform: identity, or tanh mapped affinely onto [lo, hi]."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["identity", "bounded"] = "identity"
    lo: float = 0.0
    hi: float = 2.0

    @model_validator(mode="after")
    def _check_range(self) -> OutputTransform:
        if self.kind == "bounded" and not self.lo < self.hi:
            raise ValueError(f"bounded output requires lo < hi, got lo={self.lo}, hi={self.hi}")
        return self

    @classmethod
    def bounded(cls, lo: float, hi: float) -> OutputTransform:
        return cls(kind="bounded", lo=lo, hi=hi)


class NetworkArchitecture(BaseModel):
    """Dense tanh network R^d -> R.

    ``layer_widths`` holds the n_l - 1 hidden widths, so the network has
    n_l weight matrices W_1 ... W_{n_l}.
    """

    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(default=1, gt=0)
    layer_widths: tuple[int, ...] = Field(default=(20, 20), min_length=1)
    output_transform: OutputTransform = Field(default_factory=OutputTransform)

    @field_validator("layer_widths")
    @classmethod
    def _positive_widths(cls, widths: tuple[int, ...]) -> tuple[int, ...]:
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {list(widths)}")
        return widths

    @property
    def n_layers(self) -> int:
        """n_l: the number of weight matrices."""
        return len(self.layer_widths) + 1

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.layer_widths, 1]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        return sum(rows * cols + rows for rows, cols in self.weight_shapes)


class ProjectionConstraint(BaseModel):
    """Uniform 2-norm bound C on every W_i and on the last bias."""

    model_config = ConfigDict(frozen=True)

    bound: float = Field(gt=0.0)
    enabled: bool = True


class DerivativeBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    first_order: float = Field(ge=0.0)
    second_order: float = Field(ge=0.0)


# ── Optimizer ────────────────────────────────────────────────


class OptimizerConfig(BaseModel):
    """L-BFGS settings. Defaults follow the common experiment settings."""

    model_config = ConfigDict(frozen=True)

    memory: int = Field(default=10, gt=0)
    max_iters: int = Field(default=5000, gt=0)
    eps1: float = Field(default=1e-12, gt=0.0)
    eps2: float = Field(default=1e-12, gt=0.0)
    c1: float = Field(default=1e-4, gt=0.0, lt=1.0)
    c2: float = Field(default=0.9, gt=0.0, lt=1.0)
    max_line_search: int = Field(default=40, gt=0)
    projection: Optional[ProjectionConstraint] = None

    @model_validator(mode="after")
    def _wolfe_order(self) -> OptimizerConfig:
        if not self.c1 < self.c2:
            raise ValueError(f"line search requires c1 < c2, got c1={self.c1}, c2={self.c2}")
        return self


# ── Grids and data ───────────────────────────────────────────


class Grid1D(BaseModel):
    """Uniform grid x_1 = x_min < ... < x_n = x_max."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=3)
    x_min: float = -1.0
    x_max: float = 1.0

    @model_validator(mode="after")
    def _ordered(self) -> Grid1D:
        if not self.x_max > self.x_min:
            raise ValueError(f"grid requires x_max > x_min, got [{self.x_min}, {self.x_max}]")
        return self

    @classmethod
    def from_spacing(cls, h: float, x_min: float = -1.0, x_max: float = 1.0) -> Grid1D:
        """Grid with spacing *h*; (x_max - x_min) / h must be (close to) an integer."""
        if h <= 0:
            raise ConfigurationError(f"grid spacing must be positive, got h={h}")
        intervals = round((x_max - x_min) / h)
        if intervals < 2 or abs(intervals * h - (x_max - x_min)) > 1e-9 * (x_max - x_min):
            raise ConfigurationError(f"h={h} does not divide [{x_min}, {x_max}] into >= 2 intervals")
        return cls(n=intervals + 1, x_min=x_min, x_max=x_max)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def interior(self) -> np.ndarray:
        return self.points[1:-1]


class TimeStepping(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float = Field(gt=0.0)
    t0: float = 0.0
    steps: int = Field(default=0, ge=0)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


class NoiseSpec(BaseModel):
    """I.i.d. Gaussian observation noise."""

    model_config = ConfigDict(frozen=True)

    family: Literal["gaussian"] = "gaussian"
    std: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class SnapshotSpec(BaseModel):
    """Which snapshots to observe.

    ``times`` are the group anchors t in T; each group holds ``m`` snapshots
    ``dt`` apart starting at its anchor. ``sim_dt`` is the step of the forward
    simulation the data are read from; ``None`` means read the closed-form
    solution when the problem has one.
    """

    model_config = ConfigDict(frozen=True)

    times: tuple[float, ...] = Field(min_length=1)
    m: int = Field(default=2, ge=2)
    dt: float = Field(gt=0.0)
    sim_dt: Optional[float] = Field(default=None, gt=0.0)


# ── Run configuration (CLI) ──────────────────────────────────


Command = Literal["simulate", "calibrate", "sweep", "sensitivity", "baseline", "verify-bounds"]
ProblemKind = Literal["diffusion", "wave", "burgers"]

_DEFAULT_REGULARIZATION: dict[str, float] = {"diffusion": 0.0, "wave": 0.0, "burgers": 0.01}


def default_regularization(kind: str) -> float:
    """lambda used when a run does not set one: only Burgers is regularised."""
    return _DEFAULT_REGULARIZATION.get(kind, 0.0)


class ProblemConfig(BaseModel):
    kind: ProblemKind = "diffusion"
    field: Literal["c1", "c2"] = "c1"
    diffusivity: float = Field(default=0.1, gt=0.0)
    wave_speed: float = 1.0
    clamp: float = Field(default=1e-2, gt=0.0)


class GridConfig(BaseModel):
    n: int = Field(ge=3)
    x_min: float = -1.0
    x_max: float = 1.0

    def build(self) -> Grid1D:
        return Grid1D(n=self.n, x_min=self.x_min, x_max=self.x_max)


class SweepConfig(BaseModel):
    dts: list[float] = Field(default_factory=list)
    hs: list[float] = Field(default_factory=list)
    seeds: int = Field(default=3, gt=0)

    @field_validator("dts", "hs")
    @classmethod
    def _positive(cls, values: list[float]) -> list[float]:
        if any(v <= 0 for v in values):
            raise ValueError("sweep steps must be positive")
        return values


class SensitivityConfig(BaseModel):
    functional: Literal["value_at_point", "max_over_domain"] = "value_at_point"
    x_star: float = 0.0
    deltas: list[float] = Field(default_factory=lambda: [0.001, 0.002, 0.003])
    n_alpha: int = Field(default=21, gt=0)

    @field_validator("deltas")
    @classmethod
    def _non_negative(cls, values: list[float]) -> list[float]:
        if any(v < 0 for v in values):
            raise ValueError("sensitivity deltas must be >= 0")
        return values

    @field_validator("n_alpha")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("n_alpha must be odd so that alpha = 0 is on the grid")
        return value


class BoundsSuiteConfig(BaseModel):
    bounds: list[float] = Field(default_factory=lambda: [0.5, 0.9, 1.5])
    n_layers: list[int] = Field(default_factory=lambda: [2, 3, 4])
    width: int = Field(default=20, gt=0)
    networks: int = Field(default=1000, gt=0)
    samples: int = Field(default=1000, gt=0)


def _default_out() -> str:
    return os.environ.get("PDECALIB_OUT", "runs")


class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI invocation."""

    command: Command
    preset: Optional[str] = None
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    grid: Optional[GridConfig] = None
    snapshots: Optional[SnapshotSpec] = None
    network: NetworkArchitecture = Field(default_factory=NetworkArchitecture)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    regularization: Optional[float] = Field(default=None, ge=0.0)
    min_snr: float = Field(default=0.0, ge=0.0)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    sensitivity: SensitivityConfig = Field(default_factory=SensitivityConfig)
    bounds_suite: BoundsSuiteConfig = Field(default_factory=BoundsSuiteConfig)
    baseline_method: Literal["lbfgs", "newton-cg"] = "lbfgs"
    out: str = Field(default_factory=_default_out)
    seed: int = 0
    jobs: int = Field(default_factory=lambda: os.cpu_count() or 1, gt=0)

    @model_validator(mode="after")
    def _data_sections(self) -> RunConfig:
        if self.command != "verify-bounds":
            for key in ("grid", "snapshots"):
                if getattr(self, key) is None:
                    raise ValueError(f"{key} is required for the {self.command} command")
        if self.regularization is None:
            self.regularization = default_regularization(self.problem.kind)
        return self

    @property
    def out_dir(self) -> Path:
        return Path(self.out).expanduser()
