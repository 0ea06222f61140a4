"""Coefficient-field calibration for 1D evolution PDEs.

The unknown field is a small dense tanh network evaluated at the grid
nodes of a finite-difference scheme; its parameters are fitted by
minimising the scheme residual over observed snapshots.
"""

from .experiments import calibrate, make_snapshots, manufactured_problem
from .field_net import NetworkParams, forward_batch, grad_params, init_params
from .lbfgs import minimize
from .models import (
    CalibrationError,
    ConfigurationError,
    Grid1D,
    NetworkArchitecture,
    OptimizerConfig,
    ProjectionConstraint,
    RunConfig,
)
from .residual import ResidualProblem, SnapshotSet, loss_and_grad

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "Grid1D",
    "NetworkArchitecture",
    "NetworkParams",
    "OptimizerConfig",
    "ProjectionConstraint",
    "ResidualProblem",
    "RunConfig",
    "SnapshotSet",
    "calibrate",
    "forward_batch",
    "grad_params",
    "init_params",
    "loss_and_grad",
    "make_snapshots",
    "manufactured_problem",
    "minimize",
]
