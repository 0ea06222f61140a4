from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from pdecalib.experiments import diffusion_problem, make_snapshots
from pdecalib.models import Grid1D, NetworkArchitecture, SnapshotSpec
from pdecalib.residual import SnapshotSet


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


@pytest.fixture
def small_arch() -> NetworkArchitecture:
    return NetworkArchitecture(layer_widths=(6, 6))


@pytest.fixture
def random_theta(rng: np.random.Generator) -> Callable[[NetworkArchitecture], np.ndarray]:
    def _draw(arch: NetworkArchitecture, scale: float = 0.5) -> np.ndarray:
        return scale * rng.standard_normal(arch.n_params)

    return _draw


@pytest.fixture
def diffusion_data() -> SnapshotSet:
    """Noiseless closed-form diffusion snapshots at t = 0.1 on 41 nodes."""
    grid = Grid1D(n=41)
    return make_snapshots(diffusion_problem(), grid, SnapshotSpec(times=(0.1,), m=2, dt=1e-3))
