"""Named experiment configurations.

Each preset is a partial run config (a nested dict) merged underneath the
config file and the command-line flags.
"""

from __future__ import annotations

import copy
from typing import Any

from .models import ConfigurationError

# Network used by the diffusion and wave experiments: n_l = 3, 20 neurons per hidden layer.
_SMALL_NET = {"layer_widths": [20, 20]}

_FIG2_HS = [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125]  # n = 10 ... 640

# The finest configs need more than the default 5000 iterations to reach the discretisation error.
_FIG2_OPTIMIZER = {"max_iters": 20000}


def _wave_anchors(sim_dt: float = 1e-4, lag: int = 20) -> list[float]:
    """Group starts k/3 - lag*sim_dt, k = 1, 2, 3, rounded onto the simulation lattice."""
    return [(round(k / 3 / sim_dt) - lag) * sim_dt for k in (1, 2, 3)]


def _diffusion(**extra: Any) -> dict[str, Any]:
    base: dict[str, Any] = {
        "problem": {"kind": "diffusion", "field": "c1"},
        "grid": {"n": 1001},
        "snapshots": {"times": [0.1], "m": 2, "dt": 0.001},
        "network": dict(_SMALL_NET),
        "noise": {"std": 0.0},
    }
    base.update(extra)
    return base


def _wave(field: str) -> dict[str, Any]:
    return {
        "problem": {"kind": "wave", "field": field},
        "grid": {"n": 501},
        "snapshots": {"times": _wave_anchors(), "m": 3, "dt": 1e-3, "sim_dt": 1e-4},
        "network": {**_SMALL_NET, "output_transform": {"kind": "bounded", "lo": 0.0, "hi": 2.0}},
        # N(0, (10 dt^2)^2) with the simulation step dt = 1e-4
        "noise": {"std": 10 * 1e-4**2},
    }


def _burgers(n: int, sim_dt: float) -> dict[str, Any]:
    return {
        "problem": {"kind": "burgers", "diffusivity": 0.1, "wave_speed": 1.0, "clamp": 1e-2},
        "grid": {"n": n},
        "snapshots": {"times": [round(0.01 * k, 2) for k in range(1, 20)], "m": 2, "dt": 0.01, "sim_dt": sim_dt},
        "network": {"layer_widths": [40, 40, 40, 40]},
        "noise": {"std": 1e-5},
        "sensitivity": {"functional": "max_over_domain", "deltas": [0.001, 0.002, 0.003]},
    }


PRESETS: dict[str, dict[str, Any]] = {
    "paper-fig1": _diffusion(),
    "paper-fig2-dt": _diffusion(
        sweep={"dts": [0.1, 0.05, 0.01, 0.005, 0.001], "hs": _FIG2_HS, "seeds": 3},
        optimizer=dict(_FIG2_OPTIMIZER),
    ),
    "paper-fig2-h": _diffusion(
        sweep={"dts": [0.001], "hs": _FIG2_HS, "seeds": 3},
        optimizer=dict(_FIG2_OPTIMIZER),
    ),
    "paper-wave-c1": _wave("c1"),
    "paper-wave-c2": _wave("c2"),
    # Desk scale: h = 0.008, simulation dt = 2e-5.
    "paper-burgers": _burgers(n=251, sim_dt=2e-5),
    "paper-burgers-full": _burgers(n=501, sim_dt=2e-6),
    "paper-sens-diffusion": _diffusion(
        noise={"std": 3e-7},
        # rows whose u_xx is within 10 noise deviations of zero (near x = 0 and x = +-1) are dropped
        min_snr=10.0,
        sensitivity={"functional": "value_at_point", "x_star": 0.0, "deltas": [0.001, 0.002, 0.003], "n_alpha": 21},
    ),
}


def presets() -> list[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> dict[str, Any]:
    """A deep copy of the named preset, so callers may mutate it."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(presets())}") from None
