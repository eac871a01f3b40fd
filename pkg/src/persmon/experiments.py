"""Reference instances and the settings used to reproduce their reported costs.

Each recipe returns a plain config tree (the same shape as a config file), so
the CLI can write it out with ``persmon recipe <name>`` and tests can build
it with :func:`persmon.config_io.parse_config`.
"""
from __future__ import annotations

import copy

from .config_io import mission_tree, parse_config, RunConfig
from .model import AgentSpec, MissionConfig, Target

# mission length is not stated for the reference runs; 20 leaves every target interior
LENGTH = 20.0


def mission(xs, starts, horizon, A=1.0, B=5.0, R0=1.0, r=2.0, no_cross=False) -> MissionConfig:
    return MissionConfig(LENGTH, tuple(Target(float(x), A, B, R0) for x in xs),
                         tuple(AgentSpec(float(s), r) for s in starts), float(horizon), no_cross)


def three_targets() -> MissionConfig:
    """One agent from 0 watching targets at 5, 10, 15 for 100 s."""
    return mission([5, 10, 15], [0], 100)


def two_agents() -> MissionConfig:
    """Two agents from 0 sharing five targets for 500 s without crossing."""
    return mission([5, 7, 9, 13, 15], [0, 0], 500, no_cross=True)


def clustered() -> MissionConfig:
    """One agent, targets at 5, 7, 15; the base case for the random variants."""
    return mission([5, 7, 15], [0], 100)


def stranded() -> MissionConfig:
    """The agent starts at 11, out of range of every target of :func:`clustered`."""
    return mission([5, 7, 15], [11], 100)


def stranded_params(gamma: int = 20):
    """Back and forth between 10 and 12, never sensing anything."""
    import numpy as np

    from .hybrid_sim import TrajectoryParams
    theta = np.array([[10.0, 12.0] * (gamma // 2)])
    return TrajectoryParams(theta, np.zeros_like(theta))


# (reported cost, relative tolerance) for each reference run
REPORTED = {
    "three-targets-ipa": (26.11, 0.10),
    "three-targets-graph": (25.07, 0.05),
    "two-agents-ipa": (4.99, 0.20),
    "two-agents-graph": (4.92, 0.15),
    "stranded-excitation": (30.24, 0.15),
    "random-inflow": (42.46, 0.25),
    "position-jitter": (34.89, 0.25),
}

# excitation decay used for the stranded run; the reported run does not state one
STRANDED_BETA = 0.2


def _tree(config: MissionConfig, **sections) -> dict:
    tree = mission_tree(config)
    tree.update(copy.deepcopy(sections))
    return tree


def recipe(name: str) -> dict:
    """Config tree of a named reference run."""
    if name == "three-targets":
        return _tree(three_targets(), optimizer={"max_iterations": 300}, scheduler={"window": 100.0})
    if name == "two-agents":
        return _tree(two_agents(), optimizer={"max_iterations": 100}, scheduler={"window": 60.0})
    if name == "clustered":
        return _tree(clustered(), optimizer={"max_iterations": 300})
    if name == "stranded":
        p = stranded_params()
        return _tree(stranded(), optimizer={"max_iterations": 200},
                     excitation={"enabled": True, "beta": STRANDED_BETA, "decay_mode": "per-iteration"},
                     params={"theta": p.theta.tolist(), "omega": p.omega.tolist()})
    if name == "random-inflow":
        return _tree(clustered(), optimizer={"max_iterations": 100},
                     stochastic={"mode": "inflow-uniform", "lo": 0.0, "hi": 2.0, "interval": 1.0,
                                 "seed": 0, "resample": "per-iteration"})
    if name == "position-jitter":
        return _tree(clustered(), optimizer={"max_iterations": 100},
                     stochastic={"mode": "position-jitter", "half_width": 0.25, "seed": 0,
                                 "resample": "per-iteration"})
    raise KeyError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")


RECIPES = ("three-targets", "two-agents", "clustered", "stranded", "random-inflow", "position-jitter")


def load(name: str) -> RunConfig:
    return parse_config(recipe(name))
