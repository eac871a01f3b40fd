"""Problem instance, sensing model and uncertainty dynamics.

Everything in here is immutable after construction; validation happens in
``__post_init__`` so downstream code can rely on the invariants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a mission configuration violates its invariants."""


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ConfigError(f"non-finite value {v!r}")


@dataclass(frozen=True)
class Target:
    x: float
    A: float
    B: float
    R0: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        _finite(self.x, self.A, self.B, self.R0, self.alpha)
        if not self.B > self.A > 0:
            raise ConfigError(f"target at {self.x}: need B > A > 0, got A={self.A}, B={self.B}")
        if self.R0 < 0:
            raise ConfigError(f"target at {self.x}: initial uncertainty must be >= 0")
        if self.alpha <= 0:
            raise ConfigError(f"target at {self.x}: weight must be positive")


@dataclass(frozen=True)
class AgentSpec:
    s0: float
    r: float
    direction: int = 1

    def __post_init__(self):
        _finite(self.s0, self.r)
        if self.r <= 0:
            raise ConfigError("sensing range must be positive")
        if self.direction not in (-1, 1):
            raise ConfigError("initial direction must be -1 or +1")


@dataclass(frozen=True)
class UncertaintyRate:
    """How the inflow rates A_i(t) are produced.

    ``mode="deterministic"`` uses each target's ``A``.  ``mode="piecewise-random"``
    draws ``U(lo_i, hi_i)`` independently per target and per interval of length
    ``interval``; the draw is a pure function of ``(seed, i, k)``.
    """

    mode: str = "deterministic"
    lo: tuple[float, ...] = ()
    hi: tuple[float, ...] = ()
    interval: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("deterministic", "piecewise-random"):
            raise ConfigError(f"unknown uncertainty mode {self.mode!r}")
        if self.interval <= 0:
            raise ConfigError("resample interval must be positive")
        if self.mode == "piecewise-random":
            if len(self.lo) != len(self.hi):
                raise ConfigError("lo/hi bounds must have equal length")
            for a, b in zip(self.lo, self.hi):
                if a < 0 or b < a:
                    raise ConfigError(f"bad inflow bounds [{a}, {b}]")

    @property
    def random(self) -> bool:
        return self.mode == "piecewise-random"


DETERMINISTIC = UncertaintyRate()


@dataclass(frozen=True)
class MissionConfig:
    length: float
    targets: tuple[Target, ...]
    agents: tuple[AgentSpec, ...]
    horizon: float
    no_cross: bool = False
    # sub-problems built by the scheduler may have a single target per agent
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "agents", tuple(self.agents))
        _finite(self.length, self.horizon)
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        if not self.targets or not self.agents:
            raise ConfigError("need at least one target and one agent")
        if self.strict and len(self.targets) <= len(self.agents):
            raise ConfigError(
                f"need more targets than agents (M={len(self.targets)}, N={len(self.agents)})")
        xs = [t.x for t in self.targets]
        if not all(0 < a < b for a, b in zip(xs, xs[1:])) or not 0 < xs[0] or not xs[-1] < self.length:
            raise ConfigError(f"targets must satisfy 0 < x_1 < ... < x_M < L, got {xs}")
        for a in self.agents:
            if not 0 <= a.s0 <= self.length:
                raise ConfigError(f"agent start {a.s0} outside [0, {self.length}]")
        if self.no_cross:
            s0 = [a.s0 for a in self.agents]
            # equal starts allowed: the two-agent reference instance launches both from 0
            if any(b < a for a, b in zip(s0, s0[1:])):
                raise ConfigError("no_cross requires agents ordered by start position")

    @property
    def M(self) -> int:
        return len(self.targets)

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def x(self) -> np.ndarray:
        return np.array([t.x for t in self.targets])

    @property
    def A(self) -> np.ndarray:
        return np.array([t.A for t in self.targets])

    @property
    def B(self) -> np.ndarray:
        return np.array([t.B for t in self.targets])

    @property
    def R0(self) -> np.ndarray:
        return np.array([t.R0 for t in self.targets])

    @property
    def alpha(self) -> np.ndarray:
        return np.array([t.alpha for t in self.targets])

    @property
    def r(self) -> np.ndarray:
        return np.array([a.r for a in self.agents])

    @property
    def s0(self) -> np.ndarray:
        return np.array([a.s0 for a in self.agents])

    @property
    def r_max(self) -> float:
        return max(a.r for a in self.agents)

    @property
    def r_min(self) -> float:
        return min(a.r for a in self.agents)

    @property
    def bounds(self) -> tuple[float, float]:
        """Effective mission interval ``[a, b]`` for switching points."""
        xs = self.x
        return max(0.0, float(xs[0]) - self.r_max), min(float(self.length), float(xs[-1]) + self.r_max)

    def with_positions(self, xs: Sequence[float]) -> "MissionConfig":
        targets = tuple(
            Target(float(x), t.A, t.B, t.R0, t.alpha) for x, t in zip(xs, self.targets))
        return replace(self, targets=targets)

    def with_rates(self, A: Sequence[float]) -> "MissionConfig":
        targets = tuple(Target(t.x, float(a), t.B, t.R0, t.alpha) for a, t in zip(A, self.targets))
        return replace(self, targets=targets)

    def with_horizon(self, T: float) -> "MissionConfig":
        return replace(self, horizon=float(T))

    def subproblem(self, targets, agents, horizon=None) -> "MissionConfig":
        """Relaxed copy (``M <= N`` allowed) used for per-agent scheduling."""
        return replace(self, targets=tuple(targets), agents=tuple(agents),
                       horizon=self.horizon if horizon is None else float(horizon), strict=False)


def sensing_probability(x: float, s: float, r: float) -> float:
    """Linear-decay detection probability ``max(1 - |s - x| / r, 0)``."""
    if not (math.isfinite(x) and math.isfinite(s) and math.isfinite(r)):
        raise ValueError("sensing_probability: non-finite input")
    if r <= 0:
        raise ValueError("sensing range must be positive")
    return max(1.0 - abs(s - x) / r, 0.0)


def joint_detection(probs: Iterable[float]) -> float:
    """Probability that at least one of several independent sensors detects."""
    miss = 1.0
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        miss *= 1.0 - p
    return 1.0 - miss


def uncertainty_rate(R: float, A: float, B: float, P: float) -> float:
    """Right-hand side of the target uncertainty dynamics."""
    if R < 0:
        raise ValueError("uncertainty must be non-negative")
    if R == 0 and A <= B * P:
        return 0.0
    return A - B * P


def detection_matrix(x: np.ndarray, s: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorised ``p_ij`` for target positions ``x`` (M,) and agents ``s`` (N,)."""
    return np.maximum(1.0 - np.abs(s[None, :] - x[:, None]) / r[None, :], 0.0)


def isolated_targets(config: MissionConfig) -> set[int]:
    """1-based indices of targets farther than ``2 r_max`` from every other target."""
    xs = config.x
    gap = 2.0 * config.r_max
    out = set()
    for i, xi in enumerate(xs):
        others = np.delete(xs, i)
        if np.all(np.abs(others - xi) > gap):
            out.add(i + 1)
    return out
