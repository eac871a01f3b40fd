"""Seeded random inflow processes and target-position jitter.

Every draw is a pure function of a seed and integer indices, so the order in
which realisations are generated (or evaluated concurrently) cannot change them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ConfigError, MissionConfig, UncertaintyRate, DETERMINISTIC


@dataclass(frozen=True)
class RandomModel:
    """Randomness injected into an experiment.

    mode
        ``"inflow-uniform"``: ``A_i(t) ~ U(lo, hi)``, piecewise constant over
        windows of length ``interval``.  ``"position-jitter"``: each target
        position drawn from ``U(x_i - half_width, x_i + half_width)``.
    resample
        ``"per-iteration"`` draws a fresh realisation for every descent
        iteration; ``"per-run"`` keeps one realisation per replicate.
    """

    mode: str = "inflow-uniform"
    lo: float = 0.0
    hi: float = 2.0
    interval: float = 1.0
    half_width: float = 0.25
    seed: int = 0
    resample: str = "per-iteration"

    def __post_init__(self):
        if self.mode not in ("inflow-uniform", "position-jitter", "none"):
            raise ConfigError(f"unknown random model mode {self.mode!r}")
        if self.lo < 0 or self.hi < self.lo:
            raise ConfigError("inflow bounds must satisfy 0 <= lo <= hi")
        if self.interval <= 0:
            raise ConfigError("resample interval must be positive")
        if self.half_width < 0:
            raise ConfigError("jitter half-width must be non-negative")
        if self.resample not in ("per-iteration", "per-run"):
            raise ConfigError(f"unknown resample cadence {self.resample!r}")

    def check(self, config: MissionConfig) -> None:
        if self.mode == "position-jitter":
            gap = float(np.min(np.diff(config.x))) if config.M > 1 else math.inf
            if not self.half_width < gap / 2:
                raise ConfigError(
                    f"jitter half-width {self.half_width} must be below half the minimum gap {gap / 2}")


def sub_seed(master: int, *index: int) -> int:
    """Derive an independent 63-bit seed from a master seed and indices."""
    ss = np.random.SeedSequence([int(master), *(int(i) for i in index)])
    return int(ss.generate_state(2, np.uint32).astype(np.uint64).dot([1 << 31, 1]))


@lru_cache(maxsize=256)
def _stream(seed: int, target: int, n: int) -> np.ndarray:
    # PCG64 output is sequential, so prefixes agree for every n
    rng = np.random.default_rng([seed, target])
    out = rng.random(n)
    out.setflags(write=False)
    return out


def _draws(seed: int, target: int, n: int) -> np.ndarray:
    size = 64
    while size < n:
        size *= 2
    return _stream(seed, target, size)[:n]


def sample_inflow(target: int, t: float, model: RandomModel | UncertaintyRate) -> float:
    """Inflow rate of ``target`` (0-based) at time ``t``."""
    if isinstance(model, UncertaintyRate):
        lo, hi = model.lo[target], model.hi[target]
    else:
        lo, hi = model.lo, model.hi
    k = int(math.floor(t / model.interval))
    u = _draws(int(model.seed), target, k + 1)[k]
    return lo + (hi - lo) * float(u)


def inflow_table(rates: UncertaintyRate, config: MissionConfig):
    """Breakpoints and per-window inflow rates over the horizon.

    Returns ``(edges, table)`` where window ``k`` spans ``[edges[k], edges[k+1])``
    and ``table[k, i]`` is the rate of target ``i`` there.
    """
    T = config.horizon
    if not rates.random:
        return np.array([0.0, T]), config.A[None, :]
    n = max(1, int(math.ceil(T / rates.interval - 1e-12)))
    edges = np.minimum(np.arange(n + 1) * rates.interval, T)
    edges[-1] = T
    table = np.empty((n, config.M))
    for i in range(config.M):
        u = _draws(int(rates.seed), i, n)
        table[:, i] = rates.lo[i] + (rates.hi[i] - rates.lo[i]) * u
    return edges, table


def sample_positions(config: MissionConfig, model: RandomModel, run: int = 0) -> np.ndarray:
    """Jittered target positions for replicate ``run``; ordering is preserved."""
    model.check(config)
    if model.mode != "position-jitter" or model.half_width == 0:
        return config.x.copy()
    rng = np.random.default_rng([int(model.seed), 0x7A, int(run)])
    xs = config.x + rng.uniform(-model.half_width, model.half_width, size=config.M)
    return xs


def realization(config: MissionConfig, model: RandomModel | None, run: int = 0):
    """Concrete ``(config, rates)`` pair for replicate ``run`` of ``model``."""
    if model is None or model.mode == "none":
        return config, DETERMINISTIC
    model.check(config)
    if model.mode == "inflow-uniform":
        rates = UncertaintyRate(
            mode="piecewise-random",
            lo=(model.lo,) * config.M,
            hi=(model.hi,) * config.M,
            interval=model.interval,
            seed=sub_seed(model.seed, run),
        )
        return config, rates
    return config.with_positions(sample_positions(config, model, run)), DETERMINISTIC
