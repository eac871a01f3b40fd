"""Run configuration files (JSON or TOML) and trace export.

Both front-ends produce the same key/value tree; :func:`parse_config` maps it
onto the library types.  See ``docs/config.md`` for the schema.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .hybrid_sim import SimTrace, TrajectoryParams
from .model import AgentSpec, ConfigError, MissionConfig, Target
from .optimizer import DescentConfig
from .potential_field import PotentialConfig
from .stochastic import RandomModel

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class SchedulerConfig:
    window: float | None = None      # planning window; None means the full horizon
    max_steps: int | None = None
    refine_top: int | None = 2       # None: exhaustive enumeration
    beam: int = 48
    cap: int = 10**6
    periodic_tol: float = 0.5


@dataclass
class RunConfig:
    mission: MissionConfig
    descent: DescentConfig
    scheduler: SchedulerConfig
    params: TrajectoryParams | None = None
    gamma: int | None = None
    tree: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.tree)


_TOP = {"mission", "targets", "agents", "params", "optimizer", "excitation", "stochastic", "scheduler"}


def read_tree(path: str | os.PathLike) -> dict:
    """Load a JSON or TOML file (by suffix) into a plain dict."""
    p = Path(path)
    try:
        if p.suffix.lower() == ".toml":
            with open(p, "rb") as fh:
                return tomllib.load(fh)
        with open(p, encoding="utf-8") as fh:
            tree = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {p.name}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a table/object")
    return tree


def _section(tree, name, allowed):
    sec = tree.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return sec


def _get(sec, key, kind, where, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing required key {where}.{key}")
        return default
    v = sec[key]
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind is int and isinstance(v, float) and not v.is_integer():
            raise TypeError
        return kind(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key} must be {kind.__name__}, got {v!r}") from exc


def parse_mission(tree: dict) -> MissionConfig:
    m = _section(tree, "mission", {"length", "horizon", "no_cross"})
    targets = tree.get("targets")
    agents = tree.get("agents")
    if not isinstance(targets, list) or not targets:
        raise ConfigError("need a non-empty [[targets]] list")
    if not isinstance(agents, list) or not agents:
        raise ConfigError("need a non-empty [[agents]] list")
    ts = []
    for n, t in enumerate(targets, 1):
        where = f"targets[{n}]"
        if not isinstance(t, dict):
            raise ConfigError(f"{where} must be a table")
        extra = set(t) - {"x", "A", "B", "R0", "alpha"}
        if extra:
            raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
        ts.append(Target(_get(t, "x", float, where, required=True),
                         _get(t, "A", float, where, required=True),
                         _get(t, "B", float, where, required=True),
                         _get(t, "R0", float, where, 0.0),
                         _get(t, "alpha", float, where, 1.0)))
    ags = []
    for n, a in enumerate(agents, 1):
        where = f"agents[{n}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{where} must be a table")
        extra = set(a) - {"s0", "r", "direction"}
        if extra:
            raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
        ags.append(AgentSpec(_get(a, "s0", float, where, required=True),
                             _get(a, "r", float, where, required=True),
                             _get(a, "direction", int, where, 1)))
    return MissionConfig(_get(m, "length", float, "mission", required=True), tuple(ts), tuple(ags),
                         _get(m, "horizon", float, "mission", required=True),
                         _get(m, "no_cross", bool, "mission", False))


def parse_config(tree: dict) -> RunConfig:
    """Validate a config tree and build the library objects."""
    extra = set(tree) - _TOP
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    mission = parse_mission(tree)

    ex = _section(tree, "excitation", {"enabled", "beta", "decay_mode", "grid"})
    excitation = None
    if _get(ex, "enabled", bool, "excitation", False):
        excitation = PotentialConfig(beta=_get(ex, "beta", float, "excitation", 0.05),
                                     decay_mode=_get(ex, "decay_mode", str, "excitation", "per-iteration"),
                                     grid=_get(ex, "grid", int, "excitation", 500))

    st = _section(tree, "stochastic", {"mode", "lo", "hi", "interval", "half_width", "seed",
                                       "resample", "n_seeds"})
    random = None
    n_seeds = 1
    if st and _get(st, "mode", str, "stochastic", "none") != "none":
        random = RandomModel(mode=_get(st, "mode", str, "stochastic"),
                             lo=_get(st, "lo", float, "stochastic", 0.0),
                             hi=_get(st, "hi", float, "stochastic", 2.0),
                             interval=_get(st, "interval", float, "stochastic", 1.0),
                             half_width=_get(st, "half_width", float, "stochastic", 0.25),
                             seed=_get(st, "seed", int, "stochastic", 0),
                             resample=_get(st, "resample", str, "stochastic", "per-iteration"))
        random.check(mission)
        n_seeds = _get(st, "n_seeds", int, "stochastic", 1)

    op = _section(tree, "optimizer", {"max_iterations", "step0", "c", "rho", "grad_tol", "cost_tol",
                                      "patience", "restarts", "seed", "gamma", "polish"})
    defaults = DescentConfig()
    descent = DescentConfig(
        max_iterations=_get(op, "max_iterations", int, "optimizer", defaults.max_iterations),
        step0=_get(op, "step0", float, "optimizer", defaults.step0),
        c=_get(op, "c", float, "optimizer", defaults.c),
        rho=_get(op, "rho", float, "optimizer", defaults.rho),
        grad_tol=_get(op, "grad_tol", float, "optimizer", defaults.grad_tol),
        cost_tol=_get(op, "cost_tol", float, "optimizer", defaults.cost_tol),
        patience=_get(op, "patience", int, "optimizer", defaults.patience),
        restarts=_get(op, "restarts", int, "optimizer", 0),
        seed=_get(op, "seed", int, "optimizer", 0),
        polish=_get(op, "polish", bool, "optimizer", True),
        random=random, n_seeds=n_seeds, excitation=excitation)
    gamma = _get(op, "gamma", int, "optimizer")

    sc = _section(tree, "scheduler", {"window", "max_steps", "refine_top", "beam", "cap", "periodic_tol",
                                      "exhaustive"})
    scheduler = SchedulerConfig(
        window=_get(sc, "window", float, "scheduler"),
        max_steps=_get(sc, "max_steps", int, "scheduler"),
        refine_top=None if _get(sc, "exhaustive", bool, "scheduler", False)
        else _get(sc, "refine_top", int, "scheduler", 2),
        beam=_get(sc, "beam", int, "scheduler", 48),
        cap=_get(sc, "cap", int, "scheduler", 10**6),
        periodic_tol=_get(sc, "periodic_tol", float, "scheduler", 0.5))

    params = None
    if "params" in tree:
        pr = _section(tree, "params", {"theta", "omega"})
        try:
            params = TrajectoryParams(np.array(pr["theta"], dtype=float), np.array(pr["omega"], dtype=float))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"[params] needs theta and omega matrices: {exc}") from exc
        if params.N != mission.N:
            raise ConfigError("[params] needs one theta/omega row per agent")
        params.validate(mission)
    return RunConfig(mission, descent, scheduler, params, gamma, tree)


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(read_tree(path))


def config_digest(tree: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order and platform."""
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False, default=float)
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def mission_tree(config: MissionConfig) -> dict:
    """Inverse of :func:`parse_mission`."""
    return {
        "mission": {"length": config.length, "horizon": config.horizon, "no_cross": config.no_cross},
        "targets": [{"x": t.x, "A": t.A, "B": t.B, "R0": t.R0, "alpha": t.alpha} for t in config.targets],
        "agents": [{"s0": a.s0, "r": a.r, "direction": a.direction} for a in config.agents],
    }


# --------------------------------------------------------------------------- traces


def _fmt(v) -> str:
    return format(float(v), ".12g")


def trace_rows(trace: SimTrace, dt: float | None = None):
    """Rows ``(t, s..., R..., u...)`` at every piece boundary (plus a grid if ``dt``)."""
    times = np.asarray(trace.times, dtype=float)
    if dt:
        grid = np.arange(0.0, trace.T, dt)
        times = np.unique(np.concatenate([times, grid, [trace.T]]))
    if times.size == 0:
        times = np.array([0.0])
    s, R, _ = trace.sample(times)
    if trace.n_pieces:
        k = np.clip(np.searchsorted(trace.times, times, side="right") - 1, 0, trace.n_pieces - 1)
        u = trace.u[k]
        u[times >= trace.T] = 0
    else:
        u = np.zeros((times.size, trace.config.N), dtype=int)
    for n, t in enumerate(times):
        yield (t, *s[n], *R[n], *u[n])


def write_trace_csv(trace: SimTrace, path: str | os.PathLike, dt: float | None = None) -> None:
    N, M = trace.config.N, trace.config.M
    header = (["t"] + [f"s_{j}" for j in range(1, N + 1)] + [f"R_{i}" for i in range(1, M + 1)]
              + [f"u_{j}" for j in range(1, N + 1)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in trace_rows(trace, dt):
            w.writerow([_fmt(v) for v in row[:1 + N + M]] + [str(int(v)) for v in row[1 + N + M:]])


def write_events_json(trace: SimTrace, path: str | os.PathLike) -> None:
    events = [e.as_dict() for e in trace.events]
    dump_json(events, path)


def dump_json(obj: Any, path: str | os.PathLike) -> None:
    """Deterministic JSON (sorted keys, 12 significant digits for floats)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_json(obj))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return None
        return float(_fmt(v))
    return obj


def to_json(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
