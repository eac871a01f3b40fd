"""Projected gradient descent on switching points and dwell times."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ipa
from .hybrid_sim import SimTrace, TrajectoryParams, cost, default_gamma, no_cross_violations, run
from .model import DETERMINISTIC, ConfigError, MissionConfig
from .potential_field import Field, PotentialConfig, j2_gradient, j2_value
from .stochastic import RandomModel, realization, sub_seed


@dataclass(frozen=True)
class DescentConfig:
    """Step rule, stopping rule and optional excitation / randomness.

    ``n_seeds`` realisations of ``random`` are averaged per iteration.  With
    ``excitation`` set, the decayed potential-field term is added to ``J1``.
    """

    max_iterations: int = 300
    step0: float = 1.0
    c: float = 1e-4
    rho: float = 0.5
    max_backtracks: int = 40
    grad_tol: float = 1e-6
    cost_tol: float = 1e-7
    patience: int = 5
    restarts: int = 0
    seed: int = 0
    polish: bool = True
    snap: bool = True
    random: RandomModel | None = None
    n_seeds: int = 1
    excitation: PotentialConfig | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0 < self.rho < 1 or not 0 < self.c < 1:
            raise ConfigError("backtracking needs 0 < rho < 1 and 0 < c < 1")
        if not (self.grad_tol > 0 and self.cost_tol > 0 and self.step0 > 0):
            raise ConfigError("tolerances and initial step must be positive")
        if self.max_iterations < 0 or self.n_seeds < 1 or self.restarts < 0:
            raise ConfigError("bad iteration / seed / restart counts")


@dataclass
class DescentReport:
    history: list
    params: TrajectoryParams
    trace: SimTrace
    status: str
    wall: float
    J1: float
    restarts: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([h["J"] for h in self.history])

    def as_dict(self, timing: bool = True) -> dict:
        out = {
            "status": self.status,
            "J1": self.J1,
            "iterations": len(self.history) - 1,
            "theta": self.params.theta.tolist(),
            "omega": self.params.omega.tolist(),
            "seeds": self.seeds,
            "restarts": self.restarts,
            "history": [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in h.items()}
                        for h in self.history],
        }
        if timing:
            out["wall_clock"] = self.wall
        return out


def project(params: TrajectoryParams, bounds: tuple[float, float]) -> TrajectoryParams:
    """Clamp switching points into ``bounds`` and dwell times to be non-negative."""
    lo, hi = bounds
    return TrajectoryParams(np.clip(params.theta, lo, hi), np.maximum(params.omega, 0.0))


def agent_blocks(config: MissionConfig) -> list[np.ndarray]:
    """Split the targets into ``N`` contiguous blocks, one per agent.

    Cuts go into the ``N - 1`` widest gaps between neighbouring targets; ties
    prefer the cut that keeps block sizes balanced.
    """
    xs = config.x
    N, M = config.N, config.M
    if N == 1:
        return [xs]
    gaps = np.diff(xs)
    ideal = [M * (n + 1) / N for n in range(N - 1)]
    balance = np.array([min(abs(k + 1 - q) for q in ideal) for k in range(M - 1)])
    order = sorted(range(M - 1), key=lambda k: (-round(gaps[k], 9), balance[k], k))
    cuts = sorted(k + 1 for k in order[:N - 1])
    edges = [0, *cuts, M]
    return [xs[a:b] for a, b in zip(edges[:-1], edges[1:])]


def initial_params(config: MissionConfig, gamma: int | None = None, rng=None) -> TrajectoryParams:
    """Each agent sweeps back and forth across its block, stopping at every target.

    Dwell times start at zero.  Putting a switching point on every target lets
    descent grow a dwell at interior targets, which a plain end-to-end sweep
    cannot do.  With ``rng`` the points are jittered and small random dwells
    added (used for restarts).
    """
    G = gamma or default_gamma(config)
    theta = np.empty((config.N, G))
    for j, block in enumerate(agent_blocks(config)):
        block = [float(v) for v in block]
        if len(block) == 1:
            half = 0.5 * float(config.r[j])
            block = [block[0] - half, block[0] + half]
        cycle = block + block[-2:0:-1]
        start = int(np.argmin([abs(config.agents[j].s0 - v) for v in block[:: len(block) - 1]]))
        if start == 1:
            cycle = cycle[len(block) - 1:] + cycle[:len(block) - 1]
        theta[j] = [cycle[l % len(cycle)] for l in range(G)]
    omega = np.zeros((config.N, G))
    if rng is not None:
        theta += rng.uniform(-0.5, 0.5, theta.shape)
        omega += rng.uniform(0.0, 1.0, omega.shape)
    a, b = config.bounds
    return TrajectoryParams(np.clip(theta, a, b), omega)


def compact_params(config: MissionConfig, gamma: int | None = None) -> TrajectoryParams | None:
    """Park every agent whose whole block fits in its sensing range at the block centre.

    Other agents keep the sweep of :func:`initial_params`.  Returns ``None``
    when no block is compact enough.
    """
    base = initial_params(config, gamma)
    theta, omega = base.theta.copy(), base.omega.copy()
    changed = False
    for j, block in enumerate(agent_blocks(config)):
        mid = 0.5 * (float(block[0]) + float(block[-1]))
        if len(block) > 1 and np.max(np.abs(block - mid)) < float(config.r[j]):
            theta[j] = mid
            omega[j] = 0.0
            omega[j, 0] = float(config.horizon)
            changed = True
    return TrajectoryParams(theta, omega) if changed else None


class _Objective:
    """Cost and gradient of one iteration's objective (fixed realisations)."""

    def __init__(self, config, descent, iteration):
        self.config = config
        self.d = descent
        self.k = iteration
        self.bounds = descent.bounds or config.bounds
        pc = descent.excitation
        self.pc = pc if pc is not None and pc.weight(iteration) > 1e-9 else None
        self.fields = {}
        self.worlds = self._worlds()

    def _worlds(self):
        d = self.d
        if d.random is None or d.random.mode == "none":
            return [(self.config, DETERMINISTIC)]
        out = []
        for m in range(d.n_seeds):
            run_id = (self.k * d.n_seeds + m) if d.random.resample == "per-iteration" else m
            model = replace(d.random, seed=sub_seed(d.random.seed, run_id))
            out.append(realization(self.config, model, 0))
        return out

    def _field(self, cfg):
        key = tuple(cfg.x)
        if key not in self.fields:
            self.fields[key] = Field.for_config(cfg, self.pc.grid)
        return self.fields[key]

    def traces(self, params):
        return [run(params, cfg, rates, self.bounds, record_crossings=False) for cfg, rates in self.worlds]

    def value(self, traces) -> tuple[float, float]:
        j1 = float(np.mean([tr.J1 for tr in traces]))
        j = j1
        if self.pc is not None:
            j += float(np.mean([j2_value(tr, self.pc, self.k, self._field(tr.config)) for tr in traces]))
        return j, j1

    def gradient(self, traces) -> np.ndarray:
        g = np.mean([ipa.gradient(tr) for tr in traces], axis=0)
        if self.pc is not None:
            g = g + np.mean([j2_gradient(tr, self.pc, self.k, self._field(tr.config)) for tr in traces],
                            axis=0)
        return g

    def feasible(self, traces) -> bool:
        if not self.config.no_cross:
            return True
        return all(not no_cross_violations(tr) for tr in traces)


def _descend(params, config, d: DescentConfig):
    bounds = d.bounds or config.bounds
    N, G = params.N, params.gamma
    x = project(params, bounds)
    history = []
    status = "max-iterations"
    stall = 0
    step = d.step0
    for k in range(d.max_iterations + 1):
        obj = _Objective(config, d, k)
        traces = obj.traces(x)
        if k == 0 and not obj.feasible(traces):
            raise ConfigError("initial trajectory violates the no-crossing constraint")
        J, J1 = obj.value(traces)
        g = obj.gradient(traces)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at iteration {k}")
        v = x.as_vector()
        # projected-gradient stationarity: the step a unit move would take
        pg = project(TrajectoryParams.from_vector(v - g, N, G), bounds).as_vector() - v
        gnorm = float(np.linalg.norm(pg))
        history.append({"iteration": k, "J": J, "J1": J1, "grad_norm": gnorm, "step": step,
                        "excitation_weight": obj.pc.weight(k) if obj.pc else 0.0,
                        "theta": x.theta.copy(), "omega": x.omega.copy()})
        if gnorm <= d.grad_tol and obj.pc is None:
            status = "gradient-norm"
            break
        if k == d.max_iterations:
            break
        accepted = None
        for gd in _directions(g, x, config, N, G):
            accepted, eta, Jc = _line_search(obj, x, v, J, gd, min(d.step0, 4.0 * step), d, bounds,
                                             config.x if d.snap else None)
            if accepted is not None:
                break
        if accepted is None:
            if obj.pc is not None:
                # the excitation weight shrinks next iteration, so the objective
                # changes under us; wait for it rather than give up
                step = max(eta, 1e-6 * d.step0)
                continue
            status = "step-too-small"
            break
        step = eta
        x = accepted
        rel = abs(J - Jc) / max(1.0, abs(J))
        stall = stall + 1 if rel <= d.cost_tol else 0
        if stall >= d.patience and obj.pc is None:
            status = "cost-stagnation"
            break
    return x, history, status


def _kinked(x: TrajectoryParams, xs, tol=1e-9) -> np.ndarray:
    """Mask of switching points sitting on a target (where ``J1`` has a kink)."""
    return np.min(np.abs(x.theta[..., None] - xs), axis=-1) <= tol


def _directions(g, x, config, N, G):
    yield g
    mask = _kinked(x, config.x)
    if mask.any():
        # dwelling exactly on a target is a corner of the cost; if descent stalls,
        # hold those points in place and move the rest
        gd = g.copy()
        gd[:N * G][mask.ravel()] = 0.0
        yield gd


def _snap(cand: np.ndarray, old: np.ndarray, xs) -> np.ndarray:
    """Stop switching points on the first target they would step across."""
    out = cand.copy()
    for idx in np.nonzero(cand != old)[0]:
        a, b = old[idx], cand[idx]
        lo, hi = min(a, b), max(a, b)
        inside = xs[(xs > lo) & (xs < hi)]
        if inside.size:
            out[idx] = inside[0] if b > a else inside[-1]
    return out


def _line_search(obj, x, v, J, g, eta, d, bounds, xs):
    """Armijo backtracking along the projection arc; returns ``(params, eta, J)``."""
    N, G = x.N, x.gamma
    for _ in range(d.max_backtracks):
        cand = project(TrajectoryParams.from_vector(v - eta * g, N, G), bounds)
        if xs is not None:
            th = _snap(cand.theta.ravel(), x.theta.ravel(), xs).reshape(cand.theta.shape)
            cand = TrajectoryParams(th, cand.omega)
        dv = cand.as_vector() - v
        if np.any(dv):
            ctr = obj.traces(cand)
            Jc, _ = obj.value(ctr)
            if Jc <= J + d.c * float(g @ dv) and obj.feasible(ctr):
                return cand, eta, Jc
        eta *= d.rho
    return None, eta, J


def _inside_span(params, config, bounds):
    """Clip switching points into ``[x_1, x_M]`` so the path becomes the clipped path.

    The clipped agent leaves ``clip(theta_l)`` exactly when the original path
    comes back into the span, i.e. ``|theta_l - clip(theta_l)|`` after the
    original departure.  Being nearer to every target, it senses at least as
    well at all times.
    """
    lo = max(float(config.x[0]), bounds[0])
    hi = min(float(config.x[-1]), bounds[1])
    theta = np.clip(params.theta, lo, hi)
    omega = params.omega.copy()
    for j in range(params.N):
        prev = float(config.agents[j].s0)
        prev_c = prev
        dep = dep_c = 0.0
        for l in range(params.gamma):
            th, tc = float(params.theta[j, l]), float(theta[j, l])
            dep += abs(th - prev) + params.omega[j, l]
            arrive_c = dep_c + abs(tc - prev_c)
            dep_c = dep + abs(th - tc)
            omega[j, l] = max(dep_c - arrive_c, 0.0)
            prev, prev_c = th, tc
    return TrajectoryParams(theta, omega)


def _final_cost(params, config, d):
    obj = _Objective(config, replace(d, excitation=None), 0)
    traces = obj.traces(params)
    return obj.value(traces)[1], traces


def optimize(params: TrajectoryParams | None, config: MissionConfig,
             descent: DescentConfig = DescentConfig()) -> DescentReport:
    """Minimise ``J1`` (plus decayed ``J2`` when excitation is on) from ``params``.

    ``params=None`` starts from the cheaper of :func:`initial_params` and
    :func:`compact_params`.  Restarts perturb that default
    sweep; the run with the lowest final ``J1`` is reported.
    """
    t0 = time.perf_counter()
    bounds = descent.bounds or config.bounds
    if params is None:
        params = initial_params(config)
        alt = compact_params(config, params.gamma)
        if alt is not None and cost(alt, config, bounds=bounds) < cost(params, config, bounds=bounds):
            params = alt
    params.validate(config, bounds)
    starts = [params]
    rng = np.random.default_rng(descent.seed)
    for _ in range(descent.restarts):
        starts.append(initial_params(config, params.gamma, rng))
    best = None
    summary = []
    for n, p0 in enumerate(starts):
        try:
            x, history, status = _descend(p0, config, descent)
        except ConfigError:
            if n == 0:
                raise
            continue
        J1, traces = _final_cost(x, config, descent)
        if descent.polish:
            # agents gain nothing outside the outer targets; pull switching points in
            xp = _inside_span(x, config, bounds)
            if np.any(xp.theta != x.theta):
                Jp, tp = _final_cost(xp, config, descent)
                feas = not config.no_cross or all(not no_cross_violations(t) for t in tp)
                if Jp <= J1 + 1e-12 * max(1.0, J1) and feas:
                    x, J1, traces = xp, Jp, tp
                    history[-1] = dict(history[-1], polished=True, J1=J1)
        summary.append({"start": n, "J1": J1, "status": status, "iterations": len(history) - 1})
        if best is None or J1 < best[1]:
            best = (x, J1, history, status, traces)
    x, J1, history, status, traces = best
    seeds = []
    if descent.random is not None and descent.random.mode != "none":
        seeds = [int(descent.random.seed)]
    trace = run(x, config, bounds=bounds)
    return DescentReport(history=history, params=x, trace=trace, status=status,
                         wall=time.perf_counter() - t0, J1=J1, restarts=summary, seeds=seeds)


def prop1_violation(trace: SimTrace, eps: float = 1e-6) -> float:
    """Largest excursion outside ``[x_1, x_M]`` once an agent has entered that span."""
    lo, hi = float(trace.config.x[0]), float(trace.config.x[-1])
    worst = 0.0
    for j in range(trace.config.N):
        s = trace.s[:, j]
        inside = np.nonzero((s >= lo - eps) & (s <= hi + eps))[0]
        if inside.size == 0:
            worst = max(worst, math.inf)
            continue
        tail = s[inside[0]:]
        worst = max(worst, float(np.max(np.maximum(lo - tail, tail - hi))))
    return max(worst, 0.0)
