"""Discrete visit scheduling: target sequences plus optimised switching times.

A schedule assigns each agent a sequence of targets (1-based indices).  The
agent leaves for visit ``k`` at switching time ``t^k`` (``t^1 = 0``), travels
at unit speed, and dwells until ``t^{k+1}``; the last dwell runs to the horizon.
Costs always come from the exact simulator on the induced control program.

Exhaustive search over all sequences and dwell times is only practical for
short horizons.  :func:`solve` therefore screens the sequence tree with a
causal dwell rule (stay until the visited target is emptied), keeps the most
promising candidates, and optimises their switching times by cyclic
golden-section search.  ``refine_top=None`` switches to full enumeration.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Iterable, Sequence

import numpy as np

from .hybrid_sim import SimTrace, TrajectoryParams, compile_program, simulate
from .model import AgentSpec, ConfigError, MissionConfig, Target

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EnumerationCapError(RuntimeError):
    """The feasible sequence set is larger than the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} candidate sequences exceed the cap of {cap}; "
                         "shorten the planning window")
        self.count = count
        self.cap = cap


class AperiodicScheduleError(ValueError):
    """A schedule cannot be repeated because its agents do not return."""


# --------------------------------------------------------------------------- schedules


def _travel_times(config: MissionConfig, j: int, seq: Sequence[int]) -> np.ndarray:
    xs = config.x
    pos = [float(config.agents[j].s0)] + [float(xs[i - 1]) for i in seq]
    return np.abs(np.diff(pos))


@dataclass
class VisitSchedule:
    """Per-agent target sequences and departure times over ``window``."""

    config: MissionConfig
    sequences: tuple
    switch_times: tuple
    cost: float = math.nan
    window: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sequences = tuple(tuple(int(i) for i in s) for s in self.sequences)
        self.switch_times = tuple(np.asarray(t, dtype=float) for t in self.switch_times)
        if not self.window:
            self.window = float(self.config.horizon)
        if len(self.sequences) != self.config.N or len(self.switch_times) != self.config.N:
            raise ValueError("need one sequence and one time vector per agent")
        for seq, t in zip(self.sequences, self.switch_times):
            if len(seq) != len(t):
                raise ValueError("sequence and switching times differ in length")
            if any(not 1 <= i <= self.config.M for i in seq):
                raise ValueError(f"target index out of range in {seq}")
            if len(t) and t[0] != 0.0:
                raise ValueError("first switching time must be 0")

    def travel(self, j: int) -> np.ndarray:
        return _travel_times(self.config, j, self.sequences[j])

    def dwell(self, j: int) -> np.ndarray:
        t = self.switch_times[j]
        if not len(t):
            return np.zeros(0)
        ends = np.append(t[1:], self.window)
        return ends - t - self.travel(j)

    def to_params(self) -> TrajectoryParams:
        """Switching-point form; shorter agents are padded with zero-length stops."""
        N = self.config.N
        G = max(1, max(len(s) for s in self.sequences))
        theta = np.empty((N, G))
        omega = np.zeros((N, G))
        xs = self.config.x
        for j, seq in enumerate(self.sequences):
            pos = [float(xs[i - 1]) for i in seq] or [float(self.config.agents[j].s0)]
            theta[j, :len(pos)] = pos
            theta[j, len(pos):] = pos[-1]
            if seq:
                d = self.dwell(j)
                d[-1] = max(d[-1], 0.0) + max(0.0, self.config.horizon - self.window)
                omega[j, :len(seq)] = np.maximum(d, 0.0)
        return TrajectoryParams(theta, omega)

    def simulate(self, **kw) -> SimTrace:
        bounds = (0.0, float(self.config.length))
        return simulate(compile_program(self.to_params(), self.config, bounds), self.config, **kw)

    def as_dict(self) -> dict:
        return {
            "agents": [
                {"sequence": list(seq), "t": self.switch_times[j].tolist(),
                 "travel": self.travel(j).tolist(), "dwell": self.dwell(j).tolist()}
                for j, seq in enumerate(self.sequences)
            ],
            "cost": self.cost,
            "window": self.window,
            "horizon": self.config.horizon,
            **({"meta": self.meta} if self.meta else {}),
        }


def schedule_cost(config: MissionConfig, sequences, times) -> float:
    """``J1`` of the control program induced by a schedule (the single cost source)."""
    sched = VisitSchedule(config, sequences, times)
    return sched.simulate(record_crossings=False).J1


# --------------------------------------------------------------------------- enumeration


def default_max_steps(config: MissionConfig, horizon: float | None = None) -> int:
    T = config.horizon if horizon is None else horizon
    gaps = np.diff(config.x)
    g = float(gaps.min()) if gaps.size else max(T, 1.0)
    return int(math.ceil(T / g)) + 1


def count_sequences(config: MissionConfig, j: int = 0, horizon: float | None = None,
                    max_steps: int | None = None) -> int:
    """Exact number of sequences :func:`enumerate_sequences` yields for agent ``j``."""
    T = config.horizon if horizon is None else horizon
    K = default_max_steps(config, T) if max_steps is None else max_steps
    xs = config.x.tolist()
    M = len(xs)
    eps = 1e-9 * max(1.0, T)

    @lru_cache(maxsize=None)
    def count(last, rem_key, steps):
        rem = rem_key * 1e-9
        if steps == 0:
            return 0
        pos = xs[last]
        total = 0
        for i in range(M):
            d = abs(xs[i] - pos)
            if i != last and d <= rem + eps:
                total += 1 + count(i, int(round((rem - d) * 1e9)), steps - 1)
        return total

    s0 = float(config.agents[j].s0)
    total = 0
    for i in range(M):
        d = abs(xs[i] - s0)
        if d <= T + eps and K > 0:
            total += 1 + count(i, int(round((T - d) * 1e9)), K - 1)
    return total


def _dfs(config, j, T, K):
    xs = config.x.tolist()
    M = len(xs)
    eps = 1e-9 * max(1.0, T)
    out = []

    def rec(prefix, pos, used):
        if len(prefix) == K:
            return
        for i in range(M):
            if prefix and prefix[-1] == i + 1:
                continue
            d = abs(xs[i] - pos)
            if used + d <= T + eps:
                seq = prefix + (i + 1,)
                out.append(seq)
                rec(seq, xs[i], used + d)

    rec((), float(config.agents[j].s0), 0.0)
    return out


def enumerate_sequences(config: MissionConfig, horizon: float | None = None,
                        max_steps: int | None = None, cap: int = 10**6) -> list[list[tuple]]:
    """All target sequences (1-based) each agent can complete within the horizon.

    Returns one list per agent, in depth-first order.  Sequences never repeat a
    target twice in a row and every one of them can be flown with zero dwell
    inside ``horizon``.  Raises :class:`EnumerationCapError` when an agent's set
    or the joint product exceeds ``cap``.
    """
    T = config.horizon if horizon is None else float(horizon)
    K = default_max_steps(config, T) if max_steps is None else int(max_steps)
    counts = [count_sequences(config, j, T, K) for j in range(config.N)]
    joint = math.prod(counts)
    if max(counts) > cap or joint > cap:
        raise EnumerationCapError(joint, cap)
    return [_dfs(config, j, T, K) for j in range(config.N)]


def joint_sequences(per_agent: list[list[tuple]], config: MissionConfig) -> Iterable[tuple]:
    """Lazy Cartesian product of per-agent sequences with no-cross pruning."""
    for combo in itertools.product(*per_agent):
        if config.no_cross and any(max(a) >= max(b) for a, b in zip(combo, combo[1:])):
            continue
        yield combo


# --------------------------------------------------------------------------- dwell optimisation


def _golden(f, lo, hi, tol):
    """Minimise a scalar function on ``[lo, hi]``; 5-point scan then golden section."""
    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    pts = np.linspace(lo, hi, 5)
    vals = [f(p) for p in pts]
    b = int(np.argmin(vals))
    best = (pts[b], vals[b])
    a, c = pts[max(b - 1, 0)], pts[min(b + 1, 4)]
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    f1, f2 = f(x1), f(x2)
    while c - a > tol:
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - GOLDEN * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (c - a)
            f2 = f(x2)
    for cand in ((x1, f1), (x2, f2)):
        if cand[1] < best[1]:
            best = cand
    return best


def _as_per_agent(sequences, N):
    if sequences and isinstance(sequences[0], (int, np.integer)):
        return (tuple(sequences),)
    return tuple(tuple(s) for s in sequences)


def optimize_dwells(sequences, config: MissionConfig, horizon: float | None = None,
                    init=None, tol: float = 1e-4, max_sweeps: int = 6,
                    min_gain: float = 1e-7, shifts: bool = True) -> tuple[list[np.ndarray], float]:
    """Optimise switching times for fixed sequences; returns ``(times, cost)``.

    Switching times are swept from the last one backwards, each by golden
    section over the interval its neighbours allow (tolerance ``tol * T``),
    and sweeps repeat until the cost stops improving.  With ``shifts`` each
    sweep also resizes single dwells while moving all later switches with
    them, which escapes the stalls of pure switching-time moves.  A
    single-agent sequence may be passed flat.
    """
    if horizon is not None and horizon != config.horizon:
        config = config.with_horizon(horizon)
    T = float(config.horizon)
    seqs = _as_per_agent(sequences, config.N)
    if len(seqs) != config.N:
        raise ValueError("need one sequence per agent")
    if any(len(s) == 0 for s in seqs):
        raise ValueError("empty sequence")
    travel = [_travel_times(config, j, s) for j, s in enumerate(seqs)]
    for j, tr in enumerate(travel):
        if tr.sum() > T * (1 + 1e-12):
            raise ValueError(f"agent {j + 1}: sequence needs {tr.sum():g} > T={T:g} travel time")
    if init is None:
        times = []
        for tr in travel:
            slack = (T - tr.sum()) / len(tr)
            times.append(np.concatenate([[0.0], np.cumsum(tr + slack)[:-1]]))
    else:
        times = [np.array(t, dtype=float) for t in init]
    cache = {}

    def cost(ts):
        key = tuple(np.round(np.concatenate(ts), 12))
        if key not in cache:
            cache[key] = schedule_cost(config, seqs, ts)
        return cache[key]

    best = cost(times)
    for _ in range(max_sweeps):
        before = best
        for j in range(config.N):
            tr = travel[j]
            for k in range(len(tr) - 1, 0, -1):
                lo = times[j][k - 1] + tr[k - 1]
                hi = (times[j][k + 1] if k + 1 < len(tr) else T) - tr[k]
                if hi < lo:
                    hi = lo

                def f(v, j=j, k=k):
                    ts = [t.copy() for t in times]
                    ts[j][k] = v
                    return cost(ts)

                v, fv = _golden(f, lo, hi, tol * T)
                if fv < best:
                    times[j][k], best = v, fv
            if not shifts:
                continue
            for k in range(len(tr) - 1, 0, -1):
                # resize dwell k-1 and carry every later switch along
                lo = times[j][k - 1] + tr[k - 1] - times[j][k]
                hi = T - tr[-1] - times[j][-1]
                if hi <= lo:
                    continue

                def g(v, j=j, k=k):
                    ts = [t.copy() for t in times]
                    ts[j][k:] += v
                    return cost(ts)

                v, fv = _golden(g, lo, hi, tol * T)
                if fv < best:
                    times[j][k:] += v
                    best = fv
        if before - best <= min_gain * max(1.0, abs(best)):
            break
    return times, best


# --------------------------------------------------------------------------- screening


@dataclass(order=True)
class _Node:
    score: float
    seq: tuple = field(compare=False)
    times: tuple = field(compare=False)
    t: float = field(compare=False)        # departure time from the last visit
    pos: float = field(compare=False)
    R: np.ndarray = field(compare=False)
    acc: float = field(compare=False)      # ∫ sum R up to t


def _step(config: MissionConfig, j: int, node_t, pos, R, target, T):
    """Fly to ``target`` and dwell until it is emptied (or the horizon ends).

    Returns ``(arrival, leave, R_at_leave, ∫R up to leave, ∫R if staying to T)``.
    """
    rem = T - node_t
    x = float(config.x[target - 1])
    sub = config.subproblem(
        [Target(t.x, t.A, t.B, float(r), t.alpha) for t, r in zip(config.targets, R)],
        [AgentSpec(pos, float(config.agents[j].r))], horizon=rem)
    params = TrajectoryParams(np.array([[x]]), np.array([[rem]]))
    tr = simulate(compile_program(params, sub, (0.0, float(config.length)), check=False), sub,
                  record_crossings=False)
    arrive = abs(x - pos)
    leave = rem
    for e in tr.events:
        if e.kind == "r_zero" and e.target == target - 1 and e.t >= arrive - 1e-12:
            leave = e.t
            break
    if leave >= rem:
        return arrive, rem, None, tr.J1 * rem, tr.J1 * rem
    _, Rl, _ = tr.sample(leave)
    return arrive, leave, np.maximum(Rl[0], 0.0), float(tr.cumulative(leave).sum()), tr.J1 * rem


def _expand(config, j, node, i, T, found):
    """Child of ``node`` visiting target ``i``; records its completed-schedule score."""
    x = float(config.x[i - 1])
    arrive, leave, Rl, acc, total = _step(config, j, node.t, node.pos, node.R, i, T)
    seq = node.seq + (i,)
    times = node.times + (node.t,)
    full = (node.acc + total) / T
    if seq not in found or full < found[seq][0]:
        found[seq] = (full, seq, np.array(times))
    if Rl is None or node.t + leave >= T - 1e-9 * max(1.0, T):
        return None
    return _Node(full, seq, times, node.t + leave, x, Rl, node.acc + acc)


def _reachable(config, node, i, T):
    return node.t + abs(float(config.x[i - 1]) - node.pos) <= T + 1e-9 * max(1.0, T)


def cycles(M: int, max_len: int | None = None, limit: int | None = 12, xs=None) -> list[tuple]:
    """Closed walks visiting every target, without consecutive repeats.

    One walk per rotation class, shortest travel first (positions ``xs``,
    default unit spacing), at most ``limit`` of them.  The default length
    limit ``2(M - 1)`` admits the back-and-forth sweep.
    """
    L = max_len or max(2, 2 * (M - 1))
    xs = np.arange(M, dtype=float) if xs is None else np.asarray(xs, dtype=float)
    out, seen = [], set()
    for n in range(max(2, M), L + 1):
        for walk in itertools.product(range(1, M + 1), repeat=n):
            if len(set(walk)) < M or any(a == b for a, b in zip(walk, walk[1:] + walk[:1])):
                continue
            key = min(walk[k:] + walk[:k] for k in range(n))
            if key in seen:
                continue
            seen.add(key)
            travel = sum(abs(xs[a - 1] - xs[b - 1]) for a, b in zip(key, key[1:] + key[:1]))
            out.append((travel, n, key))
    out.sort()
    return [c for _, _, c in out[:limit]]


def screen(config: MissionConfig, j: int = 0, horizon: float | None = None,
           beam: int = 48, keep: int = 8, max_steps: int | None = None,
           max_cycles: int = 12):
    """Rank visit sequences for one agent under the causal dwell rule.

    Two sources are explored: a beam search over the sequence tree, and every
    rotation of short periodic walks repeated until the horizon.  A partial
    sequence is scored by the cost of the complete schedule that stays at its
    last target until the horizon; periodic tilings are also scored at every
    length with the slack spread evenly.  All scores are costs of feasible
    schedules, so they are comparable upper bounds.  Returns up
    to ``keep`` ``(cost, sequence, switching times)`` candidates.
    """
    T = config.horizon if horizon is None else float(horizon)
    K = default_max_steps(config, T) if max_steps is None else max_steps
    root = _Node(math.inf, (), (), 0.0, float(config.agents[j].s0), config.R0.astype(float), 0.0)
    found: dict[tuple, tuple] = {}
    frontier = [root]
    for _ in range(K):
        children = []
        for node in frontier:
            for i in range(1, config.M + 1):
                if (node.seq and node.seq[-1] == i) or not _reachable(config, node, i, T):
                    continue
                child = _expand(config, j, node, i, T, found)
                if child is not None:
                    children.append(child)
        if not children:
            break
        frontier = heapq.nsmallest(beam, children)
    for cyc in cycles(config.M, limit=max_cycles, xs=config.x):
        for rot in range(len(cyc)):
            node = root
            for n in range(K):
                i = cyc[(rot + n) % len(cyc)]
                if (node.seq and node.seq[-1] == i) or not _reachable(config, node, i, T):
                    break
                node = _expand(config, j, node, i, T, found)
                if node is None:
                    break
            # the same tiling with the slack spread evenly, at every feasible length
            seq = tuple(cyc[(rot + n) % len(cyc)] for n in range(K))
            if config.agents[j].s0 == float(config.x[seq[0] - 1]):
                seq = seq[1:]
            sub = config.subproblem(config.targets, [config.agents[j]])
            tr = _travel_times(sub, 0, seq)
            for n in range(1, len(seq) + 1):
                if tr[:n].sum() > T:
                    break
                slack = (T - tr[:n].sum()) / n
                times = np.concatenate([[0.0], np.cumsum(tr[:n] + slack)[:-1]])
                c = schedule_cost(sub, (seq[:n],), (times,))
                if seq[:n] not in found or c < found[seq[:n]][0]:
                    found[seq[:n]] = (c, seq[:n], times)
    ranked = sorted(found.values(), key=lambda c: c[0])
    return ranked[:keep]


# --------------------------------------------------------------------------- solve


def _block_partitions(M: int, N: int):
    for cuts in itertools.combinations(range(1, M), N - 1):
        edges = (0, *cuts, M)
        yield [list(range(a + 1, b + 1)) for a, b in zip(edges[:-1], edges[1:])]


def _full(config, seq, tol=1e-4):
    return optimize_dwells(seq, config, tol=tol)


def _quick(config, job):
    seq, init = job
    return optimize_dwells(seq, config, init=init, tol=1e-3, max_sweeps=1)


def _map(fn, config, jobs, workers):
    """Ordered map, in worker processes when ``workers > 1``."""
    if workers <= 1 or len(jobs) < 2:
        return [fn(config, job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [config] * len(jobs), jobs))


def _solve_single(config: MissionConfig, refine_top, beam, max_steps, tol, cap, screen_keep=6,
                  workers=1):
    T = float(config.horizon)
    if refine_top is None:
        seqs = enumerate_sequences(config, T, max_steps, cap)[0]
        best = None
        for seq, (times, c) in zip(seqs, _map(partial(_full, tol=tol), config, seqs, workers)):
            if best is None or c < best[0]:
                best = (c, seq, times[0])
        return best[1], best[2], best[0], {"mode": "exhaustive", "candidates": len(seqs)}
    cands = screen(config, 0, T, beam=beam, keep=screen_keep, max_steps=max_steps)
    # quick coarse pass from the causal and the evenly spread start, then a full
    # refinement of the most promising few
    jobs = [(seq, init) for _, seq, t0 in cands for init in ([t0], None)]
    quick = [(c, seq, times) for (seq, _), (times, c) in zip(jobs, _map(_quick, config, jobs, workers))]
    quick.sort(key=lambda q: q[0])
    best, done = None, set()
    for c0, seq, t0 in quick:
        if seq in done:
            continue
        done.add(seq)
        times, c = optimize_dwells(seq, config, init=t0, tol=tol)
        if best is None or c < best[0]:
            best = (c, seq, times[0])
        if len(done) == refine_top:
            break
    return best[1], best[2], best[0], {"mode": "screened", "candidates": len(cands)}


def solve(config: MissionConfig, horizon: float | None = None, max_steps: int | None = None,
          refine_top: int | None = 2, beam: int = 48, tol: float = 1e-4,
          cap: int = 10**6, joint_sweeps: int = 1, refine_splits: int = 1,
          workers: int = 1) -> VisitSchedule:
    """Minimum-cost visit schedule over ``horizon`` (default: the config's).

    ``refine_top=None`` enumerates every feasible sequence and optimises each
    one's dwell times (exact within the discretisation, exponential cost).
    Otherwise the screened candidates are refined.  Several agents split the
    targets into contiguous blocks.  Every split is screened agent by agent,
    the ``refine_splits`` best are solved in full (all of them when
    exhaustive), and the winning joint schedule gets ``joint_sweeps`` more
    sweeps over all agents' switching times together.  ``workers > 1``
    refines candidates in that many processes; results do not depend on it.
    """
    if horizon is not None:
        config = config.with_horizon(horizon)
    T = float(config.horizon)
    if T <= 0:
        raise ConfigError("scheduling needs a positive horizon")
    if config.N == 1:
        seq, times, c, meta = _solve_single(config, refine_top, beam, max_steps, tol, cap,
                                            workers=workers)
        return VisitSchedule(config, (seq,), (times,), c, T, meta)
    scores, solved = {}, {}
    # rank the contiguous splits by their screening scores, refine the best few
    def sub(j, block):
        return config.subproblem([config.targets[i - 1] for i in block], [config.agents[j]])

    splits = []
    for blocks in _block_partitions(config.M, config.N):
        score = 0.0
        for j, block in enumerate(blocks):
            key = (j, tuple(block))
            if key not in scores:
                top = screen(sub(j, block), 0, T, beam=beam, keep=1, max_steps=max_steps)
                scores[key] = top[0][0] if top else math.inf
            score += scores[key]
        splits.append((score, blocks))
    splits.sort(key=lambda sb: sb[0])
    if refine_top is None:
        chosen = splits
    else:
        chosen = splits[:refine_splits]
    results = []
    for _, blocks in chosen:
        seqs, times = [], []
        for j, block in enumerate(blocks):
            key = (j, tuple(block))
            if key not in solved:
                solved[key] = _solve_single(sub(j, block), refine_top, beam, max_steps, tol, cap,
                                            workers=workers)
            seq, t, _, _ = solved[key]
            seqs.append(tuple(block[i - 1] for i in seq))
            times.append(t)
        try:
            c = schedule_cost(config, seqs, times)
        except ConfigError:
            continue
        sched = VisitSchedule(config, seqs, times, c, T, {"blocks": blocks})
        if config.no_cross and sched.simulate(record_crossings=False).violations:
            continue
        results.append(sched)
    if not results:
        raise ConfigError("no feasible block assignment")
    best = min(results, key=lambda s: s.cost)
    if joint_sweeps:
        times, c = optimize_dwells(best.sequences, config, init=best.switch_times, tol=tol,
                                   max_sweeps=joint_sweeps)
        cand = VisitSchedule(config, best.sequences, times, c, T, dict(best.meta))
        if c < best.cost and not (config.no_cross and cand.simulate(record_crossings=False).violations):
            best = cand
    best.meta["mode"] = "blocks"
    best.meta["splits"] = len(splits)
    return best


# --------------------------------------------------------------------------- periodic extension


def extend_periodic(schedule: VisitSchedule, horizon: float, tol: float = 0.5) -> VisitSchedule:
    """Repeat a window schedule until ``horizon`` and re-simulate the full run.

    Each agent's last visit is matched with the earliest earlier visit to the
    same place (within ``tol``); the visits after that match form the cycle that
    is repeated, the closing visit taking the matched visit's dwell.  When the
    agent ends where it started, the whole window is the cycle.  Uncertainty
    is not assumed periodic: the reported cost comes from a fresh simulation.
    """
    W = schedule.window
    T = float(horizon)
    base = schedule.config
    full = base.with_horizon(T)
    if abs(T - W) <= 1e-12 * max(1.0, T):
        c = schedule_cost(full, schedule.sequences, schedule.switch_times)
        return VisitSchedule(full, schedule.sequences, schedule.switch_times, c, T, dict(schedule.meta))
    if T < W:
        raise ValueError("horizon shorter than the schedule window")
    xs = base.x
    seqs, times = [], []
    for j, seq in enumerate(schedule.sequences):
        if not seq:
            raise AperiodicScheduleError(f"agent {j + 1} has no visits")
        travel = schedule.travel(j)
        dwell = schedule.dwell(j)
        pos = [float(base.agents[j].s0)] + [float(xs[i - 1]) for i in seq]
        K = len(seq)
        end = pos[-1]
        match = next((k for k in range(0, K) if abs(pos[k] - end) <= tol), None)
        if match is None:
            raise AperiodicScheduleError(
                f"agent {j + 1} ends at {end:g}, more than {tol:g} from every earlier position")
        if match == 0:
            cyc = list(range(K))
            cyc_dwell = dwell.copy()
        else:
            cyc = list(range(match, K))
            cyc_dwell = dwell[match:].copy()
            cyc_dwell[-1] = dwell[match - 1]
        cyc_travel = np.array([abs(float(xs[seq[k] - 1]) - pos[k]) for k in cyc])
        if match == 0:
            # first leg of each repeat starts from the closing target, not s0
            cyc_travel[0] = abs(float(xs[seq[0] - 1]) - end)
        period = float(np.sum(cyc_travel + cyc_dwell))
        if period <= 0:
            raise AperiodicScheduleError(f"agent {j + 1}: cycle has zero duration")
        out_seq = list(seq)
        out_t = list(schedule.switch_times[j])
        d_last = dwell[match - 1] if match > 0 else dwell[-1]
        t = out_t[-1] + travel[-1] + d_last
        n = 0
        while t < T - 1e-12 * T:
            k = cyc[n % len(cyc)]
            out_seq.append(seq[k])
            out_t.append(t)
            t += cyc_travel[n % len(cyc)] + cyc_dwell[n % len(cyc)]
            n += 1
        # drop visits that cannot be reached before the horizon
        while len(out_seq) > 1 and out_t[-1] + abs(float(xs[out_seq[-1] - 1]) - float(xs[out_seq[-2] - 1])) > T:
            out_seq.pop()
            out_t.pop()
        seqs.append(tuple(out_seq))
        times.append(np.array(out_t))
    c = schedule_cost(full, seqs, times)
    meta = dict(schedule.meta, extended_from=W)
    return VisitSchedule(full, seqs, times, c, T, meta)


# --------------------------------------------------------------------------- MIP export


def export_mip(config: MissionConfig, steps: int | None = None, horizon: float | None = None) -> str:
    """Assignment formulation in CPLEX LP text format.

    Binary ``a_j_i_k`` assigns agent ``j`` to target ``i`` at step ``k``;
    ``y_j_i_l_k`` linearises consecutive pairs so travel time is linear; ``d_j_k``
    are dwell times.  The uncertainty integral is not linear in these variables,
    so the exported objective is the total travel time; the file is meant for
    feasibility studies and bounds with external solvers.
    """
    T = config.horizon if horizon is None else float(horizon)
    K = steps or default_max_steps(config, T)
    xs = config.x
    M, N = config.M, config.N
    lines = ["\\ visit assignment model: agents %d, targets %d, steps %d, horizon %g" % (N, M, K, T),
             "\\ true objective (average uncertainty) is evaluated by simulation", "Minimize"]
    obj = []
    for j in range(N):
        s0 = float(config.agents[j].s0)
        for i in range(M):
            obj.append(f"{abs(xs[i] - s0):.12g} a_{j + 1}_{i + 1}_1")
        for k in range(2, K + 1):
            for i in range(M):
                for l in range(M):
                    if i != l:
                        obj.append(f"{abs(xs[i] - xs[l]):.12g} y_{j + 1}_{i + 1}_{l + 1}_{k}")
    lines.append(" obj: " + " + ".join(obj))
    lines.append("Subject To")
    n = 0

    def add(expr):
        nonlocal n
        n += 1
        lines.append(f" c{n}: {expr}")

    for j in range(1, N + 1):
        for k in range(1, K + 1):
            add(" + ".join(f"a_{j}_{i}_{k}" for i in range(1, M + 1)) + " = 1")
        for k in range(2, K + 1):
            for i in range(1, M + 1):
                add(f"a_{j}_{i}_{k - 1} + a_{j}_{i}_{k} <= 1")
                for l in range(1, M + 1):
                    if i != l:
                        add(f"y_{j}_{i}_{l}_{k} - a_{j}_{i}_{k - 1} - a_{j}_{l}_{k} >= -1")
        s0 = float(config.agents[j - 1].s0)
        budget = [f"{abs(xs[i - 1] - s0):.12g} a_{j}_{i}_1" for i in range(1, M + 1)]
        for k in range(2, K + 1):
            for i in range(1, M + 1):
                for l in range(1, M + 1):
                    if i != l:
                        budget.append(f"{abs(xs[i - 1] - xs[l - 1]):.12g} y_{j}_{i}_{l}_{k}")
        budget += [f"d_{j}_{k}" for k in range(1, K + 1)]
        add(" + ".join(budget) + f" <= {T:.12g}")
    lines.append("Bounds")
    for j in range(1, N + 1):
        for k in range(1, K + 1):
            lines.append(f" d_{j}_{k} >= 0")
            for i in range(1, M + 1):
                for l in range(1, M + 1):
                    if i != l and k > 1:
                        lines.append(f" 0 <= y_{j}_{i}_{l}_{k} <= 1")
    lines.append("Binary")
    lines.append(" " + " ".join(f"a_{j}_{i}_{k}" for j in range(1, N + 1)
                                for i in range(1, M + 1) for k in range(1, K + 1)))
    lines.append("End")
    return "\n".join(lines) + "\n"
