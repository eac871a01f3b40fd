"""Trajectory programs and exact event-driven simulation of the hybrid system.

Agents move at unit speed between switching points and dwell at them.  Between
breakpoints (control switches, sensing-range crossings, inflow changes) every
detection probability is affine in time, so each ``dR_i/dt`` is a polynomial and
the uncertainties are integrated in closed form.  Zero crossings of ``R_i`` and
boundary exits are found by root bracketing followed by bisection.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import _poly
from ._poly import locate_event  # noqa: F401  (re-exported)
from .model import DETERMINISTIC, ConfigError, MissionConfig, UncertaintyRate
from .stochastic import inflow_table

R_EVENTS = ("r_zero", "r_leave")
CONTROL_EVENTS = ("arrive", "depart")


@dataclass(frozen=True)
class TrajectoryParams:
    """Switching points ``theta`` and dwell times ``omega``, both shaped (N, Gamma).

    Row ``j`` belongs to agent ``j``; agent ``j`` dwells ``omega[j, l]`` after
    reaching ``theta[j, l]``.  Consecutive switching points carry no ordering
    constraint.
    """

    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        th = np.atleast_2d(np.asarray(self.theta, dtype=float))
        om = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if th.shape != om.shape:
            raise ConfigError(f"theta {th.shape} and omega {om.shape} must have equal shape")
        th.setflags(write=False)
        om.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "omega", om)

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def gamma(self) -> int:
        return self.theta.shape[1]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.omega.ravel()])

    @classmethod
    def from_vector(cls, v, N: int, gamma: int) -> "TrajectoryParams":
        v = np.asarray(v, dtype=float)
        n = N * gamma
        return cls(v[:n].reshape(N, gamma), v[n:].reshape(N, gamma))

    def validate(self, config: MissionConfig, bounds=None, tol=1e-9) -> None:
        if self.N != config.N:
            raise ConfigError(f"params for {self.N} agents, config has {config.N}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.omega))):
            raise ConfigError("non-finite trajectory parameters")
        a, b = bounds if bounds is not None else config.bounds
        if np.any(self.theta < a - tol) or np.any(self.theta > b + tol):
            raise ConfigError(f"switching points must lie in [{a}, {b}]")
        if np.any(self.omega < -tol):
            raise ConfigError("dwell times must be non-negative")


def default_gamma(config: MissionConfig, cap: int = 200) -> int:
    """Number of switching points needed to keep moving for the whole horizon."""
    gaps = np.diff(config.x)
    g = float(gaps.min()) if gaps.size else config.length
    return int(min(cap, max(1, math.ceil(config.horizon / g))))


@dataclass(frozen=True)
class Phase:
    kind: str          # "travel" | "dwell" | "hold"
    start: float
    end: float
    pos: float         # position at ``start``
    u: int             # control on the phase
    index: int         # 0-based switching-point index the phase belongs to

    def position(self, t: float) -> float:
        return self.pos + self.u * (t - self.start)


@dataclass(frozen=True)
class ControlProgram:
    """Per-agent phase lists: travel(0), dwell(0), travel(1), dwell(1), ..., hold."""

    phases: tuple
    horizon: float
    params: TrajectoryParams
    s0: tuple

    def agent(self, j: int):
        return self.phases[j]


def compile_program(params: TrajectoryParams, config: MissionConfig, bounds=None,
                    check: bool = True) -> ControlProgram:
    """Turn ``(theta, omega)`` into timed travel/dwell phases truncated at the horizon."""
    if check:
        params.validate(config, bounds)
    T = config.horizon
    theta = np.clip(params.theta, *(bounds or config.bounds)) if check else params.theta
    omega = np.maximum(params.omega, 0.0)
    out = []
    for j, agent in enumerate(config.agents):
        phases = []
        t, pos = 0.0, float(agent.s0)
        done = False
        for l in range(params.gamma):
            target = float(theta[j, l])
            dist = target - pos
            u = (dist > 0) - (dist < 0)
            end = t + abs(dist)
            if end >= T:
                phases.append(Phase("travel", t, T, pos, u, l))
                done = True
                break
            phases.append(Phase("travel", t, end, pos, u, l))
            t, pos = end, target
            end = t + float(omega[j, l])
            if end >= T:
                phases.append(Phase("dwell", t, T, pos, 0, l))
                done = True
                break
            phases.append(Phase("dwell", t, end, pos, 0, l))
            t = end
        if not done and t < T:
            phases.append(Phase("hold", t, T, pos, 0, params.gamma - 1))
        out.append(tuple(phases))
    return ControlProgram(tuple(out), T, params, tuple(float(a.s0) for a in config.agents))


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    target: int | None = None
    agent: int | None = None
    index: int | None = None      # switching-point index for control events
    u_before: int | None = None
    u_after: int | None = None
    boundary: int = 0             # piece index the event precedes

    def as_dict(self) -> dict:
        d = {"t": self.t, "kind": self.kind}
        if self.target is not None:
            d["target"] = self.target + 1
        if self.agent is not None:
            d["agent"] = self.agent + 1
        return d


@dataclass
class SimTrace:
    """Piecewise record of one simulation run.

    Piece ``k`` spans ``[times[k], times[k+1]]`` with constant controls ``u[k]``
    and constant sensing geometry; ``held[k, i]`` marks a target pinned at zero
    uncertainty.  ``rdot[k][i]`` holds the ascending coefficients of
    ``dR_i/dt`` in the local time offset.
    """

    config: MissionConfig
    program: ControlProgram
    times: np.ndarray
    s: np.ndarray
    u: np.ndarray
    R: np.ndarray
    held: np.ndarray
    A: np.ndarray
    rdot: list
    events: list
    J1: float
    inflow: np.ndarray
    service: np.ndarray
    emptied: np.ndarray
    violations: list = field(default_factory=list)
    coincidences: list = field(default_factory=list)

    @property
    def params(self) -> TrajectoryParams:
        return self.program.params

    @property
    def n_pieces(self) -> int:
        return len(self.times) - 1

    @property
    def T(self) -> float:
        return self.config.horizon

    def event_times(self) -> np.ndarray:
        return np.array([e.t for e in self.events])

    def sample(self, t):
        """Positions, uncertainties and controls at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        N, M = self.config.N, self.config.M
        if self.n_pieces == 0:
            return (np.tile(self.s[:1], (t.size, 1)), np.tile(self.R[:1], (t.size, 1)),
                    np.zeros((t.size, N), dtype=int))
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.n_pieces - 1)
        tau = t - self.times[k]
        s = self.s[k] + self.u[k] * tau[:, None]
        R = np.empty((t.size, M))
        for n, (kk, tt) in enumerate(zip(k, tau)):
            for i in range(M):
                if self.held[kk, i]:
                    R[n, i] = 0.0
                else:
                    R[n, i] = self.R[kk, i] + _poly.val(_poly.integ(self.rdot[kk][i]), tt)
        return s, np.maximum(R, 0.0), self.u[k].copy()

    def cumulative(self, t: float) -> np.ndarray:
        """Per-target ``∫_0^t R_i dt`` (exact), for ``0 <= t <= T``."""
        M = self.config.M
        out = np.zeros(M)
        for k in range(self.n_pieces):
            t0 = self.times[k]
            if t0 >= t:
                break
            span = min(self.times[k + 1], t) - t0
            for i in range(M):
                if not self.held[k, i]:
                    out[i] += self.R[k, i] * span + _poly.val(_poly.integ(_poly.integ(self.rdot[k][i])), span)
        return out

    def dense(self, h: float | None = None):
        """Samples on a uniform grid of spacing ``h`` (default ``1e-3 T``)."""
        T = self.T
        if T == 0:
            return self.sample(np.array([0.0])) + (np.array([0.0]),)
        h = h or 1e-3 * T
        n = int(round(T / h))
        grid = np.linspace(0.0, T, n + 1)
        return self.sample(grid) + (grid,)

    def stability(self) -> dict:
        """Queue-stability diagnostics: integrated inflow vs service per target."""
        return {
            "inflow": self.inflow.tolist(),
            "service": self.service.tolist(),
            "stable": (self.service > self.inflow).tolist(),
            "emptied": self.emptied.tolist(),
        }


def _crossings(phase: Phase, levels, t_lo: float, t_hi: float):
    if phase.u == 0:
        return []
    out = []
    for c in levels:
        tc = phase.start + (c - phase.pos) * phase.u
        if t_lo < tc < t_hi:
            out.append(tc)
    return out


def _merge(times, tol):
    times = sorted(times)
    out = []
    for t in times:
        if not out or t - out[-1] > tol:
            out.append(t)
    return out


def simulate(program: ControlProgram, config: MissionConfig,
             rates: UncertaintyRate = DETERMINISTIC, record_crossings: bool = True) -> SimTrace:
    """Integrate agents and target uncertainties exactly under ``program``."""
    T = float(config.horizon)
    N, M = config.N, config.M
    xs = config.x.tolist()
    Bs = config.B.tolist()
    rs = config.r.tolist()
    R = config.R0.astype(float).tolist()
    edges, table = inflow_table(rates, config)
    tol = 1e-12 * max(1.0, T)

    if T == 0:
        s0 = np.array(program.s0, dtype=float)
        return SimTrace(config, program, np.array([0.0]), s0[None, :], np.zeros((0, N), dtype=int),
                        np.array([R]), np.zeros((0, M), dtype=bool), np.zeros((0, M)), [],
                        [Event(0.0, "horizon")], 0.0, np.zeros(M), np.zeros(M),
                        np.array([r == 0 for r in R]))

    # breakpoints: control switches, sensing geometry changes, inflow changes
    bps = set(edges[1:-1].tolist())
    bps.add(T)
    ctrl = []   # (t, agent, order, phase_prev, phase_next)
    starts = []
    ends = []
    for j, phases in enumerate(program.phases):
        starts.append([p.start for p in phases])
        ends.append([p.end for p in phases])
        levels = [c for x in xs for c in (x - rs[j], x, x + rs[j])]
        for n, ph in enumerate(phases):
            if ph.end < T:
                bps.add(ph.end)
            bps.update(_crossings(ph, levels, ph.start, min(ph.end, T)))
            if n > 0:
                ctrl.append((ph.start, j, n, phases[n - 1], ph))
    bps = [b for b in _merge(bps, tol) if b > 0.0]
    bps[-1] = T
    ctrl.sort(key=lambda c: (c[0], c[1], c[2]))

    times = [0.0]
    s_rec, u_rec, R_rec, held_rec, A_rec, rdot_rec = [], [], [R[:]], [], [], []
    events: list[Event] = []
    inflow = [0.0] * M
    service = [0.0] * M
    emptied = [r == 0.0 for r in R]
    held = [False] * M
    ci = 0
    t = 0.0

    def agent_state(j, t):
        ph_idx = bisect.bisect_right(ends[j], t)
        phases = program.phases[j]
        while ph_idx < len(phases) and phases[ph_idx].end <= phases[ph_idx].start:
            ph_idx += 1
        if ph_idx >= len(phases):
            ph = phases[-1]
            return ph.position(min(t, ph.end)), 0
        ph = phases[ph_idx]
        return ph.position(t), ph.u

    def rdot_polys(s, u, span, Avec):
        out = []
        for i in range(M):
            miss = None
            x = xs[i]
            for j in range(N):
                d = s[j] - x
                mid = d + u[j] * 0.5 * span
                if abs(mid) < rs[j]:
                    sg = 1.0 if mid > 0 else -1.0 if mid < 0 else 0.0
                    fac = [sg * d / rs[j], sg * u[j] / rs[j]] if sg != 0.0 else [abs(d) / rs[j], 0.0]
                    miss = fac if miss is None else _poly.mul(miss, fac)
            if miss is None:
                out.append([Avec[i]])
            else:
                poly = [Bs[i] * c for c in miss]
                poly[0] += Avec[i] - Bs[i]
                out.append(poly)
        return out

    def emit_control(upto):
        nonlocal ci
        while ci < len(ctrl) and ctrl[ci][0] <= upto + tol:
            tc, j, _, prev, nxt = ctrl[ci]
            kind = "arrive" if prev.kind == "travel" else "depart"
            events.append(Event(tc, kind, agent=j, index=prev.index,
                                u_before=prev.u, u_after=nxt.u, boundary=len(times) - 1))
            ci += 1

    emit_control(0.0)
    win = 0
    for bp in bps:
        while t < bp - tol:
            span = bp - t
            while win + 1 < len(edges) - 1 and edges[win + 1] <= t + tol:
                win += 1
            Avec = table[min(win, len(table) - 1)].tolist()
            su = [agent_state(j, t) for j in range(N)]
            s = [p for p, _ in su]
            u = [v for _, v in su]
            polys = rdot_polys(s, u, span, Avec)
            boundary = len(times) - 1
            # mode switches due right at the start of this segment
            for i in range(M):
                if not held[i] and R[i] <= 0.0:
                    if _poly.first_hit(0.0, polys[i], span) == 0.0:
                        held[i], R[i], emptied[i] = True, 0.0, True
                        events.append(Event(t, "r_zero", target=i, boundary=boundary))
                elif held[i] and _poly.first_rise(polys[i], span) == 0.0:
                    held[i] = False
                    events.append(Event(t, "r_leave", target=i, boundary=boundary))
            cand, which = span, []
            for i in range(M):
                if held[i]:
                    tr, kind = _poly.first_rise(polys[i], span), "r_leave"
                else:
                    tr, kind = _poly.first_hit(R[i], polys[i], span), "r_zero"
                if tr is None or tr <= 0.0:
                    continue
                if tr < cand - tol:
                    cand, which = tr, [(i, kind)]
                elif abs(tr - cand) <= tol:
                    which.append((i, kind))
            t_new = bp if cand >= span - tol else t + cand
            cand = t_new - t
            s_rec.append(s)
            u_rec.append(u)
            held_rec.append(held[:])
            A_rec.append(Avec)
            rdot_rec.append(polys)
            for i in range(M):
                integ = _poly.val(_poly.integ(polys[i]), cand)
                inflow[i] += Avec[i] * cand
                service[i] += Avec[i] * cand - integ
                if not held[i]:
                    R[i] = max(R[i] + integ, 0.0)
            times.append(t_new)
            for i, kind in sorted(which):
                if kind == "r_zero":
                    R[i], held[i], emptied[i] = 0.0, True, True
                else:
                    held[i] = False
                events.append(Event(t_new, kind, target=i, boundary=len(times) - 1))
            R_rec.append(R[:])
            t = t_new
        emit_control(bp)
    events.append(Event(T, "horizon", boundary=len(times) - 1))
    coincidences = _coincidences(events, tol)
    coincidences = sorted(set(coincidences + _boundary_rests(times, s_rec, u_rec, xs, rs, tol)))
    if record_crossings:
        events = _with_crossings(events, program, config, np.asarray(times))

    times_a = np.array(times)
    J1 = 0.0
    for k in range(len(rdot_rec)):
        span = times_a[k + 1] - times_a[k]
        for i in range(M):
            if not held_rec[k][i]:
                J1 += R_rec[k][i] * span + _poly.val(_poly.integ(_poly.integ(rdot_rec[k][i])), span)
    J1 /= T
    s_final = [agent_state(j, T)[0] for j in range(N)]
    s_arr = np.array(s_rec + [s_final], dtype=float)
    trace = SimTrace(
        config=config, program=program, times=times_a, s=s_arr,
        u=np.array(u_rec, dtype=int).reshape(-1, N), R=np.array(R_rec, dtype=float),
        held=np.array(held_rec, dtype=bool).reshape(-1, M), A=np.array(A_rec).reshape(-1, M),
        rdot=rdot_rec, events=events, J1=J1, inflow=np.array(inflow), service=np.array(service),
        emptied=np.array(emptied), coincidences=coincidences,
    )
    if config.no_cross:
        trace.violations = no_cross_violations(trace)
    return trace


def _with_crossings(events, program, config, times):
    """Add sensing-range entry/exit events (diagnostic only; IPA ignores them)."""
    extra = []
    xs = config.x
    T = config.horizon
    for j, phases in enumerate(program.phases):
        r = config.agents[j].r
        for ph in phases:
            if ph.u == 0:
                continue
            for i, x in enumerate(xs):
                for c, kind in ((x - r, None), (x + r, None)):
                    tc = ph.start + (c - ph.pos) * ph.u
                    if ph.start < tc < min(ph.end, T):
                        entering = (x - ph.position(tc + 1e-9)) ** 2 < r * r
                        k = int(np.searchsorted(times, tc, side="left"))
                        extra.append(Event(tc, "enter" if entering else "exit",
                                           target=i, agent=j, boundary=k))
    rank = {"r_zero": 0, "r_leave": 0, "arrive": 1, "depart": 1, "enter": 2, "exit": 2, "horizon": 3}
    merged = events + extra
    # stable sort keeps same-agent control events in phase order
    merged.sort(key=lambda e: (e.boundary, rank[e.kind],
                               -1 if e.target is None else e.target,
                               -1 if e.agent is None else e.agent))
    return merged


def _coincidences(events, tol):
    """Times where distinct dynamics-altering events coincide (nondifferentiable points)."""
    out = []
    relevant = [e for e in events if e.kind in R_EVENTS + CONTROL_EVENTS]
    k = 0
    while k < len(relevant):
        grp = [relevant[k]]
        while k + len(grp) < len(relevant) and relevant[k + len(grp)].t - grp[0].t <= tol:
            grp.append(relevant[k + len(grp)])
        keys = {("R", e.target) if e.kind in R_EVENTS else ("U", e.agent) for e in grp}
        if len(keys) > 1:
            out.append(grp[0].t)
        k += len(grp)
    return out


def _boundary_rests(times, s_rec, u_rec, xs, rs, tol):
    """Starts of rests spent exactly on a sensing boundary.

    Moving the rest point inward starts sensing at first order and moving it
    outward changes nothing, so the cost has a kink there.
    """
    out = []
    for k, (s, u) in enumerate(zip(s_rec, u_rec)):
        if times[k + 1] - times[k] <= tol:
            continue
        for j, (pos, v) in enumerate(zip(s, u)):
            if v == 0 and any(abs(abs(pos - x) - rs[j]) <= tol for x in xs):
                out.append(times[k])
                break
    return out


def no_cross_violations(trace: SimTrace, tol: float = 1e-9) -> list:
    """Times at which some agent is strictly ahead of its right neighbour."""
    out = []
    s = trace.s
    for k in range(s.shape[0]):
        gaps = s[k, :-1] - s[k, 1:]
        for j in np.nonzero(gaps > tol)[0]:
            out.append({"t": float(trace.times[min(k, len(trace.times) - 1)]), "agent": int(j) + 1,
                        "gap": float(gaps[j])})
    return out


def run(params: TrajectoryParams, config: MissionConfig,
        rates: UncertaintyRate = DETERMINISTIC, bounds=None, **kw) -> SimTrace:
    """Compile and simulate in one call."""
    return simulate(compile_program(params, config, bounds), config, rates, **kw)


def cost(params: TrajectoryParams, config: MissionConfig,
         rates: UncertaintyRate = DETERMINISTIC, bounds=None) -> float:
    return run(params, config, rates, bounds, record_crossings=False).J1
