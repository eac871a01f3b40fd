"""Event-driven infinitesimal perturbation analysis along a recorded trace.

Position sensitivities only change at control events (arrival at / departure
from a switching point).  Uncertainty sensitivities evolve between events as

    d/dt dR_i = -B_i * sum_j (dp_ij/ds_j) * prod_{d != j} (1 - p_id) * ds_j

and are reset to zero when ``R_i`` is pinned at the boundary.  Nothing here
reads the inflow rates ``A_i``; they only act through the recorded event times.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _poly
from .hybrid_sim import CONTROL_EVENTS, R_EVENTS, Event, SimTrace


@dataclass
class IpaState:
    """Running derivatives; columns are ``[theta_0..theta_{G-1}, omega_0..omega_{G-1}]``.

    ``ds[j]`` is agent ``j``'s sensitivity to its own parameters, ``dR[i, j]`` the
    sensitivity of target ``i`` to agent ``j``'s parameters, ``grad`` the running
    integral ``∫ sum_i dR_i dt`` (not yet divided by the horizon).
    """

    ds: np.ndarray
    dR: np.ndarray
    grad: np.ndarray

    @classmethod
    def zeros(cls, M: int, N: int, gamma: int) -> "IpaState":
        return cls(np.zeros((N, 2 * gamma)), np.zeros((M, N, 2 * gamma)), np.zeros((N, 2 * gamma)))

    @property
    def gamma(self) -> int:
        return self.ds.shape[1] // 2

    @property
    def ds_dtheta(self):
        return self.ds[:, :self.gamma]

    @property
    def ds_domega(self):
        return self.ds[:, self.gamma:]

    @property
    def dR_dtheta(self):
        return self.dR[:, :, :self.gamma]

    @property
    def dR_domega(self):
        return self.dR[:, :, self.gamma:]

    def copy(self) -> "IpaState":
        return IpaState(self.ds.copy(), self.dR.copy(), self.grad.copy())


def _sgn(v: float) -> int:
    return int(v > 0) - int(v < 0)


def switch_case(u_before: int, u_after: int, kind: str | None = None) -> int:
    """Classify a control transition as Case 1 (stop), 2 (start) or 3 (reverse)."""
    if kind == "arrive":
        return 1
    if kind == "depart":
        return 2
    if u_before != 0 and u_after == 0:
        return 1
    if u_before == 0 and u_after != 0:
        return 2
    if u_before != 0 and u_after == -u_before:
        return 3
    raise ValueError(f"unknown control transition {u_before} -> {u_after}")


def leg_signs(theta: np.ndarray, s0: float) -> np.ndarray:
    """``sgn(theta_l - theta_{l-1})`` for every leg, with the start as ``theta_{-1}``."""
    prev = np.concatenate([[s0], theta[:-1]])
    return np.sign(theta - prev)


def apply_control_switch(state: IpaState, agent: int, xi: int, case: int,
                         theta: np.ndarray, s0: float, u_after: int = 0,
                         signs: np.ndarray | None = None) -> IpaState:
    """Jump rules for ``ds_j`` at a control event around switching point ``xi``.

    ``theta`` is agent ``agent``'s switching-point row and ``s0`` its start, which
    plays the role of the switching point before the first one.  ``signs`` may
    carry precomputed :func:`leg_signs`.
    """
    G = state.gamma
    row = state.ds[agent]
    if case == 1:
        row[:xi + 1] = 0.0
        row[xi] = 1.0
        row[G:G + xi + 1] = 0.0
    elif case == 2:
        u = u_after
        if u != 0:
            sg = leg_signs(np.asarray(theta, dtype=float), s0) if signs is None else signs
            row[:xi] -= u * (sg[:xi] - sg[1:xi + 1])
            row[xi] -= u * sg[xi]
        row[G:G + xi + 1] = -u
    elif case == 3:
        row[:xi] = -row[:xi]
        row[xi] = 2.0
        row[G:G + xi + 1] = -u_after
    else:
        raise ValueError(f"unknown switch case {case!r}")
    return state


def apply_uncertainty_switch(state: IpaState, event: Event) -> IpaState:
    """Reset ``dR_i`` when ``R_i`` becomes pinned at zero; carry it over otherwise."""
    if event.kind == "r_zero":
        state.dR[event.target] = 0.0
    elif event.kind != "r_leave":
        raise ValueError(f"not an uncertainty event: {event.kind}")
    return state


@dataclass
class PieceSens:
    """Sensitivity kernels on one piece.

    ``terms[i]`` lists ``(j, coef, g1, g2)``: within the piece
    ``dR_i(tau) = dR_i(0) - coef * g1(tau) * ds_j`` (row ``j`` only), and
    ``g2`` is the antiderivative of ``g1``.
    """

    k: int
    t0: float
    span: float
    held: np.ndarray
    terms: list


def _piece_terms(x, B, r, s, u, held, span):
    M, N = len(x), len(s)
    # per (i, d): factor (1 - p_id) as affine poly, or None when out of range
    facs = [[None] * N for _ in range(M)]
    slopes = [[0.0] * N for _ in range(M)]
    for i in range(M):
        for d in range(N):
            dd = s[d] - x[i]
            mid = dd + u[d] * 0.5 * span
            if abs(mid) < r[d]:
                sg = _sgn(mid)
                facs[i][d] = [sg * dd / r[d], sg * u[d] / r[d]] if sg else [abs(dd) / r[d], 0.0]
                slopes[i][d] = -sg / r[d]
    terms = []
    for i in range(M):
        row = []
        if not held[i]:
            for j in range(N):
                dp = slopes[i][j]
                if dp == 0.0:
                    continue
                other = [1.0]
                for d in range(N):
                    if d != j and facs[i][d] is not None:
                        other = _poly.mul(other, facs[i][d])
                g1 = _poly.integ(other)
                row.append((j, B[i] * dp, g1, _poly.integ(g1)))
        terms.append(row)
    return terms


def walk(trace: SimTrace, B=None, r=None, x=None, merge_case3: bool = True):
    """Iterate ``(state, piece)`` over the trace; ``state`` is at the piece start.

    The state object is advanced in place after each yield, so consumers must
    copy it if they keep it.  ``B``, ``r`` and ``x`` default to the trace's
    configuration; the inflow rates are never consulted.
    """
    cfg = trace.config
    B = np.asarray(cfg.B if B is None else B, dtype=float).tolist()
    r = np.asarray(cfg.r if r is None else r, dtype=float).tolist()
    x = np.asarray(cfg.x if x is None else x, dtype=float).tolist()
    params = trace.params
    M, N, G = len(x), params.N, params.gamma
    s0 = trace.program.s0
    state = IpaState.zeros(M, N, G)
    signs = [leg_signs(params.theta[j], s0[j]) for j in range(N)]
    by_boundary: dict[int, list[Event]] = {}
    for e in trace.events:
        if e.kind in R_EVENTS or e.kind in CONTROL_EVENTS:
            by_boundary.setdefault(e.boundary, []).append(e)

    def apply_events(evs):
        n = 0
        while n < len(evs):
            e = evs[n]
            if e.kind in R_EVENTS:
                apply_uncertainty_switch(state, e)
                n += 1
                continue
            theta = params.theta[e.agent]
            nxt = evs[n + 1] if n + 1 < len(evs) else None
            if (merge_case3 and e.kind == "arrive" and nxt is not None and nxt.kind == "depart"
                    and nxt.agent == e.agent and nxt.index == e.index
                    and e.u_before != 0 and nxt.u_after == -e.u_before):
                apply_control_switch(state, e.agent, e.index, 3, theta, s0[e.agent], nxt.u_after)
                n += 2
                continue
            case = switch_case(e.u_before, e.u_after, e.kind)
            apply_control_switch(state, e.agent, e.index, case, theta, s0[e.agent], e.u_after,
                                 signs[e.agent])
            n += 1

    times = trace.times
    for k in range(trace.n_pieces):
        apply_events(by_boundary.get(k, ()))
        span = float(times[k + 1] - times[k])
        held = trace.held[k]
        terms = _piece_terms(x, B, r, trace.s[k].tolist(), trace.u[k].tolist(), held, span)
        piece = PieceSens(k, float(times[k]), span, held, terms)
        yield state, piece
        propagate_interval(state, piece)
    apply_events(by_boundary.get(trace.n_pieces, ()))


def propagate_interval(state: IpaState, piece: PieceSens) -> IpaState:
    """Advance ``dR`` across one piece and add its integral to ``grad``.

    A piece is the open interval between two consecutive trace boundaries, so
    a negative or non-finite span means the caller stitched pieces across an
    event and is rejected.
    """
    span = piece.span
    if not np.isfinite(span) or span < 0:
        raise ValueError(f"piece {piece.k}: span {span!r} does not lie between consecutive events")
    live = ~np.asarray(piece.held)
    if span > 0:
        state.grad += span * state.dR[live].sum(axis=0)
    for i, row in enumerate(piece.terms):
        for j, coef, g1, g2 in row:
            dsj = state.ds[j]
            state.grad[j] -= coef * _poly.val(g2, span) * dsj
            state.dR[i, j] -= coef * _poly.val(g1, span) * dsj
    return state


def ipa_states(trace: SimTrace, **kw) -> list[IpaState]:
    """Snapshot of the derivative state at the start of every piece."""
    return [st.copy() for st, _ in walk(trace, **kw)]


def accumulate_gradient(trace: SimTrace, states=None) -> np.ndarray:
    """Stacked ``[dJ1/dtheta, dJ1/domega]`` (each flattened agent-major).

    With ``states`` given (one per piece, as from :func:`ipa_states`) the piece
    integrals are rebuilt from those snapshots; otherwise the trace is walked.
    """
    T = trace.T
    if T == 0:
        G = trace.params.gamma
        return np.zeros(2 * trace.params.N * G)
    if states is None:
        return gradient_from_trace_only(trace, trace.config.B, trace.config.r)
    states = list(states)
    if len(states) != trace.n_pieces:
        raise ValueError(f"{len(states)} states for {trace.n_pieces} pieces")
    total = np.zeros_like(states[0].grad)
    for st, (_, piece) in zip(states, walk(trace)):
        probe = IpaState(st.ds.copy(), st.dR.copy(), np.zeros_like(st.grad))
        propagate_interval(probe, piece)
        total += probe.grad
    return _stack(total / T)


def _stack(grad: np.ndarray) -> np.ndarray:
    G = grad.shape[1] // 2
    return np.concatenate([grad[:, :G].ravel(), grad[:, G:].ravel()])


def gradient(trace: SimTrace) -> np.ndarray:
    """``∇J1`` for the trace's own parameters."""
    return accumulate_gradient(trace)


def gradient_report(trace: SimTrace) -> dict:
    """Gradient plus the event coincidences at which it may not exist.

    Coincident events are still processed in the simulator's order; the times
    are listed so callers can decide whether to trust the value.
    """
    return {"gradient": gradient(trace),
            "coincidences": list(trace.coincidences),
            "differentiable": not trace.coincidences}


def gradient_from_trace_only(trace: SimTrace, B, r, x=None) -> np.ndarray:
    """``∇J1`` computed from recorded events, positions, controls, ``B`` and ``r`` only."""
    T = trace.T
    st = None
    for st, _ in walk(trace, B=B, r=r, x=x):
        pass
    if st is None:
        return np.zeros(2 * trace.params.N * trace.params.gamma)
    return _stack(st.grad / T)
