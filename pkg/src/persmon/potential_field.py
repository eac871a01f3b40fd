"""Reward-density potential field used to excite events when none occur.

The field spreads each target's uncertainty over the span between the outer
targets, ``V(w) = sum_i alpha_i R_i / max(|w - x_i|, r_min)``, and charges the
agents their distance to it, ``J2 = ∫ Q(w, s) V(w) dw`` with ``Q = sum_j |s_j - w|``.
Because ``Q`` moves with the agents even when nothing is sensed, the gradient of
``J2`` never vanishes while some ``R_i > 0``.

The spatial integral uses the composite trapezoid rule.  For a fixed grid,
``∫ |s - w| / d_i(w) dw`` is piecewise linear in ``s``; point values come from
prefix sums and time integrals along a piece are taken exactly node by node,
so the gradient is the exact derivative of the discretised objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial

from . import _poly
from .ipa import walk
from .model import ConfigError, MissionConfig

DECAY_MODES = ("per-iteration", "per-mission-time")


@dataclass(frozen=True)
class PotentialConfig:
    """``beta`` is per iteration or per time unit depending on ``decay_mode``."""

    beta: float = 0.05
    decay_mode: str = "per-iteration"
    grid: int = 500
    max_step: float = 1.0   # longest sub-interval for the mission-time decay
    order: int = 6          # degree of the decay interpolant on each sub-interval

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("excitation beta must be positive")
        if self.decay_mode not in DECAY_MODES:
            raise ConfigError(f"decay_mode must be one of {DECAY_MODES}")
        if self.grid < 50:
            raise ConfigError("excitation grid needs at least 50 points")
        if not self.max_step > 0 or self.order < 1:
            raise ConfigError("bad time quadrature settings")

    def weight(self, iteration: int = 0) -> float:
        """Constant multiplier of ``J2`` at a given descent iteration."""
        if self.decay_mode == "per-iteration":
            return math.exp(-self.beta * iteration)
        return 1.0


def _check_support(w, lo, hi):
    w = np.asarray(w, dtype=float)
    if np.any(w < lo - 1e-12) or np.any(w > hi + 1e-12):
        raise ValueError(f"field point outside support [{lo}, {hi}]")
    return w


def reward_density(w, R, x, r_min: float, alpha=None):
    """``V(w) = sum_i alpha_i R_i / max(|w - x_i|, r_min)`` on ``[x_1, x_M]``."""
    x = np.asarray(x, dtype=float)
    R = np.asarray(R, dtype=float)
    alpha = np.ones_like(R) if alpha is None else np.asarray(alpha, dtype=float)
    w = _check_support(w, x[0], x[-1])
    d = np.maximum(np.abs(np.subtract.outer(w, x)), r_min)
    out = (alpha * R / d).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def travel_cost(w, s):
    """``Q(w, s) = sum_j |s_j - w|``."""
    s = np.asarray(s, dtype=float)
    out = np.abs(np.subtract.outer(np.asarray(w, dtype=float), s)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


class Field:
    """Trapezoid discretisation of ``K_i(s) = ∫_B |s - w| / d_i(w) dw``."""

    def __init__(self, x, r_min: float, grid: int = 500, alpha=None):
        self.x = np.asarray(x, dtype=float)
        self.alpha = np.ones(len(self.x)) if alpha is None else np.asarray(alpha, dtype=float)
        self.w = np.linspace(self.x[0], self.x[-1], grid)
        wt = np.full(grid, self.w[1] - self.w[0])
        wt[[0, -1]] *= 0.5
        c = wt[None, :] / np.maximum(np.abs(self.w[None, :] - self.x[:, None]), r_min)
        self.coef = c
        self._C = np.concatenate([np.zeros((len(self.x), 1)), np.cumsum(c, axis=1)], axis=1)
        self._CW = np.concatenate([np.zeros((len(self.x), 1)), np.cumsum(c * self.w, axis=1)], axis=1)

    @classmethod
    def for_config(cls, config: MissionConfig, grid: int = 500) -> "Field":
        return cls(config.x, config.r_min, grid, config.alpha)

    def kernel(self, s):
        """``(K, dK/ds)`` for positions ``s``; both shaped ``(M,) + s.shape``."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.w, s)
        clo, cwlo = self._C[:, idx], self._CW[:, idx]
        ctot = self._C[:, -1].reshape((-1,) + (1,) * s.ndim)
        cwtot = self._CW[:, -1].reshape((-1,) + (1,) * s.ndim)
        slope = 2 * clo - ctot
        return s * slope - (2 * cwlo - cwtot), slope

    def j2(self, R, s) -> float:
        """Instantaneous ``J2 = ∫ Q V dw`` by the trapezoid rule."""
        K, _ = self.kernel(np.asarray(s, dtype=float))
        return float(np.sum(self.alpha * np.asarray(R, dtype=float) * K.sum(axis=1)))


def j2_instant(R, s, config: MissionConfig, grid: int = 500) -> float:
    return Field.for_config(config, grid).j2(R, s)


def _shift(poly, a):
    """Coefficients of ``q(tau + a)`` given those of ``q(tau)``."""
    if a == 0.0:
        return list(poly)
    return list(Polynomial(poly)(Polynomial([a, 1.0])).coef)


def _windows(pc: PotentialConfig, t0: float, span: float):
    """``(offset, length, weight poly)`` covering one piece.

    Per-iteration decay is a constant, handled by the caller.  Along mission
    time the piece is cut into sub-intervals of at most ``max_step`` and
    ``exp(-beta t)`` is replaced on each by its Chebyshev interpolant of degree
    ``order``, so every time integral stays a polynomial moment.
    """
    if pc.decay_mode == "per-iteration":
        return [(0.0, span, [1.0])]
    n = max(1, int(math.ceil(span / pc.max_step)))
    h = span / n
    local = Chebyshev.interpolate(lambda x: np.exp(-pc.beta * x), pc.order, domain=[0.0, h])
    base = list(local.convert(kind=Polynomial, domain=[0.0, h], window=[0.0, h]).coef)
    return [(m * h, h, [c * math.exp(-pc.beta * (t0 + m * h)) for c in base]) for m in range(n)]


def _pv(poly, t):
    return np.polyval(poly[::-1], t)


def _kernel_moments(field: Field, i: int, s: float, u: int, span: float, q):
    """Exact ``(∫ q K_i(s + u tau) dtau, ∫ q K_i'(s + u tau) dtau)`` over ``[0, span]``.

    ``q`` is a polynomial in local time.  Each trapezoid node contributes
    ``c_k ∫ q |s + u tau - w_k|``, which splits at the single crossing time.
    """
    c = field.coef[i]
    a = s - field.w
    Q0 = _poly.integ(q)
    Q0e = _poly.val(Q0, span)
    if u == 0:
        return float(np.dot(c, np.abs(a))) * Q0e, float(np.dot(c, np.sign(a))) * Q0e
    Q1 = _poly.integ(_poly.mul(q, [0.0, 1.0]))
    Q1e = _poly.val(Q1, span)
    ts = np.clip(-a / u, 0.0, span)
    q0s, q1s = _pv(Q0, ts), _pv(Q1, ts)
    before = a * q0s + u * q1s
    after = a * (Q0e - q0s) + u * (Q1e - q1s)
    val = u * float(np.dot(c, after - before))
    der = u * float(np.dot(c, (Q0e - q0s) - q0s))
    return val, der


def _R_poly(trace, k, i):
    if trace.held[k, i]:
        return None
    poly = _poly.integ(trace.rdot[k][i])
    poly[0] = float(trace.R[k, i])
    return poly


def j2_value(trace, pc: PotentialConfig = PotentialConfig(), iteration: int = 0,
             field: Field | None = None) -> float:
    """Decayed, horizon-averaged ``(1/T) ∫ m(t) J2(t) dt`` over the trace.

    Exact in time for the per-iteration decay; along mission time the decay
    factor is interpolated piecewise (relative error far below 1e-9).
    """
    T = trace.T
    if T == 0:
        return 0.0
    field = field or Field.for_config(trace.config, pc.grid)
    alpha = field.alpha
    total = 0.0
    for k in range(trace.n_pieces):
        t0 = trace.times[k]
        span = trace.times[k + 1] - t0
        if span <= 0:
            continue
        polys = [_R_poly(trace, k, i) for i in range(trace.config.M)]
        for off, h, m in _windows(pc, t0, span):
            for i, poly in enumerate(polys):
                if poly is None:
                    continue
                q = _poly.mul(_shift(poly, off), m)
                for j in range(trace.config.N):
                    s0 = float(trace.s[k, j] + trace.u[k, j] * off)
                    total += alpha[i] * _kernel_moments(field, i, s0, int(trace.u[k, j]), h, q)[0]
    return pc.weight(iteration) * total / T


def j2_gradient(trace, pc: PotentialConfig = PotentialConfig(), iteration: int = 0,
                field: Field | None = None) -> np.ndarray:
    """Gradient of :func:`j2_value`, stacked like the ``J1`` gradient.

    Product rule under the integral: the ``Q`` sensitivity (agents' own
    position derivatives) plus the ``V`` sensitivity (IPA derivatives of ``R``).
    """
    params = trace.params
    N, G = params.N, params.gamma
    M = trace.config.M
    T = trace.T
    if T == 0:
        return np.zeros(2 * N * G)
    field = field or Field.for_config(trace.config, pc.grid)
    alpha = field.alpha
    grad = np.zeros((N, 2 * G))
    for state, piece in walk(trace):
        k, span, t0 = piece.k, piece.span, piece.t0
        if span <= 0:
            continue
        s_k, u_k = trace.s[k], trace.u[k]
        polys = [_R_poly(trace, k, i) for i in range(M)]
        for off, h, m in _windows(pc, t0, span):
            starts = [float(s_k[j] + u_k[j] * off) for j in range(N)]
            a = np.zeros(M)
            for i in range(M):
                q = None if polys[i] is None else _poly.mul(_shift(polys[i], off), m)
                for j in range(N):
                    sj, uj = starts[j], int(u_k[j])
                    a[i] += _kernel_moments(field, i, sj, uj, h, m)[0]
                    if q is not None:
                        # Q term: ∫ m R_i K_i'(s_j) dt * ds_j
                        grad[j] += alpha[i] * _kernel_moments(field, i, sj, uj, h, q)[1] * state.ds[j]
                for j2, coef, g1, _ in piece.terms[i]:
                    qg = _poly.mul(_shift(g1, off), m)
                    kg = sum(_kernel_moments(field, i, starts[j], int(u_k[j]), h, qg)[0] for j in range(N))
                    grad[j2] -= alpha[i] * coef * kg * state.ds[j2]
            # V term with the piece-start derivative
            grad += np.tensordot(alpha * a, state.dR, axes=(0, 0))
    grad *= pc.weight(iteration) / T
    return np.concatenate([grad[:, :G].ravel(), grad[:, G:].ravel()])
