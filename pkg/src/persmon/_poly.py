"""Tiny dense-polynomial kit (ascending coefficients, plain Python floats).

Interval dynamics only ever involve polynomials of degree <= N + 1 in the
local time offset, so lists beat numpy arrays on overhead here.
"""
from __future__ import annotations

import math

import numpy as np


def mul(a, b):
    out = [0.0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai == 0.0:
            continue
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def integ(a):
    """Antiderivative vanishing at 0."""
    return [0.0] + [c / (k + 1) for k, c in enumerate(a)]


def val(a, x):
    acc = 0.0
    for c in reversed(a):
        acc = acc * x + c
    return acc


def deriv(a):
    return [k * c for k, c in enumerate(a)][1:] or [0.0]


def trim(a, tol=0.0):
    a = list(a)
    while len(a) > 1 and abs(a[-1]) <= tol:
        a.pop()
    return a


def real_roots(a, lo, hi):
    """Sorted real roots of ``a`` inside ``[lo, hi]``."""
    scale = max(abs(c) for c in a) or 1.0
    a = trim(a, 1e-15 * scale)
    deg = len(a) - 1
    if deg <= 0:
        return []
    if deg == 1:
        roots = [-a[0] / a[1]]
    elif deg == 2:
        c, b, q = a
        disc = b * b - 4 * q * c
        if disc < 0:
            # tangency lost to rounding still counts as a (double) root
            if disc > -1e-14 * max(b * b, abs(4 * q * c), 1e-300):
                disc = 0.0
            else:
                return []
        sq = math.sqrt(disc)
        w = -0.5 * (b + math.copysign(sq, b)) if b != 0 else 0.5 * sq
        if w == 0.0:
            roots = [0.0, 0.0] if c == 0 else [math.sqrt(-c / q), -math.sqrt(-c / q)] if -c / q >= 0 else []
        else:
            roots = [w / q, c / w]
    else:
        raw = np.roots(a[::-1])
        roots = []
        for z in raw:
            if abs(z.imag) <= 1e-7 * (1.0 + abs(z.real)):
                x = float(z.real)
                da = deriv(a)
                for _ in range(3):
                    d = val(da, x)
                    if d == 0.0:
                        break
                    x -= val(a, x) / d
                roots.append(x)
    span = hi - lo
    eps = 1e-13 * max(1.0, abs(span))
    return sorted(min(max(x, lo), hi) for x in roots if lo - eps <= x <= hi + eps)


def locate_event(g, lo, hi, tol=1e-12, max_iter=200):
    """Bisection root localisation on ``[lo, hi]``.

    Returns ``(t, touch)``.  ``touch`` is True when ``g`` has no sign change on
    the bracket but vanishes (to ``tol``) at an endpoint; returns ``(None, False)``
    when there is no event at all.
    """
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo, ghi != 0.0 and (glo * ghi >= 0)
    if ghi == 0.0:
        return hi, False
    if glo * ghi > 0:
        if abs(glo) <= tol:
            return lo, True
        if abs(ghi) <= tol:
            return hi, True
        return None, False
    a, b = lo, hi
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        if m == a or m == b:
            return m, False
        gm = g(m)
        if gm == 0.0 or 0.5 * (b - a) <= tol:
            return m, False
        if (gm > 0) == (glo > 0):
            a, glo = m, gm
        else:
            b = m
    return 0.5 * (a + b), False


def first_hit(R0, rdot, span):
    """First time in ``(0, span]`` where ``R0 + ∫rdot`` reaches zero, else None."""
    if all(c >= 0.0 for c in rdot):
        return None
    if len(rdot) == 1 and R0 > 0.0:
        # constant rate, the common case away from every agent
        t = R0 / -rdot[0]
        return t if t <= span else None
    if R0 <= 0.0:
        # R sits on the boundary but is not held: R(τ) = τ q(τ)
        q = [c / (k + 1) for k, c in enumerate(rdot)]
        tol = 1e-11 * max(abs(c) for c in rdot)
        if q[0] < -tol:
            return 0.0
        if abs(q[0]) <= tol:
            # rdot(0) is zero up to rounding (e.g. right after leaving the
            # boundary): the first non-negligible term decides the direction
            for c in q[1:]:
                if c < -tol:
                    return 0.0
                if c > tol:
                    break
            q = [max(q[0], 0.0)] + q[1:]
        cands = real_roots(q, 0.0, span)
        cands = [c for c in cands if c > 0.0]
        return cands[0] if cands else None
    poly = integ(rdot)
    poly[0] = R0
    cands = [c for c in real_roots(poly, 0.0, span) if c > 0.0]
    if not cands:
        if val(poly, span) < 0.0:
            # root lost to rounding; fall back on bisection
            t, _ = locate_event(lambda x: val(poly, x), 0.0, span, tol=1e-15 * max(1.0, span))
            return t
        return None
    rho = cands[0]
    lo, hi = max(0.0, rho - 1e-9 * max(1.0, span)), min(span, rho + 1e-9 * max(1.0, span))
    if val(poly, lo) > 0.0 > val(poly, hi):
        rho, _ = locate_event(lambda x: val(poly, x), lo, hi, tol=1e-15 * max(1.0, span))
    return rho


def first_rise(rdot, span, tol=1e-12):
    """First time in ``[0, span)`` where ``rdot`` turns positive, else None."""
    c0 = rdot[0]
    if c0 > tol:
        return 0.0
    if all(c <= 0.0 for c in rdot):
        return None
    if abs(c0) <= tol:
        for c in rdot[1:]:
            if c > 0.0:
                return 0.0
            if c < 0.0:
                break
    roots = [x for x in real_roots(rdot, 0.0, span) if x > 0.0]
    edges = roots + [span]
    for k, x in enumerate(roots):
        mid = 0.5 * (x + edges[k + 1])
        if val(rdot, mid) > 0.0:
            return x
    return None
