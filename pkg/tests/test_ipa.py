import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from persmon import ipa
from persmon.hybrid_sim import Event, TrajectoryParams, cost, run
from persmon.ipa import (IpaState, PieceSens, accumulate_gradient, apply_control_switch,
                         apply_uncertainty_switch, gradient, gradient_from_trace_only, ipa_states,
                         propagate_interval, switch_case, walk)
from persmon.model import UncertaintyRate

from conftest import central_difference, make_config, params


def fd_gradient(p, cfg, h=1e-5):
    N, G = p.N, p.gamma
    return central_difference(lambda v: cost(TrajectoryParams.from_vector(v, N, G), cfg), p.as_vector(), h)


def assert_matches_fd(g, fd):
    tol = np.maximum(1e-4 * np.abs(fd), 1e-6)
    assert np.all(np.abs(g - fd) <= tol), np.c_[g, fd]


# ---------------------------------------------------------------- jump rules

def test_case1_stop():
    st_ = IpaState.zeros(1, 1, 4)
    st_.ds[0] = np.arange(8.0) + 1
    apply_control_switch(st_, 0, 2, 1, np.array([5., 9., 6., 8.]), 0.0)
    assert st_.ds_dtheta[0].tolist() == [0, 0, 1, 4]
    assert st_.ds_domega[0, :3].tolist() == [0, 0, 0]
    assert st_.ds_domega[0, 3] == 8


def test_case3_reverse():
    st_ = IpaState.zeros(1, 1, 4)
    st_.ds[0, :4] = [0.5, -1.0, 3.0, 7.0]
    apply_control_switch(st_, 0, 2, 3, np.array([5., 9., 6., 8.]), 0.0, u_after=1)
    assert st_.ds_dtheta[0].tolist() == [-0.5, 1.0, 2.0, 7.0]
    assert st_.ds_domega[0, :3].tolist() == [-1, -1, -1]


def test_case2_start_sign_of_zero_leg():
    # theta_1 == theta_0: sgn(0) = 0, so only the neighbouring legs contribute
    st_ = IpaState.zeros(1, 1, 3)
    apply_control_switch(st_, 0, 1, 2, np.array([5., 5., 9.]), 0.0, u_after=1)
    assert st_.ds_dtheta[0].tolist() == [-1.0, 0.0, 0.0]
    assert st_.ds_domega[0, :2].tolist() == [-1, -1]


def test_unknown_case():
    with pytest.raises(ValueError):
        apply_control_switch(IpaState.zeros(1, 1, 2), 0, 0, 4, np.array([1., 2.]), 0.0)
    with pytest.raises(ValueError):
        switch_case(1, 1)


@pytest.mark.parametrize("ub, ua, case", [(1, 0, 1), (-1, 0, 1), (0, 1, 2), (0, -1, 2), (1, -1, 3), (-1, 1, 3)])
def test_switch_case(ub, ua, case):
    assert switch_case(ub, ua) == case


def test_uncertainty_switch():
    st_ = IpaState.zeros(3, 1, 2)
    st_.dR[:] = 2.0
    apply_uncertainty_switch(st_, Event(1.0, "r_leave", target=1))
    assert np.all(st_.dR == 2.0)
    apply_uncertainty_switch(st_, Event(1.0, "r_zero", target=1))
    assert np.all(st_.dR[1] == 0.0)
    assert np.all(st_.dR[[0, 2]] == 2.0)
    with pytest.raises(ValueError):
        apply_uncertainty_switch(st_, Event(1.0, "arrive", agent=0))


def test_case_rules_close_under_dwell_collapse():
    # a zero dwell processed as stop-then-start must equal the reversal rule
    cfg = make_config([5, 10, 15], [0], 60)
    p = params([13.3, 6.2, 13.7, 6.1, 12.9], [0, 0, 0, 0, 0])
    tr = run(p, cfg)
    merged = list(walk(tr, merge_case3=True))[-1][0].grad.copy()
    split = list(walk(tr, merge_case3=False))[-1][0].grad.copy()
    assert np.allclose(merged[:, :5], split[:, :5], atol=1e-12)
    fd = central_difference(lambda th: cost(params(th, p.omega), cfg), p.theta[0])
    assert_matches_fd(gradient(tr)[:5], fd)


# ---------------------------------------------------------------- interval propagation

def _dwell_piece(trace):
    for st_, piece in walk(trace):
        if trace.u[piece.k, 0] == 0 and piece.span > 0:
            before = st_.copy()
            propagate_interval(st_, piece)
            return before, st_.copy(), piece
    raise AssertionError("no dwell piece")


def test_dwell_left_of_target_decrements_by_B_over_r():
    cfg = make_config([5, 10, 15], [9], 4, R0=100.0)
    before, after, piece = _dwell_piece(run(params([9], [3]), cfg))
    assert before.ds_dtheta[0, 0] == 1.0
    assert after.dR_dtheta[1, 0, 0] - before.dR_dtheta[1, 0, 0] == pytest.approx(-(5.0 / 2.0) * piece.span)


def test_out_of_range_target_unchanged():
    cfg = make_config([5, 10, 15], [9], 4, R0=100.0)
    before, after, _ = _dwell_piece(run(params([9], [3]), cfg))
    assert np.array_equal(before.dR[[0, 2]], after.dR[[0, 2]])


def test_held_target_unchanged():
    cfg = make_config([5, 10, 15], [10], 4, R0=[5.0, 0.0, 5.0])
    tr = run(params([9.5], [4]), cfg)
    for st_, piece in walk(tr):
        if piece.held[1]:
            before = st_.dR[1].copy()
            propagate_interval(st_, piece)
            assert np.array_equal(st_.dR[1], before)
            break
    else:
        raise AssertionError("target never held")


def test_negative_span_rejected():
    piece = PieceSens(0, 0.0, -1.0, np.zeros(1, dtype=bool), [[]])
    with pytest.raises(ValueError):
        propagate_interval(IpaState.zeros(1, 1, 1), piece)


def test_constant_sensitivity_integrates_to_itself():
    cfg = make_config([5, 10, 15], [0], 10)
    tr = run(params([3], [10]), cfg)
    st_ = IpaState.zeros(3, 1, 1)
    st_.dR[:, 0, 0] = [1.5, -2.0, 0.25]
    piece = PieceSens(0, 0.0, 10.0, np.zeros(3, dtype=bool), [[], [], []])
    propagate_interval(st_, piece)
    assert st_.grad[0, 0] / 10.0 == pytest.approx(1.5 - 2.0 + 0.25)


# ---------------------------------------------------------------- gradient

def test_no_sensing_means_zero_gradient():
    cfg = make_config([5, 10, 15], [0], 30)
    g = gradient(run(params([3, 2, 3], [1, 2, 3]), cfg, bounds=(0.0, 20.0)))
    assert np.all(g == 0.0)


def test_state_lengths_checked():
    cfg = make_config([5, 10, 15], [0], 30)
    tr = run(params([6, 14], [1, 2]), cfg)
    states = ipa_states(tr)
    assert np.allclose(accumulate_gradient(tr, states), gradient(tr), atol=1e-12)
    with pytest.raises(ValueError):
        accumulate_gradient(tr, states[:-1])


def test_gradient_ignores_inflow_rates():
    lo = make_config([5, 10, 15], [0], 40, A=1.0, B=10.0)
    hi = make_config([5, 10, 15], [0], 40, A=7.0, B=10.0)
    tr = run(params([6, 14, 5], [2, 3, 1]), lo)
    g1 = gradient_from_trace_only(tr, lo.B, lo.r)
    g7 = gradient_from_trace_only(dataclasses.replace(tr, config=hi), hi.B, hi.r)
    assert np.array_equal(g1, g7)
    assert np.array_equal(g1, gradient(tr))
    assert not np.allclose(gradient_from_trace_only(tr, lo.B * 0.5, lo.r), g1)


def test_random_inflow_gradient_is_reproducible():
    cfg = make_config([5, 7, 15], [0], 40)
    rates = UncertaintyRate("piecewise-random", (0.0,) * 3, (2.0,) * 3, 1.0, seed=7)
    p = params([6, 15, 6], [2, 3, 1])
    assert np.array_equal(gradient(run(p, cfg, rates)), gradient(run(p, cfg, rates)))


def test_coincidence_flagged():
    cfg = make_config([5, 10, 15], [10], 5)
    rep = ipa.gradient_report(run(params([10, 15], [0.25, 1]), cfg))
    assert rep["coincidences"] == [pytest.approx(0.25)]
    assert not rep["differentiable"]
    assert np.all(np.isfinite(rep["gradient"]))
    rep = ipa.gradient_report(run(params([10, 15], [0.4, 1]), cfg))
    assert rep["differentiable"]


def test_rest_on_sensing_edge_flagged():
    # parked at 7, exactly r from the target at 5: one-sided slopes differ
    cfg = make_config([5, 10, 15], [0], 20)
    p = params([4, 4, 7], [1, 1, 1])
    assert run(p, cfg).coincidences == [9.0, 10.0]
    h = 1e-5
    f = lambda d: cost(params([4, 4, 7 + d], [1, 1, 1]), cfg)
    assert abs(f(h) - f(0)) / h < 1e-6 < (f(0) - f(-h)) / h
    assert not run(params([4, 4, 7.5], [1, 1, 1]), cfg).coincidences


@pytest.mark.parametrize("xs, starts, theta, omega", [
    ([5, 10, 15], [0], [[14.3, 5.6, 14.1, 6.2]], [[1.1, 2.3, 0.7, 1.9]]),
    ([5, 7, 15], [0], [[6.4, 15.2, 5.8, 14.6]], [[3.1, 1.4, 2.2, 0.9]]),
    ([5, 7, 9, 13, 15], [0, 0], [[6.2, 8.7, 5.3], [13.6, 14.4, 13.1]], [[1.3, 0.8, 2.1], [0.65, 1.7, 1.2]]),
])
def test_gradient_matches_finite_differences(xs, starts, theta, omega):
    cfg = make_config(xs, starts, 45)
    p = params(theta, omega)
    tr = run(p, cfg)
    assert not tr.coincidences
    assert_matches_fd(gradient(tr), fd_gradient(p, cfg))


@settings(max_examples=12)
@given(st.lists(st.floats(3.5, 16.5), min_size=3, max_size=3), st.lists(st.floats(0.2, 3), min_size=3, max_size=3),
       st.floats(20, 50))
def test_gradient_matches_finite_differences_random(theta, omega, T):
    cfg = make_config([5, 10, 15], [0], T)
    p = params(theta, omega)
    tr = run(p, cfg)
    if tr.coincidences:
        return
    assert_matches_fd(gradient(tr), fd_gradient(p, cfg))
