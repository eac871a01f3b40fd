import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon import _poly
from persmon.hybrid_sim import (TrajectoryParams, compile_program, cost, default_gamma, locate_event,
                                no_cross_violations, run)
from persmon.model import ConfigError, sensing_probability

from conftest import make_config, params


def kinds(trace, kind):
    return [e for e in trace.events if e.kind == kind]


def test_arrival_time_is_distance():
    cfg = make_config([5, 10, 15], [0], 20)
    tr = run(params([15], [0]), cfg)
    assert kinds(tr, "arrive")[0].t == pytest.approx(15.0)


def test_dwell_then_travel_timing():
    cfg = make_config([5, 10, 15], [0], 20)
    ph = compile_program(params([5, 10], [3, 0]), cfg).agent(0)
    assert (ph[1].kind, ph[1].start, ph[1].end) == ("dwell", 5.0, 8.0)
    assert (ph[2].kind, ph[2].end, ph[2].pos + ph[2].u * (ph[2].end - ph[2].start)) == ("travel", 13.0, 10.0)


def test_zero_length_travel():
    cfg = make_config([5, 10, 15], [5], 20)
    ph = compile_program(params([5], [3]), cfg).agent(0)
    assert ph[0].start == ph[0].end == 0.0 and ph[0].u == 0
    assert ph[1].kind == "dwell" and ph[1].end == 3.0


def test_compile_rejects_bad_params():
    cfg = make_config([5, 10, 15], [0], 20)
    with pytest.raises(ConfigError):
        compile_program(params([18], [0]), cfg)
    with pytest.raises(ConfigError):
        compile_program(params([5], [-1]), cfg)


def test_unsensed_single_target():
    cfg = make_config([15], [0], 10, strict=False)
    tr = run(params([3], [0]), cfg, bounds=(0.0, 20.0))
    assert tr.J1 == pytest.approx(6.0, abs=1e-12)
    assert tr.R[-1, 0] == pytest.approx(11.0)


def test_stationary_closed_form():
    A, R0, T = [1.0, 2.0, 0.5], [1.0, 0.0, 3.0], 37.0
    cfg = make_config([5, 10, 15], [0], T, A=A, R0=R0)
    tr = run(params([3, 3], [1, 2]), cfg)
    expected = sum(q * T + a * T * T / 2 for a, q in zip(A, R0)) / T
    assert tr.J1 == pytest.approx(expected, rel=1e-12)
    assert not kinds(tr, "enter")


def test_dwell_at_isolated_target_hits_zero():
    cfg = make_config([5, 10, 15], [10], 5)
    tr = run(params([10], [5]), cfg)
    hit = [e for e in kinds(tr, "r_zero") if e.target == 1]
    assert hit[0].t == pytest.approx(0.25, abs=1e-12)
    _, R, _ = tr.sample([0.1, 1.0, 4.0])
    assert R[0, 1] == pytest.approx(0.6)
    assert R[1:, 1] == pytest.approx([0.0, 0.0])


def test_horizon_truncates_program():
    cfg = make_config([5, 10, 15], [0], 10)
    tr = run(params([15], [0]), cfg)
    assert not kinds(tr, "arrive")
    assert tr.events[-1].kind == "horizon" and tr.events[-1].t == 10.0


def test_zero_horizon():
    cfg = make_config([5, 10, 15], [0], 0)
    tr = run(params([5], [1]), cfg)
    assert tr.J1 == 0.0


def test_conservation_on_dwell_pieces():
    cfg = make_config([5, 7, 15], [0], 40)
    tr = run(params([6, 15, 6], [4, 2, 6]), cfg)
    checked = 0
    for k in range(tr.n_pieces):
        if tr.u[k, 0] != 0:
            continue
        span = tr.times[k + 1] - tr.times[k]
        for i, t in enumerate(cfg.targets):
            if tr.held[k, i]:
                continue
            P = sensing_probability(t.x, tr.s[k, 0], 2.0)
            assert tr.R[k + 1, i] == pytest.approx(tr.R[k, i] + (t.A - t.B * P) * span, abs=1e-9)
            checked += 1
    assert checked > 0


def test_dense_quadrature_consistency():
    cfg = make_config([5, 7, 15], [0], 40)
    tr = run(params([6, 15, 6, 15], [4, 2, 6, 1]), cfg)
    _, R, _, grid = tr.dense(1e-3)
    y = R.sum(axis=1)
    trap = float(np.sum(np.diff(grid) * (y[1:] + y[:-1]) / 2)) / cfg.horizon
    assert trap == pytest.approx(tr.J1, abs=1e-5)
    assert tr.cumulative(cfg.horizon).sum() / cfg.horizon == pytest.approx(tr.J1, rel=1e-12)


def test_simulation_is_bitwise_deterministic():
    cfg = make_config([5, 7, 9, 13, 15], [0, 0], 60, no_cross=True)
    p = params([[5, 9, 5, 9], [13, 15, 13, 15]], [[1, 2, 1, 2], [0.5, 1, 0.5, 1]])
    a, b = run(p, cfg), run(p, cfg)
    assert a.J1 == b.J1
    assert np.array_equal(a.times, b.times) and np.array_equal(a.R, b.R)
    assert [e.as_dict() for e in a.events] == [e.as_dict() for e in b.events]


def test_no_cross_violation_is_reported():
    cfg = make_config([5, 7, 9, 13, 15], [0, 0], 30, no_cross=True)
    tr = run(params([[15, 15], [5, 5]], [[1, 1], [1, 1]]), cfg)
    assert tr.violations
    assert no_cross_violations(tr)


def test_stability_diagnostic():
    cfg = make_config([5, 10, 15], [10], 20)
    st_ = run(params([10], [20]), cfg).stability()
    assert st_["emptied"] == [False, True, False]
    assert st_["stable"][1] and not st_["stable"][0]


def test_default_gamma():
    assert default_gamma(make_config([5, 7, 15], [0], 100)) == 50
    assert default_gamma(make_config([5, 7, 15], [0], 1000)) == 200


def test_params_vector_roundtrip():
    p = params([[5, 6], [7, 8]], [[1, 2], [3, 4]])
    q = TrajectoryParams.from_vector(p.as_vector(), 2, 2)
    assert np.array_equal(p.theta, q.theta) and np.array_equal(p.omega, q.omega)


class TestLocateEvent:
    def test_linear_root(self):
        t, touch = locate_event(lambda t: t - 3.0, 0.0, 10.0, tol=1e-12)
        assert t == pytest.approx(3.0, abs=1e-11) and not touch

    def test_decay_root(self):
        t, _ = locate_event(lambda t: 1 - 4 * t, 0.0, 1.0, tol=1e-12)
        assert t == pytest.approx(0.25, abs=1e-11)

    def test_double_root_at_edge_is_touch(self):
        t, touch = locate_event(lambda t: (t - 1.0) ** 2, 0.0, 1.0, tol=1e-12)
        assert t == 1.0
        t, touch = locate_event(lambda t: t ** 2, 0.0, 2.0)
        assert t == 0.0 and touch

    def test_no_sign_change(self):
        assert locate_event(lambda t: t + 1.0, 0.0, 1.0) == (None, False)

    def test_first_hit_quadratic(self):
        # R = 1 - 2t + 0.5 t^2 ... first zero at 2 - sqrt(2)
        assert _poly.first_hit(1.0, [-2.0, 1.0], 5.0) == pytest.approx(2 - np.sqrt(2), abs=1e-12)


trajectories = st.tuples(st.lists(st.floats(3, 17), min_size=1, max_size=6),
                         st.lists(st.floats(0, 5), min_size=6, max_size=6))


@given(trajectories, st.floats(5, 60))
def test_uncertainty_stays_nonnegative(tw, T):
    th, om = tw
    cfg = make_config([5, 7, 15], [0], T)
    tr = run(params(th, om[:len(th)]), cfg)
    assert np.all(tr.R >= 0)
    assert np.all(np.diff(tr.times) > 0)
    _, R, _, _ = tr.dense()
    assert np.all(R >= 0)
    assert np.all((tr.s >= 0) & (tr.s <= cfg.length))
    assert tr.J1 == cost(params(th, om[:len(th)]), cfg)
