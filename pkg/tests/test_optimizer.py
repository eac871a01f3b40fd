import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon.experiments import stranded, stranded_params
from persmon.hybrid_sim import TrajectoryParams, compile_program, cost, run
from persmon.model import ConfigError
from persmon.optimizer import (DescentConfig, _inside_span, agent_blocks, compact_params, initial_params,
                               optimize, prop1_violation, project)
from persmon.stochastic import RandomModel

from conftest import make_config, params

BOUNDS = (3.0, 17.0)


def test_project_examples():
    p = project(params([[18.0, 9.0]], [[-0.3, 2.0]]), BOUNDS)
    assert p.theta.tolist() == [[17.0, 9.0]]
    assert p.omega.tolist() == [[0.0, 2.0]]


@given(st.lists(st.floats(-20, 40), min_size=4, max_size=4), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_project_idempotent(th, om):
    once = project(params(th, om), BOUNDS)
    twice = project(once, BOUNDS)
    assert np.array_equal(once.theta, twice.theta) and np.array_equal(once.omega, twice.omega)
    feasible = params(np.clip(th, *BOUNDS), np.maximum(om, 0))
    assert np.array_equal(project(feasible, BOUNDS).theta, feasible.theta)


def test_descent_config_validation():
    for kw in (dict(rho=1.0), dict(c=0.0), dict(grad_tol=0.0), dict(n_seeds=0)):
        with pytest.raises(ConfigError):
            DescentConfig(**kw)


def test_agent_blocks():
    cfg = make_config([5, 7, 9, 13, 15], [0, 0], 10)
    assert [b.tolist() for b in agent_blocks(cfg)] == [[5, 7, 9], [13, 15]]


def test_default_starts_are_feasible():
    cfg = make_config([5, 7, 9, 13, 15], [0, 0], 60, no_cross=True)
    p = initial_params(cfg)
    p.validate(cfg)
    assert np.all(p.omega >= 0)
    c = compact_params(make_config([5, 7, 15], [0], 30), 6)
    assert c is None or c.theta.shape == (1, 6)


def test_cost_history_is_monotone():
    cfg = make_config([5, 10, 15], [0], 60)
    rep = optimize(params([14, 6, 14, 6], [0.5, 0.5, 0.5, 0.5]), cfg,
                   DescentConfig(max_iterations=25, polish=False))
    J = rep.costs
    assert np.all(np.diff(J) <= 1e-12 * np.abs(J[:-1]))
    assert rep.J1 == pytest.approx(cost(rep.params, cfg), rel=1e-12)
    assert J[-1] < J[0]


def test_zero_gradient_start_stops_immediately():
    cfg = stranded()
    p = stranded_params()
    rep = optimize(p, cfg, DescentConfig(max_iterations=50, polish=False))
    assert rep.status == "gradient-norm"
    assert len(rep.history) == 1
    assert rep.J1 == cost(p, cfg)
    assert np.array_equal(rep.params.theta, p.theta)


def test_infeasible_start_rejected():
    cfg = make_config([5, 10, 15], [0], 20)
    with pytest.raises(ConfigError):
        optimize(params([25], [1]), cfg, DescentConfig(max_iterations=1))


def test_report_serialisation():
    cfg = make_config([5, 10, 15], [0], 30)
    rep = optimize(None, cfg, DescentConfig(max_iterations=3))
    d = rep.as_dict(timing=False)
    assert "wall_clock" not in d and d["iterations"] == len(rep.history) - 1
    assert "wall_clock" in rep.as_dict()


@given(st.lists(st.floats(0, 20), min_size=3, max_size=3), st.lists(st.floats(0, 3), min_size=3, max_size=3))
def test_clipping_keeps_the_schedule(th, om):
    """Pulling switching points into the target span is the same as clipping the path."""
    cfg = make_config([5, 10, 15], [0], 80)
    wide = (0.0, 20.0)
    p = params(th, om)
    q = _inside_span(p, cfg, wide)
    a, b = run(p, cfg, bounds=wide), run(q, cfg, bounds=wide)
    assert b.J1 <= a.J1 + 1e-9
    t = np.linspace(0, 80, 2001)
    sa, sb = a.sample(t)[0][:, 0], b.sample(t)[0][:, 0]
    inside = np.nonzero((sa >= 5.0) & (sa <= 15.0))[0]
    if inside.size == 0:
        return
    after = t >= t[inside[0]]
    assert np.allclose(sb[after], np.clip(sa[after], 5.0, 15.0), atol=1e-9)
    assert prop1_violation(b) == 0.0


def test_seed_averaging_reduces_iterate_variance():
    cfg = make_config([5, 7, 15], [0], 30)
    p0 = params([6, 15, 6, 15], [1, 1, 1, 1])
    spread = []
    for n in (1, 4, 16):
        xs = [optimize(p0, cfg, DescentConfig(max_iterations=1, polish=False, n_seeds=n,
                                              random=RandomModel(seed=100 + rep))).params.as_vector()
              for rep in range(10)]
        spread.append(np.var(np.array(xs), axis=0, ddof=1).sum())
    assert spread[0] > spread[1] > spread[2]


def test_restarts_never_worse():
    cfg = make_config([5, 10, 15], [0], 40)
    base = optimize(None, cfg, DescentConfig(max_iterations=10))
    multi = optimize(None, cfg, DescentConfig(max_iterations=10, restarts=2, seed=3))
    assert multi.J1 <= base.J1 + 1e-12
    assert len(multi.restarts) == 3
