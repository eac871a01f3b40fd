import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from persmon.experiments import stranded, stranded_params
from persmon.hybrid_sim import TrajectoryParams, run
from persmon.ipa import gradient
from persmon.model import ConfigError
from persmon.potential_field import (Field, PotentialConfig, j2_gradient, j2_instant, j2_value,
                                     reward_density, travel_cost)

from conftest import central_difference, make_config, params


def trapezoid(y, x):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def brute_j2(R, s, x, r_min, n=500):
    """Direct trapezoid of Q * V over the field support."""
    w = np.linspace(x[0], x[-1], n)
    return trapezoid(travel_cost(w, s) * reward_density(w, R, x, r_min), w)


@pytest.mark.parametrize("w, expected", [(5.0, 0.5), (9.0, 0.25), (6.5, 0.5), (7.5, 0.4)])
def test_density_single_target(w, expected):
    assert reward_density(w, [1.0, 0.0], [5.0, 9.0], 2.0) == pytest.approx(expected)


def test_density_zero_and_support():
    assert np.all(reward_density(np.linspace(5, 15, 11), [0, 0, 0], [5, 10, 15], 2.0) == 0)
    with pytest.raises(ValueError):
        reward_density(4.0, [1, 1], [5, 10], 2.0)


def test_travel_cost_examples():
    assert travel_cost(5.0, [5.0]) == 0.0
    assert travel_cost(5.0, [3.0, 9.0]) == 6.0
    f = lambda s: travel_cost(5.0, [s[0], 9.0])
    assert central_difference(f, [7.0])[0] == pytest.approx(1.0)
    assert central_difference(f, [2.0])[0] == pytest.approx(-1.0)


def test_instant_matches_direct_quadrature():
    cfg = make_config([5, 7, 15], [0, 0], 10, strict=False)
    R, s = [1.0, 2.5, 0.7], [6.3, 12.1]
    assert j2_instant(R, s, cfg) == pytest.approx(brute_j2(R, s, cfg.x, 2.0), rel=1e-12)


def test_symmetric_field_has_flat_midpoint():
    f = Field([5.0, 15.0], 2.0, 500)
    _, slope = f.kernel(np.array([10.0]))
    assert abs(slope.sum()) < 1e-12
    assert j2_instant([0, 0, 0], [8.0], make_config([5, 10, 15], [0], 1)) == 0.0


@given(st.lists(st.floats(0, 10), min_size=3, max_size=3), st.floats(5, 15), st.floats(0.1, 10))
def test_linear_in_uncertainty(R, s, c):
    cfg = make_config([5, 10, 15], [0], 1)
    a = j2_instant(np.array(R) * c, [s], cfg)
    assert a == pytest.approx(c * j2_instant(R, [s], cfg), rel=1e-9, abs=1e-12)


def test_weight_decays_per_iteration():
    pc = PotentialConfig(beta=0.2)
    assert [pc.weight(k) for k in (0, 5)] == [1.0, pytest.approx(math.exp(-1.0))]
    assert PotentialConfig(decay_mode="per-mission-time").weight(30) == 1.0


@pytest.mark.parametrize("kw", [dict(beta=0.0), dict(grid=10), dict(decay_mode="sometimes")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        PotentialConfig(**kw)


def _case():
    cfg = make_config([5, 7, 15], [0], 30)
    return cfg, params([6.3, 14.2, 6.8], [2.1, 1.3, 2.4])


@pytest.mark.parametrize("mode", ["per-iteration", "per-mission-time"])
def test_time_integral_matches_dense_sampling(mode):
    cfg, p = _case()
    pc = PotentialConfig(beta=0.05, decay_mode=mode)
    tr = run(p, cfg)
    s, R, _, t = tr.dense(2e-3)
    f = Field.for_config(cfg)
    vals = np.array([f.j2(R[n], s[n]) for n in range(len(t))])
    if mode == "per-mission-time":
        vals *= np.exp(-0.05 * t)
    ref = trapezoid(vals, t) / cfg.horizon
    assert j2_value(tr, pc) == pytest.approx(ref, rel=1e-5)
    assert j2_value(tr, pc, iteration=3) == pytest.approx(pc.weight(3) * j2_value(tr, pc), rel=1e-12)


@pytest.mark.parametrize("mode", ["per-iteration", "per-mission-time"])
def test_gradient_matches_finite_differences(mode):
    cfg, p = _case()
    pc = PotentialConfig(beta=0.05, decay_mode=mode)
    g = j2_gradient(run(p, cfg), pc)
    f = lambda v: j2_value(run(TrajectoryParams.from_vector(v, 1, 3), cfg), pc)
    fd = central_difference(f, p.as_vector(), 1e-5)
    assert np.all(np.abs(g - fd) <= np.maximum(1e-3 * np.abs(fd), 1e-6)), np.c_[g, fd]


def test_excitation_without_events():
    cfg = stranded()
    tr = run(stranded_params(), cfg)
    assert not [e for e in tr.events if e.kind == "enter"]
    assert np.all(gradient(tr) == 0.0)
    g2 = j2_gradient(tr, PotentialConfig())
    assert np.linalg.norm(g2) > 0


def test_zero_uncertainty_zero_gradient():
    # a field with nothing in it cannot pull the agent anywhere
    f = Field([5.0, 10.0, 15.0], 2.0)
    K, slope = f.kernel(np.array([7.0]))
    assert float(np.dot([0.0, 0.0, 0.0], slope[:, 0])) == 0.0


def test_grid_doubling_changes_little():
    cfg = stranded()
    tr = run(stranded_params(), cfg)
    a = j2_value(tr, PotentialConfig(grid=500))
    b = j2_value(tr, PotentialConfig(grid=1000))
    assert abs(a - b) < 0.01 * abs(b)
