import numpy as np
import pytest

from persmon.hybrid_sim import run
from persmon.model import ConfigError, UncertaintyRate
from persmon.stochastic import (RandomModel, inflow_table, realization, sample_inflow, sample_positions,
                                sub_seed)

from conftest import make_config, params


def test_degenerate_bounds_are_constant():
    m = RandomModel(lo=1.0, hi=1.0)
    assert {sample_inflow(0, t, m) for t in np.linspace(0, 50, 101)} == {1.0}


def test_uniform_mean():
    m = RandomModel(lo=0.0, hi=2.0, seed=3)
    draws = np.array([sample_inflow(1, k + 0.5, m) for k in range(100_000)])
    assert draws.mean() == pytest.approx(1.0, abs=0.02)
    assert draws.min() >= 0.0 and draws.max() <= 2.0


def test_draw_is_function_of_seed_target_window():
    m = RandomModel(seed=11, interval=2.0)
    assert sample_inflow(2, 7.1, m) == sample_inflow(2, 6.0, m) == sample_inflow(2, 7.99, m)
    assert sample_inflow(2, 7.1, m) != sample_inflow(2, 8.0, m)
    assert sample_inflow(2, 7.1, m) != sample_inflow(1, 7.1, m)
    # evaluation order must not matter
    late = sample_inflow(0, 500.0, RandomModel(seed=12))
    early = sample_inflow(0, 3.0, RandomModel(seed=12))
    assert sample_inflow(0, 500.0, RandomModel(seed=12)) == late
    assert sample_inflow(0, 3.0, RandomModel(seed=12)) == early


def test_inflow_table_matches_pointwise_draws():
    cfg = make_config([5, 7, 15], [0], 10.5)
    rates = UncertaintyRate("piecewise-random", (0.0,) * 3, (2.0,) * 3, 1.0, seed=5)
    edges, table = inflow_table(rates, cfg)
    assert edges[-1] == 10.5 and len(table) == 11
    m = RandomModel(seed=5)
    assert table[4, 2] == sample_inflow(2, 4.2, m)


def test_zero_jitter_is_identity():
    cfg = make_config([5, 10, 15], [0], 10)
    assert np.array_equal(sample_positions(cfg, RandomModel("position-jitter", half_width=0.0)), cfg.x)


def test_jitter_bounds_and_reproducibility():
    cfg = make_config([5, 10, 15], [0], 10)
    m = RandomModel("position-jitter", half_width=0.25, seed=9)
    xs = sample_positions(cfg, m, run=4)
    assert np.all(np.abs(xs - cfg.x) <= 0.25) and np.all(np.diff(xs) > 0)
    assert np.array_equal(xs, sample_positions(cfg, m, run=4))
    assert not np.array_equal(xs, sample_positions(cfg, m, run=5))


def test_jitter_must_preserve_order():
    with pytest.raises(ConfigError):
        RandomModel("position-jitter", half_width=1.0).check(make_config([5, 7, 15], [0], 10))


@pytest.mark.parametrize("kw", [dict(lo=-1.0), dict(lo=2.0, hi=1.0), dict(interval=0.0),
                                dict(mode="gaussian"), dict(resample="sometimes")])
def test_model_validation(kw):
    with pytest.raises(ConfigError):
        RandomModel(**kw)


def test_realizations_are_reproducible_and_distinct():
    cfg = make_config([5, 7, 15], [0], 30)
    p = params([6, 15, 6], [2, 3, 1])
    m = RandomModel(seed=1)
    J = [run(p, *realization(cfg, m, n)).J1 for n in (0, 0, 1)]
    assert J[0] == J[1] != J[2]
    assert len({sub_seed(1, n) for n in range(100)}) == 100
    c, rates = realization(cfg, None)
    assert c is cfg and not rates.random
