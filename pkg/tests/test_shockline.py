import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shockkin.drift_flow import ConstantDrift
from shockkin.errors import DomainError
from shockkin.model import fundamental_M, make_model
from shockkin.shockline import (FUNDAMENTAL, ShockConfiguration, entropy_and_rh_residuals, evolve, jump_limits,
                                l1_distance, reconstruct)

BURGERS = make_model("burgers")


def test_single_shock_moves_at_mean_speed():
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0, 1.0], [0.2, 0.6])
    res = evolve(q, 1.0, BURGERS)
    assert res.config.positions[1] == pytest.approx(0.6, abs=1e-12)
    assert np.array_equal(res.config.values, [0.2, 0.6])
    assert res.events == []


def test_merge_time_and_outcome():
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0, 0.5, 0.6], [0.1, 0.3, 0.9])
    res = evolve(q, 0.5, BURGERS, macro_dt=0.01)
    (t, kind, _), = res.event_log
    assert kind == "merge" and t == pytest.approx(0.25, abs=1e-6)
    cfg = res.config
    assert np.allclose(cfg.values, [0.1, 0.9])
    assert cfg.positions[1] == pytest.approx(0.45 - 0.25 * 0.5, abs=1e-6)


def test_left_exit_promotes_right_value():
    q = ShockConfiguration(0.0, 1.0, 0.0, [0.0, 0.1], [0.2, 0.6])
    res = evolve(q, 0.5, BURGERS)
    (t, kind, _), = res.event_log
    assert kind == "left_exit" and t == pytest.approx(0.25, abs=1e-8)
    assert res.config.n == 0 and res.config.values[0] == 0.6


def test_reconstruct_and_limits():
    q = ShockConfiguration(0.0, 1.0, 0.0, [0.0, 0.4], [0.2, 0.7])
    assert np.allclose(reconstruct(q, [0.1, 0.4, 0.9]), [0.2, 0.7, 0.7])
    assert float(reconstruct(q, 0.4, left_limit=True)) == 0.2
    left, right = jump_limits(q)
    assert left.tolist() == [0.2] and right.tolist() == [0.7]
    with pytest.raises(DomainError):
        reconstruct(q, 1.5)
    b = ConstantDrift(-0.1)
    assert float(reconstruct(q, 0.9, b=b)) == pytest.approx(0.65, abs=1e-12)


def test_fundamental_profile_shape():
    q = ShockConfiguration(-1.0, -0.5, 0.0, [-1.0, -0.8, -0.6], [0.1, 0.4, 0.9], FUNDAMENTAL, -1.0)
    res = evolve(q, 0.2, BURGERS)
    cfg = res.config
    xs = np.linspace(cfg.a_minus, cfg.a_plus, 51)
    idx = np.clip(np.searchsorted(cfg.positions, xs, side="right") - 1, 0, cfg.n)
    expect = fundamental_M(BURGERS, xs, cfg.t, cfg.values[idx], cfg.s)
    assert np.max(np.abs(reconstruct(cfg, xs, BURGERS) - expect)) <= 1e-8
    diag = entropy_and_rh_residuals(res, BURGERS, kind=FUNDAMENTAL)
    assert diag["entropy_violations"] == 0 and diag["rh_residual"] <= 1e-6


def test_drifted_jump_conditions_hold_along_trace():
    m = make_model("shifted_burgers")
    b = ConstantDrift(-0.2)
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0, 0.8, 1.5], [0.1, 0.5, 0.9])
    res = evolve(q, 0.5, m, b, macro_dt=0.005)
    diag = entropy_and_rh_residuals(res, m, b)
    assert diag["samples"] > 50
    assert diag["rh_residual"] <= 1e-6 and diag["k_residual"] <= 1e-6
    assert diag["entropy_violations"] == 0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 1.95), min_size=1, max_size=5, unique=True),
       st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6, unique=True), st.floats(0.05, 1.0))
def test_order_and_entropy_preserved(cuts, levels, T):
    cuts = sorted(cuts)
    if min(np.diff([0.0] + cuts)) < 1e-3:
        return
    vals = sorted(levels)[: len(cuts) + 1]
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0] + cuts, vals)
    res = evolve(q, T, BURGERS)
    cfg = res.config
    assert np.all(np.diff(cfg.positions) > 0) and np.all(np.diff(cfg.values) > 0)
    assert entropy_and_rh_residuals(res, BURGERS)["entropy_violations"] == 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 0.9), st.floats(0.0, 0.4), st.floats(0.45, 1.0), st.floats(-0.2, 0.2))
def test_translation_covariance(x1, v0, v1, shift):
    q = ShockConfiguration(0.0, 2.0, 0.0, [0.0, x1], [v0, v1])
    s = ShockConfiguration(shift, 2.0 + shift, 0.0, [shift, x1 + shift], [v0, v1])
    a, b = evolve(q, 0.4, BURGERS).config, evolve(s, 0.4, BURGERS).config
    assert np.allclose(a.positions + shift, b.positions, atol=1e-12)
    assert np.allclose(a.values, b.values)


def test_l1_distance_exact_for_steps():
    q1 = ShockConfiguration(0.0, 1.0, 0.0, [0.0, 0.3], [0.2, 0.8])
    q2 = ShockConfiguration(0.0, 1.0, 0.0, [0.0, 0.5], [0.2, 0.8])
    assert l1_distance(q1, q2) == pytest.approx(0.2 * 0.6, abs=1e-12)
    assert l1_distance(q1, q1) == 0.0
