"""Metrics and tests: QLIKE values, DM statistic, MCS behavior."""

import math

import numpy as np
import pytest

from spotvol import evaluate
from spotvol.errors import ConfigError, DomainError, ShapeError
from spotvol.evaluate import (aggregate_mse, aggregate_qlike, build_report,
                              dm_test, loss_series, mcs, qlike_values)


def test_qlike_zero_at_perfect_forecast():
    rng = np.random.default_rng(0)
    x = rng.uniform(1e-5, 1e-3, (20, 4))
    assert aggregate_qlike(x, x) == 0.0


def test_qlike_single_cell_closed_form():
    # actual = 2, forecast = 1: 2 - ln 2 - 1
    val = aggregate_qlike(np.array([[1.0]]), np.array([[2.0]]))
    assert abs(val - (2.0 - math.log(2.0) - 1.0)) < 1e-10
    assert abs(val - 0.3068528194400547) < 1e-10


def test_qlike_asymmetry_penalizes_underforecast():
    a = np.array([[2.0]])
    under = aggregate_qlike(np.array([[1.0]]), a)
    over = aggregate_qlike(np.array([[4.0]]), a)
    assert under > over > 0


def test_qlike_rejects_nonpositive():
    with pytest.raises(DomainError) as err:
        aggregate_qlike(np.array([[1.0, -1.0]]), np.array([[1.0, 1.0]]))
    assert "(0, 1)" in str(err.value)
    with pytest.raises(DomainError):
        aggregate_qlike(np.array([[1.0]]), np.array([[0.0]]))


def test_mse_aggregation_oracle():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(10, 3))
    a = rng.normal(size=(10, 3))
    assert abs(aggregate_mse(p, a) - np.mean((p - a) ** 2)) < 1e-15
    pm = rng.normal(size=(5, 3, 14))
    am = rng.normal(size=(5, 3, 14))
    assert abs(aggregate_mse(pm, am, "multi") - np.mean((pm - am) ** 2)) < 1e-15
    with pytest.raises(ShapeError):
        aggregate_mse(p, a[:5])
    with pytest.raises(ShapeError):
        aggregate_mse(pm, am, "single")
    with pytest.raises(ConfigError):
        aggregate_mse(p, a, "weekly")


def test_loss_series_per_instant():
    rng = np.random.default_rng(2)
    p = rng.uniform(1.0, 2.0, (6, 4))
    a = rng.uniform(1.0, 2.0, (6, 4))
    ls = loss_series(p, a, metric="mse")
    assert ls.shape == (6,)
    assert np.allclose(ls, np.mean((p - a) ** 2, axis=1))
    lq = loss_series(p, a, metric="qlike")
    assert np.allclose(lq, np.mean(qlike_values(p, a), axis=1))
    with pytest.raises(ConfigError):
        loss_series(p, a, metric="mae")


def test_dm_statistic_matches_direct_formula():
    rng = np.random.default_rng(3)
    la = rng.uniform(0.5, 1.5, 200)
    lb = rng.uniform(0.5, 1.5, 200)
    stat, p = dm_test(la, lb, h=1)
    d = la - lb
    centered = d - d.mean()
    gamma0 = centered @ centered / len(d)
    expect = d.mean() / math.sqrt(gamma0 / len(d))
    assert abs(stat - expect) < 1e-12
    assert abs(p - math.erfc(abs(expect) / math.sqrt(2))) < 1e-15


def test_dm_hac_lags_for_multistep():
    rng = np.random.default_rng(4)
    d = rng.normal(size=300)
    la = d + 1.0
    lb = np.ones(300)
    stat1, _ = dm_test(la, lb, h=1)
    stat3, _ = dm_test(la, lb, h=3)
    # direct Bartlett computation with 2 lags
    centered = d - d.mean()
    t = len(d)
    var = centered @ centered / t
    for ell in (1, 2):
        cov = centered[ell:] @ centered[:-ell] / t
        var += 2 * (1 - ell / 3.0) * cov
    expect = d.mean() / math.sqrt(var / t)
    assert abs(stat3 - expect) < 1e-12
    assert stat1 != stat3


def test_dm_detects_shifted_losses():
    rng = np.random.default_rng(5)
    base = rng.uniform(0.9, 1.1, 500)
    la = base + 0.5
    lb = base.copy()
    stat, p = dm_test(la, lb)
    assert stat > 10
    assert p < 1e-10
    # sign flips with the argument order
    stat_r, _ = dm_test(lb, la)
    assert abs(stat_r + stat) < 1e-12


def test_dm_input_validation():
    ok = np.ones(40) + np.random.default_rng(6).normal(0, 0.1, 40)
    with pytest.raises(ValueError):
        dm_test(ok[:20], ok[:20])
    with pytest.raises(ShapeError):
        dm_test(ok, ok[:30])
    with pytest.raises(ConfigError):
        dm_test(ok, ok * 1.1, h=0)
    with pytest.raises(DomainError):
        dm_test(np.full(40, 2.0), np.full(40, 1.0))  # constant differential


# -- model confidence set ----------------------------------------------


def test_mcs_returns_dominant_model():
    hits = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        t = 300
        base = rng.uniform(0.5, 1.5, t)
        losses = np.stack([
            base,
            base + 0.4 + rng.normal(0, 0.05, t),
            base + 0.6 + rng.normal(0, 0.05, t),
        ])
        res = mcs(losses, alpha=0.05, b_boot=500, seed=seed)
        if res.survivors == [0]:
            hits += 1
    assert hits >= 28


def test_mcs_identical_losses_all_survive():
    rng = np.random.default_rng(7)
    row = rng.uniform(0.5, 1.5, 200)
    losses = np.stack([row, row.copy(), row.copy()])
    res = mcs(losses, alpha=0.05, b_boot=300, seed=1)
    assert res.survivors == [0, 1, 2]
    assert res.eliminated == []
    assert np.all(res.p_values == 1.0)


def test_mcs_equal_ability_usually_keeps_all():
    keeps = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        t = 200
        losses = np.stack([rng.uniform(0.5, 1.5, t) for _ in range(3)])
        res = mcs(losses, alpha=0.05, b_boot=400, seed=seed)
        if len(res.survivors) == 3:
            keeps += 1
    # alpha=0.05 test on equal models keeps everyone most of the time
    assert keeps >= 15


def test_mcs_never_empty_and_deterministic():
    rng = np.random.default_rng(8)
    losses = np.stack([rng.uniform(0, 1, 150) + k for k in range(4)])
    r1 = mcs(losses, alpha=0.5, b_boot=200, seed=3)
    r2 = mcs(losses, alpha=0.5, b_boot=200, seed=3)
    assert len(r1.survivors) >= 1
    assert r1.survivors == r2.survivors
    assert np.array_equal(r1.p_values, r2.p_values)
    # p-values are monotone along the elimination order
    elim_p = [r1.p_values[i] for i in r1.eliminated]
    assert all(a <= b + 1e-15 for a, b in zip(elim_p, elim_p[1:]))


def test_mcs_validation():
    with pytest.raises(ShapeError):
        mcs(np.ones((1, 100)))
    with pytest.raises(ConfigError):
        mcs(np.ones((2, 100)) + np.random.default_rng(0).normal(0, 1, (2, 100)),
            b_boot=50)
    with pytest.raises(ValueError):
        mcs(np.random.default_rng(0).normal(0, 1, (2, 20)), b_boot=200,
            block_len=20)


# -- report ------------------------------------------------------------


def test_build_report_structure():
    rng = np.random.default_rng(9)
    t = 120
    base = rng.uniform(0.5, 1.5, t)
    model_losses = {
        "good": {"mse": base, "qlike": base * 0.1},
        "bad": {"mse": base + 1.0, "qlike": base * 0.1 + 0.5},
        "noqlike": {"mse": base + 2.0},
    }
    rep = build_report(model_losses, horizon=1, alpha=0.05, b_boot=200, seed=0)
    assert rep["models"] == ["bad", "good", "noqlike"]
    assert abs(rep["aggregates"]["good"]["mse"] - base.mean()) < 1e-12
    assert "qlike" not in rep["aggregates"]["noqlike"]
    assert set(rep["dm"]["mse"]) == {"bad|good", "bad|noqlike", "good|noqlike"}
    assert set(rep["dm"]["qlike"]) == {"bad|good"}
    assert rep["dm"]["mse"]["bad|good"]["stat"] > 10
    assert "good" in rep["mcs"]["mse"]["survivors"]
    assert set(rep["mcs"]["qlike"]["p_values"]) == {"bad", "good"}
    assert rep["meta"]["hac_lags"] == 0
    with pytest.raises(ConfigError):
        build_report({})


def test_build_report_degenerate_dm_noted():
    t = 100
    base = np.random.default_rng(10).uniform(0.5, 1.5, t)
    model_losses = {"a": {"mse": base}, "b": {"mse": base.copy()}}
    rep = build_report(model_losses, b_boot=200)
    assert rep["dm"]["mse"]["a|b"] == {"error": "degenerate loss differential"}
    # identical losses: both models survive the confidence set
    assert rep["mcs"]["mse"]["survivors"] == ["a", "b"]
