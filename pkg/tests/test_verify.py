import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from solarmos.verify import (
    BinaryEventSpec, ContingencyCounts, bin_index, brier, climatology_quantiles, crps, crps_cases, crpss,
    default_cost_loss, default_triggers, deterministic_pev, economic_value, event_probability, is_undefined,
    pev_curve, pev_from_probs, pinball_loss, reliability, reliability_from_probs, rmse_ss,
)


# ---------------------------------------------------------------- brute-force oracles

def crps_oracle(f, y):
    q = len(f)
    a = sum(abs(fk - y) for fk in f) / q
    b = sum(abs(fk - fl) for fk in f for fl in f) / (2 * q * q)
    return a - b


def brier_oracle(F, obs, t):
    total = 0.0
    for row, y in zip(F, obs):
        p = sum(1 for v in row if v <= t) / len(row)
        o = 1.0 if y <= t else 0.0
        total += (o - p) ** 2
    return total / len(obs)


def pinball_oracle(q, y, f):
    return q * (y - f) if y >= f else (q - 1) * (y - f)


def value_oracle(a, h, fa, m, orf):
    if a < orf:
        return (a * (h + fa - 1) + m) / (a * (orf - 1))
    return (a * (h + fa) + m - orf) / ((a - 1) * orf)


def pev_oracle(prob, outcome, triggers, a):
    n = len(prob)
    orf = sum(outcome) / n
    best = -math.inf
    for t in triggers:
        h = sum(1 for p, o in zip(prob, outcome) if p >= t and o) / n
        fa = sum(1 for p, o in zip(prob, outcome) if p >= t and not o) / n
        m = sum(1 for p, o in zip(prob, outcome) if p < t and o) / n
        best = max(best, value_oracle(a, h, fa, m, orf))
    return best


def _rel(a, b):
    return abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_metric_oracles_on_random_small_cases():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        q = int(rng.integers(1, 6))
        n = int(rng.integers(2, 8))
        F = np.round(rng.uniform(0, 1.2, (n, q)), 3)
        obs = np.round(rng.uniform(0, 1.2, n), 3)
        for i in range(n):
            assert _rel(crps(F[i], obs[i]), crps_oracle(list(F[i]), obs[i]))
        t = float(rng.choice([0.2, 0.5, 0.9]))
        assert _rel(brier(F, obs, t)[0], brier_oracle(F, obs, t))
        lv = float(rng.uniform(0.01, 0.99))
        for i in range(n):
            assert _rel(pinball_loss(lv, obs[i], F[i, 0]), pinball_oracle(lv, obs[i], F[i, 0]))
        prob = event_probability(F, t)
        outcome = obs <= t
        if 0 < outcome.mean() < 1:
            cl = default_cost_loss()[::7]
            got, _ = pev_from_probs(prob, outcome, default_triggers(q), cl)
            for a, g in zip(cl, got):
                assert _rel(g, pev_oracle(list(prob), list(outcome), default_triggers(q), a))


# ---------------------------------------------------------------- examples

def test_pinball_examples():
    assert pinball_loss(0.9, 1.0, 0.5) == pytest.approx(0.45, rel=1e-15)
    assert pinball_loss(0.5, 0.0, 2.0) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError):
        pinball_loss(1.0, 0.0, 0.0)


def test_crps_examples():
    assert crps([0.0, 1.0], 0.5) == pytest.approx(0.25, abs=1e-15)
    assert crps([0.3], 0.7) == pytest.approx(0.4, abs=1e-15)
    assert crps([0.4] * 5, 0.4) == pytest.approx(0.0, abs=1e-15)


def test_brier_examples():
    F = np.array([[0.1, 0.9], [0.1, 0.9]])  # probability 0.5 at T=0.5
    bs, _ = brier(F, [0.3, 0.8], 0.5)
    assert bs == pytest.approx(0.25)
    perfect = np.array([[0.1], [0.9]])
    bs, bss = brier(perfect, [0.3, 0.8], 0.5)
    assert bs == 0.0 and bss == 1.0
    bs, bss = brier(perfect, [0.3, 0.3], 0.5)
    assert is_undefined(bss)


def test_rmse_skill_examples():
    assert rmse_ss([0.5, 0.5], [0.0, 1.0]) == pytest.approx(0.0)
    assert rmse_ss([0.0, 1.0], [0.0, 1.0]) == 1.0
    assert is_undefined(rmse_ss([0.5, 0.5], [0.5, 0.5]))
    assert is_undefined(rmse_ss([], []))


def test_crpss_references():
    rng = np.random.default_rng(3)
    obs = rng.uniform(0, 1, 200)
    levels = np.arange(1, 50) / 50
    clim = np.tile(climatology_quantiles(obs, levels), (200, 1))
    assert crpss(clim, obs, levels) == pytest.approx(0.0, abs=1e-15)
    perfect = np.tile(obs[:, None], (1, 49))
    assert crpss(perfect, obs, levels) == 1.0
    assert is_undefined(crpss(np.ones((60, 49)), np.ones(60), levels))
    with pytest.warns(UserWarning):
        crpss(perfect[:10], obs[:10], levels)


def test_event_spec_validation():
    with pytest.raises(ValueError):
        BinaryEventSpec(0.0)
    assert event_probability(np.array([[0.1, 0.5, 0.9]]), BinaryEventSpec(0.5))[0] == pytest.approx(2 / 3)


# ---------------------------------------------------------------- CRPS properties

@given(st.floats(-5, 5), st.floats(-5, 5))
def test_crps_one_member_is_absolute_error(f, y):
    assert crps([f], y) == pytest.approx(abs(f - y), abs=1e-12)


@given(st.lists(st.floats(0, 1.5), min_size=1, max_size=8), st.floats(0, 1.5))
def test_crps_is_non_negative_and_order_free(f, y):
    v = crps(f, y)
    assert v >= -1e-12
    assert crps(sorted(f, reverse=True), y) == pytest.approx(v, abs=1e-12)


def test_crps_minimised_by_empirical_quantiles():
    # a two-member forecast is optimal at the 1/4 and 3/4 sample quantiles
    rng = np.random.default_rng(8)
    obs = rng.uniform(0, 1, 8)
    emp = np.sort(obs)[[1, 5]]
    score = crps_cases(np.tile(emp, (8, 1)), obs).mean()
    candidates = list(itertools.product(np.sort(obs), repeat=2)) + list(
        itertools.product(np.linspace(0, 1, 41), repeat=2))
    for c in candidates:
        assert crps_cases(np.tile(c, (8, 1)), obs).mean() >= score - 1e-12


# ---------------------------------------------------------------- reliability

def test_bins_partition_unit_interval():
    assert list(bin_index([0.0, 0.1, 0.1000001, 0.95, 1.0], 10)) == [0, 0, 1, 9, 9]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(2, 12))
def test_bin_counts_sum_to_n(probs, k):
    d = reliability_from_probs(probs, np.zeros(len(probs)), k)
    assert d.count.sum() == len(probs)
    assert np.all(np.isnan(d.mean_forecast[d.empty]))


def test_calibrated_forecasts_stay_within_three_standard_errors():
    rng = np.random.default_rng(5)
    p = rng.uniform(0, 1, 20000)
    o = rng.uniform(0, 1, 20000) < p
    d = reliability_from_probs(p, o, 10)
    full = d.count >= 50
    z = np.abs(d.observed_freq - d.mean_forecast)[full] / d.standard_error()[full]
    assert np.all(z < 3)


def test_always_zero_probability_single_bin():
    F = np.full((5, 3), 0.9)
    obs = np.array([0.1, 0.8, 0.95, 0.3, 0.7])
    d = reliability(F, obs, 0.5)
    assert d.count[0] == 5 and d.count[1:].sum() == 0
    assert d.observed_freq[0] == pytest.approx(0.4)


def test_brier_decomposition_at_bin_centres():
    rng = np.random.default_rng(9)
    centres = (np.arange(10) + 0.5) / 10
    p = rng.choice(centres, 3000)
    o = (rng.uniform(size=3000) < p * 0.8).astype(float)
    bs = np.mean((p - o) ** 2)
    rel, res, unc = reliability_from_probs(p, o, 10).decomposition()
    assert rel - res + unc == pytest.approx(bs, abs=1e-12)


# ---------------------------------------------------------------- economic value

def test_perfect_forecast_value_is_one_everywhere():
    cl = default_cost_loss()
    assert cl.size == 99
    for orf in (0.1, 0.37, 0.5, 0.9):
        v = economic_value(cl, orf, 0.0, 0.0, orf)
        assert np.all(np.abs(v - 1.0) <= 1e-12)


def test_always_warn_value_is_zero_below_orf():
    orf = 0.4
    cl = default_cost_loss()
    v = economic_value(cl, orf, 1 - orf, 0.0, orf)
    assert np.all(np.abs(v[cl < orf]) <= 1e-12)


def test_perfect_pev_curve():
    obs = np.array([0.1, 0.7, 0.3, 0.9, 0.45])
    F = np.tile(obs[:, None], (1, 4))
    pev, _ = pev_curve(F, obs, 0.5)
    assert np.all(np.abs(pev - 1.0) <= 1e-12)


def test_pev_undefined_without_both_outcomes():
    pev, trig = pev_from_probs([0.2, 0.4], [True, True], default_triggers(4), [0.3])
    assert np.isnan(pev).all() and np.isnan(trig).all()
    with pytest.raises(ValueError):
        pev_from_probs([0.2], [True], [0.5], [1.0])


def test_contingency_invariants():
    c = ContingencyCounts.from_decisions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert (c.hits, c.false_alarms, c.misses, c.correct_rejections) == (2, 1, 1, 1)
    assert c.n == 5 and c.H + c.M == pytest.approx(c.ORF)


@given(st.integers(0, 10_000))
def test_probabilistic_value_dominates_deterministic(seed):
    rng = np.random.default_rng(seed)
    obs = rng.uniform(0, 1, 40)
    F = np.sort(obs[:, None] + rng.normal(0, 0.2, (40, 9)), axis=1)
    if not 0 < (obs <= 0.5).mean() < 1:
        return
    prob, _ = pev_curve(F, obs, 0.5)
    det = deterministic_pev(F[:, 4], obs, 0.5)
    assert np.all(prob >= det - 1e-12)


@given(st.integers(0, 10_000))
def test_best_trigger_value_bounded(seed):
    rng = np.random.default_rng(seed)
    prob = rng.uniform(0, 1, 30)
    out = rng.uniform(0, 1, 30) < prob
    if not 0 < out.mean() < 1:
        return
    pev, _ = pev_from_probs(prob, out, default_triggers(10), default_cost_loss())
    assert np.all(pev <= 1 + 1e-12)
    # the never-warn trigger is always available and has value 0
    assert np.all(pev >= -1e-12)
