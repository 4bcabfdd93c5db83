import math
import random

import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from lcaas import stats

REL = 1e-9


def brute_ks_d(a, b):
    # ECDF sweep over every observed point, counting with plain comparisons
    d = 0.0
    for t in sorted(set(a) | set(b)):
        fa = sum(v <= t for v in a) / len(a)
        fb = sum(v <= t for v in b) / len(b)
        d = max(d, abs(fa - fb))
    return d


def test_descriptive_small():
    assert stats.mean([1, 2, 3]) == 2
    assert stats.median([1, 2, 3]) == 2
    assert stats.percentile([1, 2, 3, 4], 95) == pytest.approx(3.85, rel=REL)
    for f in (stats.mean, stats.median, lambda s: stats.percentile(s, 95)):
        assert f([7.5]) == 7.5


def test_empty_and_bad_inputs():
    with pytest.raises(stats.StatsError) as exc:
        stats.mean([])
    assert exc.value.code == "empty_sample"
    with pytest.raises(stats.StatsError):
        stats.percentile([1], 101)
    with pytest.raises(stats.StatsError):
        stats.mean([1, float("nan")])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_percentile_bounds(xs):
    assert stats.percentile(xs, 0) == min(xs)
    assert stats.percentile(xs, 100) == max(xs)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 100))
def test_percentile_matches_numpy_linear(xs, p):
    import numpy as np

    assert stats.percentile(xs, p) == pytest.approx(float(np.percentile(xs, p)), rel=1e-9, abs=1e-6)


def test_pearson_spearman_examples():
    assert stats.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, rel=REL)
    assert stats.spearman([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, rel=REL)
    assert stats.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, rel=REL)
    x, y = [1, 2, 3, 4], [1, 4, 9, 16]
    assert stats.spearman(x, y) == pytest.approx(1.0, rel=REL)
    # by hand: sxy = 25, sxx = 5, syy = 129
    assert stats.pearson(x, y) == pytest.approx(25 / math.sqrt(645), rel=REL)
    assert stats.pearson(x, y) < 1


def test_constant_input():
    with pytest.raises(stats.StatsError) as exc:
        stats.pearson([1, 1, 1], [1, 2, 3])
    assert exc.value.code == "constant_input"
    with pytest.raises(stats.StatsError):
        stats.linear_fit([2, 2, 2], [1, 2, 3])


def test_rankdata_ties():
    assert stats.rankdata([10, 20, 10, 30]) == [1.5, 3.0, 1.5, 4.0]


finite = st.integers(-10_000, 10_000).map(lambda v: v / 10)


@settings(max_examples=60)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=30))
def test_correlation_properties(pairs):
    x = [a for a, _ in pairs]
    y = [b for _, b in pairs]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    r = stats.pearson(x, y)
    assert -1 <= r <= 1
    assert r == pytest.approx(stats.pearson(y, x), abs=1e-12)
    assert stats.pearson(x, x) == pytest.approx(1.0)
    # strictly monotone transform leaves spearman unchanged
    assert stats.spearman(x, y) == pytest.approx(
        stats.spearman([math.atan(v / 100) ** 3 for v in x], y), abs=1e-12
    )
    assert stats.spearman(x, y) == pytest.approx(scipy.stats.spearmanr(x, y)[0], abs=1e-9)


def test_linear_fit_exact():
    fit = stats.linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert fit.slope == pytest.approx(2, rel=REL)
    assert fit.intercept == pytest.approx(1, rel=REL)
    assert fit.r_squared == pytest.approx(1, rel=REL)
    slope, intercept, r2, p = stats.linear_fit([1, 2, 3], [5, 7, 9])
    assert r2 == pytest.approx(1, rel=REL)


def test_linear_fit_matches_reference():
    rng = random.Random(3)
    for _ in range(25):
        n = rng.randint(3, 40)
        x = [rng.uniform(0, 10) for _ in range(n)]
        y = [0.3 * v + rng.gauss(0, 2) for v in x]
        ours = stats.linear_fit(x, y)
        ref = scipy.stats.linregress(x, y)
        assert ours.slope == pytest.approx(ref.slope, rel=REL)
        assert ours.intercept == pytest.approx(ref.intercept, rel=1e-8, abs=1e-12)
        assert ours.r_squared == pytest.approx(ref.rvalue ** 2, rel=1e-8)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-15)


@pytest.mark.parametrize("df", [1, 2, 3, 7.5, 30, 1000])
@pytest.mark.parametrize("t", [0.0, 0.1, 1.0, 2.5, 10.0, -3.0])
def test_t_two_sided_p(df, t):
    ref = 2 * scipy.stats.t.sf(abs(t), df)
    assert stats.t_two_sided_p(t, df) == pytest.approx(ref, rel=1e-9, abs=1e-300)


def test_linear_fit_null_p_values_uniform():
    # under the null the slope p-value is uniform, so P(p > 0.1) = 0.9
    rng = random.Random(11)
    ps = []
    for _ in range(2000):
        x = [rng.random() for _ in range(20)]
        y = [rng.gauss(0, 1) for _ in range(20)]
        ps.append(stats.linear_fit(x, y).p_value)
    frac = sum(p > 0.1 for p in ps) / len(ps)
    assert 0.88 <= frac <= 0.92
    assert scipy.stats.kstest(ps, "uniform").pvalue > 0.01


def test_ks_examples():
    assert stats.ks_two_sample([1, 2, 3], [1, 2, 3])[0] == 0
    assert stats.ks_two_sample([0, 0.5, 1], [10, 10.5, 11])[0] == pytest.approx(1.0, rel=REL)
    assert stats.ks_two_sample([1, 2, 3, 4], [1, 2, 3, 5])[0] == pytest.approx(0.25, rel=REL)


def test_ks_matches_brute_force_sweep():
    rng = random.Random(7)
    for _ in range(200):
        a = [rng.randint(0, 8) for _ in range(rng.randint(1, 12))]
        b = [rng.randint(0, 8) for _ in range(rng.randint(1, 12))]
        d = stats.ks_statistic(a, b)
        assert d == pytest.approx(brute_ks_d(a, b), rel=REL, abs=1e-15)
        assert d == pytest.approx(stats.ks_statistic(b, a), abs=1e-15)
        assert 0 <= d <= 1


@pytest.mark.parametrize("lam", [0.2, 0.3, 0.5, 0.8, 1.0, 1.36, 1.95, 3.0, 6.0])
def test_kolmogorov_q_matches_reference(lam):
    assert stats.kolmogorov_q(lam) == pytest.approx(scipy.special.kolmogorov(lam), rel=1e-9, abs=1e-300)


def test_ks_p_value_uses_corrected_lambda():
    a = [0.1 * i for i in range(30)]
    b = [0.1 * i + 0.7 for i in range(40)]
    d, p = stats.ks_two_sample(a, b)
    en = math.sqrt(30 * 40 / 70)
    assert p == pytest.approx(scipy.special.kolmogorov((en + 0.12 + 0.11 / en) * d), rel=1e-9)


def test_ks_empty():
    with pytest.raises(stats.StatsError):
        stats.ks_two_sample([], [1])
