import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from mechforge import stats
from mechforge.stats import StatsError


@settings(max_examples=300, deadline=None)
@given(a=st.floats(0.05, 200.0), b=st.floats(0.05, 200.0), x=st.floats(0.0, 1.0))
def test_betainc_matches_scipy(a, b, x):
    assert stats.betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), rel=1e-10, abs=1e-13)


def test_betainc_edges_and_errors():
    assert stats.betainc(2.0, 3.0, 0.0) == 0.0
    assert stats.betainc(2.0, 3.0, 1.0) == 1.0
    assert stats.betainc(1.0, 1.0, 0.3) == pytest.approx(0.3)
    with pytest.raises(StatsError):
        stats.betainc(0.0, 1.0, 0.5)
    with pytest.raises(StatsError):
        stats.betainc(1.0, 1.0, 1.5)


@pytest.mark.parametrize("t,df", [(0.0, 5), (1.5, 3), (-2.8, 52), (10.0, 10), (0.3, 200)])
def test_t_p_matches_scipy(t, df):
    assert stats.t_two_sided_p(t, df) == pytest.approx(2 * sps.t.sf(abs(t), df), rel=1e-10)


def test_p_value_example():
    p = stats.p_value(-0.3814, 54)
    assert round(p, 4) == 0.0044
    t = 0.3814 * math.sqrt(52 / (1 - 0.3814 ** 2))
    assert p == pytest.approx(2 * sps.t.sf(t, 52), rel=1e-10)


def test_perfect_linear_relation():
    xs = list(range(10))
    assert stats.pearson_r(xs, [3 * x + 1 for x in xs]) == 1.0
    c = stats.compute_correlation(xs, [-2 * x for x in xs])
    assert c.r == -1.0 and c.p == 0.0 and c.significant()


def test_zero_variance_and_small_n():
    with pytest.raises(StatsError):
        stats.compute_correlation([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(StatsError):
        stats.compute_correlation([1, 2], [1, 2])
    with pytest.raises(StatsError):
        stats.compute_correlation([1, 2, 3], [1, 2])


@settings(max_examples=100, deadline=None)
@given(xs=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40), data=st.data())
def test_two_pass_matches_numpy(xs, data):
    ys = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(xs), max_size=len(xs)))
    try:
        r = stats.pearson_r(xs, ys)
    except StatsError:
        return
    ref = float(np.corrcoef(xs, ys)[0, 1])
    if math.isfinite(ref) and np.std(xs) > 1e-6 and np.std(ys) > 1e-6:
        assert r == pytest.approx(ref, abs=1e-12 + 1e-9 * abs(ref))


def test_type_one_error_rate():
    rng = np.random.default_rng(2024)
    rejections = 0
    for _ in range(1000):
        x, y = rng.normal(size=54), rng.normal(size=54)
        rejections += stats.compute_correlation(x, y).significant(0.05)
    assert abs(rejections / 1000 - 0.05) <= 0.02
