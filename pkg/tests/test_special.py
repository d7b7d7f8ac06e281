import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from synpower.special import f_sf, log_gamma, regularized_incomplete_beta, t_two_sided_p


def test_log_gamma_factorials():
    assert log_gamma(1) == 0.0
    assert log_gamma(5) == pytest.approx(math.log(24), abs=1e-13)


@pytest.mark.parametrize("x", [1e-6, 0.1, 0.5, 0.9, 1.5, 3.7, 10.0, 123.4])
def test_log_gamma_matches_stdlib(x):
    assert log_gamma(x) == pytest.approx(math.lgamma(x), rel=1e-12, abs=1e-13)


def test_log_gamma_domain():
    with pytest.raises(ValueError):
        log_gamma(0.0)


@pytest.mark.parametrize("a", [0.3, 1.0, 2.5, 40.0])
def test_incomplete_beta_symmetric_midpoint(a):
    assert regularized_incomplete_beta(a, a, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_incomplete_beta_quadrature_value():
    ref = oracles.beta_cdf_quad(2, 3, 0.4)
    assert ref == pytest.approx(0.5248, abs=1e-12)
    assert regularized_incomplete_beta(2, 3, 0.4) == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.2), (5, 1.5, 0.9), (30, 40, 0.45), (1.2, 7, 0.01)])
def test_incomplete_beta_against_quadrature(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(oracles.beta_cdf_quad(a, b, x), abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.1, 50), b=st.floats(0.1, 50))
def test_incomplete_beta_monotone(a, b):
    xs = np.linspace(0, 1, 1000)
    vals = [regularized_incomplete_beta(a, b, x) for x in xs]
    assert all(v2 >= v1 - 1e-13 for v1, v2 in zip(vals, vals[1:]))
    assert vals[0] == 0.0 and vals[-1] == 1.0


def test_incomplete_beta_domain():
    with pytest.raises(ValueError):
        regularized_incomplete_beta(1, 1, 1.5)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(0, 1, 0.5)


@pytest.mark.parametrize("t,df", [(0.0, 5), (1.3, 3), (-2.2, 17.5), (4.0, 198)])
def test_t_tail_against_quadrature(t, df):
    assert t_two_sided_p(t, df) == pytest.approx(oracles.t_two_sided_quad(t, df), abs=1e-11)


def test_f_tail_against_scipy():
    from scipy import stats

    for f, d1, d2 in [(0.5, 3, 10), (2.0, 10, 189), (7.5, 1, 4)]:
        assert f_sf(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), abs=1e-12)
