import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import checks
import oracles
from synpower import twosample as ts


def _rng(seed=0):
    return np.random.default_rng(seed)


def test_welch_identical_samples():
    x = _rng().normal(size=20)
    r = ts.welch_t_test(x, x.copy())
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_welch_antisymmetry():
    rng = _rng(1)
    x, y = rng.normal(size=15), rng.normal(0.5, 2, size=22)
    a, b = ts.welch_t_test(x, y), ts.welch_t_test(y, x)
    assert a.statistic == -b.statistic
    assert a.p_value == b.p_value


def test_welch_p_against_quadrature():
    rng = np.random.default_rng(2024)
    x, y = rng.normal(0, 1, 100), rng.normal(0.3, 1, 100)
    r = ts.welch_t_test(x, y)
    assert abs(r.p_value - oracles.t_two_sided_quad(r.statistic, r.details["df"])) < 1e-9


def test_welch_degenerate():
    assert ts.welch_t_test([1, 1, 1], [1, 1]).p_value == 1.0
    with pytest.raises(ts.DegenerateDataError):
        ts.welch_t_test([1, 1, 1], [2, 2])


def test_hotelling_identical_samples():
    X = _rng(3).normal(size=(30, 4))
    r = ts.hotelling_t2(X, X.copy())
    assert r.statistic == 0.0 and r.p_value == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_hotelling_affine_invariance(seed):
    rng = _rng(seed)
    X, Y = rng.normal(size=(25, 5)), rng.normal(0.4, 1, size=(31, 5))
    A = rng.normal(size=(5, 5)) + 3 * np.eye(5)
    b = rng.normal(size=5)
    base = ts.hotelling_t2(X, Y).statistic
    moved = ts.hotelling_t2(X @ A.T + b, Y @ A.T + b).statistic
    assert moved == pytest.approx(base, rel=1e-8)


def test_hotelling_reduces_to_student_t():
    rng = _rng(4)
    x, y = rng.normal(size=12), rng.normal(1, 1, size=17)
    h = ts.hotelling_t2(x[:, None], y[:, None])
    s = ts.student_t_test(x, y)
    assert h.statistic == pytest.approx(s.statistic ** 2, rel=1e-10)
    assert h.p_value == pytest.approx(s.p_value, abs=1e-12)


def test_hotelling_singular_and_small():
    rng = _rng(5)
    X = rng.normal(size=(10, 3))
    X[:, 2] = X[:, 0]
    Y = rng.normal(size=(10, 3))
    Y[:, 2] = Y[:, 0]
    with pytest.raises(ts.DegenerateDataError, match="dimensionality"):
        ts.hotelling_t2(X, Y)
    with pytest.raises(ts.TestError):
        ts.hotelling_t2(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)))


def test_median_heuristic_examples():
    assert ts.median_heuristic([[0.0, 0.0], [3.0, 0.0]]) == pytest.approx(3.0)
    pts = _rng(6).normal(size=(5, 3))
    dists = sorted(np.linalg.norm(pts[i] - pts[j]) for i in range(5) for j in range(i + 1, 5))
    assert ts.median_heuristic(pts) == pytest.approx((dists[4] + dists[5]) / 2, rel=1e-12)
    assert ts.median_heuristic(2.5 * pts) == pytest.approx(2.5 * ts.median_heuristic(pts), rel=1e-12)
    with pytest.raises(ts.TestError):
        ts.median_heuristic(np.ones((4, 2)))


def test_mmd_examples():
    X = _rng(7).normal(size=(12, 3))
    assert ts.mmd2_biased(X, X.copy()) == 0.0
    Y = _rng(8).normal(size=(9, 3))
    # equal up to summation order
    assert ts.mmd2_biased(X, Y) == pytest.approx(ts.mmd2_biased(Y, X), rel=1e-13)
    value = ts.mmd2_biased([[0.0]], [[1.0]], ts.KernelSpec(1.0))
    assert value == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-12)
    assert value == pytest.approx(0.786939, abs=1e-6)


def test_mmd_l1_examples():
    X = _rng(9).normal(size=(10, 2))
    T = _rng(10).normal(size=(4, 2))
    assert ts.mmd_l1(X, X.copy(), ts.KernelSpec(), T) == 0.0
    mirrored = ts.mmd_l1([[-1.0], [-3.0]], [[1.0], [3.0]], ts.KernelSpec(1.0), [[0.0]])
    assert mirrored == pytest.approx(0.0, abs=1e-15)
    value = ts.mmd_l1([[0.0]], [[2.0]], ts.KernelSpec(1.0), [[0.0]])
    assert value == pytest.approx(1 - math.exp(-2), abs=1e-12)
    assert value == pytest.approx(0.864665, abs=1e-6)


def test_width_mismatch():
    with pytest.raises(ts.TestError):
        ts.mmd2_biased(np.ones((3, 2)), np.ones((3, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_kernel_invariances(seed):
    assert checks.kernel_invariance_error(seed) < 1e-10


def test_fast_permutations_match_generic_engine():
    rng = _rng(11)
    X, Y = rng.normal(size=(14, 3)), rng.normal(0.5, 1, size=(11, 3))
    cfg = ts.PermutationConfig(150, seed=42)
    kernel = ts.KernelSpec(1.3)
    fast = ts.mmd_test(X, Y, kernel, cfg)
    slow = ts.permutation_pvalue(lambda a, b: ts.mmd2_biased(a, b, kernel), X, Y, cfg)
    assert fast.p_value == pytest.approx(slow, abs=1e-12)

    locs = rng.normal(size=(6, 3))
    fast = ts.mmd_l1_test(X, Y, kernel, cfg, locations=locs)
    slow = ts.permutation_pvalue(lambda a, b: ts.mmd_l1(a, b, kernel, locs), X, Y, cfg)
    assert fast.p_value == pytest.approx(slow, abs=1e-12)


def test_permutation_p_bounds_and_determinism():
    rng = _rng(12)
    X, Y = rng.normal(size=(10, 2)), rng.normal(5, 1, size=(10, 2))
    r = ts.mmd_test(X, Y, config=ts.PermutationConfig(99, 3))
    assert r.p_value == pytest.approx(1 / 100)
    assert ts.mmd_test(X, Y, config=ts.PermutationConfig(99, 3)).p_value == r.p_value
    same = ts.mmd_test(X, X[::-1].copy(), config=ts.PermutationConfig(99, 3))
    assert same.p_value >= 1 / 100
    assert same.p_value > 0.5


def test_permutation_pvalues_uniform_under_null():
    pvals = []
    for rep in range(400):
        rng = np.random.default_rng(50_000 + rep)
        X, Y = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
        pvals.append(ts.mmd_test(X, Y, config=ts.PermutationConfig(99, rep)).p_value)
    p = np.sort(pvals)
    ecdf = np.arange(1, len(p) + 1) / len(p)
    ks = max(np.abs(ecdf - p).max(), np.abs(ecdf - 1 / len(p) - p).max())
    assert ks < 0.1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), m=st.integers(2, 20), n=st.integers(2, 20))
def test_pvalues_in_unit_interval(seed, m, n):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(m, 2)), rng.normal(size=(n, 2))
    for r in (ts.welch_t_test(X[:, 0], Y[:, 0]), ts.mmd_test(X, Y, config=ts.PermutationConfig(20, seed)),
              ts.mmd_l1_test(X, Y, config=ts.PermutationConfig(20, seed))):
        assert 0.0 <= r.p_value <= 1.0
