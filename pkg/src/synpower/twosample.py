"""Two-sample tests: Welch/Student t, Hotelling's T², and kernel MMD tests
with permutation p-values."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from .special import f_sf, t_two_sided_p

MAX_CONDITION = 1e12


class Method(str, Enum):
    WELCH_T = "WelchT"
    STUDENT_T = "StudentT"
    WELCH_BONFERRONI = "WelchBonferroni"
    HOTELLING_T2 = "HotellingT2"
    MMD2_BIASED = "MMD2Biased"
    MMD_L1 = "MMDL1"


class TestError(ValueError):
    """Raised when a test cannot be computed on the given data."""

    __test__ = False  # not a pytest class


class DegenerateDataError(TestError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: Method
    n1: int
    n2: int
    details: dict = field(default_factory=dict)

    __test__ = False


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel exp(-|a-b|^2 / (2 sigma^2)); ``bandwidth`` is a fixed
    sigma or the string ``"median"`` for the median heuristic."""

    bandwidth: Union[float, str] = "median"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be a positive finite number, got {self.bandwidth}")


@dataclass(frozen=True)
class PermutationConfig:
    permutations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.permutations < 1:
            raise ValueError("need at least one permutation")


def _as_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise TestError(f"expected a sample matrix, got shape {a.shape}")
    return a


def _vector(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2 and a.shape[1] == 1:
        a = a[:, 0]
    if a.ndim != 1:
        raise TestError(f"expected a vector, got shape {a.shape}")
    return a


# ---------------------------------------------------------------- t tests

def welch_t_test(x, y) -> TestResult:
    x, y = _vector(x), _vector(y)
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise TestError(f"Welch t-test needs at least 2 observations per group, got {n1} and {n2}")
    v1, v2 = x.var(ddof=1), y.var(ddof=1)
    diff = x.mean() - y.mean()
    se2 = v1 / n1 + v2 / n2
    if se2 == 0:
        if diff == 0:
            return TestResult(0.0, 1.0, Method.WELCH_T, n1, n2, {"df": float("nan")})
        raise DegenerateDataError("both groups have zero variance but different means")
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    return TestResult(t, t_two_sided_p(t, df), Method.WELCH_T, n1, n2, {"df": df})


def student_t_test(x, y) -> TestResult:
    """Pooled-variance two-sample t-test."""
    x, y = _vector(x), _vector(y)
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise TestError(f"Student t-test needs at least 2 observations per group, got {n1} and {n2}")
    df = n1 + n2 - 2
    sp2 = ((n1 - 1) * x.var(ddof=1) + (n2 - 1) * y.var(ddof=1)) / df
    diff = x.mean() - y.mean()
    if sp2 == 0:
        if diff == 0:
            return TestResult(0.0, 1.0, Method.STUDENT_T, n1, n2, {"df": df})
        raise DegenerateDataError("pooled variance is zero but the means differ")
    t = diff / math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2))
    return TestResult(t, t_two_sided_p(t, df), Method.STUDENT_T, n1, n2, {"df": df})


def welch_bonferroni(X, Y) -> TestResult:
    """Per-column Welch tests; reports the Bonferroni-adjusted minimum p-value."""
    X, Y = _as_rows(X), _as_rows(Y)
    if X.shape[1] != Y.shape[1]:
        raise TestError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X.shape[1]
    results = [welch_t_test(X[:, j], Y[:, j]) for j in range(d)]
    j = min(range(d), key=lambda i: results[i].p_value)
    p = min(1.0, d * results[j].p_value)
    return TestResult(results[j].statistic, p, Method.WELCH_BONFERRONI, len(X), len(Y),
                      {"column": j, "columns": d})


def hotelling_t2(X, Y) -> TestResult:
    X, Y = _as_rows(X), _as_rows(Y)
    n1, d = X.shape
    n2 = Y.shape[0]
    if Y.shape[1] != d:
        raise TestError(f"column mismatch: {d} vs {Y.shape[1]}")
    if n1 < 2 or n2 < 2 or n1 + n2 - 2 <= d:
        raise TestError(f"Hotelling T² needs n1 + n2 - 2 > d; got n1={n1}, n2={n2}, d={d}")
    diff = X.mean(axis=0) - Y.mean(axis=0)
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    S = (Xc.T @ Xc + Yc.T @ Yc) / (n1 + n2 - 2)
    eig = np.linalg.eigvalsh(S)
    if eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise DegenerateDataError(
            "pooled covariance is singular or ill-conditioned "
            f"(condition {eig[-1] / eig[0] if eig[0] > 0 else float('inf'):.3g}); "
            "reduce dimensionality (e.g. PCA) before testing")
    if not diff.any():
        return TestResult(0.0, 1.0, Method.HOTELLING_T2, n1, n2, {"df": (d, n1 + n2 - d - 1)})
    t2 = float(n1 * n2 / (n1 + n2) * diff @ np.linalg.solve(S, diff))
    df2 = n1 + n2 - d - 1
    f = df2 / ((n1 + n2 - 2) * d) * t2
    return TestResult(t2, f_sf(f, d, df2), Method.HOTELLING_T2, n1, n2,
                      {"df": (d, df2), "f": f})


# ---------------------------------------------------------------- kernels

def _sq_dists(A: np.ndarray, B: np.ndarray, center: np.ndarray) -> np.ndarray:
    A = A - center
    B = B - center
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def median_heuristic(Z) -> float:
    """Median Euclidean distance over distinct pairs of rows."""
    Z = _as_rows(Z)
    if len(Z) < 2:
        raise TestError("median heuristic needs at least two rows")
    d2 = _sq_dists(Z, Z, Z.mean(axis=0))
    iu = np.triu_indices(len(Z), k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    if med <= 0:
        raise DegenerateDataError("median pairwise distance is zero; bandwidth undefined")
    return med


def _bandwidth(kernel: KernelSpec, pooled: np.ndarray) -> float:
    if kernel.bandwidth == "median":
        return median_heuristic(pooled)
    return float(kernel.bandwidth)


def _check_pair(X, Y):
    X, Y = _as_rows(X), _as_rows(Y)
    if X.shape[1] != Y.shape[1]:
        raise TestError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if len(X) == 0 or len(Y) == 0:
        raise TestError("both samples must be nonempty")
    return X, Y


def gaussian_gram(A, B, sigma: float, center=None) -> np.ndarray:
    A, B = _as_rows(A), _as_rows(B)
    if center is None:
        center = np.zeros(A.shape[1])
    return np.exp(-_sq_dists(A, B, center) / (2.0 * sigma * sigma))


def mmd2_biased(X, Y, kernel: KernelSpec = KernelSpec()) -> float:
    """Biased (V-statistic) estimate of squared MMD with a Gaussian kernel."""
    X, Y = _check_pair(X, Y)
    pooled = np.vstack([X, Y])
    sigma = _bandwidth(kernel, pooled)
    c = pooled.mean(axis=0)
    kxx = gaussian_gram(X, X, sigma, c).mean()
    kyy = gaussian_gram(Y, Y, sigma, c).mean()
    kxy = gaussian_gram(X, Y, sigma, c).mean()
    return max(float(kxx + kyy - 2.0 * kxy), 0.0)


def mmd_l1(X, Y, kernel: KernelSpec, locations) -> float:
    """L1 norm of the mean-embedding difference evaluated at test locations."""
    X, Y = _check_pair(X, Y)
    T = _as_rows(locations)
    if len(T) < 1 or T.shape[1] != X.shape[1]:
        raise TestError(f"need >= 1 test location of width {X.shape[1]}, got shape {T.shape}")
    pooled = np.vstack([X, Y])
    sigma = _bandwidth(kernel, pooled)
    c = pooled.mean(axis=0)
    wx = gaussian_gram(X, T, sigma, c).mean(axis=0)
    wy = gaussian_gram(Y, T, sigma, c).mean(axis=0)
    return float(np.abs(wx - wy).sum())


def l1_locations(pooled: np.ndarray, sigma: float, rng: np.random.Generator, n_locations: int = 10) -> np.ndarray:
    """Half pooled rows, half those rows jittered by N(0, sigma^2/4 I)."""
    half = n_locations // 2
    idx = rng.choice(len(pooled), size=min(half, len(pooled)), replace=False)
    base = pooled[idx]
    jitter = base + rng.standard_normal(base.shape) * (sigma / 2.0)
    extra = n_locations - len(base) - len(jitter)
    parts = [base, jitter]
    if extra > 0:
        parts.append(pooled[rng.choice(len(pooled), size=extra, replace=True)])
    return np.vstack(parts)


# ---------------------------------------------------------------- permutations

def permutation_pvalue(statistic_fn: Callable[[np.ndarray, np.ndarray], float], X, Y,
                       config: PermutationConfig) -> float:
    """(1 + #{permuted >= observed}) / (B + 1) over seeded relabelings."""
    X, Y = _as_rows(X), _as_rows(Y)
    m = len(X)
    pooled = np.vstack([X, Y])
    observed = statistic_fn(X, Y)
    rng = np.random.default_rng(config.seed)
    hits = 0
    for _ in range(config.permutations):
        perm = rng.permutation(len(pooled))
        if statistic_fn(pooled[perm[:m]], pooled[perm[m:]]) >= observed:
            hits += 1
    return (1 + hits) / (config.permutations + 1)


def _signed_weights(m: int, n: int, perms: np.ndarray) -> np.ndarray:
    # column b holds +1/m on the permuted first group and -1/n on the rest
    N = m + n
    W = np.empty((N, len(perms)))
    for b, perm in enumerate(perms):
        W[perm[:m], b] = 1.0 / m
        W[perm[m:], b] = -1.0 / n
    return W


def _permutations(rng: np.random.Generator, N: int, B: int) -> np.ndarray:
    perms = np.empty((B + 1, N), dtype=np.intp)
    perms[0] = np.arange(N)
    for b in range(1, B + 1):
        perms[b] = rng.permutation(N)
    return perms


def _pvalue_from(stats: np.ndarray) -> float:
    observed = stats[0]
    return (1 + int(np.count_nonzero(stats[1:] >= observed))) / len(stats)


def mmd_test(X, Y, kernel: KernelSpec = KernelSpec(), config: PermutationConfig = PermutationConfig()) -> TestResult:
    """Biased MMD² with a permutation p-value.

    All B relabelings are scored at once as quadratic forms w'Kw on the pooled
    Gram matrix; the permutation stream matches :func:`permutation_pvalue`.
    """
    X, Y = _check_pair(X, Y)
    m, n = len(X), len(Y)
    pooled = np.vstack([X, Y])
    sigma = _bandwidth(kernel, pooled)
    K = gaussian_gram(pooled, pooled, sigma, pooled.mean(axis=0))
    rng = np.random.default_rng(config.seed)
    W = _signed_weights(m, n, _permutations(rng, m + n, config.permutations))
    stats = np.maximum(np.einsum("ib,ib->b", W, K @ W), 0.0)
    return TestResult(float(stats[0]), _pvalue_from(stats), Method.MMD2_BIASED, m, n,
                      {"bandwidth": sigma, "permutations": config.permutations})


def mmd_l1_test(X, Y, kernel: KernelSpec = KernelSpec(), config: PermutationConfig = PermutationConfig(),
                locations: Optional[np.ndarray] = None, n_locations: int = 10) -> TestResult:
    """L1 witness statistic with a permutation p-value.

    Test locations, when not supplied, are drawn from the pooled sample with the
    seeded generator before the permutations are drawn.
    """
    X, Y = _check_pair(X, Y)
    m, n = len(X), len(Y)
    pooled = np.vstack([X, Y])
    sigma = _bandwidth(kernel, pooled)
    rng = np.random.default_rng(config.seed)
    if locations is None:
        locations = l1_locations(pooled, sigma, rng, n_locations)
    T = _as_rows(locations)
    if T.shape[1] != X.shape[1]:
        raise TestError(f"test locations have width {T.shape[1]}, expected {X.shape[1]}")
    KT = gaussian_gram(pooled, T, sigma, pooled.mean(axis=0))
    W = _signed_weights(m, n, _permutations(rng, m + n, config.permutations))
    stats = np.abs(W.T @ KT).sum(axis=1)
    return TestResult(float(stats[0]), _pvalue_from(stats), Method.MMD_L1, m, n,
                      {"bandwidth": sigma, "permutations": config.permutations, "locations": len(T)})
