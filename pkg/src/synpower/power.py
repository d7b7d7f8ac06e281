"""Monte-Carlo power estimation over a sample-size grid.

``power_curve`` runs the two-source procedure (real pairing and synthetic
pairing side by side); ``power_curve_fmri`` runs the tag-split procedure on a
tagged dataset with a conditional generator.  Every draw takes a seed derived
from (master seed, strategy, n, trial, group), so results do not depend on how
trials are scheduled across threads.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import twosample as ts
from .gan import ModelCheckpoint
from .sampling import (EmpiricalSource, GenerativeSource, Source, Strategy, TaggedDataset,
                       derive_seed, draw, split_by_tag, trial_seed)

log = logging.getLogger(__name__)

WILSON_Z = 1.959963984540054
TEST_NAMES = ("t", "welch", "student", "hotelling", "welch-bonferroni", "mmd", "mmd-l1")


class PowerRunError(RuntimeError):
    pass


@dataclass(frozen=True)
class TestSpec:
    """Which two-sample test to run.

    ``"t"`` means Welch on one column and Hotelling's T² on several (or the
    per-column Bonferroni Welch when ``multivariate_t="bonferroni"``).
    """

    method: str = "t"
    permutations: int = 200
    multivariate_t: str = "hotelling"
    l1_locations: int = 10

    __test__ = False

    def __post_init__(self):
        if self.method not in TEST_NAMES:
            raise ValueError(f"unknown test {self.method!r}; choose from {list(TEST_NAMES)}")
        if self.multivariate_t not in ("hotelling", "bonferroni"):
            raise ValueError("multivariate_t must be 'hotelling' or 'bonferroni'")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")

    def resolved(self, d: int) -> str:
        if self.method == "t":
            if d == 1:
                return "welch"
            return "hotelling" if self.multivariate_t == "hotelling" else "welch-bonferroni"
        return self.method

    def min_n(self, d: int) -> int:
        """Smallest per-group size the test accepts for d columns."""
        if self.resolved(d) == "hotelling":
            return max(2, d // 2 + 2)
        return 2

    def run(self, X, Y, seed: int) -> ts.TestResult:
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        d = X.shape[1] if X.ndim == 2 else 1
        name = self.resolved(d)
        if name == "welch":
            return ts.welch_t_test(X, Y)
        if name == "student":
            return ts.student_t_test(X, Y)
        if name == "hotelling":
            return ts.hotelling_t2(X, Y)
        if name == "welch-bonferroni":
            return ts.welch_bonferroni(X, Y)
        perm = ts.PermutationConfig(self.permutations, seed)
        if name == "mmd":
            return ts.mmd_test(X, Y, ts.KernelSpec(), perm)
        return ts.mmd_l1_test(X, Y, ts.KernelSpec(), perm, n_locations=self.l1_locations)


def default_n_start(d: int) -> int:
    return max(20, d + 3)


@dataclass(frozen=True)
class PowerConfig:
    n_start: int = 20
    n_end: int = 500
    n_step: int = 20
    trials: int = 50
    alpha: float = 0.05
    test: TestSpec = TestSpec()
    real_strategy: Strategy = Strategy.RESAMPLE
    master_seed: int = 0
    threads: int = 1
    max_excluded_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "real_strategy", Strategy(self.real_strategy))
        if self.n_step < 1 or self.trials < 1 or self.n_start < 1 or self.n_end < self.n_start:
            raise ValueError("need n_step >= 1, trials >= 1 and 1 <= n_start <= n_end")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def grid(self) -> List[int]:
        return list(range(self.n_start, self.n_end + 1, self.n_step))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["real_strategy"] = self.real_strategy.value
        # thread count never changes results, so it is not part of the identity
        d.pop("threads")
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PowerCurvePoint:
    n: int
    gamma: float
    trials: int
    rejections: int
    ci_low: float
    ci_high: float
    errors_excluded: int = 0


@dataclass
class PowerCurve:
    label: dict
    points: List[PowerCurvePoint]
    smoothed: Optional[List[float]] = None
    fingerprint: str = ""
    skipped: List[int] = field(default_factory=list)

    @property
    def ns(self) -> List[int]:
        return [p.n for p in self.points]

    @property
    def gammas(self) -> List[float]:
        return [p.gamma for p in self.points]

    @property
    def name(self) -> str:
        return f"{self.label.get('test', '?')}__{self.label.get('strategy', '?')}"


@dataclass(frozen=True)
class Recommendation:
    target: float
    n_required: Optional[int]
    basis: str
    max_gamma: float


def wilson_interval(rejections: int, trials: int, z: float = WILSON_Z) -> Tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = rejections / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials))
    # the bounds are exactly 0 and 1 at the extremes; avoid rounding just inside them
    lo = 0.0 if rejections == 0 else max(0.0, center - half)
    hi = 1.0 if rejections == trials else min(1.0, center + half)
    return lo, hi


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def estimate_power(src1: Source, src2: Source, strategy1: Strategy, strategy2: Strategy, n: int,
                   config: PowerConfig) -> PowerCurvePoint:
    """Run K trials at per-group size n and count p < alpha."""
    strategy1, strategy2 = Strategy(strategy1), Strategy(strategy2)
    d = src1.dim
    if n < config.test.min_n(d):
        raise PowerRunError(f"n={n} is below the minimum {config.test.min_n(d)} for test "
                            f"{config.test.resolved(d)!r} on {d} columns")
    master = config.master_seed

    def trial(k: int):
        X = draw(src1, strategy1, n, trial_seed(master, strategy1, n, k, 0))
        Y = draw(src2, strategy2, n, trial_seed(master, strategy2, n, k, 1))
        seed = trial_seed(master, strategy1, n, k, 2)
        try:
            return config.test.run(X, Y, seed).p_value
        except ts.TestError as exc:
            return exc

    outcomes = _map(trial, range(config.trials), config.threads)
    errors = [o for o in outcomes if isinstance(o, Exception)]
    if len(errors) > config.max_excluded_fraction * config.trials:
        raise PowerRunError(f"{len(errors)} of {config.trials} trials failed at n={n} "
                            f"(budget {config.max_excluded_fraction:.0%}); first error: {errors[0]}")
    if errors:
        log.warning("n=%d: excluded %d failed trial(s): %s", n, len(errors), errors[0])
    pvals = [o for o in outcomes if not isinstance(o, Exception)]
    K = len(pvals)
    rejections = sum(p < config.alpha for p in pvals)
    lo, hi = wilson_interval(rejections, K)
    return PowerCurvePoint(n, rejections / K, K, rejections, lo, hi, len(errors))


def _curve(src1, src2, strategy: Strategy, config: PowerConfig, grid, label) -> PowerCurve:
    points = [estimate_power(src1, src2, strategy, strategy, n, config) for n in grid]
    return PowerCurve(label, points, fingerprint=config.fingerprint())


def power_curve(src1: Source, src2: Source, config: PowerConfig,
                synthetic: Optional[Tuple[GenerativeSource, GenerativeSource]] = None
                ) -> Tuple[PowerCurve, Optional[PowerCurve]]:
    """Power over the grid for the real pairing and, if given, the synthetic pair."""
    d = src1.dim
    if src2.dim != d:
        raise PowerRunError(f"sources have different widths ({d} vs {src2.dim})")
    test_name = config.test.resolved(d)
    real = _curve(src1, src2, config.real_strategy, config, config.grid,
                  {"test": test_name, "strategy": config.real_strategy.value,
                   "sources": [src1.name, src2.name]})
    synth = None
    if synthetic is not None:
        g1, g2 = synthetic
        if g1.dim != d or g2.dim != d:
            raise PowerRunError("generative sources do not match the data width")
        synth = synthetic_curve(g1, g2, config)
    return real, synth


def synthetic_curve(g1: GenerativeSource, g2: GenerativeSource, config: PowerConfig) -> PowerCurve:
    """Power over the grid with both groups sampled from generative models."""
    if g1.dim != g2.dim:
        raise PowerRunError(f"generators have different widths ({g1.dim} vs {g2.dim})")
    return _curve(g1, g2, Strategy.SYNTHETIC, config, config.grid,
                  {"test": config.test.resolved(g1.dim), "strategy": Strategy.SYNTHETIC.value,
                   "sources": [g1.name, g2.name]})


def power_curve_fmri(dataset: TaggedDataset, tag: str, checkpoint: Optional[ModelCheckpoint],
                     config: PowerConfig) -> Tuple[PowerCurve, Optional[PowerCurve]]:
    """Tagged rows vs the rest: bootstrap on real rows, conditional sampling on the model."""
    with_tag, without = split_by_tag(dataset, tag)
    if len(with_tag) == 0 or len(without) == 0:
        raise PowerRunError(f"tag {tag!r} splits the dataset into {len(with_tag)} tagged and "
                            f"{len(without)} untagged rows; both sides must be nonempty")
    d = dataset.rows.shape[1]
    test_name = config.test.resolved(d)
    real_cfg = replace(config, real_strategy=Strategy.BOOTSTRAP)
    s1 = EmpiricalSource(with_tag, name=f"{tag}")
    s0 = EmpiricalSource(without, name=f"not-{tag}")
    limit = min(len(with_tag), len(without))
    grid = [n for n in config.grid if n <= limit]
    skipped = [n for n in config.grid if n > limit]
    if skipped:
        log.warning("real curve: skipping n in %s (smaller side has %d rows)", skipped, limit)
    real = _curve(s1, s0, Strategy.BOOTSTRAP, real_cfg, grid,
                  {"test": test_name, "strategy": Strategy.BOOTSTRAP.value, "sources": [s1.name, s0.name],
                   "tag": tag})
    real.skipped = skipped
    synth = None
    if checkpoint is not None:
        vocab = checkpoint.config.condition_vocab
        if vocab is None or tag not in vocab:
            raise PowerRunError(f"checkpoint is not conditioned on tag {tag!r} (vocabulary {vocab})")
        if checkpoint.data_dim != d:
            raise PowerRunError(f"checkpoint generates {checkpoint.data_dim} columns, data has {d}")
        g1 = GenerativeSource(checkpoint, [tag], name=f"synthetic-{tag}")
        g0 = GenerativeSource(checkpoint, [], name=f"synthetic-not-{tag}")
        synth = _curve(g1, g0, Strategy.SYNTHETIC, config, config.grid,
                       {"test": test_name, "strategy": Strategy.SYNTHETIC.value,
                        "sources": [g1.name, g0.name], "tag": tag})
    return real, synth


# ---------------------------------------------------------------- post-processing

def smooth_values(values: Sequence[float], window: int) -> List[float]:
    """Centered moving average, windows truncated at the ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd number, got {window}")
    half = window // 2
    vals = list(values)
    out = []
    for i in range(len(vals)):
        chunk = vals[max(0, i - half):i + half + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def smooth(curve: PowerCurve, window: int = 5) -> PowerCurve:
    return replace(curve, smoothed=smooth_values(curve.gammas, window))


def recommend_sample_size(curve: PowerCurve, target: float = 0.8) -> Recommendation:
    """Smallest grid n whose (smoothed, else raw) power reaches ``target``."""
    if not curve.points:
        raise ValueError("cannot recommend from an empty curve")
    basis = "smoothed" if curve.smoothed is not None else "raw"
    values = curve.smoothed if curve.smoothed is not None else curve.gammas
    n_req = next((p.n for p, v in zip(curve.points, values) if v >= target), None)
    return Recommendation(target, n_req, basis, max(values))


def bootstrap_pool_seed(master_seed: int, group: int) -> int:
    return derive_seed(master_seed, 0, 0, 0, group)
