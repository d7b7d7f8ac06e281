import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from synpower import gan
from synpower.power import (PowerConfig, PowerCurve, PowerCurvePoint, PowerRunError, TestSpec, default_n_start,
                            estimate_power, power_curve, power_curve_fmri, recommend_sample_size, smooth,
                            smooth_values, wilson_interval)
from synpower.sampling import EmpiricalSource, GaussianSource, Strategy, TaggedDataset


def _pair(d=10, shift=0.3):
    return GaussianSource(np.zeros(d), np.ones(d)), GaussianSource(np.full(d, shift), np.ones(d))


def _curve(gammas, ns=None):
    ns = ns or [20 * (i + 1) for i in range(len(gammas))]
    return PowerCurve({}, [PowerCurvePoint(n, g, 100, round(100 * g), 0, 1) for n, g in zip(ns, gammas)])


def test_smoothing_examples():
    assert smooth_values([0.1, 0.5, 0.2], 1) == [0.1, 0.5, 0.2]
    assert smooth_values([0.4] * 6, 5) == pytest.approx([0.4] * 6)
    assert smooth_values([0, 1, 0], 3) == pytest.approx([0.5, 1 / 3, 0.5])
    with pytest.raises(ValueError):
        smooth_values([0, 1], 2)


def test_smooth_keeps_raw_values():
    c = smooth(_curve([0.0, 1.0, 0.0]), 3)
    assert c.gammas == [0.0, 1.0, 0.0]
    assert c.smoothed == pytest.approx([0.5, 1 / 3, 0.5])


def test_recommendation_examples():
    c = _curve([0.5, 0.79, 0.81, 0.9])
    c.smoothed = [0.5, 0.79, 0.81, 0.9]
    assert recommend_sample_size(c, 0.8).n_required == 60
    low = _curve([0.1, 0.3, 0.6])
    rec = recommend_sample_size(low, 0.8)
    assert rec.n_required is None and rec.max_gamma == 0.6 and rec.basis == "raw"
    assert recommend_sample_size(low, 0.0).n_required == 20


@settings(max_examples=50, deadline=None)
@given(k=st.integers(0, 200), extra=st.integers(0, 200))
def test_wilson_interval_against_formula(k, extra):
    n = k + extra
    if n == 0:
        return
    lo, hi = wilson_interval(k, n)
    rlo, rhi = oracles.wilson(k, n)
    assert lo == pytest.approx(max(0.0, rlo), abs=1e-12)
    assert hi == pytest.approx(min(1.0, rhi), abs=1e-12)
    assert lo <= k / n <= hi


def test_single_trial_and_exactness():
    s1, s2 = _pair()
    p = estimate_power(s1, s2, "resample", "resample", 30, PowerConfig(trials=1, test=TestSpec("hotelling")))
    assert p.gamma in (0.0, 1.0)
    p = estimate_power(s1, s2, "resample", "resample", 30, PowerConfig(trials=37, test=TestSpec("hotelling")))
    assert p.gamma * p.trials == p.rejections


def test_fixed_replicates_give_unanimous_trials():
    pool = np.random.default_rng(0).normal(size=(20, 2))
    other = pool + 0.1
    cfg = PowerConfig(trials=15, test=TestSpec("hotelling"))
    p = estimate_power(EmpiricalSource(pool), EmpiricalSource(other), "bootstrap", "bootstrap", 20, cfg)
    assert p.rejections in (0, 15)


def test_schedule_independence():
    s1, s2 = _pair(3)
    for method in ("hotelling", "mmd-l1"):
        cfg = PowerConfig(trials=24, test=TestSpec(method, permutations=30))
        a = estimate_power(s1, s2, "resample", "resample", 25, cfg)
        b = estimate_power(s1, s2, "resample", "resample", 25, PowerConfig(**{**cfg.__dict__, "threads": 4}))
        assert a == b


def test_null_points_contain_alpha():
    s1 = GaussianSource(np.zeros(2), np.ones(2))
    cfg = PowerConfig(20, 100, 20, trials=60, test=TestSpec("hotelling"))
    real, _ = power_curve(s1, s1, cfg)
    inside = sum(p.ci_low <= 0.05 <= p.ci_high for p in real.points)
    assert inside >= 0.9 * len(real.points)


def test_fewer_trials_widen_intervals():
    s1, s2 = _pair(2, 0.5)
    wide, _ = power_curve(s1, s2, PowerConfig(20, 60, 20, trials=10, test=TestSpec("t")))
    narrow, _ = power_curve(s1, s2, PowerConfig(20, 60, 20, trials=50, test=TestSpec("t")))
    for a, b in zip(wide.points, narrow.points):
        assert a.ci_high - a.ci_low > b.ci_high - b.ci_low


def test_error_budget():
    pool = np.ones((30, 2))
    cfg = PowerConfig(trials=10, test=TestSpec("hotelling"))
    with pytest.raises(PowerRunError, match="failed"):
        estimate_power(EmpiricalSource(pool), EmpiricalSource(pool + 1), "bootstrap", "bootstrap", 10, cfg)


def test_test_spec_resolution_and_minimum_n():
    assert TestSpec("t").resolved(1) == "welch"
    assert TestSpec("t").resolved(10) == "hotelling"
    assert TestSpec("t", multivariate_t="bonferroni").resolved(10) == "welch-bonferroni"
    assert default_n_start(10) == 20 and default_n_start(40) == 43
    s1, s2 = _pair()
    with pytest.raises(PowerRunError):
        estimate_power(s1, s2, "resample", "resample", 5, PowerConfig(test=TestSpec("hotelling")))


def test_fingerprint_ignores_threads():
    assert PowerConfig(threads=1).fingerprint() == PowerConfig(threads=8).fingerprint()
    assert PowerConfig(trials=10).fingerprint() != PowerConfig(trials=11).fingerprint()


def _planted(delta, n_each=120, seed=0):
    rng = np.random.default_rng(seed)
    rows = np.vstack([rng.normal(delta, 1, size=(n_each, 10)), rng.normal(0, 1, size=(n_each, 10))])
    return TaggedDataset(rows, [{"visual"}] * n_each + [set()] * n_each, ("visual", "auditory"))


def test_fmri_real_curve_tracks_algorithm_one():
    cfg = PowerConfig(20, 100, 20, trials=50, test=TestSpec("hotelling"), master_seed=3)
    real, synth = power_curve_fmri(_planted(0.3, 400), "visual", None, cfg)
    assert synth is None and real.label["strategy"] == "bootstrap"
    ref, _ = power_curve(*_pair(), cfg)
    assert max(abs(a - b) for a, b in zip(real.gammas, ref.gammas)) <= 0.15


def test_fmri_skips_large_n_and_handles_null():
    cfg = PowerConfig(20, 140, 40, trials=20, test=TestSpec("hotelling"))
    ds = _planted(0.0, 70)
    tcfg = gan.TrainConfig.icw_preset(iterations=0, noise_dim=12, condition_vocab=("visual",))
    spec_g, spec_d = gan.default_specs(10, tcfg, hidden=16)
    ckpt = gan.train(ds.rows, spec_g, spec_d, tcfg, [["visual"] if "visual" in t else [] for t in ds.tags])
    real, synth = power_curve_fmri(ds, "visual", ckpt, cfg)
    assert real.ns == [20, 60] and real.skipped == [100, 140]
    assert synth.ns == [20, 60, 100, 140]
    assert all(p.gamma <= 0.3 for p in real.points)


def test_fmri_tag_errors():
    cfg = PowerConfig(20, 40, 20, trials=2, test=TestSpec("hotelling"))
    with pytest.raises(PowerRunError):
        power_curve_fmri(_planted(0.3, 30), "auditory", None, cfg)
    with pytest.raises(ValueError):
        power_curve_fmri(_planted(0.3, 30), "language", None, cfg)
