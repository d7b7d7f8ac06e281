import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synpower import gan
from synpower.sampling import (EmpiricalSource, GaussianSource, GenerativeSource, SamplingError, Strategy,
                               TaggedDataset, derive_seed, draw, gaussian_sampler, split_by_tag, trial_seed)


def _rows(a):
    return {tuple(r) for r in np.asarray(a)}


def test_bootstrap_full_pool_is_permutation():
    pool = np.random.default_rng(0).normal(size=(25, 3))
    out = draw(EmpiricalSource(pool), Strategy.BOOTSTRAP, 25, seed=4)
    assert sorted(map(tuple, out)) == sorted(map(tuple, pool))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 63 - 1), n=st.integers(0, 30))
def test_bootstrap_rows_come_from_pool(seed, n):
    pool = np.random.default_rng(1).normal(size=(30, 2))
    assert _rows(draw(EmpiricalSource(pool), Strategy.BOOTSTRAP, n, seed)) <= _rows(pool)


def test_bootstrap_rejects_oversized_draw_unless_flagged():
    pool = np.zeros((5, 1))
    with pytest.raises(SamplingError):
        draw(EmpiricalSource(pool), Strategy.BOOTSTRAP, 6, 0)
    assert draw(EmpiricalSource(pool, with_replacement=True), Strategy.BOOTSTRAP, 6, 0).shape == (6, 1)


def test_resample_mean():
    X = draw(GaussianSource(np.full(10, 0.3), np.ones(10)), Strategy.RESAMPLE, 100_000, seed=3)
    assert np.abs(X.mean(axis=0) - 0.3).max() < 0.02


def test_incompatible_pairings():
    g = GaussianSource([0.0], [1.0])
    e = EmpiricalSource(np.zeros((3, 1)))
    with pytest.raises(SamplingError):
        draw(g, Strategy.BOOTSTRAP, 2, 0)
    with pytest.raises(SamplingError):
        draw(e, Strategy.RESAMPLE, 2, 0)
    with pytest.raises(SamplingError):
        draw(e, Strategy.SYNTHETIC, 2, 0)


def test_gaussian_sampler_examples():
    mean = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(gaussian_sampler(mean, np.zeros(3), 7, 0), np.tile(mean, (7, 1)))
    X = gaussian_sampler(np.zeros(2), np.eye(2), 200_000, 5)
    assert np.linalg.norm(np.cov(X, rowvar=False) - np.eye(2)) < 0.02
    assert np.array_equal(gaussian_sampler(np.zeros(2), np.eye(2), 10, 9), gaussian_sampler(np.zeros(2), np.eye(2), 10, 9))


def test_full_covariance_and_psd_check():
    cov = np.array([[2.0, 0.8], [0.8, 1.0]])
    X = gaussian_sampler([0.0, 0.0], cov, 100_000, 2)
    assert np.abs(np.cov(X, rowvar=False) - cov).max() < 0.05
    with pytest.raises(SamplingError):
        GaussianSource([0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SamplingError):
        GaussianSource([0.0], [-1.0])


def test_disjoint_seeds_differ():
    src = GaussianSource(np.zeros(3), np.ones(3))
    digests = set()
    for s in range(10):
        digests.add(hashlib.sha256(draw(src, Strategy.RESAMPLE, 5, s).tobytes()).hexdigest())
    assert len(digests) > 1


def test_seed_derivation_is_stable_and_distinct():
    a = trial_seed(0, Strategy.RESAMPLE, 20, 3, 0)
    assert a == trial_seed(0, "resample", 20, 3, 0)
    assert len({trial_seed(0, s, n, k, g) for s in Strategy for n in (20, 40) for k in range(5) for g in (0, 1)}) == 60
    assert 0 <= derive_seed(2 ** 64 - 1, 1, 2) < 2 ** 64


def test_synthetic_draw_uses_checkpoint():
    cfg = gan.TrainConfig.naive_preset(iterations=0, noise_dim=2)
    spec_g, spec_d = gan.default_specs(3, cfg, hidden=4)
    ckpt = gan.train(np.zeros((5, 3)), spec_g, spec_d, cfg)
    src = GenerativeSource(ckpt)
    assert src.dim == 3
    assert np.array_equal(draw(src, Strategy.SYNTHETIC, 4, 1), gan.sample(ckpt, 4, seed=1))


def test_split_examples():
    ds = TaggedDataset(np.arange(6.0).reshape(3, 2), [{"a"}, {"a", "b"}, {"b"}], ("a", "b"))
    with_a, without_a = split_by_tag(ds, "a")
    assert with_a.tolist() == [[0.0, 1.0], [2.0, 3.0]]
    assert without_a.tolist() == [[4.0, 5.0]]
    every = TaggedDataset(np.zeros((2, 1)), [{"a"}, {"a"}], ("a", "b"))
    split = split_by_tag(every, "a")
    assert len(split.without_tag) == 0 and split.warnings
    assert len(split_by_tag(every, "b").with_tag) == 0
    with pytest.raises(SamplingError):
        split_by_tag(ds, "zzz")


@settings(max_examples=30, deadline=None)
@given(flags=st.lists(st.booleans(), min_size=1, max_size=40))
def test_split_partitions_rows(flags):
    rows = np.arange(len(flags), dtype=float)[:, None]
    ds = TaggedDataset(rows, [{"x"} if f else set() for f in flags], ("x",))
    d1, d0 = split_by_tag(ds, "x")
    assert sorted(np.vstack([d1, d0])[:, 0].tolist()) == rows[:, 0].tolist()
