"""Sample sources and the three drawing strategies (resample, bootstrap,
synthetic), seed derivation, and tag-based splitting."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import gan

log = logging.getLogger(__name__)


class SamplingError(ValueError):
    pass


class Strategy(str, Enum):
    RESAMPLE = "resample"
    BOOTSTRAP = "bootstrap"
    SYNTHETIC = "synthetic"


_STRATEGY_IDS = {Strategy.RESAMPLE: 1, Strategy.BOOTSTRAP: 2, Strategy.SYNTHETIC: 3}


def derive_seed(master_seed: int, *parts: int) -> int:
    """Stable 64-bit child seed from a master seed and integer path components."""
    h = hashlib.blake2b(digest_size=8, person=b"synpower-seed")
    h.update(struct.pack("<Q", master_seed & 0xFFFFFFFFFFFFFFFF))
    for p in parts:
        h.update(struct.pack("<q", int(p)))
    return int.from_bytes(h.digest(), "little")


def trial_seed(master_seed: int, strategy: Strategy, n: int, trial: int, group: int) -> int:
    return derive_seed(master_seed, _STRATEGY_IDS[Strategy(strategy)], n, trial, group)


# ---------------------------------------------------------------- sources

def _covariance_factor(cov: np.ndarray, d: int) -> np.ndarray:
    """Matrix L with L L^T = cov; rows of z @ L.T then have covariance cov."""
    if cov.ndim == 1:
        if len(cov) != d or (cov < 0).any() or not np.isfinite(cov).all():
            raise SamplingError("diagonal covariance must be finite, nonnegative and match the mean")
        return np.diag(np.sqrt(cov))
    if cov.shape != (d, d) or not np.isfinite(cov).all():
        raise SamplingError(f"covariance shape {cov.shape} does not match mean dimension {d}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise SamplingError("covariance matrix is not symmetric")
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, vals[-1] if len(vals) else 1.0)
    if len(vals) and vals[0] < -1e-10 * scale:
        raise SamplingError(f"covariance is not positive semidefinite (min eigenvalue {vals[0]:.3g})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class GaussianSource:
    mean: np.ndarray
    covariance: np.ndarray  # diagonal vector or full matrix
    name: str = "gaussian"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.ndim == 0:
            cov = np.full(len(mean), float(cov))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", _covariance_factor(cov, len(mean)))

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True, eq=False)
class EmpiricalSource:
    pool: np.ndarray
    name: str = "empirical"
    with_replacement: bool = False

    def __post_init__(self):
        pool = np.asarray(self.pool, dtype=np.float64)
        if pool.ndim != 2 or len(pool) == 0:
            raise SamplingError(f"empirical pool must be a nonempty matrix, got shape {pool.shape}")
        object.__setattr__(self, "pool", pool)

    @property
    def dim(self) -> int:
        return self.pool.shape[1]


@dataclass(frozen=True, eq=False)
class GenerativeSource:
    checkpoint: "gan.ModelCheckpoint"
    condition: Optional[Sequence[str]] = None
    name: str = "generative"

    @property
    def dim(self) -> int:
        return self.checkpoint.data_dim


Source = Union[GaussianSource, EmpiricalSource, GenerativeSource]

_COMPATIBLE = {Strategy.RESAMPLE: GaussianSource, Strategy.BOOTSTRAP: EmpiricalSource,
               Strategy.SYNTHETIC: GenerativeSource}


def gaussian_sampler(mean, covariance, n: int, seed: int) -> np.ndarray:
    return _draw_gaussian(GaussianSource(mean, covariance), n, seed)


def _draw_gaussian(src: GaussianSource, n: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n, src.dim))
    return z @ src._factor.T + src.mean


def draw(source: Source, strategy: Strategy, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` rows from ``source`` using ``strategy``; pure in its arguments."""
    strategy = Strategy(strategy)
    if not isinstance(source, _COMPATIBLE[strategy]):
        raise SamplingError(f"strategy {strategy.value!r} cannot draw from {type(source).__name__}")
    if n < 0:
        raise SamplingError(f"sample size must be nonnegative, got {n}")
    if strategy is Strategy.RESAMPLE:
        return _draw_gaussian(source, n, seed)
    if strategy is Strategy.BOOTSTRAP:
        pool = source.pool
        if n > len(pool) and not source.with_replacement:
            raise SamplingError(f"cannot subsample {n} rows without replacement from a pool of {len(pool)}")
        idx = np.random.default_rng(seed).choice(len(pool), size=n, replace=source.with_replacement)
        return pool[idx]
    return gan.sample(source.checkpoint, n, source.condition, seed)


# ---------------------------------------------------------------- tagged data

@dataclass(frozen=True, eq=False)
class TaggedDataset:
    rows: np.ndarray
    tags: Tuple[FrozenSet[str], ...]
    vocabulary: Tuple[str, ...]
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise SamplingError(f"dataset rows must be a matrix, got shape {rows.shape}")
        tags = tuple(frozenset(t) for t in self.tags)
        if len(tags) != len(rows):
            raise SamplingError(f"{len(tags)} tag sets for {len(rows)} rows")
        vocab = tuple(self.vocabulary)
        unknown = set().union(*tags) - set(vocab) if tags else set()
        if unknown:
            raise SamplingError(f"tags {sorted(unknown)} are not in the vocabulary {list(vocab)}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "vocabulary", vocab)

    def __len__(self):
        return len(self.rows)

    def counts(self) -> dict:
        return {t: sum(t in s for s in self.tags) for t in self.vocabulary}


@dataclass
class Split:
    with_tag: np.ndarray
    without_tag: np.ndarray
    warnings: List[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.with_tag, self.without_tag))


def split_by_tag(dataset: TaggedDataset, tag: str) -> Split:
    """Rows carrying ``tag`` versus all other rows, order preserved."""
    if tag not in dataset.vocabulary:
        raise SamplingError(f"unknown tag {tag!r}; vocabulary is {list(dataset.vocabulary)}")
    mask = np.array([tag in t for t in dataset.tags], dtype=bool)
    out = Split(dataset.rows[mask], dataset.rows[~mask])
    if not mask.any():
        out.warnings.append(f"no rows carry tag {tag!r}")
    if mask.all():
        out.warnings.append(f"every row carries tag {tag!r}")
    for w in out.warnings:
        log.warning(w)
    return out
