"""Probability-vector arithmetic over a finite vocabulary.

Everything here is deterministic. The only mutable object is :class:`Rng`,
which is meant to be owned by a single decoding session.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidDistribution,
    NoResidualMass,
    WidthOutOfRange,
)

SUM_TOL = 1e-9
RENORM_TOL = 1e-6
DEFAULT_KL_FLOOR = 1e-8
RESIDUAL_MIN_MASS = 1e-12


def _as_simplex(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if arr.size == 0:
        raise InvalidDistribution(f"{what} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidDistribution(f"{what} has non-finite entries")
    if np.any(arr < 0.0):
        raise InvalidDistribution(f"{what} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > RENORM_TOL:
        raise InvalidDistribution(f"{what} sums to {total!r}, not 1")
    if total != 1.0:
        arr /= total
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """A next-token distribution. Entries are non-negative and sum to one.

    Inputs whose sum is off by at most 1e-6 are renormalized; anything
    further off is rejected with :class:`InvalidDistribution`.
    """

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_simplex(self.probs, "distribution"))

    @property
    def vocab_size(self) -> int:
        return int(self.probs.shape[0])

    @classmethod
    def uniform(cls, vocab_size: int) -> "Distribution":
        return cls(np.full(vocab_size, 1.0 / vocab_size))

    @classmethod
    def point(cls, vocab_size: int, token: int) -> "Distribution":
        probs = np.zeros(vocab_size)
        probs[token] = 1.0
        return cls(probs)

    @cached_property
    def _cdf(self) -> list[float]:
        return np.cumsum(self.probs).tolist()

    @cached_property
    def _plist(self) -> list[float]:
        return self.probs.tolist()

    def __getitem__(self, token: int) -> float:
        return self._plist[token]

    def __len__(self) -> int:
        return self.vocab_size

    def argmax(self) -> int:
        # np.argmax returns the first maximal index: lowest-token tie-break.
        return int(np.argmax(self.probs))

    def allclose(self, other: "Distribution", atol: float = SUM_TOL) -> bool:
        return self.vocab_size == other.vocab_size and bool(
            np.all(np.abs(self.probs - other.probs) <= atol)
        )

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True)
class WeightVector:
    """Non-negative mixing weights over ``m`` draft sources, summing to one."""

    weights: tuple[float, ...]

    def __post_init__(self):
        arr = _as_simplex(self.weights, "weight vector")
        object.__setattr__(self, "weights", tuple(float(x) for x in arr))

    @property
    def m(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, m: int) -> "WeightVector":
        return cls(tuple([1.0 / m] * m))

    @classmethod
    def one_hot(cls, m: int, i: int) -> "WeightVector":
        w = [0.0] * m
        w[i] = 1.0
        return cls(tuple(w))

    def __iter__(self):
        return iter(self.weights)

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, i: int) -> float:
        return self.weights[i]


class Rng:
    """Seeded uniform source backed by numpy's PCG64.

    Uniforms are drawn in fixed-size chunks, so the value sequence only
    depends on the seed and on how many values were consumed.
    """

    _CHUNK = 1024

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self._buf: list[float] = []
        self._pos = 0
        self.counter = 0

    def uniform(self) -> float:
        """Return a float in [0, 1)."""
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._CHUNK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.counter += 1
        return u


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive a child 64-bit seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_same_vocab(*dists: Distribution) -> int:
    v = dists[0].vocab_size
    for d in dists[1:]:
        if d.vocab_size != v:
            raise DimensionMismatch(f"vocab sizes differ: {v} vs {d.vocab_size}")
    return v


def weighted_average(dists: Sequence[Distribution], w: WeightVector) -> Distribution:
    if len(dists) != w.m:
        raise DimensionMismatch(f"{len(dists)} distributions but {w.m} weights")
    _check_same_vocab(*dists)
    if w.m == 1:
        return dists[0]
    out = np.zeros(dists[0].vocab_size)
    for d, wi in zip(dists, w.weights):
        if wi != 0.0:
            out += wi * d.probs
    return Distribution(out)


def kl_divergence(p: Distribution, q: Distribution, floor: float = DEFAULT_KL_FLOOR) -> float:
    """D(p || q'), where q' mixes ``floor`` of uniform mass into q."""
    v = _check_same_vocab(p, q)
    if not 0.0 <= floor <= 1e-3:
        raise ValueError(f"floor must lie in [0, 1e-3], got {floor}")
    qf = (1.0 - floor) * q.probs + floor / v
    mask = p.probs > 0.0
    pm = p.probs[mask]
    qm = qf[mask]
    if np.any(qm == 0.0):
        return math.inf
    # Rounding can push a true zero slightly negative.
    return max(0.0, float(np.sum(pm * np.log(pm / qm))))


def tvd(p: Distribution, q: Distribution) -> float:
    _check_same_vocab(p, q)
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def residual_mass(p: Distribution, q: Distribution) -> float:
    _check_same_vocab(p, q)
    return float(np.sum(np.maximum(0.0, p.probs - q.probs)))


def residual_distribution(p: Distribution, q: Distribution) -> Distribution:
    """norm(max(0, p - q)), the law a rejected draft token is resampled from."""
    _check_same_vocab(p, q)
    diff = np.maximum(0.0, p.probs - q.probs)
    mass = float(diff.sum())
    if mass <= RESIDUAL_MIN_MASS:
        raise NoResidualMass(f"residual mass {mass:.3g} is too small to normalize")
    return Distribution(diff / mass)


def sample(d: Distribution, rng: Rng) -> int:
    """Inverse-CDF draw over cumulative sums in token-index order."""
    cdf = d._cdf
    u = rng.uniform() * cdf[-1]
    i = bisect_right(cdf, u)
    if i >= len(cdf):
        i = len(cdf) - 1
    # Never land on a zero-probability token at the right edge.
    while d._plist[i] == 0.0:
        i -= 1
    return i


def top_d(d: Distribution, width: int) -> list[int]:
    """The ``width`` most probable tokens, descending, ties to the lower index."""
    if not 1 <= width <= d.vocab_size:
        raise WidthOutOfRange(f"width {width} outside [1, {d.vocab_size}]")
    order = np.argsort(-d.probs, kind="stable")
    return [int(i) for i in order[:width]]
