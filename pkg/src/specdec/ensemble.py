"""Batched ensemble drafting with weights adapted at test time.

Several draft sources propose next-token distributions for the same prefix.
Before each block, one mixing weight is picked by scoring candidate weights
against the target distributions already observed on the decoded
trajectory; the weighted average is then used for every draft step in the
block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .decoding import DraftBlock, Mode, VerificationResult, draft_with
from .dist import DEFAULT_KL_FLOOR, Distribution, Rng, WeightVector, weighted_average
from .errors import (
    BadParams,
    DimensionMismatch,
    EmptyHistory,
    EpsOutOfDomain,
    InconsistentPair,
    UnsupportedArity,
)
from .models import Context, DraftSource

ERROR_CLAMP = 1e-12


class Criterion(str, Enum):
    SOFT_KL = "soft_kl"
    SOFT_TVD = "soft_tvd"
    HARD_MATCH = "hard_match"


POLICY_KINDS = ("grid", "softmax_inverse_error", "adaboost", "fixed")


@dataclass(frozen=True)
class WeightPolicy:
    kind: str = "grid"
    n: int = 10
    tau: float = 1.0
    C: float = 1.0
    fixed_w: WeightVector | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise BadParams(f"unknown weight policy {self.kind!r}")
        if self.kind == "grid" and self.n < 1:
            raise BadParams(f"grid size n must be >= 1, got {self.n}")
        if self.kind == "softmax_inverse_error" and not self.tau > 0:
            raise BadParams(f"temperature must be > 0, got {self.tau}")
        if self.kind == "fixed" and self.fixed_w is None:
            raise BadParams("fixed policy needs fixed_w")


@dataclass(frozen=True)
class HistoryEntry:
    position: int
    target_dist: Distribution
    source_dists: tuple[Distribution, ...]
    realized_token: int


class HistoryCache:
    """Target and per-source distributions at realized positions.

    ``window`` (h) only restricts what is read; nothing is ever dropped.
    ``None`` means every entry is consulted.
    """

    def __init__(self, window: int | None = None):
        if window is not None and window < 1:
            raise BadParams(f"window must be >= 1 or None, got {window}")
        self.window = window
        self.entries: list[HistoryEntry] = []
        self._stacked: tuple | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: HistoryEntry) -> None:
        if self.entries:
            if entry.position <= self.entries[-1].position:
                raise InconsistentPair(
                    f"position {entry.position} not after {self.entries[-1].position}"
                )
            if len(entry.source_dists) != len(self.entries[-1].source_dists):
                raise DimensionMismatch("source count changed within one history")
        self.entries.append(entry)
        self._stacked = None

    def view(self) -> list[HistoryEntry]:
        if self.window is None:
            return self.entries
        return self.entries[-self.window:]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Windowed (P, Q, y): P is n x V, Q is m x n x V, y holds realized tokens."""
        if self._stacked is None:
            P = np.stack([e.target_dist.probs for e in self.entries])
            Q = np.stack([np.stack([d.probs for d in e.source_dists]) for e in self.entries], axis=1)
            y = np.array([e.realized_token for e in self.entries], dtype=np.int64)
            self._stacked = (P, Q, y)
        P, Q, y = self._stacked
        if self.window is not None:
            P, Q, y = P[-self.window:], Q[:, -self.window:], y[-self.window:]
        return P, Q, y

    @property
    def m(self) -> int | None:
        return len(self.entries[0].source_dists) if self.entries else None


def grid_candidates(n: int, m: int = 2) -> list[WeightVector]:
    """[1 - j/n, j/n] for j = 0..n, endpoints included."""
    if m != 2:
        raise UnsupportedArity(f"grid candidates need exactly 2 sources, got {m}")
    if n < 1:
        raise BadParams(f"n must be >= 1, got {n}")
    return [WeightVector((1.0 - j / n, j / n)) for j in range(n + 1)]


def softmax_inverse_error(errors: Sequence[float], tau: float = 1.0) -> WeightVector:
    if not tau > 0:
        raise BadParams(f"temperature must be > 0, got {tau}")
    inv = 1.0 / np.maximum(np.asarray(errors, dtype=np.float64), ERROR_CLAMP)
    z = inv / tau
    z -= z.max()
    e = np.exp(z)
    return WeightVector(tuple(e / e.sum()))


def adaboost_raw_weights(eps: Sequence[float], K: int, C: float = 1.0) -> np.ndarray:
    """ln(1/eps - 1) + C ln(K - 1) per source, before clamping."""
    if K < 2:
        raise BadParams(f"vocabulary size K must be >= 2, got {K}")
    for e in eps:
        if not 0.0 < e < 1.0:
            raise EpsOutOfDomain(f"error rate {e} outside (0, 1)")
    return np.array([math.log(1.0 / e - 1.0) + C * math.log(K - 1) for e in eps])


def adaboost_weights(eps: Sequence[float], K: int, C: float = 1.0) -> WeightVector:
    """Raw AdaBoost weights clamped at 0 and normalized; uniform if all clamp."""
    raw = np.maximum(adaboost_raw_weights(eps, K, C), 0.0)
    total = raw.sum()
    if total <= 0.0:
        return WeightVector.uniform(len(eps))
    return WeightVector(tuple(raw / total))


def _candidate_errors(P, Q, y, W: np.ndarray, criterion: Criterion, floor: float) -> np.ndarray:
    """Accumulated error of every row of W (c x m) over the history arrays."""
    ens = np.einsum("cm,mnv->cnv", W, Q)
    if criterion is Criterion.HARD_MATCH:
        return -(ens.argmax(axis=-1) == y[None, :]).sum(axis=1).astype(np.float64)
    if criterion is Criterion.SOFT_TVD:
        return 0.5 * np.abs(ens - P[None]).sum(axis=(1, 2))
    V = P.shape[-1]
    qf = (1.0 - floor) * ens + floor / V
    mask = P > 0.0
    with np.errstate(divide="ignore"):
        logs = np.where(mask[None], np.log(np.where(mask, P, 1.0))[None] - np.log(qf), 0.0)
    terms = np.where(mask[None], P[None] * logs, 0.0)
    per_pos = np.maximum(terms.sum(axis=2), 0.0)
    return per_pos.sum(axis=1)


def accumulated_error(
    cache: HistoryCache,
    w: WeightVector,
    criterion: Criterion | str = Criterion.SOFT_KL,
    floor: float = DEFAULT_KL_FLOOR,
) -> float:
    """Error of weight ``w`` summed over the cache window.

    soft_kl and soft_tvd sum the divergence from each recorded target
    distribution to the mixed draft distribution. hard_match returns minus the
    number of positions whose mixed argmax equals the realized token, so lower
    is better for every criterion.
    """
    if not cache.entries:
        raise EmptyHistory("accumulated error needs at least one history entry")
    P, Q, y = cache.arrays()
    if Q.shape[0] != w.m:
        raise DimensionMismatch(f"weight has {w.m} entries but history has {Q.shape[0]} sources")
    W = np.asarray(w.weights)[None, :]
    return float(_candidate_errors(P, Q, y, W, Criterion(criterion), floor)[0])


def per_source_errors(cache: HistoryCache, criterion: Criterion, floor: float) -> np.ndarray:
    P, Q, y = cache.arrays()
    errs = _candidate_errors(P, Q, y, np.eye(Q.shape[0]), criterion, floor)
    if criterion is Criterion.HARD_MATCH:
        errs = len(y) + errs  # mismatch counts
    return errs


def argmax_error_rates(cache: HistoryCache) -> np.ndarray:
    """Smoothed per-source argmax mismatch frequency, strictly inside (0, 1)."""
    _, Q, y = cache.arrays()
    miss = (Q.argmax(axis=-1) != y[None, :]).sum(axis=1)
    return (miss + 0.5) / (len(y) + 1.0)


def select_weight(
    cache: HistoryCache,
    policy: WeightPolicy,
    criterion: Criterion | str = Criterion.SOFT_KL,
    m: int | None = None,
    floor: float = DEFAULT_KL_FLOOR,
) -> WeightVector:
    criterion = Criterion(criterion)
    m = m if m is not None else cache.m
    if m is None:
        raise BadParams("number of sources unknown for an empty history")
    if policy.kind == "fixed":
        if policy.fixed_w.m != m:
            raise DimensionMismatch(f"fixed weight has {policy.fixed_w.m} entries, expected {m}")
        return policy.fixed_w
    if not cache.entries:
        return WeightVector.uniform(m)
    if policy.kind == "grid":
        cands = grid_candidates(policy.n, m)
        P, Q, y = cache.arrays()
        W = np.array([c.weights for c in cands])
        errs = _candidate_errors(P, Q, y, W, criterion, floor)
        return cands[int(np.argmin(errs))]  # first minimum: lowest index wins ties
    if policy.kind == "softmax_inverse_error":
        return softmax_inverse_error(per_source_errors(cache, criterion, floor), policy.tau)
    vocab = cache.entries[0].target_dist.vocab_size
    if vocab < 2:
        return WeightVector.uniform(m)
    return adaboost_weights(argmax_error_rates(cache), vocab, policy.C)


class EnsembleDrafter:
    """Drafts from the weighted average of several sources sharing one prefix."""

    def __init__(
        self,
        sources: Sequence[DraftSource],
        policy: WeightPolicy | None = None,
        criterion: Criterion | str = Criterion.SOFT_KL,
        window: int | None = None,
        floor: float = DEFAULT_KL_FLOOR,
        cache: HistoryCache | None = None,
    ):
        if not sources:
            raise BadParams("ensemble needs at least one source")
        vocab = {s.vocab_size for s in sources}
        if len(vocab) != 1:
            raise DimensionMismatch(f"sources disagree on vocab size: {sorted(vocab)}")
        self.sources = list(sources)
        self.policy = policy or WeightPolicy()
        self.criterion = Criterion(criterion)
        self.floor = floor
        self.cache = cache if cache is not None else HistoryCache(window)

    @property
    def m(self) -> int:
        return len(self.sources)

    def begin_block(self, ctx: Context) -> WeightVector:
        return select_weight(self.cache, self.policy, self.criterion, self.m, self.floor)

    def step(self, ctx: Context, w: WeightVector) -> tuple[Distribution, tuple[Distribution, ...]]:
        # Each source is a pure read; evaluation order is source-index order.
        per_source = tuple(s.next_distribution(ctx) for s in self.sources)
        return weighted_average(per_source, w), per_source

    def draft(self, ctx: Context, gamma: int, mode: Mode, rng: Rng) -> DraftBlock:
        return draft_with(self, ctx, gamma, mode, rng, self.begin_block(ctx))

    def observe(self, block: DraftBlock, vr: VerificationResult) -> None:
        update_history(self.cache, block, vr)

    def observe_path(self, ctx: Context, path: Sequence[int], target_dists, realized: Sequence[int]) -> None:
        """Record a tree-verified path: one entry per realized drafted position."""
        start = len(ctx.generated)
        for i, (p, tok) in enumerate(zip(target_dists, realized)):
            per_source = tuple(s.next_distribution(ctx.extend(path[:i])) for s in self.sources)
            self.cache.append(HistoryEntry(start + i, p, per_source, int(tok)))


def tabed_draft(
    sources: Sequence[DraftSource],
    ctx: Context,
    gamma: int,
    cache: HistoryCache,
    policy: WeightPolicy,
    criterion: Criterion | str,
    mode: Mode,
    rng: Rng,
    floor: float = DEFAULT_KL_FLOOR,
) -> DraftBlock:
    """Pick one weight from ``cache`` and draft ``gamma`` tokens with it."""
    drafter = EnsembleDrafter(sources, policy, criterion, floor=floor, cache=cache)
    return drafter.draft(ctx, gamma, mode, rng)


def update_history(cache: HistoryCache, block: DraftBlock, vr: VerificationResult) -> HistoryCache:
    """Append the realized positions of a verified block.

    That is the accepted prefix plus the first rejected position; the bonus
    position after a fully accepted block has no draft distribution and is
    skipped.
    """
    n = min(vr.accepted_count + 1, block.gamma)
    if not 0 <= vr.accepted_count <= block.gamma:
        raise InconsistentPair(f"accepted_count {vr.accepted_count} outside [0, {block.gamma}]")
    if len(vr.emitted_tokens) != vr.accepted_count + 1 or len(vr.target_dists) < n:
        raise InconsistentPair("verification result does not match the block")
    for i in range(n):
        cache.append(
            HistoryEntry(
                block.start + i,
                vr.target_dists[i],
                tuple(row[i] for row in block.per_source_dists),
                vr.emitted_tokens[i],
            )
        )
    return cache
