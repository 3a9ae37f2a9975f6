"""Brute-force checkers for the decoding engine.

The reference side of every check here is computed from scratch: the exact
single-step law uses raw array arithmetic, and greedy references use their
own argmax loop. Engine code only appears as the thing under test.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from .models import Context, DraftSource, SequenceModel

MC_DEFAULT_N = 100_000
MC_DEFAULT_THRESHOLD = 0.02


@dataclass(frozen=True)
class LawTable:
    """Exact law of the token emitted by one stochastic verification step."""

    probs: np.ndarray

    def max_abs_diff(self, p) -> float:
        return float(np.max(np.abs(self.probs - _raw(p))))


def _raw(d) -> np.ndarray:
    return np.asarray(getattr(d, "probs", d), dtype=np.float64)


def exact_step_law(p, q) -> LawTable:
    """law(y) = q(y) min(1, p(y)/q(y)) + P(reject) * residual(y)."""
    p = _raw(p)
    q = _raw(q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    with np.errstate(over="ignore"):  # p/q -> inf for tiny q still clips to 1
        ratio = np.divide(p, q, out=np.zeros_like(p), where=q > 0)
    accept = np.minimum(1.0, ratio)
    law = q * accept
    reject = float(np.sum(q * (1.0 - accept)))
    leftover = np.maximum(0.0, p - q)
    mass = float(leftover.sum())
    if mass > 0.0:
        law = law + reject * leftover / mass
    return LawTable(law)


@dataclass(frozen=True)
class MCResult:
    tvd: float
    passed: bool
    n: int
    threshold: float
    per_position: tuple[float, ...] = ()


def default_threshold(n: int) -> float:
    """0.02 at n = 100k, scaled like a standard error for other n."""
    return MC_DEFAULT_THRESHOLD * math.sqrt(MC_DEFAULT_N / n)


def _marginal_tvd(a: list[tuple], b: list[tuple]) -> tuple[float, ...]:
    length = len(a[0])
    out = []
    for j in range(length):
        ca = Counter(x[j] for x in a)
        cb = Counter(x[j] for x in b)
        keys = set(ca) | set(cb)
        out.append(0.5 * sum(abs(ca[k] / len(a) - cb[k] / len(b)) for k in keys))
    return tuple(out)


def mc_equivalence(
    sample_a: Callable[[], Hashable | Sequence],
    sample_b: Callable[[], Hashable | Sequence],
    n: int = MC_DEFAULT_N,
    threshold: float | None = None,
) -> MCResult:
    """Empirical TVD between two samplers.

    Samplers returning tuples are compared position by position and the
    largest marginal TVD is reported.
    """
    if n < 10_000:
        raise ValueError(f"n must be >= 10000, got {n}")
    threshold = default_threshold(n) if threshold is None else threshold

    def draw(f):
        xs = []
        for _ in range(n):
            x = f()
            xs.append(tuple(x) if isinstance(x, (list, tuple)) else (x,))
        return xs

    a = draw(sample_a)
    b = draw(sample_b)
    if len({len(x) for x in a + b}) != 1:
        raise ValueError("samplers returned outcomes of different lengths")
    per = _marginal_tvd(a, b)
    worst = max(per)
    return MCResult(worst, worst < threshold, n, threshold, per)


def _argmax(probs) -> int:
    best = 0
    for i in range(1, len(probs)):
        if probs[i] > probs[best]:
            best = i
    return best


def reference_greedy(target: SequenceModel, ctx: Context, max_len: int) -> list[int]:
    out: list[int] = []
    for _ in range(max_len):
        p = target.next_distribution(Context(ctx.segments, ctx.generated + tuple(out)))
        out.append(_argmax(_raw(p).tolist()))
    return out


Pipeline = Callable[[SequenceModel, Context, int], Sequence[int]]


def default_pipelines(sources: Sequence[DraftSource], gamma: int, vocab_size: int) -> dict[str, Pipeline]:
    """Every greedy decoding pipeline the engine offers, keyed by a readable name."""
    from .decoding import DecodeConfig, decode_session
    from .ensemble import Criterion, EnsembleDrafter, WeightPolicy
    from .tree import tree_session

    def cfg(max_len):
        return DecodeConfig(gamma=gamma, mode="greedy", max_new_tokens=max_len)

    pipes: dict[str, Pipeline] = {}
    for src in sources:
        pipes[f"single[{src.name}]"] = (
            lambda t, c, L, src=src: decode_session(t, src, c, cfg(L))[0]
        )
        for d in range(1, vocab_size + 1):
            pipes[f"tree[{src.name},d={d}]"] = (
                lambda t, c, L, src=src, d=d: tree_session(t, src, c, cfg(L), d)[0]
            )
    policies = ["softmax_inverse_error", "adaboost"]
    if len(sources) == 2:
        policies.insert(0, "grid")
    for kind in policies:
        for crit in Criterion:
            def run(t, c, L, kind=kind, crit=crit):
                drafter = EnsembleDrafter(sources, WeightPolicy(kind), crit)
                return decode_session(t, drafter, c, cfg(L))[0]

            pipes[f"ensemble[{kind},{crit.value}]"] = run
    ens_kind = "grid" if len(sources) == 2 else "softmax_inverse_error"
    for d in range(1, vocab_size + 1):
        def run_tree(t, c, L, d=d):
            drafter = EnsembleDrafter(sources, WeightPolicy(ens_kind), Criterion.SOFT_KL)
            return tree_session(t, drafter, c, cfg(L), d)[0]

        pipes[f"ensemble-tree[{ens_kind},d={d}]"] = run_tree
    return pipes


@dataclass
class GreedyCheckResult:
    passed: bool
    checked: int
    counterexample: dict | None = field(default=None)


def exhaustive_greedy_check(
    target: SequenceModel,
    sources: Sequence[DraftSource],
    gamma: int,
    max_len: int,
    pipelines: dict[str, Pipeline] | None = None,
    max_prompt_len: int = 2,
) -> GreedyCheckResult:
    """Compare every pipeline with plain greedy decoding on all short prompts.

    Prompts are every token string of length 0..``max_prompt_len``. Stops at
    the first disagreement and returns it as a counterexample.
    """
    vocab = target.vocab_size
    if vocab > 4:
        raise ValueError(f"exhaustive check is limited to vocab <= 4, got {vocab}")
    if pipelines is None:
        pipelines = default_pipelines(sources, gamma, vocab)
    checked = 0
    for length in range(max_prompt_len + 1):
        for prompt in itertools.product(range(vocab), repeat=length):
            ctx = Context.text(prompt)
            expected = reference_greedy(target, ctx, max_len)
            for name, run in pipelines.items():
                got = list(run(target, ctx, max_len))
                checked += 1
                if got != expected:
                    return GreedyCheckResult(False, checked, {
                        "pipeline": name,
                        "prompt": list(prompt),
                        "gamma": gamma,
                        "expected": expected,
                        "got": got,
                    })
    return GreedyCheckResult(True, checked)
