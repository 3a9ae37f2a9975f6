"""Seeded fixtures and measurements behind ``specdec selftest``.

Each ``measure_*`` function returns raw numbers; pass/fail thresholds live
with the callers (the CLI and the acceptance tests).
"""

from __future__ import annotations

import math
import time
from typing import Iterator

import numpy as np

from .decoding import DecodeConfig, accept_draft_token, decode_session, target_only_decode
from .dist import Distribution, Rng, derive_seed, sample, tvd
from .models import Context, DraftSource, KgramModel, SyntheticOracle, make_transform, train_kgram
from .oracle import exact_step_law, exhaustive_greedy_check, mc_equivalence


def random_pairs(n: int, vocab: int, seed: int) -> list[tuple[Distribution, Distribution]]:
    """Random (p, q) pairs; a third of them have sparse supports."""
    gen = np.random.Generator(np.random.PCG64(seed))
    pairs = []
    for i in range(n):
        alpha = [0.1, 0.5, 2.0][i % 3]
        p = gen.dirichlet(np.full(vocab, alpha))
        q = gen.dirichlet(np.full(vocab, alpha))
        if i % 3 == 0:
            p[gen.random(vocab) < 0.3] = 0.0
            q[gen.random(vocab) < 0.3] = 0.0
            if p.sum() == 0.0:
                p[0] = 1.0
            if q.sum() == 0.0:
                q[-1] = 1.0
            p /= p.sum()
            q /= q.sum()
        pairs.append((Distribution(p), Distribution(q)))
    return pairs


def measure_exact_law(n_pairs: int = 1000, vocab: int = 16, seed: int = 0) -> float:
    """Largest |law - p| over random pairs."""
    return max(exact_step_law(p, q).max_abs_diff(p) for p, q in random_pairs(n_pairs, vocab, seed))


def measure_acceptance_rate(p: Distribution, q: Distribution, n: int, rng: Rng) -> float:
    """Fraction of draft tokens y ~ q accepted by the engine's acceptance test."""
    hits = 0
    for _ in range(n):
        hits += accept_draft_token(p, q, sample(q, rng), rng)
    return hits / n


def acceptance_rate_sweep(n_pairs: int = 20, n: int = 100_000, vocab: int = 8, seed: int = 0):
    """Yield (empirical rate, 1 - tvd, binomial standard error) per pair."""
    rng = Rng(seed)
    for p, q in random_pairs(n_pairs, vocab, derive_seed(seed, 1)):
        expected = 1.0 - tvd(p, q)
        se = math.sqrt(max(expected * (1.0 - expected), 1e-12) / n)
        yield measure_acceptance_rate(p, q, n, rng), expected, se


def bigram_pair(vocab: int = 8, seed: int = 0, doc_len: int = 60, docs: int = 30):
    """A bigram target and a unigram draft trained on different random corpora."""
    gen = np.random.Generator(np.random.PCG64(seed))
    # Skewed token frequencies give the models some structure.
    freq = gen.dirichlet(np.full(vocab, 0.7))
    corpus_t = [gen.choice(vocab, size=doc_len, p=freq).tolist() for _ in range(docs)]
    corpus_d = [gen.choice(vocab, size=doc_len).tolist() for _ in range(docs)]
    target = train_kgram(corpus_t, 1, 0.5, vocab)
    draft = train_kgram(corpus_d, 0, 0.5, vocab)
    return target, draft


def measure_session_equivalence(n: int = 100_000, vocab: int = 8, seed: int = 0,
                                gamma: int = 3, length: int = 4):
    """Per-position marginal TVD between SD sessions and target-only sampling."""
    target, draft = bigram_pair(vocab, seed)
    source = DraftSource("unigram", draft)
    ctx = Context.text([1])
    cfg = DecodeConfig(gamma=gamma, mode="stochastic", max_new_tokens=length)
    rng_sd = Rng(derive_seed(seed, 2))
    rng_ar = Rng(derive_seed(seed, 3))
    return mc_equivalence(
        lambda: tuple(decode_session(target, source, ctx, cfg, rng=rng_sd)[0]),
        lambda: tuple(target_only_decode(target, ctx, cfg, rng=rng_ar)),
        n,
    )


def small_instances(seed: int = 0, count: int = 6) -> Iterator[tuple[object, list[DraftSource]]]:
    """Small (target, two sources) pairs over vocabularies of 2 to 4 tokens."""
    for i in range(count):
        vocab = 2 + i % 3
        s = derive_seed(seed, 10, i)
        if i % 2 == 0:
            target = SyntheticOracle(vocab, s, 0.5, order=2)
        else:
            gen = np.random.Generator(np.random.PCG64(s))
            target = train_kgram([gen.integers(vocab, size=40).tolist() for _ in range(4)], 1, 0.1, vocab)
        a = DraftSource("near", SyntheticOracle(vocab, derive_seed(s, 1), 1.0, order=1))
        b = DraftSource("far", SyntheticOracle(vocab, derive_seed(s, 2), 0.3, order=None),
                        make_transform("pool_visual", stride=2))
        yield target, [a, b]


def measure_exhaustive_greedy(seed: int = 0, gammas=(1, 2, 3), max_len: int = 8, count: int = 6):
    """Run the exhaustive greedy check; return (passed, checked, counterexample)."""
    checked = 0
    for target, sources in small_instances(seed, count):
        for gamma in gammas:
            res = exhaustive_greedy_check(target, sources, gamma, max_len)
            checked += res.checked
            if not res.passed:
                return False, checked, res.counterexample
    return True, checked, None


def run_selftest(seed: int = 0, quick: bool = False):
    """Yield (name, passed, detail, seconds) for each oracle check."""
    n = 20_000 if quick else 100_000

    t = time.perf_counter()
    err = measure_exact_law(seed=seed)
    yield "exact single-step law == p", err < 1e-12, f"max err {err:.2e}", time.perf_counter() - t

    t = time.perf_counter()
    worst = 0.0
    for rate, expected, se in acceptance_rate_sweep(n=n, seed=seed):
        worst = max(worst, abs(rate - expected) / se)
    yield "acceptance rate == 1 - tvd", worst < 4.0, f"worst {worst:.2f} SE", time.perf_counter() - t

    t = time.perf_counter()
    mc = measure_session_equivalence(n=n, seed=seed)
    yield "SD session law == target law", mc.passed, f"tvd {mc.tvd:.4f} < {mc.threshold:.4f}", time.perf_counter() - t

    t = time.perf_counter()
    ok, checked, cex = measure_exhaustive_greedy(seed=seed, count=2 if quick else 6)
    detail = f"{checked} transcripts" if ok else f"counterexample {cex}"
    yield "greedy losslessness (exhaustive)", ok, detail, time.perf_counter() - t
