"""Toy next-token models, decoding contexts and context transforms.

The transforms stand in for the drafting methods an ensemble combines:
``identity`` keeps everything (multimodal drafting), ``drop_visual`` swaps
each visual run for a separator (text-only drafting), ``pool_visual`` keeps
every s-th visual token (pooled drafting) and ``summarize_visual`` keeps a
short frequency summary (caption drafting).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .dist import Distribution
from .errors import BadParams, IoError, TokenOutOfVocab

TokenId = int


class Tag(str, Enum):
    TEXT = "TEXT"
    VISUAL = "VISUAL"
    SYSTEM = "SYSTEM"


@dataclass(frozen=True)
class Segment:
    tag: Tag
    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tag", Tag(self.tag))
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


@dataclass(frozen=True)
class Context:
    """A prompt made of tagged segments plus the tokens generated so far."""

    segments: tuple[Segment, ...] = ()
    generated: tuple[int, ...] = ()

    @classmethod
    def text(cls, tokens: Iterable[int]) -> "Context":
        return cls((Segment(Tag.TEXT, tuple(tokens)),))

    @cached_property
    def prompt_tokens(self) -> tuple[int, ...]:
        out: list[int] = []
        for seg in self.segments:
            out.extend(seg.tokens)
        return tuple(out)

    @cached_property
    def tokens(self) -> tuple[int, ...]:
        """Flat view a model conditions on: all segments, then generated tokens."""
        return self.prompt_tokens + self.generated

    def extend(self, tokens: Iterable[int]) -> "Context":
        tokens = tuple(tokens)
        if not tokens:
            return self
        ctx = Context(self.segments, self.generated + tokens)
        # Reuse the flattened prompt; segments are shared.
        if "prompt_tokens" in self.__dict__:
            ctx.__dict__["prompt_tokens"] = self.prompt_tokens
        return ctx

    def with_segments(self, segments: Sequence[Segment]) -> "Context":
        return Context(tuple(segments), self.generated)


@runtime_checkable
class SequenceModel(Protocol):
    vocab_size: int

    def next_distribution(self, ctx: Context) -> Distribution: ...


class KgramModel:
    """Add-lambda smoothed k-gram model over the last ``k`` context tokens.

    Contexts never seen in training (including ones shorter than ``k``) get
    the smoothed prior, which is uniform.
    """

    def __init__(self, k: int, lam: float, vocab_size: int, counts: dict | None = None):
        if k < 0:
            raise BadParams(f"k must be >= 0, got {k}")
        if not lam > 0:
            raise BadParams(f"lambda must be > 0, got {lam}")
        if vocab_size < 1:
            raise BadParams(f"vocab_size must be >= 1, got {vocab_size}")
        self.k = int(k)
        self.lam = float(lam)
        self.vocab_size = int(vocab_size)
        self.counts: dict[tuple[int, ...], np.ndarray] = {}
        for key, row in (counts or {}).items():
            row = np.asarray(row, dtype=np.int64)
            if row.shape != (self.vocab_size,):
                raise BadParams(f"count row for {key} has shape {row.shape}")
            self.counts[tuple(int(t) for t in key)] = row
        self._prior = Distribution.uniform(self.vocab_size)
        self._memo: dict[tuple[int, ...], Distribution] = {}

    def _key(self, tokens: tuple[int, ...]) -> tuple[int, ...] | None:
        if len(tokens) < self.k:
            return None
        return tokens[len(tokens) - self.k:] if self.k else ()

    def distribution_for(self, key: tuple[int, ...] | None) -> Distribution:
        if key is None or key not in self.counts:
            return self._prior
        d = self._memo.get(key)
        if d is None:
            row = self.counts[key]
            d = Distribution((row + self.lam) / (row.sum() + self.lam * self.vocab_size))
            self._memo[key] = d
        return d

    def next_distribution(self, ctx: Context) -> Distribution:
        return self.distribution_for(self._key(ctx.tokens))

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "vocab_size": self.vocab_size,
            "counts": [[list(key), row.tolist()] for key, row in sorted(self.counts.items())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KgramModel":
        try:
            counts = {tuple(key): row for key, row in obj["counts"]}
            return cls(obj["k"], obj["lambda"], obj["vocab_size"], counts)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadParams(f"malformed k-gram snapshot: {exc}") from exc

    def save(self, path: str | Path) -> None:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_json(), sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write model snapshot {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "KgramModel":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read model snapshot {path}: {exc}") from exc
        return cls.from_json(obj)


def train_kgram(corpus: Iterable[Sequence[int]], k: int, lam: float, vocab_size: int) -> KgramModel:
    """Count every length-(k+1) window of every document."""
    counts: dict[tuple[int, ...], np.ndarray] = {}
    for doc in corpus:
        doc = [int(t) for t in doc]
        for t in doc:
            if not 0 <= t < vocab_size:
                raise TokenOutOfVocab(f"token {t} outside vocabulary of size {vocab_size}")
        for i in range(k, len(doc)):
            key = tuple(doc[i - k:i])
            row = counts.get(key)
            if row is None:
                row = counts[key] = np.zeros(vocab_size, dtype=np.int64)
            row[doc[i]] += 1
    return KgramModel(k, lam, vocab_size, counts)


class SyntheticOracle:
    """Random Dirichlet next-token laws keyed by a hash of the context.

    ``order`` limits conditioning to the last ``order`` tokens; ``None``
    conditions on the whole flattened context.
    """

    def __init__(self, vocab_size: int, seed: int, concentration: float = 1.0, order: int | None = None):
        if concentration <= 0:
            raise BadParams(f"concentration must be > 0, got {concentration}")
        if order is not None and order < 0:
            raise BadParams(f"order must be >= 0, got {order}")
        self.vocab_size = int(vocab_size)
        self.seed = int(seed)
        self.concentration = float(concentration)
        self.order = order
        self._memo: dict[tuple[int, ...], Distribution] = {}

    def next_distribution(self, ctx: Context) -> Distribution:
        toks = ctx.tokens
        if self.order is not None:
            toks = toks[len(toks) - self.order:] if self.order else ()
        d = self._memo.get(toks)
        if d is None:
            h = hashlib.blake2b(digest_size=8)
            h.update(self.seed.to_bytes(8, "little", signed=False))
            h.update(np.asarray(toks, dtype=np.int64).tobytes())
            gen = np.random.Generator(np.random.PCG64(int.from_bytes(h.digest(), "little")))
            probs = gen.dirichlet(np.full(self.vocab_size, self.concentration))
            if not np.isfinite(probs).all() or probs.sum() == 0.0:
                probs = np.full(self.vocab_size, 1.0 / self.vocab_size)
            d = self._memo[toks] = Distribution(probs)
        return d


class ConstantModel:
    """Returns the same distribution for every context."""

    def __init__(self, dist: Distribution):
        self.dist = dist
        self.vocab_size = dist.vocab_size

    @classmethod
    def point_mass(cls, vocab_size: int, token: int) -> "ConstantModel":
        return cls(Distribution.point(vocab_size, token))

    def next_distribution(self, ctx: Context) -> Distribution:
        return self.dist


TRANSFORM_KINDS = ("identity", "drop_visual", "summarize_visual", "pool_visual")


@dataclass(frozen=True)
class Transform:
    """A pure Context -> Context rewrite of the prompt segments.

    Generated tokens are never touched, so transforming and then appending
    gives the same context as appending and then transforming.
    """

    kind: str = "identity"
    separator: int = 0
    stride: int = 2
    length: int = 1

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise BadParams(f"unknown transform kind {self.kind!r}")
        if self.kind == "pool_visual" and self.stride < 2:
            raise BadParams(f"pool stride must be >= 2, got {self.stride}")
        if self.kind == "summarize_visual" and self.length < 1:
            raise BadParams(f"summary length must be >= 1, got {self.length}")
        if self.kind == "drop_visual" and self.separator < 0:
            raise BadParams(f"separator token must be >= 0, got {self.separator}")

    def _rewrite(self, tokens: tuple[int, ...]) -> tuple[int, ...]:
        if self.kind == "drop_visual":
            return (self.separator,)
        if self.kind == "pool_visual":
            return tokens[:: self.stride]
        counts = Counter(tokens)
        first = {}
        for i, t in enumerate(tokens):
            first.setdefault(t, i)
        keep = sorted(counts, key=lambda t: (-counts[t], first[t]))[: self.length]
        return tuple(sorted(keep, key=first.__getitem__))

    def __call__(self, ctx: Context) -> Context:
        if self.kind == "identity":
            return ctx
        segs = tuple(
            Segment(s.tag, self._rewrite(s.tokens)) if s.tag is Tag.VISUAL else s
            for s in ctx.segments
        )
        return ctx.with_segments(segs)


def make_transform(kind: str, **params) -> Transform:
    allowed = {"identity": set(), "drop_visual": {"separator"},
               "pool_visual": {"stride"}, "summarize_visual": {"length"}}
    if kind not in allowed:
        raise BadParams(f"unknown transform kind {kind!r}")
    extra = set(params) - allowed[kind]
    if extra:
        raise BadParams(f"unexpected parameters for {kind}: {sorted(extra)}")
    return Transform(kind, **params)


@dataclass
class DraftSource:
    """A sequence model seen through a context transform."""

    name: str
    model: SequenceModel
    transform: Callable[[Context], Context] = field(default_factory=Transform)

    @property
    def vocab_size(self) -> int:
        return self.model.vocab_size

    def next_distribution(self, ctx: Context) -> Distribution:
        return self.model.next_distribution(self.transform(ctx))


class CharTokenizer:
    """Character-level tokenizer. Token 0 is reserved for the separator."""

    def __init__(self, alphabet: Sequence[str], separator: str = "\n"):
        chars = [c for c in alphabet if c != separator]
        if len(set(chars)) != len(chars):
            raise BadParams("alphabet has duplicate characters")
        self.separator = separator
        self.chars = [separator, *chars]
        self.index = {c: i for i, c in enumerate(self.chars)}

    @classmethod
    def from_texts(cls, texts: Iterable[str], separator: str = "\n") -> "CharTokenizer":
        seen = set()
        for text in texts:
            seen.update(text)
        seen.discard(separator)
        return cls(sorted(seen), separator)

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[c] for c in text]
        except KeyError as exc:
            raise TokenOutOfVocab(f"character {exc.args[0]!r} not in alphabet") from None

    def decode(self, tokens: Iterable[int]) -> str:
        return "".join(self.chars[t] for t in tokens)


def read_corpus(path: str | Path) -> list[str]:
    """One document per non-empty line of a UTF-8 file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc
    return [line for line in text.splitlines() if line.strip()]
