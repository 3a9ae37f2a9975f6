"""Linear speculative decoding: draft a block, verify it, append, repeat."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

from .dist import (
    RESIDUAL_MIN_MASS,
    Distribution,
    Rng,
    WeightVector,
    residual_distribution,
    residual_mass,
    sample,
)
from .errors import BadParams
from .models import Context, DraftSource, SequenceModel

Mode = Literal["stochastic", "greedy"]
MODES = ("stochastic", "greedy")


@dataclass(frozen=True)
class DraftBlock:
    tokens: tuple[int, ...]
    ensembled_dists: tuple[Distribution, ...]
    per_source_dists: tuple[tuple[Distribution, ...], ...]  # m rows of gamma
    weight_used: WeightVector
    start: int = 0  # index of the first drafted token within the generated sequence

    def __post_init__(self):
        g = len(self.tokens)
        if len(self.ensembled_dists) != g:
            raise BadParams("ensembled_dists length differs from gamma")
        if len(self.per_source_dists) != self.weight_used.m:
            raise BadParams("per_source_dists rows differ from m")
        if any(len(row) != g for row in self.per_source_dists):
            raise BadParams("per_source_dists row length differs from gamma")

    @property
    def gamma(self) -> int:
        return len(self.tokens)

    @property
    def m(self) -> int:
        return self.weight_used.m


@dataclass(frozen=True)
class VerificationResult:
    accepted_count: int
    emitted_tokens: tuple[int, ...]
    # p at every verified position on the realized trajectory, plus the
    # bonus position on full acceptance.
    target_dists: tuple[Distribution, ...]


@dataclass(frozen=True)
class DecodeConfig:
    gamma: int = 5
    mode: Mode = "greedy"
    max_new_tokens: int = 128
    eos_token: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 1:
            raise BadParams(f"gamma must be >= 1, got {self.gamma}")
        if self.max_new_tokens < 1:
            raise BadParams(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.mode not in MODES:
            raise BadParams(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class BlockRecord:
    position: int
    accepted_count: int
    tokens_emitted: int
    weight_used: tuple[float, ...]


@dataclass
class RunRecords:
    blocks: list[BlockRecord] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def add(self, position: int, accepted_count: int, weight: WeightVector) -> None:
        self.blocks.append(
            BlockRecord(position, accepted_count, accepted_count + 1, tuple(weight.weights))
        )

    @property
    def total_accepted(self) -> int:
        return sum(b.accepted_count for b in self.blocks)

    @property
    def total_emitted(self) -> int:
        return sum(b.tokens_emitted for b in self.blocks)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "blocks": [asdict(b) | {"weight_used": list(b.weight_used)} for b in self.blocks],
            "total_accepted": self.total_accepted,
            "total_emitted": self.total_emitted,
        }


def pick(d: Distribution, mode: Mode, rng: Rng) -> int:
    return d.argmax() if mode == "greedy" else sample(d, rng)


class SingleSourceDrafter:
    """Drafter over one source; its weight is always [1]."""

    def __init__(self, source: DraftSource):
        self.sources = [source]
        self.weight = WeightVector((1.0,))

    @property
    def m(self) -> int:
        return 1

    def begin_block(self, ctx: Context) -> WeightVector:
        return self.weight

    def step(self, ctx: Context, w: WeightVector) -> tuple[Distribution, tuple[Distribution, ...]]:
        d = self.sources[0].next_distribution(ctx)
        return d, (d,)

    def draft(self, ctx: Context, gamma: int, mode: Mode, rng: Rng) -> DraftBlock:
        return draft_block(self.sources[0], ctx, gamma, mode, rng)

    def observe(self, block: DraftBlock, vr: VerificationResult) -> None:
        pass

    def observe_path(self, ctx, path, target_dists, realized) -> None:
        pass


def as_drafter(source):
    if isinstance(source, DraftSource):
        return SingleSourceDrafter(source)
    return source


def draft_with(drafter, ctx: Context, gamma: int, mode: Mode, rng: Rng, w: WeightVector) -> DraftBlock:
    """Autoregressive drafting with the weight held fixed for the whole block."""
    if gamma < 1:
        raise BadParams(f"gamma must be >= 1, got {gamma}")
    tokens: list[int] = []
    ens: list[Distribution] = []
    rows: list[list[Distribution]] = [[] for _ in range(w.m)]
    cur = ctx
    for _ in range(gamma):
        q, per_source = drafter.step(cur, w)
        y = pick(q, mode, rng)
        tokens.append(y)
        ens.append(q)
        for row, d in zip(rows, per_source):
            row.append(d)
        cur = cur.extend((y,))
    return DraftBlock(tuple(tokens), tuple(ens), tuple(tuple(r) for r in rows), w, len(ctx.generated))


def draft_block(source: DraftSource, ctx: Context, gamma: int, mode: Mode, rng: Rng) -> DraftBlock:
    if gamma < 1:
        raise BadParams(f"gamma must be >= 1, got {gamma}")
    base = source.transform(ctx)
    tokens: list[int] = []
    dists: list[Distribution] = []
    for _ in range(gamma):
        q = source.model.next_distribution(base.extend(tokens))
        tokens.append(pick(q, mode, rng))
        dists.append(q)
    return DraftBlock(tuple(tokens), tuple(dists), (tuple(dists),), WeightVector((1.0,)), len(ctx.generated))


def accept_draft_token(p: Distribution, q: Distribution, token: int, rng: Rng) -> bool:
    """Accept ``token`` (drafted from q) with probability min(1, p/q)."""
    u = rng.uniform()
    pt = p[token]
    qt = q[token]
    return pt >= qt or u * qt < pt


def verify_stochastic(target: SequenceModel, ctx: Context, block: DraftBlock, rng: Rng) -> VerificationResult:
    ps: list[Distribution] = []
    for i, y in enumerate(block.tokens):
        p = target.next_distribution(ctx.extend(block.tokens[:i]))
        ps.append(p)
        q = block.ensembled_dists[i]
        if accept_draft_token(p, q, y, rng):
            continue
        if residual_mass(p, q) <= RESIDUAL_MIN_MASS:
            # p == q up to rounding: the residual is undefined, p is its limit.
            z = sample(p, rng)
        else:
            z = sample(residual_distribution(p, q), rng)
        return VerificationResult(i, block.tokens[:i] + (z,), tuple(ps))
    p = target.next_distribution(ctx.extend(block.tokens))
    ps.append(p)
    return VerificationResult(block.gamma, block.tokens + (sample(p, rng),), tuple(ps))


def verify_greedy(target: SequenceModel, ctx: Context, block: DraftBlock) -> VerificationResult:
    ps: list[Distribution] = []
    for i, y in enumerate(block.tokens):
        p = target.next_distribution(ctx.extend(block.tokens[:i]))
        ps.append(p)
        best = p.argmax()
        if best != y:
            return VerificationResult(i, block.tokens[:i] + (best,), tuple(ps))
    p = target.next_distribution(ctx.extend(block.tokens))
    ps.append(p)
    return VerificationResult(block.gamma, block.tokens + (p.argmax(),), tuple(ps))


def verify(target: SequenceModel, ctx: Context, block: DraftBlock, mode: Mode, rng: Rng) -> VerificationResult:
    if mode == "greedy":
        return verify_greedy(target, ctx, block)
    return verify_stochastic(target, ctx, block, rng)


def append_emitted(out: list[int], emitted: Sequence[int], cfg: DecodeConfig) -> bool:
    """Append block output; return True once EOS or the length budget is hit."""
    for tok in emitted:
        out.append(tok)
        if cfg.eos_token is not None and tok == cfg.eos_token:
            return True
        if len(out) >= cfg.max_new_tokens:
            return True
    return False


def decode_session(
    target: SequenceModel,
    source,
    ctx: Context,
    cfg: DecodeConfig,
    rng: Rng | None = None,
) -> tuple[list[int], RunRecords]:
    """Run draft/verify rounds until EOS is emitted or ``max_new_tokens`` is reached.

    ``source`` is a :class:`DraftSource` or any drafter object (for example an
    ensemble drafter) exposing ``draft`` and ``observe``.
    """
    drafter = as_drafter(source)
    rng = rng if rng is not None else Rng(cfg.seed)
    records = RunRecords(seed=cfg.seed, config=asdict(cfg))
    out: list[int] = []
    done = False
    while not done:
        cur = ctx.extend(out)
        block = drafter.draft(cur, cfg.gamma, cfg.mode, rng)
        vr = verify(target, cur, block, cfg.mode, rng)
        drafter.observe(block, vr)
        records.add(len(out), vr.accepted_count, block.weight_used)
        done = append_emitted(out, vr.emitted_tokens, cfg)
    return out, records


def target_only_decode(target: SequenceModel, ctx: Context, cfg: DecodeConfig, rng: Rng | None = None) -> list[int]:
    """Plain autoregressive decoding of the target, the reference for losslessness."""
    rng = rng if rng is not None else Rng(cfg.seed)
    out: list[int] = []
    while True:
        p = target.next_distribution(ctx.extend(out))
        if append_emitted(out, (pick(p, cfg.mode, rng),), cfg):
            return out
