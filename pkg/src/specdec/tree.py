"""Token-tree drafting and greedy tree verification.

A tree of width d and depth gamma holds, under every node, the d most
probable next tokens of the drafting distribution for that node's path.
Verification follows the target's greedy chain down the tree.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

from .decoding import DecodeConfig, RunRecords, append_emitted, as_drafter
from .dist import Distribution, WeightVector, top_d
from .errors import BadParams, WidthOutOfRange
from .models import Context, SequenceModel

DraftFn = Callable[[tuple[int, ...]], Distribution]


@dataclass
class TreeNode:
    token: int | None  # None only at the root
    depth: int
    path: tuple[int, ...]
    dist: Distribution | None = None  # drafting distribution at this node's path
    children: list["TreeNode"] = field(default_factory=list)

    def child(self, token: int) -> "TreeNode | None":
        for c in self.children:
            if c.token == token:
                return c
        return None


@dataclass
class TokenTree:
    root: TreeNode
    width: int
    depth: int

    def nodes(self) -> Iterator[TreeNode]:
        """Non-root nodes in breadth-first (parent, child-rank) order."""
        frontier = [self.root]
        while frontier:
            nxt = []
            for node in frontier:
                yield from node.children
                nxt.extend(node.children)
            frontier = nxt

    def __len__(self) -> int:
        return sum(1 for _ in self.nodes())

    def paths(self, depth: int | None = None) -> list[tuple[int, ...]]:
        depth = self.depth if depth is None else depth
        return [n.path for n in self.nodes() if n.depth == depth]


@dataclass(frozen=True)
class TreeVerifyResult:
    accepted_path: tuple[int, ...]
    accepted_count: int
    extra_token: int
    target_dists: tuple[Distribution, ...]

    @property
    def emitted_tokens(self) -> tuple[int, ...]:
        return self.accepted_path + (self.extra_token,)


def build_tree(draft: DraftFn, d: int, gamma: int) -> TokenTree:
    """Expand every node breadth-first to depth ``gamma``.

    ``draft(path)`` returns the drafting distribution after the root context
    extended by ``path``.
    """
    if d < 1:
        raise WidthOutOfRange(f"tree width must be >= 1, got {d}")
    if gamma < 1:
        raise BadParams(f"gamma must be >= 1, got {gamma}")
    root = TreeNode(None, 0, ())
    frontier = [root]
    for depth in range(gamma):
        nxt = []
        for node in frontier:
            node.dist = draft(node.path)
            for tok in top_d(node.dist, d):
                child = TreeNode(tok, depth + 1, node.path + (tok,))
                node.children.append(child)
                nxt.append(child)
        frontier = nxt
    return TokenTree(root, d, gamma)


def verify_tree_greedy(target: SequenceModel, ctx: Context, tree: TokenTree) -> TreeVerifyResult:
    node = tree.root
    path: list[int] = []
    ps: list[Distribution] = []
    while True:
        p = target.next_distribution(ctx.extend(path))
        ps.append(p)
        best = p.argmax()
        nxt = node.child(best) if node.depth < tree.depth else None
        if nxt is None:
            return TreeVerifyResult(tuple(path), len(path), best, tuple(ps))
        path.append(best)
        node = nxt


def drafting_closure(drafter, ctx: Context, w: WeightVector) -> DraftFn:
    def draft(path: tuple[int, ...]) -> Distribution:
        return drafter.step(ctx.extend(path), w)[0]

    return draft


def tree_session(
    target: SequenceModel,
    source,
    ctx: Context,
    cfg: DecodeConfig,
    width: int,
) -> tuple[list[int], RunRecords]:
    """Greedy decoding where every block is a width-``width`` token tree.

    For an ensemble drafter the weight is chosen once per tree and only the
    accepted path is written back to its history.
    """
    if cfg.mode != "greedy":
        raise BadParams("tree verification is greedy-only")
    drafter = as_drafter(source)
    records = RunRecords(seed=cfg.seed, config=asdict(cfg) | {"tree_width": width})
    out: list[int] = []
    done = False
    while not done:
        cur = ctx.extend(out)
        w = drafter.begin_block(cur)
        tree = build_tree(drafting_closure(drafter, cur, w), width, cfg.gamma)
        res = verify_tree_greedy(target, cur, tree)
        n = min(res.accepted_count + 1, cfg.gamma)
        drafter.observe_path(cur, res.accepted_path, res.target_dists[:n], res.emitted_tokens[:n])
        records.add(len(out), res.accepted_count, w)
        done = append_emitted(out, res.emitted_tokens, cfg)
    return out, records
