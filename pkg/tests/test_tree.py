import itertools

import numpy as np
import pytest

from specdec.decoding import DecodeConfig, decode_session, draft_block, verify_greedy
from specdec.dist import Distribution, Rng
from specdec.ensemble import EnsembleDrafter, WeightPolicy
from specdec.errors import BadParams, WidthOutOfRange
from specdec.metrics import block_efficiency
from specdec.models import ConstantModel, Context, DraftSource, SyntheticOracle
from specdec.oracle import reference_greedy
from specdec.tree import build_tree, drafting_closure, tree_session, verify_tree_greedy
from specdec.decoding import as_drafter


def closure(model, ctx):
    return lambda path: model.next_distribution(ctx.extend(path))


class TestBuildTree:
    def test_width_one_is_linear_block(self):
        src = DraftSource("s", SyntheticOracle(6, 3, 0.5, order=2))
        ctx = Context.text([1, 4])
        tree = build_tree(closure(src.model, ctx), 1, 5)
        block = draft_block(src, ctx, 5, "greedy", Rng(0))
        assert tree.paths() == [block.tokens]
        assert len(tree) == 5

    def test_node_count_bound(self):
        tree = build_tree(closure(SyntheticOracle(5, 1), Context()), 2, 2)
        assert len(tree) == 6
        tree = build_tree(closure(SyntheticOracle(5, 1), Context()), 3, 3)
        assert len(tree) == 3 + 9 + 27

    def test_full_width_enumerates_all_sequences(self):
        tree = build_tree(closure(SyntheticOracle(3, 2), Context()), 3, 2)
        assert sorted(tree.paths()) == list(itertools.product(range(3), repeat=2))

    def test_children_are_distinct_top_tokens(self):
        model = SyntheticOracle(7, 5, 0.4, order=1)
        tree = build_tree(closure(model, Context()), 3, 3)
        for node in tree.nodes():
            if node.depth == 3:
                assert not node.children
                continue
            toks = [c.token for c in node.children]
            assert len(set(toks)) == 3
            probs = node.dist.probs
            assert min(probs[toks]) >= max(np.delete(probs, toks))

    def test_ties_go_to_lower_index(self):
        tree = build_tree(lambda path: Distribution.uniform(4), 2, 1)
        assert tree.paths() == [(0,), (1,)]

    @pytest.mark.parametrize("d", [0, 6])
    def test_width_out_of_range(self, d):
        with pytest.raises(WidthOutOfRange):
            build_tree(closure(SyntheticOracle(5, 1), Context()), d, 2)


class TestVerifyTree:
    def test_width_one_matches_linear_verification(self):
        target = SyntheticOracle(6, 7, 0.3, order=2)
        src = DraftSource("s", SyntheticOracle(6, 8, 0.3, order=1))
        for prompt in [[0], [1, 2], [5, 5, 3]]:
            ctx = Context.text(prompt)
            block = draft_block(src, ctx, 4, "greedy", Rng(0))
            lin = verify_greedy(target, ctx, block)
            res = verify_tree_greedy(target, ctx, build_tree(closure(src.model, ctx), 1, 4))
            assert res.accepted_count == lin.accepted_count
            assert res.emitted_tokens == lin.emitted_tokens

    def test_full_width_always_accepts_everything(self):
        target = SyntheticOracle(3, 9, 0.5, order=2)
        draft = SyntheticOracle(3, 10, 0.5, order=2)
        for prompt in itertools.product(range(3), repeat=2):
            ctx = Context.text(prompt)
            res = verify_tree_greedy(target, ctx, build_tree(closure(draft, ctx), 3, 2))
            assert res.accepted_count == 2
            assert list(res.emitted_tokens) == reference_greedy(target, ctx, 3)

    def test_divergence_after_first_match(self):
        # Drafts are always {0, 1}; the target wants 1 and then 2.
        draft = lambda path: Distribution(np.array([0.5, 0.4, 0.1]))
        ctx = Context()

        class Target:
            vocab_size = 3

            def next_distribution(self, c):
                return Distribution.point(3, 1 if len(c.generated) == 0 else 2)

        res = verify_tree_greedy(Target(), ctx, build_tree(draft, 2, 3))
        assert res.accepted_path == (1,)
        assert res.accepted_count == 1
        assert res.extra_token == 2

    def test_wider_trees_accept_at_least_as_much(self):
        target = SyntheticOracle(6, 12, 0.3, order=2)
        draft = SyntheticOracle(6, 13, 0.3, order=2)
        for prompt in itertools.product(range(6), repeat=2):
            ctx = Context.text(prompt)
            counts = [verify_tree_greedy(target, ctx, build_tree(closure(draft, ctx), d, 3)).accepted_count
                      for d in range(1, 7)]
            assert counts == sorted(counts)
            assert counts[-1] == 3


class TestTreeSession:
    def setup_method(self):
        self.target = SyntheticOracle(6, 20, 0.3, order=2)
        self.a = DraftSource("a", SyntheticOracle(6, 21, 0.3, order=2))
        self.b = DraftSource("b", SyntheticOracle(6, 22, 0.3, order=1))
        self.cfg = DecodeConfig(gamma=4, mode="greedy", max_new_tokens=60)
        self.ctx = Context.text([2, 3])

    def test_width_one_equals_linear_session(self):
        out_t, rec_t = tree_session(self.target, self.a, self.ctx, self.cfg, 1)
        out_l, rec_l = decode_session(self.target, self.a, self.ctx, self.cfg)
        assert out_t == out_l
        assert [b.accepted_count for b in rec_t.blocks] == [b.accepted_count for b in rec_l.blocks]
        assert block_efficiency(rec_t) == block_efficiency(rec_l)

    def test_width_one_ensemble_equals_linear_ensemble(self):
        mk = lambda: EnsembleDrafter([self.a, self.b], WeightPolicy("grid"), "soft_kl")
        out_t, rec_t = tree_session(self.target, mk(), self.ctx, self.cfg, 1)
        out_l, rec_l = decode_session(self.target, mk(), self.ctx, self.cfg)
        assert out_t == out_l
        assert rec_t.blocks == rec_l.blocks

    def test_lossless_and_bounded(self):
        expected = reference_greedy(self.target, self.ctx, 60)
        for d in (1, 2, 3):
            out, rec = tree_session(self.target, self.a, self.ctx, self.cfg, d)
            assert out == expected
            assert 1.0 <= block_efficiency(rec) <= 5.0

    def test_deterministic(self):
        mk = lambda: EnsembleDrafter([self.a, self.b], WeightPolicy("grid"), "soft_kl")
        assert tree_session(self.target, mk(), self.ctx, self.cfg, 2) == \
            tree_session(self.target, mk(), self.ctx, self.cfg, 2)

    def test_history_follows_accepted_path(self):
        drafter = EnsembleDrafter([self.a, self.b], WeightPolicy("grid"), "soft_kl")
        out, rec = tree_session(self.target, drafter, self.ctx, self.cfg, 2)
        entries = drafter.cache.entries
        pos = [e.position for e in entries]
        assert pos == sorted(set(pos))
        # the final block may run past the token budget
        for e in entries:
            if e.position < len(out):
                assert e.realized_token == out[e.position]

    def test_stochastic_rejected(self):
        cfg = DecodeConfig(gamma=3, mode="stochastic", max_new_tokens=5)
        with pytest.raises(BadParams):
            tree_session(self.target, self.a, self.ctx, cfg, 2)

    def test_closure_uses_block_weight(self):
        point = DraftSource("p", ConstantModel.point_mass(6, 5))
        drafter = as_drafter(EnsembleDrafter([self.a, point], WeightPolicy("grid"), "soft_kl"))
        w = drafter.begin_block(self.ctx)
        dist = drafting_closure(drafter, self.ctx, w)(())
        assert dist.allclose(Distribution(0.5 * self.a.next_distribution(self.ctx).probs + 0.5 * np.eye(6)[5]))
