import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import distributions
from specdec.dist import (
    Distribution,
    Rng,
    WeightVector,
    derive_seed,
    kl_divergence,
    residual_distribution,
    sample,
    top_d,
    tvd,
    weighted_average,
)
from specdec.errors import (
    DimensionMismatch,
    InvalidDistribution,
    NoResidualMass,
    WidthOutOfRange,
)


def D(*xs):
    return Distribution(np.array(xs, dtype=float))


class TestDistribution:
    def test_small_deviation_is_renormalized(self):
        d = Distribution([0.5, 0.5 + 5e-7])
        assert abs(d.probs.sum() - 1.0) < 1e-12

    def test_large_deviation_rejected(self):
        with pytest.raises(InvalidDistribution):
            Distribution([0.5, 0.6])

    @pytest.mark.parametrize("bad", [[-0.1, 1.1], [], [math.nan, 1.0], [math.inf, 0.0]])
    def test_invalid_entries_rejected(self, bad):
        with pytest.raises(InvalidDistribution):
            Distribution(bad)

    def test_probs_are_read_only(self):
        d = D(0.25, 0.75)
        with pytest.raises(ValueError):
            d.probs[0] = 1.0

    def test_weight_vector_validates(self):
        assert WeightVector((0.3, 0.7)).m == 2
        with pytest.raises(InvalidDistribution):
            WeightVector((0.3, 0.3))


class TestWeightedAverage:
    def test_identity_weight(self):
        p, q = D(0.2, 0.8), D(0.9, 0.1)
        assert np.array_equal(weighted_average([p, q], WeightVector((1.0, 0.0))).probs, p.probs)

    def test_symmetric_mix(self):
        out = weighted_average([D(1, 0), D(0, 1)], WeightVector((0.5, 0.5)))
        assert np.allclose(out.probs, [0.5, 0.5], atol=0, rtol=0)

    def test_random_mix_matches_direct_summation(self):
        gen = np.random.default_rng(3)
        dists = [Distribution(gen.dirichlet(np.ones(8))) for _ in range(4)]
        w = WeightVector(tuple(gen.dirichlet(np.ones(4))))
        out = weighted_average(dists, w)
        oracle = [sum(w[i] * dists[i][y] for i in range(4)) for y in range(8)]
        assert abs(out.probs.sum() - 1.0) <= 1e-12
        assert np.allclose(out.probs, oracle, atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            weighted_average([D(1, 0)], WeightVector((0.5, 0.5)))
        with pytest.raises(DimensionMismatch):
            weighted_average([D(1, 0), D(1, 0, 0)], WeightVector((0.5, 0.5)))

    @given(st.data())
    def test_output_is_convex_combination(self, data):
        v = data.draw(st.integers(1, 8))
        m = data.draw(st.integers(1, 4))
        dists = [data.draw(distributions(vocab=v)) for _ in range(m)]
        w = data.draw(distributions(vocab=m))
        out = weighted_average(dists, WeightVector(tuple(w.probs)))
        stack = np.stack([d.probs for d in dists])
        assert np.all(out.probs >= stack.min(axis=0) - 1e-12)
        assert np.all(out.probs <= stack.max(axis=0) + 1e-12)


class TestKL:
    def test_identity_is_zero(self):
        p = D(0.3, 0.7)
        assert kl_divergence(p, p, floor=0.0) == 0.0

    def test_point_mass_against_uniform(self):
        # 1 * ln(1 / 0.5)
        assert kl_divergence(D(1, 0), D(0.5, 0.5), floor=0.0) == pytest.approx(math.log(2), abs=1e-15)

    def test_floor_keeps_value_finite(self):
        assert math.isinf(kl_divergence(D(0.5, 0.5), D(1, 0), floor=0.0))
        value = kl_divergence(D(0.5, 0.5), D(1, 0), floor=1e-8)
        # q' = [1 - 0.5e-8, 0.5e-8]
        expected = 0.5 * math.log(0.5 / (1 - 0.5e-8)) + 0.5 * math.log(0.5 / 0.5e-8)
        assert math.isfinite(value)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_floor_range_checked(self):
        with pytest.raises(ValueError):
            kl_divergence(D(1, 0), D(1, 0), floor=0.01)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            kl_divergence(D(1, 0), D(1, 0, 0))

    @given(distributions(vocab=6), distributions(vocab=6))
    def test_gibbs_inequality(self, p, q):
        assert kl_divergence(p, q) >= 0.0

    @given(distributions(vocab=5))
    def test_zero_iff_equal_to_floored_q(self, p):
        floor = 1e-4
        # q chosen so that its floored version is exactly p (when possible).
        raw = (p.probs - floor / 5) / (1 - floor)
        if np.all(raw >= 0):
            assert kl_divergence(p, Distribution(raw / raw.sum()), floor) < 1e-9
        far = Distribution.point(5, int(np.argmin(p.probs)))
        assert kl_divergence(p, far, floor) > 1e-9


class TestTVD:
    def test_examples(self):
        p = D(0.2, 0.8)
        assert tvd(p, p) == 0.0
        assert tvd(D(1, 0), D(0, 1)) == 1.0
        assert tvd(D(0.7, 0.3), D(0.4, 0.6)) == pytest.approx(0.3, abs=1e-15)

    @given(distributions(vocab=7), distributions(vocab=7), distributions(vocab=7))
    def test_metric_properties(self, a, b, c):
        assert tvd(a, b) == pytest.approx(tvd(b, a), abs=1e-12)
        assert tvd(a, c) <= tvd(a, b) + tvd(b, c) + 1e-12
        assert 0.0 <= tvd(a, b) <= 1.0 + 1e-12


class TestResidual:
    def test_examples(self):
        assert np.array_equal(residual_distribution(D(1, 0), D(0, 1)).probs, [1, 0])
        assert np.allclose(residual_distribution(D(0.6, 0.4), D(0.2, 0.8)).probs, [1, 0])

    def test_no_mass(self):
        p = D(0.3, 0.7)
        with pytest.raises(NoResidualMass):
            residual_distribution(p, p)

    @given(distributions(vocab=6), distributions(vocab=6))
    def test_zero_where_p_not_above_q(self, p, q):
        if np.sum(np.maximum(0, p.probs - q.probs)) <= 1e-12:
            return
        r = residual_distribution(p, q)
        assert np.all(r.probs[p.probs <= q.probs] == 0.0)


class TestSample:
    def test_point_masses(self):
        rng = Rng(1)
        assert all(sample(D(1, 0, 0), rng) == 0 for _ in range(50))
        assert all(sample(D(0, 0, 1), rng) == 2 for _ in range(50))

    def test_zero_probability_tokens_never_drawn(self):
        rng = Rng(2)
        d = D(0.0, 0.5, 0.0, 0.5, 0.0)
        assert {sample(d, rng) for _ in range(2000)} == {1, 3}

    def test_fair_coin_frequency(self):
        rng = Rng(7)
        n = 100_000
        zeros = sum(sample(D(0.5, 0.5), rng) == 0 for _ in range(n))
        assert abs(zeros / n - 0.5) <= 0.01

    def test_reproducible(self):
        d = Distribution(np.random.default_rng(0).dirichlet(np.ones(10)))
        a = [sample(d, r) for r in [Rng(99)] for _ in range(500)]
        b = [sample(d, r) for r in [Rng(99)] for _ in range(500)]
        assert a == b

    def test_seed_bounds(self):
        Rng(2**64 - 1)
        with pytest.raises(ValueError):
            Rng(2**64)
        with pytest.raises(ValueError):
            Rng(-1)

    def test_derive_seed_is_stable_and_distinct(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


class TestTopD:
    def test_examples(self):
        assert top_d(D(0.1, 0.7, 0.2), 1) == [1]
        assert top_d(D(0.5, 0.5), 2) == [0, 1]
        assert top_d(D(0.2, 0.3, 0.5), 2) == [2, 1]

    @pytest.mark.parametrize("width", [0, 3])
    def test_width_range(self, width):
        with pytest.raises(WidthOutOfRange):
            top_d(D(0.5, 0.5), width)

    @settings(max_examples=50)
    @given(distributions(vocab=6), st.integers(1, 6))
    def test_sorted_with_index_tiebreak(self, d, width):
        got = top_d(d, width)
        oracle = sorted(range(6), key=lambda i: (-d[i], i))[:width]
        assert got == oracle
