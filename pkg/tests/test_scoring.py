import math

import numpy as np
import pytest

from mdm_decode.errors import EmptyDistribution
from mdm_decode.freqs import FrequencyTable, build_table, uniform_table
from mdm_decode.scoring import (
    CALIBRATION_FLOOR,
    SamplerSpec,
    calibrated_confidence,
    confidence_score,
    entropy_score,
    margin_score,
    pc_score,
    positional_weight,
    score_distribution,
)
from mdm_decode.state import TokenDistribution


def dist(*probs):
    return TokenDistribution({i: p for i, p in enumerate(probs)})


class TestConfidence:
    def test_plain_max(self):
        assert confidence_score(dist(0.7, 0.2, 0.1)) == 0.7

    def test_uniform(self):
        assert confidence_score(dist(0.25, 0.25, 0.25, 0.25)) == 0.25

    def test_one_hot(self):
        assert confidence_score(dist(0.0, 1.0)) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyDistribution):
            confidence_score(TokenDistribution({}, tail_mass=1.0))


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert entropy_score(dist(1.0, 0.0)) == 0.0

    def test_uniform_four(self):
        assert entropy_score(dist(0.25, 0.25, 0.25, 0.25)) == pytest.approx(
            -1.3862943611198906, abs=1e-12
        )

    def test_skewed_pair(self):
        assert entropy_score(dist(0.9, 0.1)) == pytest.approx(-0.3250829733914482, abs=1e-12)

    def test_truncated_distribution_renormalizes(self):
        truncated = TokenDistribution({0: 0.3, 1: 0.3}, tail_mass=0.4)
        assert entropy_score(truncated) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_never_positive(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 9))
            p = rng.random(n) + 1e-9
            p /= p.sum()
            score = entropy_score(TokenDistribution({i: float(x) for i, x in enumerate(p)}))
            assert score <= 1e-15


class TestMargin:
    def test_plain_gap(self):
        assert margin_score(dist(0.7, 0.2, 0.1)) == pytest.approx(0.5)

    def test_uniform_is_zero(self):
        assert margin_score(dist(0.5, 0.5)) == 0.0

    def test_one_hot_is_one(self):
        assert margin_score(dist(0.0, 1.0)) == 1.0

    def test_single_entry_pads_with_zero(self):
        assert margin_score(TokenDistribution({3: 1.0})) == 1.0

    def test_range(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 9))
            p = rng.random(n)
            p /= p.sum()
            score = margin_score(TokenDistribution({i: float(x) for i, x in enumerate(p)}))
            assert 0.0 <= score <= 1.0


class TestPositionalWeight:
    def test_first_position_is_one(self):
        assert positional_weight(3.7, 0) == 1.0

    def test_zero_decay_is_flat(self):
        assert positional_weight(0.0, 123) == 1.0

    def test_closed_form(self):
        assert positional_weight(0.25, 4) == pytest.approx(0.36787944117144233, abs=1e-15)


class TestCalibratedConfidence:
    def test_hand_value(self):
        table = build_table([0, 1], 2, smoothing=1.0)  # background p = 1/2 each
        d = dist(0.9, 0.1)
        assert calibrated_confidence(d, table, clip=10.0) == pytest.approx(
            0.6238324625039507, abs=1e-12
        )

    def test_clipping(self):
        # background probability e^-12 makes the raw score 1.0 * 12.
        probs = np.exp(-12.0)
        total = 10_000_000
        counts = np.zeros(2, dtype=np.int64)
        counts[1] = total
        table = FrequencyTable(counts, total, smoothing=probs * total / (1 - 2 * probs), vocab_size=2)
        assert table.prob(0) == pytest.approx(np.exp(-12.0), rel=1e-6)
        d = dist(1.0, 0.0)
        assert calibrated_confidence(d, table, clip=10.0) == 10.0

    def test_floor_for_certain_background(self):
        table = build_table([0, 0], 1, smoothing=1.0)  # single-token vocab, p = 1
        d = TokenDistribution({0: 1.0})
        assert calibrated_confidence(d, table, clip=10.0) == CALIBRATION_FLOOR

    def test_argmax_tie_breaks_to_lowest_id(self):
        table = build_table([1, 1, 1, 0, 0, 0, 0, 0], 8, smoothing=1.0)
        tie = dist(0.5, 0.5)
        expected = 0.5 * -math.log(table.prob(0))
        assert calibrated_confidence(tie, table, clip=10.0) == pytest.approx(expected)


class TestPcScore:
    def test_identity_weight(self):
        table = build_table([0, 1], 2, smoothing=1.0)
        spec = SamplerSpec(kind="pc", decay=0.0, clip=10.0, freq=table)
        d = dist(0.9, 0.1)
        assert pc_score(d, 0, spec) == pytest.approx(0.6238324625039507, abs=1e-12)

    def test_decayed_clipped_value(self):
        probs = np.exp(-12.0)
        total = 10_000_000
        counts = np.zeros(2, dtype=np.int64)
        counts[1] = total
        table = FrequencyTable(counts, total, smoothing=probs * total / (1 - 2 * probs), vocab_size=2)
        spec = SamplerSpec(kind="pc", decay=0.25, clip=10.0, freq=table)
        assert pc_score(dist(1.0, 0.0), 4, spec) == pytest.approx(3.6787944117144233, rel=1e-9)

    def test_always_positive(self, rng):
        table = uniform_table(6)
        spec = SamplerSpec(kind="pc", decay=0.25, clip=10.0, freq=table)
        for _ in range(100):
            p = rng.random(6) + 1e-12
            p /= p.sum()
            d = TokenDistribution({i: float(x) for i, x in enumerate(p)})
            assert pc_score(d, int(rng.integers(0, 100)), spec) > 0.0

    def test_requires_pc_spec(self):
        with pytest.raises(ValueError):
            pc_score(dist(1.0), 0, SamplerSpec(kind="confidence"))


class TestSpecValidation:
    def test_pc_needs_table(self):
        with pytest.raises(ValueError):
            SamplerSpec(kind="pc", freq=None)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SamplerSpec(kind="mystery")

    def test_negative_decay_rejected_for_pc(self):
        with pytest.raises(ValueError):
            SamplerSpec(kind="pc", decay=-0.5, freq=uniform_table(2))


class TestArgmaxEquivalence:
    def test_zero_decay_uniform_table_matches_confidence(self, rng):
        """With no positional decay and a flat background, the calibrated
        score is the confidence times a positive constant, so the best
        position is identical for every distribution set."""
        table = uniform_table(8)
        spec = SamplerSpec(kind="pc", decay=0.0, clip=100.0, freq=table)
        for _ in range(100):
            n_positions = int(rng.integers(1, 10))
            best_conf, best_pc = None, None
            top_conf, top_pc = -1.0, -1.0
            for pos in range(n_positions):
                p = rng.random(8) + 1e-9
                p /= p.sum()
                d = TokenDistribution({i: float(x) for i, x in enumerate(p)})
                c = confidence_score(d)
                s = pc_score(d, pos, spec)
                if c > top_conf:
                    best_conf, top_conf = pos, c
                if s > top_pc:
                    best_pc, top_pc = pos, s
            assert best_conf == best_pc


class TestPermutationCovariance:
    def test_relabeling_tokens_and_table_preserves_scores(self, rng):
        size = 6
        counts = rng.integers(0, 20, size=size)
        table = FrequencyTable(counts, int(counts.sum()), 1.0, size)
        perm = rng.permutation(size)
        permuted_counts = np.empty(size, dtype=np.int64)
        permuted_counts[perm] = counts
        permuted_table = FrequencyTable(permuted_counts, int(counts.sum()), 1.0, size)
        spec = SamplerSpec(kind="pc", decay=0.25, clip=10.0, freq=table)
        permuted_spec = SamplerSpec(kind="pc", decay=0.25, clip=10.0, freq=permuted_table)
        for _ in range(50):
            p = rng.random(size) + 1e-9
            p /= p.sum()
            d = TokenDistribution({i: float(x) for i, x in enumerate(p)})
            relabeled = TokenDistribution({int(perm[i]): float(x) for i, x in enumerate(p)})
            assert confidence_score(d) == pytest.approx(confidence_score(relabeled))
            assert entropy_score(d) == pytest.approx(entropy_score(relabeled))
            assert margin_score(d) == pytest.approx(margin_score(relabeled))
            ties = sorted(p)[-1] == sorted(p)[-2] if size > 1 else False
            if not ties:  # ties resolve by id, which relabeling moves
                assert pc_score(d, 3, spec) == pytest.approx(pc_score(relabeled, 3, permuted_spec))


class TestScoreDispatch:
    def test_each_kind_routes(self):
        d = dist(0.6, 0.4)
        assert score_distribution(SamplerSpec(kind="confidence"), d, 0) == 0.6
        assert score_distribution(SamplerSpec(kind="margin"), d, 0) == pytest.approx(0.2)
        assert score_distribution(SamplerSpec(kind="entropy"), d, 0) < 0

    def test_uniform_kind_has_no_distribution_score(self):
        with pytest.raises(ValueError):
            score_distribution(SamplerSpec(kind="uniform"), dist(1.0), 0)
