import numpy as np
import pytest

from mdm_decode.errors import (
    InvalidDistribution,
    PositionAlreadyUnmasked,
    TokenIsMask,
)
from mdm_decode.state import (
    DecodeEvent,
    DecodeTrajectory,
    SequenceState,
    TokenDistribution,
    Vocabulary,
    apply_unmask,
    masked_positions,
    parse_trajectory_csv,
    trajectory_csv_bytes,
)

MASK = 9


def _state(gen):
    return SequenceState(prompt=(1, 2), gen=tuple(gen), mask_id=MASK)


class TestVocabulary:
    def test_mask_id_must_be_in_range(self):
        with pytest.raises(ValueError):
            Vocabulary(size=4, mask_id=4)
        with pytest.raises(ValueError):
            Vocabulary(size=4, mask_id=-1)

    def test_display_must_cover_every_id(self):
        Vocabulary(size=2, mask_id=1, display={0: "a", 1: "<mask>"})
        with pytest.raises(ValueError):
            Vocabulary(size=3, mask_id=2, display={0: "a", 2: "<mask>"})


class TestApplyUnmask:
    def test_unmask_fully_masked_position(self):
        out = apply_unmask(_state([MASK, MASK]), 0, 7)
        assert out.gen == (7, MASK)

    def test_repeated_tokens_are_fine(self):
        out = apply_unmask(_state([3, MASK]), 1, 3)
        assert out.gen == (3, 3)

    def test_already_unmasked_position_rejected(self):
        with pytest.raises(PositionAlreadyUnmasked):
            apply_unmask(_state([3, 5]), 0, 2)

    def test_mask_token_rejected(self):
        with pytest.raises(TokenIsMask):
            apply_unmask(_state([MASK]), 0, MASK)

    def test_original_state_is_untouched(self):
        state = _state([MASK, MASK])
        apply_unmask(state, 0, 7)
        assert state.gen == (MASK, MASK)

    def test_step_index_unchanged(self):
        state = _state([MASK])
        assert apply_unmask(state, 0, 1).step_index == state.step_index

    def test_prompt_must_not_contain_mask(self):
        with pytest.raises(TokenIsMask):
            SequenceState(prompt=(MASK,), gen=(MASK,), mask_id=MASK)


class TestMaskedPositions:
    def test_mixed(self):
        assert masked_positions(_state([MASK, 4, MASK])) == [0, 2]

    def test_complete(self):
        assert masked_positions(_state([1, 2, 3])) == []

    def test_fully_masked(self):
        assert masked_positions(_state([MASK] * 4)) == [0, 1, 2, 3]

    def test_is_complete(self):
        assert _state([1, 2]).is_complete
        assert not _state([1, MASK]).is_complete


class TestFoldProperty:
    def test_replaying_a_random_unmask_order_completes_the_state(self):
        rng = np.random.Generator(np.random.PCG64(7))
        for _ in range(25):
            length = int(rng.integers(1, 65))
            state = SequenceState.fully_masked((), length, MASK)
            order = rng.permutation(length)
            events = []
            for step, pos in enumerate(order, start=1):
                token = int(rng.integers(0, MASK))
                before = len(masked_positions(state))
                state = apply_unmask(state, int(pos), token)
                assert len(masked_positions(state)) == before - 1
                events.append(DecodeEvent(step, int(pos), token, 0.0, 0.0))
            assert state.is_complete
            traj = DecodeTrajectory(tuple(events), length, length)
            assert len(traj.events) == length


class TestTokenDistribution:
    def test_mass_must_sum_to_one(self):
        with pytest.raises(InvalidDistribution):
            TokenDistribution({0: 0.7, 1: 0.5})

    def test_tail_mass_counts_toward_total(self):
        dist = TokenDistribution({0: 0.6, 1: 0.2}, tail_mass=0.2)
        assert dist.tail_mass == 0.2

    def test_negative_tail_rejected(self):
        with pytest.raises(InvalidDistribution):
            TokenDistribution({0: 1.1}, tail_mass=-0.1)

    def test_top_token_tie_breaks_to_lowest_id(self):
        assert TokenDistribution({2: 0.5, 1: 0.5}).top_token() == (1, 0.5)


class TestTrajectory:
    def test_every_position_exactly_once(self):
        events = (DecodeEvent(1, 0, 5, 0.1, 0.9),)
        with pytest.raises(ValueError):
            DecodeTrajectory(events, gen_len=2, total_steps=1)

    def test_steps_must_not_decrease(self):
        events = (
            DecodeEvent(2, 0, 5, 0.1, 0.9),
            DecodeEvent(1, 1, 5, 0.1, 0.9),
        )
        with pytest.raises(ValueError):
            DecodeTrajectory(events, gen_len=2, total_steps=2)

    def test_duplicate_position_within_step_rejected(self):
        events = (
            DecodeEvent(1, 0, 5, 0.1, 0.9),
            DecodeEvent(1, 0, 6, 0.1, 0.9),
        )
        with pytest.raises(ValueError):
            DecodeTrajectory(events, gen_len=1, total_steps=1)


class TestTrajectoryCsv:
    def test_header_and_roundtrip(self):
        events = (
            DecodeEvent(1, 1, 3, 0.25, 0.75),
            DecodeEvent(2, 0, 2, 0.125, 0.5),
        )
        traj = DecodeTrajectory(events, gen_len=2, total_steps=2)
        data = trajectory_csv_bytes(traj)
        text = data.decode("utf-8")
        assert text.splitlines()[0] == "step,position,token,score,confidence"
        assert "\r" not in text
        assert parse_trajectory_csv(data) == traj
