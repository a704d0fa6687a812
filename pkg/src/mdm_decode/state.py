"""Core value types: vocabularies, partially masked sequences, per-position
distributions, and decode trajectories.

A masked generation slot is represented by the vocabulary's ``mask_id``
itself, exactly as the sequence would be fed to a mask-predicting model;
there is no separate sentinel. All positional indices are relative to the
generation region (the prompt is excluded).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .errors import (
    EmptyDistribution,
    InvalidDistribution,
    PositionAlreadyUnmasked,
    TokenIsMask,
)

# Allowed slack on total probability mass (sum of entries plus tail).
MASS_TOLERANCE = 1e-6

TRAJECTORY_CSV_HEADER = "step,position,token,score,confidence"


@dataclass(frozen=True)
class Vocabulary:
    """Token-id space with one id reserved for the mask symbol.

    ``display`` is an optional id -> text mapping used only by analytics;
    when present it must cover every id.
    """

    size: int
    mask_id: int
    display: Optional[Mapping[int, str]] = None

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"vocabulary size must be positive, got {self.size}")
        if not 0 <= self.mask_id < self.size:
            raise ValueError(
                f"mask_id {self.mask_id} outside [0, {self.size})"
            )
        if self.display is not None:
            missing = [i for i in range(self.size) if i not in self.display]
            if missing:
                raise ValueError(f"display mapping missing ids {missing[:5]}")


@dataclass(frozen=True)
class SequenceState:
    """A prompt plus a generation region in which masked slots hold ``mask_id``.

    Instances are immutable; unmasking produces a new state. ``step_index``
    counts completed decode steps and is advanced by the decode loop, not by
    :func:`apply_unmask`.
    """

    prompt: tuple[int, ...]
    gen: tuple[int, ...]
    mask_id: int
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(self.prompt))
        object.__setattr__(self, "gen", tuple(self.gen))
        if any(t == self.mask_id for t in self.prompt):
            raise TokenIsMask("prompt tokens must not be the mask id")

    @property
    def gen_len(self) -> int:
        return len(self.gen)

    @property
    def is_complete(self) -> bool:
        return self.mask_id not in self.gen

    @classmethod
    def fully_masked(cls, prompt: Sequence[int], gen_len: int, mask_id: int) -> "SequenceState":
        return cls(tuple(prompt), (mask_id,) * gen_len, mask_id)


def masked_positions(state: SequenceState) -> list[int]:
    """Ascending generation indices whose slot is still masked."""
    return [i for i, t in enumerate(state.gen) if t == state.mask_id]


def apply_unmask(state: SequenceState, position: int, token: int) -> SequenceState:
    """Write ``token`` into a masked slot, returning the new state.

    ``step_index`` is left unchanged; bumping it is the caller's business.
    """
    if token == state.mask_id:
        raise TokenIsMask(f"cannot unmask position {position} with the mask id")
    if not 0 <= position < len(state.gen):
        raise IndexError(f"gen position {position} outside [0, {len(state.gen)})")
    if state.gen[position] != state.mask_id:
        raise PositionAlreadyUnmasked(
            f"gen position {position} already holds token {state.gen[position]}"
        )
    gen = list(state.gen)
    gen[position] = token
    return replace(state, gen=tuple(gen))


@dataclass(frozen=True)
class TokenDistribution:
    """Probability distribution over token ids at one masked position.

    May be sparse (top-k): ``tail_mass`` holds the probability left outside
    the listed entries. Exact denoisers emit ``tail_mass == 0``.
    """

    probs: Mapping[int, float]
    tail_mass: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "probs", dict(self.probs))
        if self.tail_mass < -MASS_TOLERANCE:
            raise InvalidDistribution(f"negative tail mass {self.tail_mass}")
        for token, p in self.probs.items():
            if not -MASS_TOLERANCE <= p <= 1.0 + MASS_TOLERANCE:
                raise InvalidDistribution(f"probability {p} for token {token} outside [0, 1]")
        total = sum(self.probs.values()) + self.tail_mass
        if not 1.0 - MASS_TOLERANCE <= total <= 1.0 + MASS_TOLERANCE:
            raise InvalidDistribution(f"total mass {total} not within 1 +/- {MASS_TOLERANCE}")

    def top_token(self) -> tuple[int, float]:
        """Highest-probability entry; ties break toward the lowest id."""
        if not self.probs:
            raise EmptyDistribution("distribution has no entries")
        best_token, best_p = None, -1.0
        for token in sorted(self.probs):
            p = self.probs[token]
            if p > best_p:
                best_token, best_p = token, p
        return best_token, best_p


@dataclass(frozen=True)
class DecodeEvent:
    """One unmasking: which step, which position, which token, and the
    selection score / model confidence it carried."""

    step: int
    position: int
    token: int
    score: float
    confidence: float


@dataclass(frozen=True)
class DecodeTrajectory:
    """Complete record of one decode: every generation position appears in
    exactly one event, steps are non-decreasing, positions within a step are
    distinct."""

    events: tuple[DecodeEvent, ...]
    gen_len: int
    total_steps: int

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        seen = set()
        prev_step = 0
        step_positions: set[int] = set()
        for ev in self.events:
            if ev.step < prev_step:
                raise ValueError("event steps must be non-decreasing")
            if ev.step != prev_step:
                step_positions = set()
                prev_step = ev.step
            if ev.position in step_positions:
                raise ValueError(f"position {ev.position} repeated within step {ev.step}")
            step_positions.add(ev.position)
            if ev.position in seen:
                raise ValueError(f"position {ev.position} unmasked twice")
            seen.add(ev.position)
        if seen != set(range(self.gen_len)):
            raise ValueError("events must cover each gen position exactly once")
        if self.events and self.total_steps < max(ev.step for ev in self.events):
            raise ValueError("total_steps smaller than the last event step")

    def steps_by_position(self) -> dict[int, int]:
        return {ev.position: ev.step for ev in self.events}


def trajectory_csv_bytes(traj: DecodeTrajectory) -> bytes:
    """CSV export: header then one row per event, UTF-8 with LF endings."""
    out = io.StringIO()
    out.write(TRAJECTORY_CSV_HEADER + "\n")
    for ev in traj.events:
        out.write(f"{ev.step},{ev.position},{ev.token},{ev.score!r},{ev.confidence!r}\n")
    return out.getvalue().encode("utf-8")


def parse_trajectory_csv(data: bytes | str) -> DecodeTrajectory:
    """Rebuild a trajectory from its CSV export."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != TRAJECTORY_CSV_HEADER.split(","):
        raise ValueError("missing or unexpected trajectory CSV header")
    events = [
        DecodeEvent(int(step), int(pos), int(tok), float(score), float(conf))
        for step, pos, tok, score, conf in rows[1:]
    ]
    gen_len = len(events)
    total_steps = max((ev.step for ev in events), default=0)
    return DecodeTrajectory(tuple(events), gen_len, total_steps)
