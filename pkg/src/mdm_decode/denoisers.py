"""Local denoisers.

A denoiser maps a partially unmasked state to one distribution per masked
position. Two synthetic implementations live here:

* an exact Markov-chain denoiser whose conditionals are computed by
  enumerating every completion of the masked slots (desk-scale oracle), and
* a scripted denoiser that hands the final positions a high-confidence
  end-marker distribution and keeps interior positions flatter, with the
  leftmost open slot slightly favored -- the distribution pattern that makes
  greedy certainty-first selection decode both boundaries before the middle.

Remote denoisers are in :mod:`mdm_decode.remote`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Protocol

import numpy as np

from .errors import EnumerationBoundExceeded, PositionAlreadyUnmasked
from .state import SequenceState, TokenDistribution, Vocabulary, masked_positions

# Hard cap on enumerated joint states (vocab ** masked_count).
ENUMERATION_CAP = 10_000_000
MAX_GEN_LEN = 12
MAX_VOCAB = 8

STOCHASTIC_TOLERANCE = 1e-12


class Denoiser(Protocol):
    """Contract shared by local and remote denoisers.

    ``predict(state)`` returns a distribution for every currently masked
    position and nothing else; ``positions`` may restrict the query to a
    subset of the masked positions (the block scheduler uses this).
    """

    def predict(
        self, state: SequenceState, positions: Optional[Iterable[int]] = None
    ) -> dict[int, TokenDistribution]: ...


# ---------------------------------------------------------------------------
# Exact Markov-chain denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovSpec:
    """First-order chain over the generation region: initial law plus a
    row-stochastic transition matrix, both over the full vocabulary."""

    vocab: Vocabulary
    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=np.float64)
        transition = np.asarray(self.transition, dtype=np.float64)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        v = self.vocab.size
        if initial.shape != (v,):
            raise ValueError(f"initial must have shape ({v},)")
        if transition.shape != (v, v):
            raise ValueError(f"transition must have shape ({v}, {v})")
        if (initial < 0).any() or (transition < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if abs(initial.sum() - 1.0) > STOCHASTIC_TOLERANCE:
            raise ValueError("initial distribution must sum to 1")
        rows = transition.sum(axis=1)
        if np.abs(rows - 1.0).max() > STOCHASTIC_TOLERANCE:
            raise ValueError("every transition row must sum to 1")


def _check_enumeration_bound(spec: MarkovSpec, state: SequenceState, n_masked: int) -> None:
    v = spec.vocab.size
    if len(state.gen) > MAX_GEN_LEN or v > MAX_VOCAB:
        raise EnumerationBoundExceeded(
            f"exact conditionals support gen length <= {MAX_GEN_LEN} and vocab <= {MAX_VOCAB}"
        )
    if v**n_masked > ENUMERATION_CAP:
        raise EnumerationBoundExceeded(
            f"{v}^{n_masked} completions exceed the {ENUMERATION_CAP} state cap"
        )


def _completion_weights(
    spec: MarkovSpec, state: SequenceState, masked: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate every assignment of the masked slots and weight it by the
    chain probability of the completed generation region.

    Returns (assignments, weights): assignments has one row per completion
    and one column per masked slot.
    """
    v = spec.vocab.size
    length = len(state.gen)
    n = len(masked)
    count = v**n
    idx = np.arange(count, dtype=np.int64)
    assignments = np.empty((count, n), dtype=np.int64)
    for col in range(n - 1, -1, -1):
        assignments[:, col] = idx % v
        idx //= v
    seqs = np.tile(np.asarray(state.gen, dtype=np.int64), (count, 1))
    seqs[:, masked] = assignments
    weights = spec.initial[seqs[:, 0]].copy()
    for pos in range(1, length):
        weights *= spec.transition[seqs[:, pos - 1], seqs[:, pos]]
    return assignments, weights


def _conditionals(
    spec: MarkovSpec, state: SequenceState, positions: list[int]
) -> dict[int, TokenDistribution]:
    masked = masked_positions(state)
    _check_enumeration_bound(spec, state, len(masked))
    assignments, weights = _completion_weights(spec, state, masked)
    total = weights.sum()
    if total <= 0:
        raise ValueError("observed tokens have zero probability under the chain")
    column = {pos: col for col, pos in enumerate(masked)}
    out = {}
    for pos in positions:
        mass = np.bincount(
            assignments[:, column[pos]], weights=weights, minlength=spec.vocab.size
        )
        probs = mass / total
        out[pos] = TokenDistribution({t: float(p) for t, p in enumerate(probs)})
    return out


def markov_conditional(spec: MarkovSpec, state: SequenceState, position: int) -> TokenDistribution:
    """Exact p(gen[position] = v | observed gen tokens) under the chain."""
    if state.gen[position] != state.mask_id:
        raise PositionAlreadyUnmasked(f"gen position {position} is not masked")
    return _conditionals(spec, state, [position])[position]


class MarkovDenoiser:
    """Denoiser backed by exact chain conditionals; one enumeration serves
    every queried position of a state."""

    def __init__(self, spec: MarkovSpec):
        self.spec = spec
        self.vocab = spec.vocab

    def predict(
        self, state: SequenceState, positions: Optional[Iterable[int]] = None
    ) -> dict[int, TokenDistribution]:
        masked = masked_positions(state)
        wanted = masked if positions is None else sorted(positions)
        extra = set(wanted) - set(masked)
        if extra:
            raise PositionAlreadyUnmasked(f"positions {sorted(extra)} are not masked")
        if not wanted:
            return {}
        return _conditionals(self.spec, state, wanted)


# ---------------------------------------------------------------------------
# Scripted boundary denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryScript:
    """Parameters of the scripted denoiser.

    The final ``k`` generation positions always see ``boundary_token`` with
    probability ``boundary_confidence`` (remaining mass spread over every
    other id). Interior positions peak strictly lower -- at most halfway
    between uniform and the boundary confidence -- flattened further by
    ``interior_entropy_scale`` in [0, 1], and the leftmost open interior
    slot gets a mild bump so left-context decoding is locally easiest.
    Useful boundary confidences are above 0.5; values down to 1/vocab are
    accepted and degenerate to uniform output.
    """

    vocab: Vocabulary
    boundary_token: int
    boundary_confidence: float = 0.95
    interior_entropy_scale: float = 0.5
    k: int = 1

    def __post_init__(self):
        if not 0 <= self.boundary_token < self.vocab.size:
            raise ValueError("boundary token outside the vocabulary")
        if self.boundary_token == self.vocab.mask_id:
            raise ValueError("boundary token must not be the mask id")
        if not 0.0 < self.boundary_confidence <= 1.0:
            raise ValueError("boundary confidence must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("boundary width k must be >= 1")


def _peaked(vocab_size: int, token: int, peak: float) -> TokenDistribution:
    rest = (1.0 - peak) / (vocab_size - 1) if vocab_size > 1 else 0.0
    probs = {t: rest for t in range(vocab_size)}
    probs[token] = peak
    return TokenDistribution(probs)


def _interior_token(script: BoundaryScript, position: int) -> int:
    candidates = [
        t
        for t in range(script.vocab.size)
        if t != script.vocab.mask_id and t != script.boundary_token
    ]
    if not candidates:
        return script.boundary_token
    return candidates[position % len(candidates)]


def scripted_predict(
    script: BoundaryScript,
    state: SequenceState,
    positions: Optional[Iterable[int]] = None,
) -> dict[int, TokenDistribution]:
    """Deterministic distributions for the queried masked positions."""
    masked = masked_positions(state)
    wanted = masked if positions is None else sorted(positions)
    extra = set(wanted) - set(masked)
    if extra:
        raise PositionAlreadyUnmasked(f"positions {sorted(extra)} are not masked")
    v = script.vocab.size
    length = len(state.gen)
    boundary_start = length - script.k
    uniform = 1.0 / v
    cap = uniform + max(script.boundary_confidence - uniform, 0.0) / 2.0
    flatten = min(max(script.interior_entropy_scale, 0.0), 1.0)
    gap = (cap - uniform) * (1.0 - flatten)
    interior_masked = [p for p in masked if p < boundary_start]
    leftmost = interior_masked[0] if interior_masked else None
    out = {}
    for pos in wanted:
        if pos >= boundary_start:
            out[pos] = _peaked(v, script.boundary_token, script.boundary_confidence)
        else:
            peak = uniform + gap if pos == leftmost else uniform + 0.9 * gap
            out[pos] = _peaked(v, _interior_token(script, pos), peak)
    return out


class ScriptedDenoiser:
    """Denoiser wrapper around :func:`scripted_predict`."""

    def __init__(self, script: BoundaryScript):
        self.script = script
        self.vocab = script.vocab

    def predict(
        self, state: SequenceState, positions: Optional[Iterable[int]] = None
    ) -> dict[int, TokenDistribution]:
        return scripted_predict(self.script, state, positions)


def uniform_chain(vocab: Vocabulary) -> MarkovSpec:
    """Chain whose conditionals are uniform everywhere; handy symmetric baseline."""
    v = vocab.size
    return MarkovSpec(vocab, np.full(v, 1.0 / v), np.full((v, v), 1.0 / v))
