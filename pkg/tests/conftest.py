"""Shared fixtures and test-local oracles.

The brute-force conditional here is deliberately independent of the
engine's masked-completion enumeration: it tabulates the full joint over
every possible generation sequence with plain Python loops and conditions
by filtering.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from mdm_decode.denoisers import MarkovSpec
from mdm_decode.state import SequenceState, Vocabulary


def full_joint_conditional(spec: MarkovSpec, state: SequenceState, position: int) -> list[float]:
    """Exact conditional at one masked position via full-joint tabulation."""
    v = spec.vocab.size
    length = len(state.gen)
    observed = {i: t for i, t in enumerate(state.gen) if t != state.mask_id}
    mass = [0.0] * v
    for seq in itertools.product(range(v), repeat=length):
        if any(seq[i] != t for i, t in observed.items()):
            continue
        p = float(spec.initial[seq[0]])
        for i in range(1, length):
            p *= float(spec.transition[seq[i - 1], seq[i]])
        mass[seq[position]] += p
    total = sum(mass)
    assert total > 0, "oracle conditioned on a zero-probability observation"
    return [m / total for m in mass]


def random_chain(rng: np.random.Generator, size: int) -> MarkovSpec:
    vocab = Vocabulary(size=size, mask_id=size - 1)
    initial = rng.random(size) + 0.05
    initial /= initial.sum()
    transition = rng.random((size, size)) + 0.05
    transition /= transition.sum(axis=1, keepdims=True)
    return MarkovSpec(vocab, initial, transition)


def random_partial_state(
    rng: np.random.Generator, spec: MarkovSpec, length: int
) -> SequenceState:
    """Random observed/masked split with at least one masked slot; observed
    tokens avoid the mask id."""
    mask_id = spec.vocab.mask_id
    n_masked = int(rng.integers(1, length + 1))
    masked = set(rng.choice(length, size=n_masked, replace=False).tolist())
    gen = tuple(
        mask_id if i in masked else int(rng.integers(0, spec.vocab.size - 1))
        for i in range(length)
    )
    return SequenceState(prompt=(), gen=gen, mask_id=mask_id)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240817))
