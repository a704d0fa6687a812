"""Built-in correctness checks, runnable from the CLI.

Compares the exact Markov denoiser against an independent full-joint brute
force and spot-checks the selection-policy invariants on random inputs.
The brute force here tabulates the probability of every possible generation
sequence and conditions by filtering, a deliberately different route from
the engine's masked-completion enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .denoisers import MarkovSpec, markov_conditional
from .schedule import eb_select, fastdllm_select, tau_leap_select
from .state import SequenceState, Vocabulary, masked_positions


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def brute_force_conditional(spec: MarkovSpec, state: SequenceState, position: int) -> np.ndarray:
    """Full-joint oracle: weigh all vocab**L sequences, keep those agreeing
    with the observed tokens, and normalize the mass at ``position``."""
    v = spec.vocab.size
    length = len(state.gen)
    observed = {i: t for i, t in enumerate(state.gen) if t != state.mask_id}
    mass = np.zeros(v, dtype=np.float64)
    for seq in itertools.product(range(v), repeat=length):
        if any(seq[i] != t for i, t in observed.items()):
            continue
        p = spec.initial[seq[0]]
        for i in range(1, length):
            p *= spec.transition[seq[i - 1], seq[i]]
        mass[seq[position]] += p
    total = mass.sum()
    if total <= 0:
        raise ValueError("observed tokens have zero probability under the chain")
    return mass / total


def random_markov_case(rng: np.random.Generator):
    """A random small chain plus a random partially observed state."""
    v = int(rng.integers(2, 5))
    length = int(rng.integers(1, 7))
    vocab = Vocabulary(size=v, mask_id=v - 1)
    initial = rng.random(v) + 0.05
    initial /= initial.sum()
    transition = rng.random((v, v)) + 0.05
    transition /= transition.sum(axis=1, keepdims=True)
    spec = MarkovSpec(vocab, initial, transition)
    n_masked = int(rng.integers(1, length + 1))
    masked = sorted(rng.choice(length, size=n_masked, replace=False).tolist())
    gen = [
        vocab.mask_id if i in masked else int(rng.integers(0, v - 1))
        for i in range(length)
    ]
    state = SequenceState(prompt=(), gen=tuple(gen), mask_id=vocab.mask_id)
    return spec, state


def check_markov_oracle(cases: int = 50, seed: int = 0, tolerance: float = 1e-9) -> CheckResult:
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(cases):
        spec, state = random_markov_case(rng)
        for position in masked_positions(state):
            got = markov_conditional(spec, state, position)
            want = brute_force_conditional(spec, state, position)
            for token in range(spec.vocab.size):
                worst = max(worst, abs(got.probs.get(token, 0.0) - want[token]))
    return CheckResult(
        "markov-oracle",
        worst <= tolerance,
        f"max abs error {worst:.3e} over {cases} cases (tolerance {tolerance:.0e})",
    )


def check_policy_invariants(cases: int = 200, seed: int = 1) -> list[CheckResult]:
    rng = np.random.Generator(np.random.PCG64(seed))
    gamma, threshold, tau = 0.01, 0.9, 2
    eb_ok = fastdllm_ok = tau_ok = True
    for _ in range(cases):
        n = int(rng.integers(1, 12))
        positions = rng.choice(64, size=n, replace=False).tolist()
        entropies = {int(p): float(h) for p, h in zip(positions, rng.random(n) * 0.2)}
        chosen = eb_select(entropies, gamma)
        values = [entropies[p] for p in chosen]
        if sum(values) - max(values) > gamma + 1e-12 or not chosen:
            eb_ok = False
        confidences = {int(p): float(c) for p, c in zip(positions, rng.random(n))}
        chosen = fastdllm_select(confidences, threshold)
        if not (all(confidences[p] > threshold for p in chosen) or len(chosen) == 1):
            fastdllm_ok = False
        scores = {int(p): float(s) for p, s in zip(positions, rng.random(n))}
        if len(tau_leap_select(scores, tau)) != min(tau, n):
            tau_ok = False
    return [
        CheckResult("eb-entropy-budget", eb_ok, f"sum(H) - max(H) <= {gamma} on {cases} random steps"),
        CheckResult(
            "fastdllm-threshold", fastdllm_ok, f"all above {threshold} or singleton on {cases} random steps"
        ),
        CheckResult("tau-leap-count", tau_ok, f"count == min({tau}, remaining) on {cases} random steps"),
    ]


def run_selfcheck(markov_cases: int = 50, policy_cases: int = 200, seed: int = 0) -> list[CheckResult]:
    results = [check_markov_oracle(cases=markov_cases, seed=seed)]
    results.extend(check_policy_invariants(cases=policy_cases, seed=seed + 1))
    return results
