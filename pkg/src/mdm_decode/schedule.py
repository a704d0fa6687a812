"""Per-step unmask policies and the decode loop.

Policies decide *which* masked positions an iteration reveals:

* ``single``   -- the argmax-scoring position (one token per step),
* ``tau_leap`` -- the top ``tau`` scoring positions,
* ``eb``       -- ascending-entropy prefix whose summed entropy minus its
                  maximum stays within the budget ``gamma``,
* ``fast_dllm``-- every position whose top-candidate probability clears
                  ``threshold`` (falling back to the single best).

Any policy can additionally be restricted to contiguous blocks decoded in
order (``blocks``). The position scorer is orthogonal to the policy: the
``single`` and ``tau_leap`` sets are driven by the configured sampler, the
``eb`` and ``fast_dllm`` sets by their own entropy/confidence statistics,
with sampler scores still logged on every event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional

import numpy as np

from .denoisers import Denoiser
from .errors import (
    DecodeAborted,
    EmptyDistribution,
    EmptyInput,
    EmptyScores,
    EngineError,
    MaxStepsExceeded,
)
from .scoring import SamplerSpec, confidence_score, score_distribution, shannon_entropy
from .state import (
    DecodeEvent,
    DecodeTrajectory,
    SequenceState,
    TokenDistribution,
    apply_unmask,
    masked_positions,
)

POLICIES = ("single", "tau_leap", "eb", "fast_dllm")

# Optional per-step filter over candidate scores, e.g. an intervention that
# bans positions during early steps: (step, scores) -> scores.
ScoreHook = Callable[[int, dict[int, float]], dict[int, float]]


@dataclass(frozen=True)
class SchedulerSpec:
    """Per-step unmask policy and its parameters."""

    policy: str = "single"
    tau: int = 1
    gamma: float = 0.01
    threshold: float = 0.9
    blocks: Optional[int] = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.policy == "tau_leap" and self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.policy == "eb" and self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.policy == "fast_dllm" and not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.blocks is not None and self.blocks < 1:
            raise ValueError("block count must be >= 1")


@dataclass(frozen=True)
class DecodeConfig:
    """Everything one decode needs besides the denoiser: sampler, policy,
    token-choice temperature (0 = argmax), safety bound, and PRNG seed."""

    sampler: SamplerSpec
    scheduler: SchedulerSpec = SchedulerSpec()
    temperature: float = 0.0
    max_steps: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


# ---------------------------------------------------------------------------
# Selection policies
# ---------------------------------------------------------------------------


def select_single(scores: Mapping[int, float]) -> int:
    """Argmax position; ties break toward the lowest index."""
    if not scores:
        raise EmptyScores("no candidate positions to select from")
    best_pos, best_score = None, -math.inf
    for pos in sorted(scores):
        if scores[pos] > best_score:
            best_pos, best_score = pos, scores[pos]
    return best_pos


def tau_leap_select(scores: Mapping[int, float], tau: int) -> set[int]:
    """The min(tau, candidates) highest-scoring positions."""
    if not scores:
        raise EmptyScores("no candidate positions to select from")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    ranked = sorted(scores, key=lambda pos: (-scores[pos], pos))
    return set(ranked[: min(tau, len(ranked))])


def eb_select(entropies: Mapping[int, float], gamma: float) -> set[int]:
    """Largest ascending-entropy prefix with sum(H) - max(H) <= gamma.

    Sorted ascending, the bound for a k-prefix equals the sum of its first
    k - 1 entropies, so the prefix grows while that running sum stays within
    budget. A singleton always qualifies.
    """
    if not entropies:
        raise EmptyInput("no candidate entropies")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    ranked = sorted(entropies, key=lambda pos: (entropies[pos], pos))
    chosen = [ranked[0]]
    bound = 0.0
    for pos in ranked[1:]:
        bound += entropies[chosen[-1]]
        if bound > gamma:
            break
        chosen.append(pos)
    return set(chosen)


def fastdllm_select(confidences: Mapping[int, float], threshold: float) -> set[int]:
    """Every position whose confidence exceeds the threshold; if none does,
    exactly the single most confident position."""
    if not confidences:
        raise EmptyInput("no candidate confidences")
    passing = {pos for pos, p in confidences.items() if p > threshold}
    if passing:
        return passing
    return {select_single(confidences)}


def block_restrict(masked: list[int], blocks: int, gen_len: int) -> list[int]:
    """Restrict candidates to the earliest contiguous block that is still
    incomplete; blocks are ceil(gen_len / blocks) positions wide."""
    if blocks < 1:
        raise ValueError("block count must be >= 1")
    if blocks == 1 or not masked:
        return list(masked)
    width = -(-gen_len // blocks)
    first_block = min(masked) // width
    lo, hi = first_block * width, (first_block + 1) * width
    return [pos for pos in masked if lo <= pos < hi]


# ---------------------------------------------------------------------------
# Token choice
# ---------------------------------------------------------------------------


def choose_token(
    dist: TokenDistribution,
    temperature: float,
    rng: np.random.Generator,
    mask_id: int,
) -> int:
    """Pick the token to place: argmax at temperature 0 (lowest id on ties),
    otherwise sample p ** (1/T) renormalized. The mask id itself is never
    placed, mirroring mask-logit suppression in model inference."""
    candidates = [(tok, p) for tok, p in sorted(dist.probs.items()) if tok != mask_id]
    if not candidates:
        raise EmptyDistribution("distribution has no placeable tokens")
    if temperature == 0:
        best_tok, best_p = candidates[0]
        for tok, p in candidates[1:]:
            if p > best_p:
                best_tok, best_p = tok, p
        return best_tok
    weights = np.array([p for _, p in candidates], dtype=np.float64)
    weights = np.power(weights, 1.0 / temperature)
    total = weights.sum()
    if total <= 0:
        return candidates[0][0]
    index = rng.choice(len(candidates), p=weights / total)
    return candidates[index][0]


# ---------------------------------------------------------------------------
# Decode loop
# ---------------------------------------------------------------------------


def decode(
    state: SequenceState,
    denoiser: Denoiser,
    config: DecodeConfig,
    score_hook: Optional[ScoreHook] = None,
) -> tuple[SequenceState, DecodeTrajectory]:
    """Iteratively unmask ``state`` to completion.

    Each step queries the denoiser on the masked positions (after block
    restriction), scores them with the configured sampler, selects positions
    with the configured policy, places one token per selected position, and
    records an event. Deterministic given a deterministic denoiser, the seed,
    and the config. Denoiser failures abort with the partial trajectory
    attached; exceeding ``max_steps`` (default: the generation length) raises
    :class:`MaxStepsExceeded`.
    """
    gen_len = state.gen_len
    limit = config.max_steps if config.max_steps is not None else max(gen_len, 1)
    root = np.random.SeedSequence(config.seed)
    scores_seq, tokens_seq = root.spawn(2)
    if config.sampler.rng_seed is not None:
        scores_seq = np.random.SeedSequence(config.sampler.rng_seed)
    score_rng = np.random.Generator(np.random.PCG64(scores_seq))
    token_rng = np.random.Generator(np.random.PCG64(tokens_seq))

    spec = config.scheduler
    events: list[DecodeEvent] = []

    while not state.is_complete:
        step = state.step_index + 1
        if step > limit:
            raise MaxStepsExceeded(f"decode did not finish within {limit} steps")
        masked = masked_positions(state)
        candidates = (
            block_restrict(masked, spec.blocks, gen_len) if spec.blocks else masked
        )
        try:
            dists = denoiser.predict(state, candidates)
        except EngineError as exc:
            raise DecodeAborted(f"denoiser failed at step {step}: {exc}", state, events) from exc
        missing = set(candidates) - set(dists)
        if missing:
            raise DecodeAborted(
                f"denoiser returned no distribution for positions {sorted(missing)}",
                state,
                events,
            )

        if config.sampler.kind == "uniform":
            draws = score_rng.random(len(candidates))
            scores = {pos: float(draws[i]) for i, pos in enumerate(sorted(candidates))}
        else:
            scores = {
                pos: score_distribution(config.sampler, dists[pos], pos)
                for pos in candidates
            }

        if spec.policy == "eb":
            driving = {pos: shannon_entropy(dists[pos]) for pos in candidates}
        elif spec.policy == "fast_dllm":
            driving = {pos: confidence_score(dists[pos]) for pos in candidates}
        else:
            driving = scores
        if score_hook is not None:
            driving = score_hook(step, driving)

        if spec.policy == "single":
            selected = {select_single(driving)}
        elif spec.policy == "tau_leap":
            selected = tau_leap_select(driving, spec.tau)
        elif spec.policy == "eb":
            selected = eb_select(driving, spec.gamma)
        else:
            selected = fastdllm_select(driving, spec.threshold)

        for pos in sorted(selected):
            dist = dists[pos]
            token = choose_token(dist, config.temperature, token_rng, state.mask_id)
            state = apply_unmask(state, pos, token)
            events.append(
                DecodeEvent(step, pos, token, scores[pos], dist.probs.get(token, 0.0))
            )
        state = replace(state, step_index=step)

    trajectory = DecodeTrajectory(tuple(events), gen_len, state.step_index)
    return state, trajectory
