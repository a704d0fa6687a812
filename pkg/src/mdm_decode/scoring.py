"""Position scorers.

Four uncertainty proxies (uniform is handled by the decode loop's seeded
generator) plus the composite scorer: an exponential positional weight
``exp(-decay * i)`` multiplied by a calibrated confidence, which is the top
candidate's probability times its corpus rarity ``-ln p_bg``, clipped at
``clip`` and floored at :data:`CALIBRATION_FLOOR` so composite scores stay
strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import EmptyDistribution
from .freqs import FrequencyTable, neg_log_freq
from .state import TokenDistribution

# Keeps a position selectable even when its top candidate has zero rarity.
CALIBRATION_FLOOR = 1e-9

SAMPLER_KINDS = ("uniform", "confidence", "entropy", "margin", "pc")


@dataclass(frozen=True)
class SamplerSpec:
    """Which scorer drives position selection, with its knobs.

    ``decay`` and ``clip`` (with ``freq``) apply to the composite ``pc``
    scorer only; ``rng_seed`` optionally pins the score stream of the
    ``uniform`` sampler independently of the decode seed.
    """

    kind: str = "confidence"
    decay: float = 0.25
    clip: float = 10.0
    freq: Optional[FrequencyTable] = None
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "pc":
            if self.decay < 0:
                raise ValueError("decay must be >= 0")
            if self.clip <= 0:
                raise ValueError("clip threshold must be > 0")
            if self.freq is None:
                raise ValueError("pc sampler needs a frequency table")


def confidence_score(dist: TokenDistribution) -> float:
    """Probability of the most likely candidate (raw top-k mass)."""
    _, p = dist.top_token()
    return p


def _renormalized(dist: TokenDistribution) -> list[float]:
    if not dist.probs:
        raise EmptyDistribution("distribution has no entries")
    values = list(dist.probs.values())
    if dist.tail_mass > 0:
        total = sum(values)
        if total <= 0:
            raise EmptyDistribution("distribution carries no mass outside the tail")
        values = [v / total for v in values]
    return values


def entropy_score(dist: TokenDistribution) -> float:
    """Negative Shannon entropy (natural log); 0 for one-hot, higher = surer.

    Truncated distributions are renormalized over their listed entries
    before the entropy is taken; the tail is reporting-only.
    """
    return sum(p * math.log(p) for p in _renormalized(dist) if p > 0)


def shannon_entropy(dist: TokenDistribution) -> float:
    """Plain entropy H >= 0, as consumed by the entropy-budget policy."""
    return -entropy_score(dist)


def margin_score(dist: TokenDistribution) -> float:
    """Gap between the two most likely candidates, in [0, 1]."""
    if not dist.probs:
        raise EmptyDistribution("distribution has no entries")
    top = sorted(dist.probs.values(), reverse=True)
    second = top[1] if len(top) > 1 else 0.0
    return top[0] - second


def positional_weight(decay: float, position: int) -> float:
    """exp(-decay * position) over the generation region."""
    return math.exp(-decay * position)


def calibrated_confidence(dist: TokenDistribution, freq: FrequencyTable, clip: float) -> float:
    """Top candidate probability times its corpus rarity, clipped and floored.

    The candidate is the distribution's argmax (lowest id on ties) -- the
    token a temperature-0 decode would place -- so the score is computable
    before any position is selected.
    """
    token, p = dist.top_token()
    raw = p * neg_log_freq(freq, token)
    return max(min(raw, clip), CALIBRATION_FLOOR)


def pc_score(dist: TokenDistribution, position: int, spec: SamplerSpec) -> float:
    """Composite selection score: positional weight times calibrated confidence."""
    if spec.kind != "pc":
        raise ValueError(f"pc_score called with sampler kind {spec.kind!r}")
    weight = positional_weight(spec.decay, position)
    return weight * calibrated_confidence(dist, spec.freq, spec.clip)


def score_distribution(spec: SamplerSpec, dist: TokenDistribution, position: int) -> float:
    """Dispatch to the scorer selected by ``spec``.

    The uniform sampler has no distribution-driven score; its random draws
    belong to the decode loop.
    """
    if spec.kind == "confidence":
        return confidence_score(dist)
    if spec.kind == "entropy":
        return entropy_score(dist)
    if spec.kind == "margin":
        return margin_score(dist)
    if spec.kind == "pc":
        return pc_score(dist, position, spec)
    raise ValueError(f"sampler kind {spec.kind!r} has no distribution score")
