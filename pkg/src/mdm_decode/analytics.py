"""Trajectory diagnostics.

Turns decode trajectories into the artifacts used to study unmasking order:
binary step-by-position matrices and their averaged heatmaps, per-step
statistics of trivial (high-frequency, low-information) tokens, a
boundary-lead summary of how much earlier sequence edges decode than the
middle, and a selection intervention that bans positions during early steps.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ShapeMismatch
from .state import DecodeTrajectory, Vocabulary

TRIVIAL_STATS_CSV_HEADER = "step,trivial_ratio,mean_conf_trivial,mean_conf_nontrivial"

# Default trivial-token surface forms: end markers, whitespace, punctuation,
# fillers. Mapped onto ids only when a vocabulary carries a display mapping.
TRIVIAL_TOKEN_STRINGS = (
    "<|endoftext|>",
    "<|eot_id|>",
    " ",
    "\n",
    ".",
    ",",
    "?",
    "!",
    ":",
    ";",
    "-",
    "(",
    ")",
    '"',
    "'",
    "is",
    "the",
    "so",
    "$",
    "%",
)


def trivial_ids(vocab: Vocabulary, strings: Sequence[str] = TRIVIAL_TOKEN_STRINGS) -> set[int]:
    """Token ids whose display text is one of the trivial surface forms."""
    if vocab.display is None:
        return set()
    wanted = set(strings)
    return {tok for tok, text in vocab.display.items() if text in wanted}


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------


def trajectory_matrix(traj: DecodeTrajectory) -> np.ndarray:
    """T x L binary matrix: entry (t, i) is 1 once position i is unmasked at
    or before step t. Columns are monotone; the final row is all ones."""
    steps = max(traj.total_steps, 1)
    matrix = np.zeros((steps, traj.gen_len), dtype=np.uint8)
    for ev in traj.events:
        matrix[ev.step - 1 :, ev.position] = 1
    return matrix


def average_heatmap(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of same-shape trajectory matrices."""
    if not matrices:
        raise ShapeMismatch("no matrices to average")
    shape = matrices[0].shape
    for m in matrices[1:]:
        if m.shape != shape:
            raise ShapeMismatch(f"matrix shapes differ: {m.shape} vs {shape}")
    return np.mean([m.astype(np.float64) for m in matrices], axis=0)


def resample_matrix(matrix: np.ndarray, rows: int) -> np.ndarray:
    """Resample the step axis to ``rows`` rows so policies with different
    step counts can be averaged; row r takes the step at the same fraction
    of the run."""
    if rows < 1:
        raise ValueError("rows must be >= 1")
    steps = matrix.shape[0]
    picked = [min(steps - 1, math.ceil((r + 1) * steps / rows) - 1) for r in range(rows)]
    return matrix[picked, :]


def heatmap_csv_bytes(matrix: np.ndarray) -> bytes:
    """Averaged heatmap as CSV, six-decimal fixed point, no header."""
    out = io.StringIO()
    for row in np.atleast_2d(matrix):
        out.write(",".join(f"{value:.6f}" for value in row) + "\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Trivial-token statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepTrivialStats:
    """Pooled per-step statistics; mean confidences are None when the step
    unmasked no token of that class."""

    step: int
    trivial_ratio: float
    mean_conf_trivial: Optional[float]
    mean_conf_nontrivial: Optional[float]


def trivial_stats(
    trajectories: Iterable[DecodeTrajectory],
    trivial: set[int],
    first_k_steps: int = 5,
) -> list[StepTrivialStats]:
    """For each of the first k steps, the share of trivial tokens among all
    tokens unmasked at that step (pooled across trajectories) and the mean
    confidence of each class."""
    buckets: dict[int, list[tuple[bool, float]]] = {}
    for traj in trajectories:
        for ev in traj.events:
            if ev.step <= first_k_steps:
                buckets.setdefault(ev.step, []).append((ev.token in trivial, ev.confidence))
    stats = []
    for step in sorted(buckets):
        entries = buckets[step]
        trivial_confs = [c for is_triv, c in entries if is_triv]
        other_confs = [c for is_triv, c in entries if not is_triv]
        stats.append(
            StepTrivialStats(
                step=step,
                trivial_ratio=len(trivial_confs) / len(entries),
                mean_conf_trivial=sum(trivial_confs) / len(trivial_confs) if trivial_confs else None,
                mean_conf_nontrivial=sum(other_confs) / len(other_confs) if other_confs else None,
            )
        )
    return stats


def trivial_stats_csv_bytes(stats: Sequence[StepTrivialStats]) -> bytes:
    out = io.StringIO()
    out.write(TRIVIAL_STATS_CSV_HEADER + "\n")
    for row in stats:
        conf_t = "" if row.mean_conf_trivial is None else repr(row.mean_conf_trivial)
        conf_n = "" if row.mean_conf_nontrivial is None else repr(row.mean_conf_nontrivial)
        out.write(f"{row.step},{row.trivial_ratio!r},{conf_t},{conf_n}\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Order summaries
# ---------------------------------------------------------------------------


def boundary_lead(traj: DecodeTrajectory) -> float:
    """Mean unmask step of the two edge positions minus the mean unmask step
    of the middle third; negative values mean the boundaries decoded early."""
    if traj.gen_len < 3:
        return math.nan
    steps = traj.steps_by_position()
    edges = [steps[0], steps[traj.gen_len - 1]]
    middle = [steps[i] for i in range(traj.gen_len // 3, traj.gen_len - traj.gen_len // 3)]
    return sum(edges) / len(edges) - sum(middle) / len(middle)


# ---------------------------------------------------------------------------
# Interventions
# ---------------------------------------------------------------------------


@dataclass
class InterventionRule:
    """Ban a set of positions from selection during the first k steps.

    When a ban would leave no candidate at all it is skipped for that step
    and the step is recorded in ``skipped_steps``.
    """

    banned_positions: frozenset[int]
    active_steps: int
    skipped_steps: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.banned_positions = frozenset(self.banned_positions)
        if self.active_steps < 0:
            raise ValueError("active_steps must be >= 0")


def apply_intervention(
    scores: Mapping[int, float], rule: InterventionRule, step: int
) -> dict[int, float]:
    """Remove banned positions from a candidate map while the rule is active."""
    if step > rule.active_steps:
        return dict(scores)
    kept = {pos: s for pos, s in scores.items() if pos not in rule.banned_positions}
    if not kept and scores:
        rule.skipped_steps.append(step)
        return dict(scores)
    return kept


def intervention_hook(rule: InterventionRule):
    """Adapter for the decode loop's score-hook slot."""

    def hook(step: int, scores: dict[int, float]) -> dict[int, float]:
        return apply_intervention(scores, rule, step)

    return hook
