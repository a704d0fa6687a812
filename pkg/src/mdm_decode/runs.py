"""Manifest-driven decode runs and their on-disk artifacts.

A manifest bundles a decode configuration with a denoiser, a generation
length, a repetition count, and an output directory. Running one produces
per-repetition trajectory CSVs, an averaged heatmap CSV, a trivial-token
statistics CSV, and a JSON summary. All files are written atomically
(temp file, then rename) and are byte-deterministic given the seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import analytics
from .analytics import InterventionRule, intervention_hook
from .denoisers import Denoiser
from .schedule import DecodeConfig, decode
from .state import SequenceState, Vocabulary, trajectory_csv_bytes


def atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


@dataclass(frozen=True)
class RunManifest:
    """One reproducible experiment: what to decode, how, how often, where."""

    config: DecodeConfig
    denoiser: Denoiser
    vocab: Vocabulary
    gen_len: int
    out_dir: Path
    prompt: tuple[int, ...] = ()
    repetitions: int = 1
    trivial: frozenset[int] = frozenset()
    first_k_steps: int = 5
    intervention: Optional[InterventionRule] = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.gen_len < 1:
            raise ValueError("gen_len must be >= 1")


@dataclass(frozen=True)
class RunResult:
    out_dir: Path
    trajectory_paths: tuple[Path, ...]
    steps: tuple[int, ...]
    boundary_leads: tuple[float, ...]
    mean_trivial_ratio: float
    wall_time_s: float

    @property
    def mean_steps(self) -> float:
        return sum(self.steps) / len(self.steps)

    @property
    def mean_boundary_lead(self) -> float:
        finite = [b for b in self.boundary_leads if not math.isnan(b)]
        return sum(finite) / len(finite) if finite else math.nan


def _config_summary(config: DecodeConfig) -> dict:
    sampler = dataclasses.asdict(config.sampler)
    sampler["freq"] = None if config.sampler.freq is None else {
        "vocab_size": config.sampler.freq.vocab_size,
        "total": config.sampler.freq.total,
        "smoothing": config.sampler.freq.smoothing,
    }
    return {
        "sampler": sampler,
        "scheduler": dataclasses.asdict(config.scheduler),
        "temperature": config.temperature,
        "max_steps": config.max_steps,
        "seed": config.seed,
    }


def run_decode(manifest: RunManifest) -> RunResult:
    """Execute the manifest and write its artifacts; repetition r runs with
    seed ``config.seed + r``."""
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    trajectories = []
    run_records = []
    paths = []
    for rep in range(manifest.repetitions):
        rep_seed = manifest.config.seed + rep
        rep_config = replace(manifest.config, seed=rep_seed)
        hook = None
        skipped_before = 0
        if manifest.intervention is not None:
            skipped_before = len(manifest.intervention.skipped_steps)
            hook = intervention_hook(manifest.intervention)
        rep_started = time.monotonic()
        state = SequenceState.fully_masked(manifest.prompt, manifest.gen_len, manifest.vocab.mask_id)
        final, traj = decode(state, manifest.denoiser, rep_config, score_hook=hook)
        rep_elapsed = time.monotonic() - rep_started
        trajectories.append(traj)
        path = out_dir / f"trajectory_{rep:03d}.csv"
        atomic_write(path, trajectory_csv_bytes(traj))
        paths.append(path)
        record = {
            "rep": rep,
            "seed": rep_seed,
            "steps": traj.total_steps,
            "final_gen": list(final.gen),
            "wall_time_s": rep_elapsed,
        }
        if manifest.intervention is not None:
            record["intervention_skipped_steps"] = manifest.intervention.skipped_steps[skipped_before:]
        run_records.append(record)

    matrices = [analytics.trajectory_matrix(t) for t in trajectories]
    shapes = {m.shape for m in matrices}
    if len(shapes) > 1:
        rows = max(m.shape[0] for m in matrices)
        matrices = [analytics.resample_matrix(m, rows) for m in matrices]
    heatmap = analytics.average_heatmap(matrices)
    atomic_write(out_dir / "heatmap.csv", analytics.heatmap_csv_bytes(heatmap))

    stats = analytics.trivial_stats(trajectories, set(manifest.trivial), manifest.first_k_steps)
    atomic_write(out_dir / "trivial_stats.csv", analytics.trivial_stats_csv_bytes(stats))

    leads = tuple(analytics.boundary_lead(t) for t in trajectories)
    mean_trivial = (
        sum(s.trivial_ratio for s in stats) / len(stats) if stats else 0.0
    )
    elapsed = time.monotonic() - started

    summary = {
        "config": _config_summary(manifest.config),
        "gen_len": manifest.gen_len,
        "prompt": list(manifest.prompt),
        "repetitions": manifest.repetitions,
        "runs": run_records,
        "aggregates": {
            "mean_steps": sum(t.total_steps for t in trajectories) / len(trajectories),
            "mean_boundary_lead": _finite_mean(leads),
            "mean_trivial_ratio": mean_trivial,
        },
        "wall_time_s": elapsed,
    }
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2).encode("utf-8") + b"\n")

    return RunResult(
        out_dir=out_dir,
        trajectory_paths=tuple(paths),
        steps=tuple(t.total_steps for t in trajectories),
        boundary_leads=leads,
        mean_trivial_ratio=mean_trivial,
        wall_time_s=elapsed,
    )


def _finite_mean(values: Sequence[float]) -> Optional[float]:
    finite = [v for v in values if not math.isnan(v)]
    return sum(finite) / len(finite) if finite else None


SWEEP_CSV_HEADER = "value,mean_boundary_lead,mean_steps,mean_trivial_ratio"


def sweep(manifest: RunManifest, parameter: str, values: Sequence[float]) -> Path:
    """Re-run the manifest once per hyperparameter value; one summary row each."""
    if parameter not in ("lambda", "alpha"):
        raise ValueError("sweep parameter must be 'lambda' or 'alpha'")
    if not values:
        raise ValueError("sweep needs at least one value")
    out_dir = Path(manifest.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        if parameter == "lambda":
            sampler = replace(manifest.config.sampler, decay=value)
        else:
            sampler = replace(manifest.config.sampler, clip=value)
        sub = replace(
            manifest,
            config=replace(manifest.config, sampler=sampler),
            out_dir=out_dir / f"{parameter}_{value:g}",
        )
        result = run_decode(sub)
        lead = result.mean_boundary_lead
        rows.append(
            f"{value:g},{'' if math.isnan(lead) else repr(lead)},"
            f"{result.mean_steps!r},{result.mean_trivial_ratio!r}"
        )
    table = "\n".join([SWEEP_CSV_HEADER] + rows) + "\n"
    path = out_dir / "sweep.csv"
    atomic_write(path, table.encode("utf-8"))
    return path
