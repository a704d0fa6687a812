"""Command-line entry point.

Subcommands: ``decode`` (run a manifest), ``sweep`` (decode once per
hyperparameter value), ``build-freqs`` (frequency table from an id stream),
``heatmap`` (re-aggregate stored trajectory CSVs), ``intervene`` (decode
with banned positions during early steps), and ``selfcheck`` (built-in
oracle and invariant checks).

Configuration precedence is flags > ``--config`` JSON file > built-in
defaults. ``MDM_DECODE_SEED`` is honored as a seed fallback. Exit codes:
0 success, 1 usage problem, 2 runtime failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import analytics, freqs, runs, selfcheck
from .analytics import InterventionRule
from .denoisers import BoundaryScript, MarkovDenoiser, MarkovSpec, ScriptedDenoiser
from .errors import EngineError
from .remote import RemoteDenoiser
from .schedule import DecodeConfig, SchedulerSpec
from .scoring import SamplerSpec
from .state import Vocabulary, parse_trajectory_csv

POLICY_ALIASES = {"single": "single", "tau": "tau_leap", "eb": "eb", "fastdllm": "fast_dllm"}

DEFAULTS = {
    "sampler": "pc",
    "lambda": 0.25,
    "alpha": 10.0,
    "freq_table": None,
    "policy": "single",
    "tau": 2,
    "gamma": 0.01,
    "threshold": 0.9,
    "blocks": None,
    "temperature": 0.0,
    "seed": None,
    "gen_len": 16,
    "prompt": "",
    "reps": 1,
    "denoiser": "boundary",
    "markov_file": None,
    "vocab_size": 12,
    "mask_id": None,
    "boundary_token": 0,
    "boundary_confidence": 0.95,
    "boundary_width": 1,
    "interior_scale": 0.5,
    "endpoint": None,
    "top_k": 64,
    "trivial_ids": None,
    "first_k_steps": 5,
}


def _parse_ids(text: str, what: str) -> list[int]:
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise click.UsageError(f"{what} must be comma-separated integers: {exc}")


def _merged_settings(config_path, flags: dict) -> dict:
    settings = dict(DEFAULTS)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config file: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise click.UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    settings.update({k: v for k, v in flags.items() if v is not None})
    if settings["seed"] is None:
        env_seed = os.environ.get("MDM_DECODE_SEED")
        settings["seed"] = int(env_seed) if env_seed else 0
    return settings


def _build_vocab(settings: dict) -> Vocabulary:
    size = settings["vocab_size"]
    mask_id = settings["mask_id"]
    if mask_id is None:
        mask_id = size - 1
    return Vocabulary(size=size, mask_id=mask_id)


def _build_denoiser(settings: dict):
    kind = settings["denoiser"]
    if kind == "markov":
        if not settings["markov_file"]:
            raise click.UsageError("--denoiser markov needs --markov-file")
        with open(settings["markov_file"], "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        vocab = Vocabulary(size=payload["size"], mask_id=payload["mask_id"])
        spec = MarkovSpec(
            vocab,
            np.asarray(payload["initial"], dtype=np.float64),
            np.asarray(payload["transition"], dtype=np.float64),
        )
        return MarkovDenoiser(spec), vocab
    if kind == "boundary":
        vocab = _build_vocab(settings)
        script = BoundaryScript(
            vocab=vocab,
            boundary_token=settings["boundary_token"],
            boundary_confidence=settings["boundary_confidence"],
            interior_entropy_scale=settings["interior_scale"],
            k=settings["boundary_width"],
        )
        return ScriptedDenoiser(script), vocab
    if kind == "remote":
        if not settings["endpoint"]:
            raise click.UsageError("--denoiser remote needs --endpoint host:port")
        host, _, port = settings["endpoint"].rpartition(":")
        if not host or not port.isdigit():
            raise click.UsageError("--endpoint must look like host:port")
        vocab = _build_vocab(settings)
        return RemoteDenoiser(host, int(port), top_k=settings["top_k"]), vocab
    raise click.UsageError(f"unknown denoiser {kind!r}")


def _build_config(settings: dict, vocab: Vocabulary) -> DecodeConfig:
    sampler_kind = settings["sampler"]
    freq = None
    if sampler_kind == "pc":
        if settings["freq_table"]:
            freq = freqs.read_table(settings["freq_table"])
            if freq.vocab_size != vocab.size:
                raise click.UsageError(
                    f"frequency table covers {freq.vocab_size} ids, vocabulary has {vocab.size}"
                )
        else:
            freq = freqs.uniform_table(vocab.size)
    sampler = SamplerSpec(
        kind=sampler_kind,
        decay=settings["lambda"],
        clip=settings["alpha"],
        freq=freq,
    )
    policy = settings["policy"]
    policy = POLICY_ALIASES.get(policy, policy)
    scheduler = SchedulerSpec(
        policy=policy,
        tau=settings["tau"],
        gamma=settings["gamma"],
        threshold=settings["threshold"],
        blocks=settings["blocks"],
    )
    return DecodeConfig(
        sampler=sampler,
        scheduler=scheduler,
        temperature=settings["temperature"],
        seed=settings["seed"],
    )


def _build_manifest(settings: dict, out_dir: Path, intervention=None) -> runs.RunManifest:
    denoiser, vocab = _build_denoiser(settings)
    config = _build_config(settings, vocab)
    prompt = tuple(_parse_ids(settings["prompt"], "--prompt"))
    if settings["trivial_ids"] is not None:
        trivial = frozenset(_parse_ids(settings["trivial_ids"], "--trivial-ids"))
    elif settings["denoiser"] == "boundary":
        trivial = frozenset({settings["boundary_token"]})
    else:
        trivial = frozenset()
    return runs.RunManifest(
        config=config,
        denoiser=denoiser,
        vocab=vocab,
        gen_len=settings["gen_len"],
        out_dir=out_dir,
        prompt=prompt,
        repetitions=settings["reps"],
        trivial=trivial,
        first_k_steps=settings["first_k_steps"],
        intervention=intervention,
    )


def decode_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="JSON settings file; flags override its entries."),
        click.option("--sampler", type=click.Choice(["uniform", "confidence", "entropy", "margin", "pc"]),
                     default=None, help="Position scorer (default pc)."),
        click.option("--lambda", "lambda_", type=float, default=None,
                     help="Positional decay of the pc scorer (default 0.25)."),
        click.option("--alpha", type=float, default=None,
                     help="Calibrated-confidence clip of the pc scorer (default 10)."),
        click.option("--freq-table", type=click.Path(exists=True), default=None,
                     help=".freq table for the pc scorer (default: uniform table)."),
        click.option("--policy", type=click.Choice(sorted(POLICY_ALIASES)), default=None,
                     help="Unmask policy (default single)."),
        click.option("--tau", type=int, default=None, help="Tokens per step for --policy tau."),
        click.option("--gamma", type=float, default=None, help="Entropy budget for --policy eb."),
        click.option("--threshold", type=float, default=None,
                     help="Confidence threshold for --policy fastdllm."),
        click.option("--blocks", type=int, default=None,
                     help="Decode in this many contiguous blocks, in order."),
        click.option("--temperature", type=float, default=None,
                     help="Token-choice temperature; 0 = argmax (default)."),
        click.option("--seed", type=int, default=None,
                     help="PRNG seed (fallback: MDM_DECODE_SEED, then 0)."),
        click.option("--gen-len", type=int, default=None, help="Generation length (default 16)."),
        click.option("--prompt", type=str, default=None, help="Comma-separated prompt token ids."),
        click.option("--reps", type=int, default=None, help="Repetitions with derived seeds (default 1)."),
        click.option("--denoiser", type=click.Choice(["markov", "boundary", "remote"]), default=None,
                     help="Denoiser backend (default boundary)."),
        click.option("--markov-file", type=click.Path(exists=True), default=None,
                     help="JSON chain parameters for --denoiser markov."),
        click.option("--vocab-size", type=int, default=None, help="Vocabulary size (default 12)."),
        click.option("--mask-id", type=int, default=None, help="Mask id (default: last id)."),
        click.option("--boundary-token", type=int, default=None,
                     help="End-marker token of the boundary denoiser (default 0)."),
        click.option("--boundary-confidence", type=float, default=None,
                     help="Peak probability at the final positions (default 0.95)."),
        click.option("--boundary-width", type=int, default=None,
                     help="How many final positions are boundary-confident (default 1)."),
        click.option("--interior-scale", type=float, default=None,
                     help="Flatness of interior distributions in [0, 1] (default 0.5)."),
        click.option("--endpoint", type=str, default=None, help="host:port for --denoiser remote."),
        click.option("--top-k", type=int, default=None, help="Top-k truncation for remote queries."),
        click.option("--trivial-ids", type=str, default=None,
                     help="Comma-separated trivial token ids for the statistics export."),
        click.option("--first-k-steps", type=int, default=None,
                     help="How many early steps the trivial statistics cover (default 5)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _collect_flags(kwargs: dict) -> dict:
    mapping = {
        "sampler": kwargs["sampler"],
        "lambda": kwargs["lambda_"],
        "alpha": kwargs["alpha"],
        "freq_table": kwargs["freq_table"],
        "policy": kwargs["policy"],
        "tau": kwargs["tau"],
        "gamma": kwargs["gamma"],
        "threshold": kwargs["threshold"],
        "blocks": kwargs["blocks"],
        "temperature": kwargs["temperature"],
        "seed": kwargs["seed"],
        "gen_len": kwargs["gen_len"],
        "prompt": kwargs["prompt"],
        "reps": kwargs["reps"],
        "denoiser": kwargs["denoiser"],
        "markov_file": kwargs["markov_file"],
        "vocab_size": kwargs["vocab_size"],
        "mask_id": kwargs["mask_id"],
        "boundary_token": kwargs["boundary_token"],
        "boundary_confidence": kwargs["boundary_confidence"],
        "boundary_width": kwargs["boundary_width"],
        "interior_scale": kwargs["interior_scale"],
        "endpoint": kwargs["endpoint"],
        "top_k": kwargs["top_k"],
        "trivial_ids": kwargs["trivial_ids"],
        "first_k_steps": kwargs["first_k_steps"],
    }
    return mapping


@click.group()
def cli():
    """Decoding-strategy engine for masked diffusion models."""


@cli.command("decode")
@decode_options
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory.")
def decode_command(config_path, out_dir, **kwargs):
    """Run a decode manifest and write its artifacts."""
    settings = _merged_settings(config_path, _collect_flags(kwargs))
    manifest = _build_manifest(settings, Path(out_dir))
    result = runs.run_decode(manifest)
    click.echo(f"wrote {len(result.trajectory_paths)} trajectories to {result.out_dir}")
    click.echo(f"mean steps {result.mean_steps:g}")


@cli.command("intervene")
@decode_options
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory.")
@click.option("--ban-positions", type=str, required=True,
              help="Comma-separated gen positions to ban during early steps.")
@click.option("--ban-steps", type=int, default=None,
              help="How many initial steps the ban covers (default gen_len // 2).")
def intervene_command(config_path, out_dir, ban_positions, ban_steps, **kwargs):
    """Decode while banning positions from selection during early steps."""
    settings = _merged_settings(config_path, _collect_flags(kwargs))
    banned = _parse_ids(ban_positions, "--ban-positions")
    if not banned:
        raise click.UsageError("--ban-positions needs at least one position")
    steps = ban_steps if ban_steps is not None else settings["gen_len"] // 2
    rule = InterventionRule(frozenset(banned), steps)
    manifest = _build_manifest(settings, Path(out_dir), intervention=rule)
    result = runs.run_decode(manifest)
    click.echo(f"wrote {len(result.trajectory_paths)} trajectories to {result.out_dir}")
    if rule.skipped_steps:
        click.echo(f"ban skipped at steps {sorted(set(rule.skipped_steps))} to keep progress")


@cli.command("sweep")
@decode_options
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Output directory.")
@click.option("--parameter", type=click.Choice(["lambda", "alpha"]), required=True)
@click.option("--values", type=str, required=True, help="Comma-separated values to sweep.")
def sweep_command(config_path, out_dir, parameter, values, **kwargs):
    """Decode once per hyperparameter value and tabulate summaries."""
    settings = _merged_settings(config_path, _collect_flags(kwargs))
    try:
        parsed = [float(v) for v in values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise click.UsageError(f"--values must be comma-separated numbers: {exc}")
    if not parsed:
        raise click.UsageError("--values needs at least one value")
    manifest = _build_manifest(settings, Path(out_dir))
    path = runs.sweep(manifest, parameter, parsed)
    click.echo(f"wrote sweep table to {path}")


@cli.command("build-freqs")
@click.option("--vocab-size", type=int, required=True)
@click.option("--delta", type=float, default=1.0, show_default=True, help="Additive smoothing.")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True,
              help="Token id stream to count.")
@click.option("--format", "stream_format", type=click.Choice(["text", "binary"]),
              default="text", show_default=True,
              help="text: newline-delimited ids; binary: little-endian uint32 stream.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Output .freq file.")
def build_freqs_command(vocab_size, delta, input_path, stream_format, out_path):
    """Build a smoothed background-frequency table from a token id stream."""
    if stream_format == "text":
        with open(input_path, "r", encoding="utf-8") as fh:
            stream = [int(line) for line in fh if line.strip() != ""]
    else:
        raw = Path(input_path).read_bytes()
        if len(raw) % 4 != 0:
            raise click.UsageError("binary id stream length must be a multiple of 4 bytes")
        stream = np.frombuffer(raw, dtype="<u4").tolist()
    table = freqs.build_table(stream, vocab_size, delta)
    runs.atomic_write(Path(out_path), freqs.save_table(table))
    click.echo(f"counted {table.total} tokens over {vocab_size} ids into {out_path}")


@cli.command("heatmap")
@click.option("--from", "source_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory holding trajectory_*.csv files.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Output heatmap CSV.")
@click.option("--rows", type=int, default=None,
              help="Resample the step axis to this many rows before averaging.")
def heatmap_command(source_dir, out_path, rows):
    """Re-aggregate stored trajectories into an averaged heatmap."""
    paths = sorted(Path(source_dir).glob("trajectory_*.csv"))
    if not paths:
        raise click.UsageError(f"no trajectory_*.csv files under {source_dir}")
    matrices = [
        analytics.trajectory_matrix(parse_trajectory_csv(p.read_bytes())) for p in paths
    ]
    if rows is None and len({m.shape for m in matrices}) > 1:
        rows = max(m.shape[0] for m in matrices)
    if rows is not None:
        matrices = [analytics.resample_matrix(m, rows) for m in matrices]
    heatmap = analytics.average_heatmap(matrices)
    runs.atomic_write(Path(out_path), analytics.heatmap_csv_bytes(heatmap))
    click.echo(f"averaged {len(matrices)} trajectories into {out_path}")


@cli.command("selfcheck")
@click.option("--markov-cases", type=int, default=50, show_default=True)
@click.option("--policy-cases", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def selfcheck_command(markov_cases, policy_cases, seed):
    """Run the built-in oracle comparison and policy invariant checks."""
    results = selfcheck.run_selfcheck(markov_cases, policy_cases, seed)
    failed = False
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        click.echo(f"[{status}] {result.name}: {result.detail}")
        failed = failed or not result.passed
    if failed:
        raise EngineError("selfcheck found failures")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except (EngineError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
