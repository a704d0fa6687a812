"""Decoding-strategy engine for masked diffusion models.

Builds partially masked sequences step by step: denoisers supply
per-position token distributions, scorers rank the masked positions,
unmask policies pick how many to reveal per step, and analytics turn the
resulting trajectories into heatmaps and token statistics.
"""

from .analytics import InterventionRule, apply_intervention, average_heatmap, trajectory_matrix
from .denoisers import (
    BoundaryScript,
    MarkovDenoiser,
    MarkovSpec,
    ScriptedDenoiser,
    markov_conditional,
    scripted_predict,
)
from .errors import EngineError
from .freqs import FrequencyTable, build_table, load_table, neg_log_freq, save_table, uniform_table
from .remote import RemoteDenoiser
from .runs import RunManifest, run_decode, sweep
from .schedule import (
    DecodeConfig,
    SchedulerSpec,
    block_restrict,
    decode,
    eb_select,
    fastdllm_select,
    select_single,
    tau_leap_select,
)
from .scoring import (
    SamplerSpec,
    calibrated_confidence,
    confidence_score,
    entropy_score,
    margin_score,
    pc_score,
    positional_weight,
)
from .state import (
    DecodeEvent,
    DecodeTrajectory,
    SequenceState,
    TokenDistribution,
    Vocabulary,
    apply_unmask,
    masked_positions,
)

__all__ = [
    "BoundaryScript",
    "DecodeConfig",
    "DecodeEvent",
    "DecodeTrajectory",
    "EngineError",
    "FrequencyTable",
    "InterventionRule",
    "MarkovDenoiser",
    "MarkovSpec",
    "RemoteDenoiser",
    "RunManifest",
    "SamplerSpec",
    "SchedulerSpec",
    "ScriptedDenoiser",
    "SequenceState",
    "TokenDistribution",
    "Vocabulary",
    "apply_intervention",
    "apply_unmask",
    "average_heatmap",
    "block_restrict",
    "build_table",
    "calibrated_confidence",
    "confidence_score",
    "decode",
    "eb_select",
    "entropy_score",
    "fastdllm_select",
    "load_table",
    "margin_score",
    "markov_conditional",
    "masked_positions",
    "neg_log_freq",
    "pc_score",
    "positional_weight",
    "run_decode",
    "save_table",
    "scripted_predict",
    "select_single",
    "sweep",
    "tau_leap_select",
    "trajectory_matrix",
    "uniform_table",
]
