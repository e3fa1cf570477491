"""Age-group detection from children's stylus drawing sessions.

Sessions are parsed from a canonical CSV + sidecar layout, expanded into
25 per-sample channels, and classified into one of seven educational-level
groups by either nearest-barycenter matching or per-group Gaussian-mixture
hidden Markov models.
"""

__version__ = "0.1.0"

from .elastic import DbaConfig, DbaModel, WarpResult, classify_dba, dba, dtw, train_dba
from .errors import DrawageError
from .features import (
    CHANNELS,
    ChannelId,
    ChannelSet,
    NormStats,
    apply_norm,
    derivative,
    extract_channels,
    fit_norm,
)
from .ingest import (
    GROUPS,
    RawSample,
    RawSession,
    SplitPlan,
    Stroke,
    make_split,
    parse_session,
    segment_strokes,
    serialize_session,
)
from .markov import GroupHmm, HmmModel, HmmParams, classify_hmm, score, stack_observation, train_hmm
from .pipeline import EvalReport, Prediction, agd, evaluate, predict, run_experiment
from .selection import SelectionResult, sfs, stat_select_dba, stat_select_hmm
from .synth import SynthConfig, generate_corpus, write_corpus

__all__ = [
    "CHANNELS",
    "ChannelId",
    "ChannelSet",
    "DbaConfig",
    "DbaModel",
    "DrawageError",
    "EvalReport",
    "GROUPS",
    "GroupHmm",
    "HmmModel",
    "HmmParams",
    "NormStats",
    "Prediction",
    "RawSample",
    "RawSession",
    "SelectionResult",
    "SplitPlan",
    "Stroke",
    "SynthConfig",
    "WarpResult",
    "agd",
    "apply_norm",
    "classify_dba",
    "classify_hmm",
    "dba",
    "derivative",
    "dtw",
    "evaluate",
    "extract_channels",
    "fit_norm",
    "generate_corpus",
    "make_split",
    "parse_session",
    "predict",
    "run_experiment",
    "score",
    "segment_strokes",
    "serialize_session",
    "sfs",
    "stack_observation",
    "stat_select_dba",
    "stat_select_hmm",
    "train_dba",
    "train_hmm",
    "write_corpus",
]
