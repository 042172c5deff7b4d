"""Decoding-policy engine for block-wise masked diffusion LM inference."""

__version__ = "0.1.0"

from .errors import EngineError
from .seqstate import (
    BlockLayout,
    SequenceState,
    UnmaskSelection,
    init_sequence,
    masked_in_block,
    unmask_and_update,
)
from .predictors import (
    BigramModel,
    BigramPredictor,
    PredictionFrame,
    Predictor,
    ScriptedPredictor,
    ScriptedSchedule,
    bigram_fit,
    scripted_confidence,
)
from .strategies import (
    ConfidenceRecord,
    DecodePolicy,
    DecodeTrace,
    PRESETS,
    ThresholdProfile,
    calibrate,
    fixed_quota_generate,
    lookup_threshold,
    osdt_run,
    select_unmask_set,
    static_threshold_generate,
    statistic,
)
from .analysis import (
    ParetoPoint,
    RunMetrics,
    SimilarityMatrix,
    TrajectoryVector,
    cosine_similarity,
    pairwise_similarity,
    pareto_frontier,
    run_metrics,
    stepblock_mean_vector,
)
from .harness import DatasetItem, evaluate_exact_match, load_dataset, sweep

__all__ = [
    "BigramModel",
    "BigramPredictor",
    "BlockLayout",
    "ConfidenceRecord",
    "DatasetItem",
    "DecodePolicy",
    "DecodeTrace",
    "EngineError",
    "PRESETS",
    "ParetoPoint",
    "PredictionFrame",
    "Predictor",
    "RunMetrics",
    "ScriptedPredictor",
    "ScriptedSchedule",
    "SequenceState",
    "SimilarityMatrix",
    "ThresholdProfile",
    "TrajectoryVector",
    "UnmaskSelection",
    "bigram_fit",
    "calibrate",
    "cosine_similarity",
    "evaluate_exact_match",
    "fixed_quota_generate",
    "init_sequence",
    "load_dataset",
    "lookup_threshold",
    "masked_in_block",
    "osdt_run",
    "pairwise_similarity",
    "pareto_frontier",
    "run_metrics",
    "scripted_confidence",
    "select_unmask_set",
    "static_threshold_generate",
    "statistic",
    "stepblock_mean_vector",
    "sweep",
    "unmask_and_update",
]
