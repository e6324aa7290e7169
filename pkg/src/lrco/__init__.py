"""Low-confidence-sample contrastive domain adaptation on a synthetic
covariate-shift benchmark, with a from-scratch reverse-mode autodiff core.
"""

from .analysis import (
    SimilarityReport, project_2d, similarity_stats, topk_accumulation,
)
from .config import (
    ModelSection, OutputSection, RunConfig, apply_overrides, canonical_text,
    config_hash, default_run_config, load_config, parse_config_text,
)
from .data import (
    AugmentSpec, BenchmarkSpec, Sample, ShiftBenchmark, generate_shift_benchmark,
    load_dataset, save_dataset, strong_augment, weak_augment,
)
from .errors import (
    ConfigError, DatasetFormatError, DegenerateFeatureError, LrcoError,
    ShapeMismatchError, TrainingDivergedError,
)
from .gradcheck import run_gradient_suite
from .losses import (
    MixDraw, MixPair, PseudoLabel, build_mix_pair, confidence_split,
    contrastive_batch, cross_entropy, draw_mix, entropy_alignment, fixmatch_loss,
    kld_reg, lrco_loss, make_pseudo_label, mixlrco_loss, naive_contrastive,
    re_represent,
)
from .membank import MemoryBank
from .model import (
    ModelConfig, ModelState, classify_probs, clone_state, ema_update,
    forward_features, init_model,
)
from .numerics import SeededRng, l2_normalize, log_sum_exp, sample_beta, softmax_t
from .trainer import (
    EvalMetrics, FitResult, StepReport, TrainConfig, evaluate, fit,
    load_checkpoint, save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "BenchmarkSpec", "ConfigError", "DatasetFormatError",
    "DegenerateFeatureError", "EvalMetrics", "FitResult", "LrcoError",
    "MemoryBank", "MixDraw", "MixPair", "ModelConfig", "ModelSection",
    "ModelState", "OutputSection", "PseudoLabel", "RunConfig", "Sample",
    "SeededRng", "ShapeMismatchError", "ShiftBenchmark", "SimilarityReport",
    "StepReport", "TrainConfig", "TrainingDivergedError", "apply_overrides",
    "build_mix_pair", "canonical_text", "classify_probs", "clone_state",
    "config_hash", "confidence_split", "contrastive_batch", "cross_entropy",
    "default_run_config", "draw_mix", "ema_update", "entropy_alignment",
    "evaluate", "fit", "fixmatch_loss", "forward_features",
    "generate_shift_benchmark", "init_model", "kld_reg", "l2_normalize",
    "load_checkpoint", "load_config", "load_dataset", "log_sum_exp",
    "lrco_loss", "make_pseudo_label", "mixlrco_loss", "naive_contrastive",
    "parse_config_text", "project_2d", "re_represent", "run_gradient_suite",
    "sample_beta", "save_checkpoint", "save_dataset", "similarity_stats",
    "softmax_t", "strong_augment", "topk_accumulation", "weak_augment",
]
