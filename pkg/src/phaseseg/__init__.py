"""Cached-feature surgical phase segmentation pipeline."""

from .feature_store import (
    CacheFormatError,
    ClipSpec,
    FeatureSequence,
    LabelSequence,
    TruncationWarning,
    clip_centers,
    generate_synthetic,
    interpolate_to_full_rate,
    read_cache,
    reconcile_lengths,
    write_cache,
)
from .metrics import (
    FoldReport,
    Segment,
    StudyReport,
    accuracy,
    aggregate,
    edit_score,
    macro_f1,
    mean_iou,
    pr_auc,
    segmental_f1,
    summarize,
    to_segments,
)
from .mstcnpp import ModelConfig, ModelParams, forward, init_params, parameter_count, predict
from .splits import DatasetManifest, FoldSpec, fold_iter, stratified_kfold
from .training import RunManifest, TrainConfig, dump_predictions, total_loss, train_fold

__all__ = [
    "CacheFormatError",
    "ClipSpec",
    "DatasetManifest",
    "FeatureSequence",
    "FoldReport",
    "FoldSpec",
    "LabelSequence",
    "ModelConfig",
    "ModelParams",
    "RunManifest",
    "Segment",
    "StudyReport",
    "TrainConfig",
    "TruncationWarning",
    "accuracy",
    "aggregate",
    "clip_centers",
    "dump_predictions",
    "edit_score",
    "fold_iter",
    "forward",
    "generate_synthetic",
    "init_params",
    "interpolate_to_full_rate",
    "macro_f1",
    "mean_iou",
    "parameter_count",
    "pr_auc",
    "predict",
    "read_cache",
    "reconcile_lengths",
    "segmental_f1",
    "stratified_kfold",
    "summarize",
    "to_segments",
    "total_loss",
    "train_fold",
    "write_cache",
]
