"""Cascade positive retrieval: staged multi-view positive mining for contrastive learning."""

from cpr.store import (
    Dataset,
    DegenerateFeatureError,
    InstanceRecord,
    MemoryBank,
    ValidationError,
    bank_update,
    load_features,
    normalize,
    save_features,
    similarities,
)
from cpr.miner import CascadeConfig, MiningResult, StageTrace, cascade_mine, select, topk
from cpr.losses import ContrastiveBatch, info_nce, mil_nce, mil_nce_grad
from cpr.synthetic import SyntheticSpec, generate_holdout, generate_synthetic
from cpr.trainer import CycleSpec, ToyEncoder, TrainSchedule, ema_update, train
from cpr.metrics import MetricsReport, cmr, mining_r_at_1, pmr, retrieval_recall

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig",
    "ContrastiveBatch",
    "CycleSpec",
    "Dataset",
    "DegenerateFeatureError",
    "InstanceRecord",
    "MemoryBank",
    "MetricsReport",
    "MiningResult",
    "StageTrace",
    "SyntheticSpec",
    "ToyEncoder",
    "TrainSchedule",
    "ValidationError",
    "bank_update",
    "cascade_mine",
    "cmr",
    "ema_update",
    "generate_holdout",
    "generate_synthetic",
    "info_nce",
    "load_features",
    "mil_nce",
    "mil_nce_grad",
    "mining_r_at_1",
    "normalize",
    "pmr",
    "retrieval_recall",
    "save_features",
    "select",
    "similarities",
    "topk",
    "train",
]
