"""Sliced training with checkpoint/increment ledgers and hybrid unlearning."""

from .costs import CostConfig, ThresholdResult, retrain_cost, threshold
from .data import (
    Dataset,
    SlicePlan,
    gen_synthetic,
    load_csv,
    make_slice_plan,
    save_csv,
    split_dataset,
)
from .engine import (
    STRATEGIES,
    Model,
    TrainConfig,
    UnlearnEngine,
    UnlearnOutcome,
    UnlearnRequest,
    sample_request_ids,
)
from .mia import (
    AttackDataset,
    AttackModel,
    AuditReport,
    ShadowModel,
    audit,
    build_attack_dataset,
    shuffle_member_labels,
    train_attack,
    train_shadows,
)
from .nn import (
    AdamHyper,
    Batch,
    ModelLayout,
    OptimizerState,
    ParameterVector,
    adam_step,
    combine,
    evaluate,
    forward,
    init_params,
    loss_grad,
)
from .report import MetricsReport, RequestRow
from .store import Checkpoint, IncrementRecord, StateStore

__all__ = [
    "AdamHyper",
    "AttackDataset",
    "AttackModel",
    "AuditReport",
    "Batch",
    "Checkpoint",
    "CostConfig",
    "Dataset",
    "IncrementRecord",
    "MetricsReport",
    "Model",
    "ModelLayout",
    "OptimizerState",
    "ParameterVector",
    "RequestRow",
    "STRATEGIES",
    "ShadowModel",
    "SlicePlan",
    "StateStore",
    "ThresholdResult",
    "TrainConfig",
    "UnlearnEngine",
    "UnlearnOutcome",
    "UnlearnRequest",
    "adam_step",
    "audit",
    "build_attack_dataset",
    "combine",
    "evaluate",
    "forward",
    "gen_synthetic",
    "init_params",
    "load_csv",
    "loss_grad",
    "make_slice_plan",
    "retrain_cost",
    "sample_request_ids",
    "save_csv",
    "shuffle_member_labels",
    "split_dataset",
    "threshold",
    "train_attack",
    "train_shadows",
]
