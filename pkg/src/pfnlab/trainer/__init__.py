"""Pretraining, finetuning strategies and training protocols."""

from .loop import (
    LR_GRID_HIGH,
    LR_GRID_LOW,
    LR_GRID_SIZE,
    RunHistory,
    SweepResult,
    TrainProtocol,
    context_loss,
    ensemble_predict,
    evaluate,
    finetune,
    lr_grid,
    lr_sweep,
    majority_metric,
    predict_split,
    train_from_scratch,
)
from .pretrain import PretrainSchedule, heldout_accuracy, heldout_tasks, meta_batches, pretrain, pretrain_key
from .strategies import (
    EmbLnHead,
    FeatureEmb,
    FinetuneStrategy,
    Full,
    LastLayers,
    LoRA,
    build_trainable_mask,
    inject_lora,
    mask_for,
    prepare,
    strategy_from_dict,
    strategy_label,
    strategy_to_dict,
)

__all__ = [
    "LR_GRID_HIGH",
    "LR_GRID_LOW",
    "LR_GRID_SIZE",
    "EmbLnHead",
    "FeatureEmb",
    "FinetuneStrategy",
    "Full",
    "LastLayers",
    "LoRA",
    "PretrainSchedule",
    "RunHistory",
    "SweepResult",
    "TrainProtocol",
    "build_trainable_mask",
    "context_loss",
    "ensemble_predict",
    "evaluate",
    "finetune",
    "heldout_accuracy",
    "heldout_tasks",
    "inject_lora",
    "lr_grid",
    "lr_sweep",
    "majority_metric",
    "mask_for",
    "meta_batches",
    "predict_split",
    "prepare",
    "pretrain",
    "pretrain_key",
    "strategy_from_dict",
    "strategy_label",
    "strategy_to_dict",
    "train_from_scratch",
]
