"""Generation-refinement VQA with rationales: toy world, pipeline and metrics."""

from ._genref import (
    CheckpointError,
    Model,
    accuracy_report,
    cider,
    dataset_jsonl,
    derive_answer,
    evaluate,
    generate_dataset,
    grad_check,
    lcs_length,
    load_checkpoint,
    meteor_lite,
    rouge_l,
    summarize_ratings,
    toy_run_config,
    train_toy,
)

__all__ = [
    "CheckpointError",
    "Model",
    "accuracy_report",
    "cider",
    "dataset_jsonl",
    "derive_answer",
    "evaluate",
    "generate_dataset",
    "grad_check",
    "lcs_length",
    "load_checkpoint",
    "meteor_lite",
    "rouge_l",
    "summarize_ratings",
    "toy_run_config",
    "train_toy",
]
