from ._douap import (
    AttackConfig,
    Dataset,
    DouapError,
    Model,
    PairSample,
    TrainConfig,
    Uap,
    asr_at_k,
    attack,
    evaluate,
    generate_dataset,
    load_dataset,
    load_model,
    load_uap,
    pair_similarity,
    recall_at_k,
    train,
    zero_uap,
)

__all__ = [
    "AttackConfig",
    "Dataset",
    "DouapError",
    "Model",
    "PairSample",
    "TrainConfig",
    "Uap",
    "asr_at_k",
    "attack",
    "evaluate",
    "generate_dataset",
    "load_dataset",
    "load_model",
    "load_uap",
    "pair_similarity",
    "recall_at_k",
    "train",
    "zero_uap",
]
