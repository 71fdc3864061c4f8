"""Cross-domain recommendation via valence preference mapping.

Thin wrapper over the compiled extension: generate or parse a domain pair,
split it, pretrain embeddings, train the mapping model, and score it under
the cold- and warm-start protocols.
"""

from ._core import (
    DomainPair,
    InteractionSet,
    PretrainedTables,
    SplitPlan,
    SynthData,
    TrainedModel,
    build_pair,
    evaluate_cold,
    evaluate_warm,
    generate_synth,
    hit_at_k,
    mae,
    make_split,
    map_user,
    ndcg_at_k,
    parse_ratings,
    pretrain,
    recommend,
    rmse,
    sampling_probs_negative,
    sampling_probs_positive,
    softmax,
    train,
)

__all__ = [
    "DomainPair",
    "InteractionSet",
    "PretrainedTables",
    "SplitPlan",
    "SynthData",
    "TrainedModel",
    "build_pair",
    "evaluate_cold",
    "evaluate_warm",
    "generate_synth",
    "hit_at_k",
    "mae",
    "make_split",
    "map_user",
    "ndcg_at_k",
    "parse_ratings",
    "pretrain",
    "recommend",
    "rmse",
    "sampling_probs_negative",
    "sampling_probs_positive",
    "softmax",
    "train",
]
