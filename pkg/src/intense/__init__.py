"""Interpretable tensor fusion for multimodal classifiers.

Relevance scores for modalities and their multiplicative interactions are
read off the block norms of a sparsity-regularised linear fusion layer.
"""
from .errors import (ContractError, InputError, OracleFailure, TrainingDivergedError,
                     UndefinedRelevanceError, UnsupportedOrderError)
from .fusion import (FusionConfig, FusionHead, RelevanceReport, fusion_forward,
                     recover_relevance, relevance_from_norms)
from .normalization import iterbn, naive_iterated_vbn, vbn
from .synthdata import (Dataset, SynthGeneConfig, generate_synthgene, generate_synthgene_tri,
                        read_jsonl, write_jsonl)
from .training import MultimodalModel, TrainConfig, fit, load_checkpoint, save_checkpoint, train

__all__ = [
    "ContractError", "InputError", "OracleFailure", "TrainingDivergedError",
    "UndefinedRelevanceError", "UnsupportedOrderError",
    "FusionConfig", "FusionHead", "RelevanceReport", "fusion_forward", "recover_relevance",
    "relevance_from_norms", "iterbn", "naive_iterated_vbn", "vbn",
    "Dataset", "SynthGeneConfig", "generate_synthgene", "generate_synthgene_tri",
    "read_jsonl", "write_jsonl",
    "MultimodalModel", "TrainConfig", "fit", "load_checkpoint", "save_checkpoint", "train",
]
__version__ = "0.1.0"
