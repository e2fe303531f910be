"""Multi-granularity prototype memory regulation for cross-modality retrieval."""

from .data import RecordSet, SynthConfig, generate, pk_sample, read_dataset, write_dataset
from .encoder import EncoderConfig, EncoderParams, encode, pooled_descriptor
from .evaluation import compute_cmc, compute_map, evaluate, proto_index_retrieve, rank_gallery
from .losses import LossWeights, total_loss
from .memory import MemoryConfig, PrototypeMemory, mg_mra_forward, residual_compose, sg_mra_read, summarize_level
from .numerics import Tensor, grad_check, make_rng
from .trainer import Checkpoint, TrainConfig, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "RecordSet",
    "SynthConfig",
    "generate",
    "pk_sample",
    "read_dataset",
    "write_dataset",
    "EncoderConfig",
    "EncoderParams",
    "encode",
    "pooled_descriptor",
    "compute_cmc",
    "compute_map",
    "evaluate",
    "proto_index_retrieve",
    "rank_gallery",
    "LossWeights",
    "total_loss",
    "MemoryConfig",
    "PrototypeMemory",
    "mg_mra_forward",
    "residual_compose",
    "sg_mra_read",
    "summarize_level",
    "Tensor",
    "grad_check",
    "make_rng",
    "Checkpoint",
    "TrainConfig",
    "sgd_step",
    "train",
]
