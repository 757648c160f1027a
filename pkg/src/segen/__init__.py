"""Data-to-text generation with latent segmentation and segment-to-record alignment."""

from .corpus import DataInstance, Record, Vocabulary, build_vocab, encode, parse_e2e_mr
from .decoder import Mode, decode, forced_structure_decode, viterbi_align
from .lattice import batch_loss, expected_segments, forward_loglik, training_loss
from .model import Batch, Model, ModelConfig
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Batch", "DataInstance", "Mode", "Model", "ModelConfig", "Record", "TrainConfig", "Vocabulary",
    "batch_loss", "build_vocab", "decode", "encode", "expected_segments", "forced_structure_decode",
    "forward_loglik", "parse_e2e_mr", "train", "training_loss", "viterbi_align", "__version__",
]
