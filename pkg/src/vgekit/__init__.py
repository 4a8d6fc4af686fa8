"""Grounded-embedding toolkit: train a caption-to-image retrieval encoder,
read visually grounded word embeddings out of its bottleneck states, train
matched text-only baselines, and evaluate everything against similarity
judgements and priming reaction times."""

from .corpus import Caption, ImageFeatureStore, PairedCorpus
from .encoder import (GroundedModelParams, TrainConfig, Vocabulary,
                      batch_hinge_loss, cyclic_lr, encode_caption,
                      encode_image, load_checkpoint, recall_at_k,
                      save_checkpoint, train)
from .table import EmbeddingTable
from .vge import encode_caption_states, extract_input_embeddings, extract_vges

__all__ = [
    "Caption", "EmbeddingTable", "GroundedModelParams", "ImageFeatureStore",
    "PairedCorpus", "TrainConfig", "Vocabulary", "batch_hinge_loss",
    "cyclic_lr", "encode_caption", "encode_caption_states", "encode_image",
    "extract_input_embeddings", "extract_vges", "load_checkpoint",
    "recall_at_k", "save_checkpoint", "train",
]
