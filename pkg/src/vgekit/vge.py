"""Visually grounded word embeddings read out of the trained caption tower.

The attention layer is dropped and the bottleneck LSTM states are kept per
position; a word's embedding is the L2-normalized sum of its states over
every occurrence in the corpus.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .encoder import BOS, EOS, GroundedModelParams
from .encoder import _caption_states, _pack, _wrap_params
from .table import EmbeddingTable

log = logging.getLogger(__name__)


def encode_caption_states(params: GroundedModelParams,
                          tokens: list[str]) -> np.ndarray:
    """Bottleneck states for one caption: [len(tokens) + 2, 2 * lstm2_units],
    including the start/end marker positions. Shares the caption tower code
    path with encode_caption, minus attention pooling."""
    ids = params.vocab.encode(tokens)
    return _states_for_batch(params, [ids])[0]


def _states_for_batch(params: GroundedModelParams,
                      id_lists: list[list[int]]) -> list[np.ndarray]:
    graph = T.Graph()
    pt = _wrap_params(graph, params, requires_grad=False)
    idx, mask = _pack(id_lists)
    states = _caption_states(graph, pt, params, idx, mask)
    stacked = np.stack([s.data for s in states])  # [T, B, D]
    return [stacked[:len(ids), b, :].copy() for b, ids in enumerate(id_lists)]


def extract_vges(params: GroundedModelParams, corpus,
                 batch_size: int = 64) -> EmbeddingTable:
    """Aggregate bottleneck states into one vector per corpus word type.

    Sums use Kahan compensation (high-frequency words accumulate thousands
    of terms), the marker positions are excluded, and words whose summed
    state is exactly zero are dropped with a warning.
    """
    for word in corpus.vocab.words:
        if word not in params.vocab:
            raise KeyError(f"corpus word {word!r} missing from the model vocabulary")
    dim = params.caption_dim
    vocab = corpus.vocab
    special = {vocab.index[BOS], vocab.index[EOS]}
    acc = np.zeros((len(vocab), dim))
    comp = np.zeros((len(vocab), dim))
    # Corpus ids may differ from model ids when extracting on a sub-corpus.
    to_model = [params.vocab.id(w) for w in vocab.words]

    captions = corpus.captions
    for start in range(0, len(captions), batch_size):
        chunk = captions[start:start + batch_size]
        model_ids = [[to_model[vocab.id(t)] for t in c.tokens] for c in chunk]
        wrapped = [[params.vocab.index[BOS]] + ids + [params.vocab.index[EOS]]
                   for ids in model_ids]
        states = _states_for_batch(params, wrapped)
        for c, st in zip(chunk, states):
            corpus_ids = [vocab.id(t) for t in c.tokens]
            for pos, wid in enumerate(corpus_ids):
                s = st[pos + 1]  # positions are offset by the start marker
                y = s - comp[wid]
                t = acc[wid] + y
                comp[wid] = (t - acc[wid]) - y
                acc[wid] = t

    raw = {}
    for wid, word in enumerate(vocab.words):
        if wid in special:
            continue
        raw[word] = acc[wid]
    return EmbeddingTable.build(
        dim, raw, metadata={"extraction": "bottleneck_states"}, on_zero="skip")


def extract_input_embeddings(params: GroundedModelParams) -> EmbeddingTable:
    """The trained input embedding rows, L2 normalized (comparison condition
    only; markers excluded)."""
    raw = {}
    for word, wid in params.vocab.index.items():
        if word in (BOS, EOS):
            continue
        raw[word] = params.tensors["emb"][wid].copy()
    return EmbeddingTable.build(
        params.emb_dim, raw, metadata={"extraction": "input_embeddings"})
