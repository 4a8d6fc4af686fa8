"""Caption-to-image retrieval model: embedding + two-layer biLSTM caption
tower with self-attention pooling, a linear image tower, batch hinge loss,
cyclic learning rate, training loop, recall evaluation, and checkpoints.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"

_CHECKPOINT_MAGIC = b"VGEK"
_CHECKPOINT_VERSION = 1


class Vocabulary:
    """Token index for the encoder; ids 0 and 1 are the sentence markers."""

    def __init__(self, words, counts=None, _verbatim=False):
        if _verbatim:
            self.words = list(words)
        else:
            self.words = [BOS, EOS] + sorted(
                w for w in set(words) if w not in (BOS, EOS))
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")
        self.counts = dict(counts or {})

    @classmethod
    def from_word_list(cls, words, counts=None) -> "Vocabulary":
        """Rebuild with the exact given ordering (checkpoint sidecar files)."""
        return cls(words, counts, _verbatim=True)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def id(self, word: str) -> int:
        try:
            return self.index[word]
        except KeyError:
            raise KeyError(f"unknown token: {word!r}") from None

    def encode(self, tokens, wrap: bool = True) -> list[int]:
        if not tokens:
            raise ValueError("empty caption")
        ids = [self.id(w) for w in tokens]
        if wrap:
            return [self.index[BOS]] + ids + [self.index[EOS]]
        return ids


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 32
    margin: float = 0.2
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    cycle_steps: int = 0  # 0 = four epochs' worth of steps
    seed: int = 0
    emb_dim: int = 300
    lstm1_units: int = 1028
    lstm2_units: int = 300
    attn_units: int = 128

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be below lr_max")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")


@dataclass
class GroundedModelParams:
    """All trainable arrays plus the vocabulary they are indexed by."""

    vocab: Vocabulary
    emb_dim: int
    lstm1_units: int
    lstm2_units: int
    attn_units: int
    feature_dim: int
    tensors: dict[str, np.ndarray]

    @property
    def caption_dim(self) -> int:
        return 2 * self.lstm2_units

    def validate(self):
        v = len(self.vocab)
        d1, d2 = self.lstm1_units, self.lstm2_units
        expected = {
            "emb": (v, self.emb_dim),
            "l1f.wx": (self.emb_dim, 4 * d1), "l1f.wh": (d1, 4 * d1), "l1f.b": (4 * d1,),
            "l1b.wx": (self.emb_dim, 4 * d1), "l1b.wh": (d1, 4 * d1), "l1b.b": (4 * d1,),
            "l2f.wx": (2 * d1, 4 * d2), "l2f.wh": (d2, 4 * d2), "l2f.b": (4 * d2,),
            "l2b.wx": (2 * d1, 4 * d2), "l2b.wh": (d2, 4 * d2), "l2b.b": (4 * d2,),
            "attn.w": (2 * d2, self.attn_units), "attn.b": (self.attn_units,),
            "attn.u": (self.attn_units,),
            "img.w": (self.feature_dim, 2 * d2), "img.b": (2 * d2,),
        }
        if set(self.tensors) != set(expected):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"parameter {name!r} has shape {self.tensors[name].shape}, "
                    f"expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise FloatingPointError(f"parameter {name!r} has non-finite values")


def init_params(vocab: Vocabulary, feature_dim: int, cfg: TrainConfig,
                rng: np.random.Generator) -> GroundedModelParams:
    """Seeded init: uniform(-0.1, 0.1) weights, normal(0, 0.1) embeddings,
    forget-gate biases at 1.0. Draw order is fixed for reproducibility."""
    d1, d2, da = cfg.lstm1_units, cfg.lstm2_units, cfg.attn_units

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    tensors: dict[str, np.ndarray] = {}
    tensors["emb"] = rng.normal(0.0, 0.1, size=(len(vocab), cfg.emb_dim))
    for prefix, din, h in (("l1f", cfg.emb_dim, d1), ("l1b", cfg.emb_dim, d1),
                           ("l2f", 2 * d1, d2), ("l2b", 2 * d1, d2)):
        tensors[prefix + ".wx"] = u(din, 4 * h)
        tensors[prefix + ".wh"] = u(h, 4 * h)
        b = u(4 * h)
        b[h:2 * h] = 1.0  # forget gate
        tensors[prefix + ".b"] = b
    tensors["attn.w"] = u(2 * d2, da)
    tensors["attn.b"] = u(da)
    tensors["attn.u"] = u(da)
    tensors["img.w"] = u(feature_dim, 2 * d2)
    tensors["img.b"] = u(2 * d2)
    params = GroundedModelParams(vocab, cfg.emb_dim, d1, d2, da, feature_dim, tensors)
    params.validate()
    return params


def _pack(id_lists: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad wrapped id sequences; returns idx [T, B] and mask [T, B].

    Padding positions reuse the end-of-sentence id; masked state updates
    guarantee they receive zero gradient and leak nothing into outputs.
    """
    B = len(id_lists)
    lens = [len(ids) for ids in id_lists]
    Tmax = max(lens)
    idx = np.full((Tmax, B), 1, dtype=np.intp)
    mask = np.zeros((Tmax, B))
    for b, ids in enumerate(id_lists):
        idx[:lens[b], b] = ids
        mask[:lens[b], b] = 1.0
    return idx, mask


def _lstm_direction(pt, prefix, xs, m_ts, k_ts, hidden, reverse):
    graph = xs[0].graph
    B = xs[0].shape[0]
    h = graph.constant(np.zeros((B, hidden)))
    c = graph.constant(np.zeros((B, hidden)))
    wx, wh, b = pt[prefix + ".wx"], pt[prefix + ".wh"], pt[prefix + ".b"]
    steps = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    out: list = [None] * len(xs)
    for t in steps:
        z = T.add_bias(T.add(T.matmul(xs[t], wx), T.matmul(h, wh)), b)
        i = T.sigmoid(T.slice_cols(z, 0, hidden))
        f = T.sigmoid(T.slice_cols(z, hidden, 2 * hidden))
        g = T.tanh(T.slice_cols(z, 2 * hidden, 3 * hidden))
        o = T.sigmoid(T.slice_cols(z, 3 * hidden, 4 * hidden))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        # Frozen outside each sequence's span so right-padding cannot leak.
        c = T.add(T.mul_colvec(c_new, m_ts[t]), T.mul_colvec(c, k_ts[t]))
        h = T.add(T.mul_colvec(h_new, m_ts[t]), T.mul_colvec(h, k_ts[t]))
        out[t] = h
    return out


def _caption_states(graph, pt, params: GroundedModelParams,
                    idx: np.ndarray, mask: np.ndarray):
    """Per-position bottleneck states: list over time of [B, 2*lstm2] tensors."""
    Tmax = idx.shape[0]
    xs = [T.gather_rows(pt["emb"], idx[t]) for t in range(Tmax)]
    m_ts = [graph.constant(mask[t]) for t in range(Tmax)]
    k_ts = [graph.constant(1.0 - mask[t]) for t in range(Tmax)]
    f1 = _lstm_direction(pt, "l1f", xs, m_ts, k_ts, params.lstm1_units, False)
    b1 = _lstm_direction(pt, "l1b", xs, m_ts, k_ts, params.lstm1_units, True)
    l1 = [T.concat([f1[t], b1[t]], axis=1) for t in range(Tmax)]
    f2 = _lstm_direction(pt, "l2f", l1, m_ts, k_ts, params.lstm2_units, False)
    b2 = _lstm_direction(pt, "l2b", l1, m_ts, k_ts, params.lstm2_units, True)
    return [T.concat([f2[t], b2[t]], axis=1) for t in range(Tmax)]


def _attend(graph, pt, params: GroundedModelParams, states, mask: np.ndarray):
    """Self-attention pooling over valid positions; returns (pooled, alpha)."""
    B = states[0].shape[0]
    u_col = T.reshape(pt["attn.u"], (params.attn_units, 1))
    scores = []
    for s in states:
        z = T.tanh(T.add_bias(T.matmul(s, pt["attn.w"]), pt["attn.b"]))
        scores.append(T.matmul(z, u_col))
    sc = T.concat(scores, axis=1)  # [B, T]
    pad_penalty = graph.constant((1.0 - mask.T) * -1e30)
    alpha = T.softmax(T.add(sc, pad_penalty), axis=1)
    pooled = None
    for t, s in enumerate(states):
        w = T.reshape(T.slice_cols(alpha, t, t + 1), (B,))
        term = T.mul_colvec(s, w)
        pooled = term if pooled is None else T.add(pooled, term)
    return pooled, alpha


def _encode_caption_batch(graph, pt, params, idx, mask):
    states = _caption_states(graph, pt, params, idx, mask)
    pooled, alpha = _attend(graph, pt, params, states, mask)
    return T.l2_normalize(pooled, axis=1), states, alpha


def _encode_image_batch(graph, pt, feats: np.ndarray):
    x = graph.constant(feats)
    return T.l2_normalize(T.add_bias(T.matmul(x, pt["img.w"]), pt["img.b"]), axis=1)


def _wrap_params(graph, params: GroundedModelParams, requires_grad: bool):
    return {name: graph.tensor(arr, requires_grad=requires_grad)
            for name, arr in params.tensors.items()}


def encode_caption(params: GroundedModelParams, tokens: list[str]) -> np.ndarray:
    """Encode one caption (raw tokens, unwrapped) to a unit 2*lstm2 vector."""
    ids = params.vocab.encode(tokens)
    graph = T.Graph()
    pt = _wrap_params(graph, params, requires_grad=False)
    idx, mask = _pack([ids])
    emb, _, _ = _encode_caption_batch(graph, pt, params, idx, mask)
    return emb.data[0].copy()


def caption_attention(params: GroundedModelParams, tokens: list[str]) -> np.ndarray:
    """Attention weights over the wrapped token positions of one caption."""
    ids = params.vocab.encode(tokens)
    graph = T.Graph()
    pt = _wrap_params(graph, params, requires_grad=False)
    idx, mask = _pack([ids])
    _, _, alpha = _encode_caption_batch(graph, pt, params, idx, mask)
    return alpha.data[0].copy()


def encode_captions(params: GroundedModelParams, token_lists,
                    batch_size: int = 64) -> np.ndarray:
    """Encode many captions with padded batching; rows are unit norm."""
    out = np.empty((len(token_lists), params.caption_dim))
    for start in range(0, len(token_lists), batch_size):
        chunk = token_lists[start:start + batch_size]
        ids = [params.vocab.encode(toks) for toks in chunk]
        graph = T.Graph()
        pt = _wrap_params(graph, params, requires_grad=False)
        idx, mask = _pack(ids)
        emb, _, _ = _encode_caption_batch(graph, pt, params, idx, mask)
        out[start:start + len(chunk)] = emb.data
    return out


def encode_image(params: GroundedModelParams, features) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape != (params.feature_dim,):
        raise ValueError(
            f"encode_image: expected {params.feature_dim} features, got shape {feats.shape}")
    return encode_images(params, feats[None, :])[0]


def encode_images(params: GroundedModelParams, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.feature_dim:
        raise ValueError(
            f"encode_images: expected [N, {params.feature_dim}], got shape {feats.shape}")
    graph = T.Graph()
    pt = _wrap_params(graph, params, requires_grad=False)
    return _encode_image_batch(graph, pt, feats).data.copy()


def hinge_loss_from_scores(scores: np.ndarray, margin: float) -> float:
    """Batch hinge loss on a [B, B] similarity matrix with matched pairs on
    the diagonal: sum over j != k of max(0, margin - s_jj + s_jk) plus
    max(0, margin - s_jj + s_kj)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"hinge loss needs a square score matrix, got {s.shape}")
    if s.shape[0] < 2:
        raise ValueError("hinge loss needs at least 2 items (no negatives otherwise)")
    d = np.diag(s)
    row = np.maximum(0.0, margin - d[:, None] + s)
    col = np.maximum(0.0, margin - d[None, :] + s)
    off = 1.0 - np.eye(s.shape[0])
    return float((row * off).sum() + (col * off).sum())


def batch_hinge_loss(caption_embs: np.ndarray, image_embs: np.ndarray,
                     margin: float) -> float:
    """Hinge loss over matched unit-norm rows (pair j is row j of both)."""
    c = np.asarray(caption_embs, dtype=np.float64)
    i = np.asarray(image_embs, dtype=np.float64)
    if c.shape != i.shape or c.ndim != 2:
        raise ValueError(f"batch_hinge_loss: shape mismatch {c.shape} vs {i.shape}")
    return hinge_loss_from_scores(c @ i.T, margin)


def _hinge_loss_node(graph, cap, img, margin: float, batch: int):
    s = T.matmul(cap, T.transpose(img))
    neg_diag = T.smul(T.diag_part(s), -1.0)
    row = T.relu(T.sadd(T.add_colvec(s, neg_diag), margin))
    col = T.relu(T.sadd(T.add_bias(s, neg_diag), margin))
    off = graph.constant(1.0 - np.eye(batch))
    return T.add(T.sum_all(T.mul(row, off)), T.sum_all(T.mul(col, off)))


def cyclic_lr(step: int, lr_max: float, lr_min: float, period: int) -> float:
    """Cosine cycle starting at lr_max, reaching lr_min at half period."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if period <= 0:
        raise ValueError("period must be positive")
    phase = (step % period) / period
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(2.0 * math.pi * phase)) / 2.0


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    recall_at: dict[int, float] = field(default_factory=dict)  # caption->image


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    step_lrs: list[float] = field(default_factory=list)


def training_step(params: GroundedModelParams, id_lists: list[list[int]],
                  feats: np.ndarray, margin: float):
    """Forward + backward on one batch; returns (loss, grads by name)."""
    graph = T.Graph()
    pt = _wrap_params(graph, params, requires_grad=True)
    idx, mask = _pack(id_lists)
    cap, _, _ = _encode_caption_batch(graph, pt, params, idx, mask)
    img = _encode_image_batch(graph, pt, feats)
    loss = _hinge_loss_node(graph, cap, img, margin, len(id_lists))
    graph.backward(loss)
    grads = {name: t.grad for name, t in pt.items() if t.grad is not None}
    return float(loss.data), grads


def train(corpus, cfg: TrainConfig, dev=None,
          recall_ks=(1, 5, 10)) -> tuple[GroundedModelParams, TrainLog]:
    """Train the retrieval model; deterministic given cfg.seed.

    ``corpus`` is a PairedCorpus with features attached. ``dev``, when
    given, is a held-out PairedCorpus scored for caption->image recall
    after every epoch.
    """
    cfg.validate()
    if corpus.features is None:
        raise ValueError("corpus has no image features attached")
    missing = sorted({c.image_id for c in corpus.captions
                      if c.image_id not in corpus.features})
    if missing:
        raise ValueError("missing image features for: " + ", ".join(missing))

    rng = np.random.default_rng(cfg.seed)
    params = init_params(corpus.vocab, corpus.feature_dim, cfg, rng)
    wrapped = [corpus.vocab.encode(c.tokens) for c in corpus.captions]
    feats_by_caption = np.stack([corpus.features[c.image_id] for c in corpus.captions])

    n = len(corpus.captions)
    steps_per_epoch = n // cfg.batch_size + (1 if n % cfg.batch_size >= 2 else 0)
    if steps_per_epoch == 0:
        raise ValueError("corpus smaller than one batch of 2")
    period = cfg.cycle_steps if cfg.cycle_steps > 0 else 4 * steps_per_epoch

    logrec = TrainLog()
    state = AdamState()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            if len(sel) < 2:
                continue  # a singleton batch has no negatives
            lr = cyclic_lr(step, cfg.lr_max, cfg.lr_min, period)
            logrec.step_lrs.append(lr)
            loss, grads = training_step(params, [wrapped[i] for i in sel],
                                        feats_by_caption[sel], cfg.margin)
            params.tensors = adam_step(state, params.tensors, grads, lr)
            losses.append(loss / len(sel))
            step += 1
        stats = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)))
        if dev is not None:
            stats.recall_at = {k: recall_at_k(params, dev, k).caption_to_image
                               for k in recall_ks}
        logrec.epochs.append(stats)
        log.info("epoch %d: mean loss %.4f", epoch, stats.mean_loss)
    return params, logrec


@dataclass
class RecallResult:
    caption_to_image: float
    image_to_caption: float


def recall_from_embeddings(query: np.ndarray, candidates: np.ndarray,
                           truth: list[list[int]], k: int) -> float:
    """Fraction of queries whose best true candidate ranks in the top k by
    dot-product score; ties break toward the lower candidate index."""
    if len(query) == 0 or len(candidates) == 0:
        raise ValueError("empty evaluation set")
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds {len(candidates)} candidates")
    hits = 0
    scores = query @ candidates.T
    for qi in range(len(query)):
        order = np.argsort(-scores[qi], kind="stable")
        rank = np.empty(len(candidates), dtype=int)
        rank[order] = np.arange(len(candidates))
        if min(rank[t] for t in truth[qi]) < k:
            hits += 1
    return hits / len(query)


def recall_at_k(params: GroundedModelParams, corpus, k: int) -> RecallResult:
    """Recall@k in both retrieval directions over a paired corpus."""
    if not corpus.captions:
        raise ValueError("empty evaluation set")
    image_ids = list(dict.fromkeys(c.image_id for c in corpus.captions))
    img_pos = {iid: i for i, iid in enumerate(image_ids)}
    cap_embs = encode_captions(params, [c.tokens for c in corpus.captions])
    img_embs = encode_images(params, np.stack([corpus.features[i] for i in image_ids]))
    c2i_truth = [[img_pos[c.image_id]] for c in corpus.captions]
    i2c_truth = [[ci for ci, c in enumerate(corpus.captions) if c.image_id == iid]
                 for iid in image_ids]
    return RecallResult(
        caption_to_image=recall_from_embeddings(cap_embs, img_embs, c2i_truth, k),
        image_to_caption=recall_from_embeddings(img_embs, cap_embs, i2c_truth, k),
    )


def save_checkpoint(params: GroundedModelParams, path) -> None:
    """Binary container: magic 'VGEK', u32 version, u32 tensor count, then per
    tensor u32 name length, utf-8 name, u32 rank, u64 dims, little-endian
    float64 data. Round-trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", _CHECKPOINT_VERSION, len(params.tensors)))
        for name in sorted(params.tensors):
            arr = params.tensors[name]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, vocab: Vocabulary) -> GroundedModelParams:
    with open(path, "rb") as f:
        if f.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, count = struct.unpack("<II", f.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
            data = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype="<f8")
            tensors[name] = data.reshape(shape).astype(np.float64)
    try:
        emb = tensors["emb"]
        params = GroundedModelParams(
            vocab=vocab,
            emb_dim=emb.shape[1],
            lstm1_units=tensors["l1f.wh"].shape[0],
            lstm2_units=tensors["l2f.wh"].shape[0],
            attn_units=tensors["attn.b"].shape[0],
            feature_dim=tensors["img.w"].shape[0],
            tensors=tensors,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint is missing tensor {exc}") from None
    if emb.shape[0] != len(vocab):
        raise ValueError(
            f"{path}: checkpoint vocabulary size {emb.shape[0]} does not match "
            f"the supplied vocabulary ({len(vocab)})")
    params.validate()
    return params
