"""Text-only embedding trainers matched to the grounded model's corpus:
skip-gram with negative sampling, its subword variant, and GloVe.

All trainers are single-threaded and bit-deterministic given their seed;
output vectors are L2 normalized.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .table import EmbeddingTable


@dataclass
class SgnsConfig:
    dim: int = 300
    window: int = 10
    negatives: int = 10
    epochs: int = 5
    lr: float = 0.025
    subsample: float = 1e-4
    min_count: int = 1
    seed: int = 0

    def validate(self):
        if self.dim <= 0 or self.window <= 0 or self.negatives <= 0:
            raise ValueError("dim, window, and negatives must be positive")


@dataclass
class FastTextConfig(SgnsConfig):
    min_ngram: int = 3
    max_ngram: int = 6
    buckets: int = 1 << 18


@dataclass
class GloveConfig:
    dim: int = 300
    window: int = 10
    x_max: float = 100.0
    alpha: float = 0.75
    epochs: int = 25
    lr: float = 0.05
    seed: int = 0

    def validate(self):
        if self.dim <= 0 or self.x_max <= 0:
            raise ValueError("dim and x_max must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")


def _sentences(corpus) -> list[list[str]]:
    return [c.tokens for c in corpus.captions]


def _build_vocab(sentences, min_count):
    counts = Counter(tok for sent in sentences for tok in sent)
    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    if not kept:
        raise ValueError("empty vocabulary")
    index = {w: i for i, w in enumerate(kept)}
    freqs = np.array([counts[w] for w in kept], dtype=np.float64)
    return kept, index, freqs


def _noise_cdf(freqs: np.ndarray) -> np.ndarray:
    weights = freqs ** 0.75
    return np.cumsum(weights / weights.sum())


def _keep_probs(freqs: np.ndarray, threshold: float) -> np.ndarray:
    if threshold <= 0:
        return np.ones_like(freqs)
    rel = freqs / freqs.sum()
    return np.minimum(1.0, np.sqrt(threshold / rel) + threshold / rel)


def draw_negatives(rng, cdf: np.ndarray, exclude: int, k: int) -> list[int]:
    """Sample from the unigram^0.75 distribution, skipping the positive."""
    out = []
    for _ in range(k):
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        if idx != exclude:
            out.append(idx)
    return out


def train_sgns(corpus, cfg: SgnsConfig) -> EmbeddingTable:
    """Skip-gram with negative sampling over the caption corpus.

    Follows the original training scheme: per-occurrence window shrinking,
    frequency subsampling, linearly decaying learning rate, negatives from
    the unigram^0.75 distribution. Center vectors are the output.
    """
    cfg.validate()
    sentences = _sentences(corpus)
    words, index, freqs = _build_vocab(sentences, cfg.min_count)
    rng = np.random.default_rng(cfg.seed)
    vecs = (rng.random((len(words), cfg.dim)) - 0.5) / cfg.dim
    ctx = np.zeros_like(vecs)
    cdf = _noise_cdf(freqs)
    keep = _keep_probs(freqs, cfg.subsample)
    sentences_ids = [[index[t] for t in sent if t in index] for sent in sentences]
    total = sum(len(s) for s in sentences_ids)

    processed = 0
    budget = cfg.epochs * total + 1
    for _ in range(cfg.epochs):
        for ids in sentences_ids:
            kept = [i for i in ids if rng.random() < keep[i]]
            n = len(kept)
            for pos, center in enumerate(kept):
                lr_t = max(cfg.lr * 1e-4, cfg.lr * (1.0 - processed / budget))
                processed += 1
                span = int(rng.integers(1, cfg.window + 1))
                h = vecs[center]
                for off in range(-span, span + 1):
                    j = pos + off
                    if off == 0 or j < 0 or j >= n:
                        continue
                    context = kept[j]
                    targets = [context] + draw_negatives(rng, cdf, context,
                                                         cfg.negatives)
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    tg = np.array(targets)
                    z = ctx[tg]  # snapshot before the update
                    grad = (labels - expit(z @ h)) * lr_t
                    dh = grad @ z
                    np.add.at(ctx, tg, grad[:, None] * h)
                    h += dh  # in-place on the center row
    return EmbeddingTable.build(
        cfg.dim, {w: vecs[i].copy() for i, w in enumerate(words)},
        metadata={"method": "sgns"})


def char_ngrams(word: str, min_n: int, max_n: int) -> list[str]:
    """Character n-grams of the boundary-wrapped word, e.g. '<cat>' at n=3
    gives ['<ca', 'cat', 'at>']."""
    wrapped = f"<{word}>"
    out = []
    for n in range(min_n, max_n + 1):
        for i in range(len(wrapped) - n + 1):
            out.append(wrapped[i:i + n])
    return out


def ngram_hash(ngram: str) -> int:
    """FNV-1a over utf-8 bytes (the fastText convention)."""
    h = 2166136261
    for byte in ngram.encode("utf-8"):
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h


def train_fasttext(corpus, cfg: FastTextConfig) -> EmbeddingTable:
    """Subword skip-gram: a word is the sum of its hashed character n-gram
    vectors plus a whole-word vector."""
    cfg.validate()
    sentences = _sentences(corpus)
    words, index, freqs = _build_vocab(sentences, cfg.min_count)
    v = len(words)
    rng = np.random.default_rng(cfg.seed)
    # Input rows: one per word, then cfg.buckets hashed n-gram rows.
    vecs = (rng.random((v + cfg.buckets, cfg.dim)) - 0.5) / cfg.dim
    ctx = np.zeros((v, cfg.dim))
    subword_rows = [
        np.array([i] + [v + ngram_hash(g) % cfg.buckets
                        for g in char_ngrams(w, cfg.min_ngram, cfg.max_ngram)],
                 dtype=np.intp)
        for i, w in enumerate(words)]
    cdf = _noise_cdf(freqs)
    keep = _keep_probs(freqs, cfg.subsample)
    sentences_ids = [[index[t] for t in sent if t in index] for sent in sentences]
    total = sum(len(s) for s in sentences_ids)

    processed = 0
    budget = cfg.epochs * total + 1
    for _ in range(cfg.epochs):
        for ids in sentences_ids:
            kept = [i for i in ids if rng.random() < keep[i]]
            n = len(kept)
            for pos, center in enumerate(kept):
                lr_t = max(cfg.lr * 1e-4, cfg.lr * (1.0 - processed / budget))
                processed += 1
                span = int(rng.integers(1, cfg.window + 1))
                rows = subword_rows[center]
                h = vecs[rows].sum(axis=0)
                for off in range(-span, span + 1):
                    j = pos + off
                    if off == 0 or j < 0 or j >= n:
                        continue
                    context = kept[j]
                    targets = [context] + draw_negatives(rng, cdf, context,
                                                         cfg.negatives)
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    tg = np.array(targets)
                    z = ctx[tg]
                    grad = (labels - expit(z @ h)) * lr_t
                    dh = grad @ z
                    np.add.at(ctx, tg, grad[:, None] * h)
                    np.add.at(vecs, rows, dh)
                    h = vecs[rows].sum(axis=0)
    raw = {w: vecs[subword_rows[i]].sum(axis=0) for i, w in enumerate(words)}
    return EmbeddingTable.build(cfg.dim, raw, metadata={"method": "fasttext"})


@dataclass
class CooccurrenceCounts:
    """Symmetric sparse co-occurrence with 1/distance weighting."""

    words: list[str]
    counts: dict[tuple[int, int], float]

    def validate(self):
        for (i, j), x in self.counts.items():
            if x <= 0 or not np.isfinite(x):
                raise ValueError(f"non-positive count for pair ({i}, {j})")
            if self.counts.get((j, i)) != x:
                raise ValueError(f"asymmetric counts for pair ({i}, {j})")

    def get(self, w1: str, w2: str) -> float:
        idx = {w: i for i, w in enumerate(self.words)}
        return self.counts.get((idx[w1], idx[w2]), 0.0)


def build_cooccurrence(corpus, window: int) -> CooccurrenceCounts:
    if window < 1:
        raise ValueError("window must be >= 1")
    sentences = _sentences(corpus)
    words = sorted({t for sent in sentences for t in sent})
    index = {w: i for i, w in enumerate(words)}
    counts: dict[tuple[int, int], float] = {}
    for sent in sentences:
        ids = [index[t] for t in sent]
        for i, a in enumerate(ids):
            for d in range(1, window + 1):
                if i + d >= len(ids):
                    break
                b = ids[i + d]
                w = 1.0 / d
                counts[(a, b)] = counts.get((a, b), 0.0) + w
                counts[(b, a)] = counts.get((b, a), 0.0) + w
    return CooccurrenceCounts(words, counts)


def _glove_run(counts: CooccurrenceCounts, cfg: GloveConfig):
    cfg.validate()
    if not counts.counts:
        raise ValueError("empty co-occurrence counts")
    counts.validate()
    v = len(counts.words)
    pairs = sorted(counts.counts.items())
    xs = np.array([x for _, x in pairs])
    logx = np.log(xs)
    fw = np.minimum(1.0, (xs / cfg.x_max) ** cfg.alpha)

    rng = np.random.default_rng(cfg.seed)
    w = (rng.random((v, cfg.dim)) - 0.5) / (cfg.dim + 1)
    wc = (rng.random((v, cfg.dim)) - 0.5) / (cfg.dim + 1)
    b = (rng.random(v) - 0.5) / (cfg.dim + 1)
    bc = (rng.random(v) - 0.5) / (cfg.dim + 1)
    # AdaGrad accumulators start at 1 so early steps are bounded by lr.
    aw, awc = np.ones_like(w), np.ones_like(wc)
    ab, abc = np.ones_like(b), np.ones_like(bc)

    epoch_costs = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        cost = 0.0
        for p in order:
            (i, j), _ = pairs[p]
            diff = w[i] @ wc[j] + b[i] + bc[j] - logx[p]
            fdiff = fw[p] * diff
            cost += 0.5 * fdiff * diff
            gw = fdiff * wc[j]
            gwc = fdiff * w[i]
            w[i] -= cfg.lr * gw / np.sqrt(aw[i])
            wc[j] -= cfg.lr * gwc / np.sqrt(awc[j])
            aw[i] += gw * gw
            awc[j] += gwc * gwc
            b[i] -= cfg.lr * fdiff / np.sqrt(ab[i])
            bc[j] -= cfg.lr * fdiff / np.sqrt(abc[j])
            ab[i] += fdiff * fdiff
            abc[j] += fdiff * fdiff
        epoch_costs.append(cost / len(pairs))
    raw = {word: w[i] + wc[i] for i, word in enumerate(counts.words)}
    return raw, epoch_costs


def glove_epoch_costs(counts: CooccurrenceCounts, cfg: GloveConfig) -> list[float]:
    """Mean weighted squared error per epoch (diagnostics)."""
    _, costs = _glove_run(counts, cfg)
    return costs


def train_glove(counts: CooccurrenceCounts, cfg: GloveConfig) -> EmbeddingTable:
    """Weighted least squares on log co-occurrence counts via AdaGrad;
    the output vector for a word is w + w-tilde, L2 normalized."""
    raw, costs = _glove_run(counts, cfg)
    return EmbeddingTable.build(
        cfg.dim, raw,
        metadata={"method": "glove", "final_cost": f"{costs[-1]:.9g}"})


def glove_weight(x: float, x_max: float, alpha: float) -> float:
    """The GloVe weighting function f(x) = min(1, (x / x_max) ** alpha)."""
    return min(1.0, (x / x_max) ** alpha)
