"""Embedding tables: the unit-norm word-vector currency of all evaluations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    """Word type -> unit-norm float64 vector of a fixed dimension."""

    dimension: int
    vectors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    @classmethod
    def build(cls, dimension: int, raw: dict[str, np.ndarray],
              metadata: dict[str, str] | None = None,
              on_zero: str = "error") -> "EmbeddingTable":
        """Normalize raw vectors into a table.

        ``on_zero`` controls zero-norm entries: "error" raises, "skip" drops
        them with a warning (pathological words in aggregation pipelines).
        """
        vectors: dict[str, np.ndarray] = {}
        skipped = []
        for word, vec in raw.items():
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (dimension,):
                raise ValueError(
                    f"vector for {word!r} has shape {v.shape}, expected ({dimension},)")
            norm = float(np.linalg.norm(v))
            if norm == 0.0:
                if on_zero == "skip":
                    skipped.append(word)
                    continue
                raise ValueError(f"zero-norm vector for {word!r}")
            vectors[word] = v / norm
        meta = dict(metadata or {})
        if skipped:
            log.warning("dropped %d zero-norm vectors: %s", len(skipped),
                        ", ".join(skipped[:10]))
            meta["zero_norm_dropped"] = ",".join(skipped)
        return cls(dimension, vectors, meta)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[word]

    @property
    def words(self) -> list[str]:
        return list(self.vectors)

    def cosine(self, w1: str, w2: str) -> float:
        """Cosine similarity; vectors are unit norm so this is a dot product."""
        return float(self.vectors[w1] @ self.vectors[w2])
