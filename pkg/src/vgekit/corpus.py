"""Paired caption/image-feature corpora."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .encoder import Vocabulary


@dataclass
class Caption:
    image_id: str
    tokens: list[str]


@dataclass
class ImageFeatureStore:
    dim: int
    features: dict[str, np.ndarray]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.features

    def __getitem__(self, image_id: str) -> np.ndarray:
        return self.features[image_id]


class PairedCorpus:
    """Caption token sequences keyed by image id plus an image feature store.

    The vocabulary (with counts, plus the sentence markers) is built from
    the captions; features may be attached after loading.
    """

    def __init__(self, captions: list[Caption],
                 feature_store: ImageFeatureStore | None = None):
        if not captions:
            raise ValueError("corpus has no captions")
        self.captions = captions
        counts = Counter(tok for c in captions for tok in c.tokens)
        self.vocab = Vocabulary(counts.keys(), counts)
        self._store = feature_store

    @property
    def features(self) -> dict[str, np.ndarray] | None:
        return self._store.features if self._store is not None else None

    @property
    def feature_dim(self) -> int | None:
        return self._store.dim if self._store is not None else None

    @property
    def image_ids(self) -> list[str]:
        return list(dict.fromkeys(c.image_id for c in self.captions))

    def with_features(self, store: ImageFeatureStore) -> "PairedCorpus":
        return PairedCorpus(self.captions, store)

    def token_count(self) -> int:
        return sum(len(c.tokens) for c in self.captions)

    def type_count(self) -> int:
        return len(self.vocab) - 2  # excluding the sentence markers
