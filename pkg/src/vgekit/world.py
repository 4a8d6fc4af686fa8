"""Controlled grounded-world generator.

Builds a small caption/image corpus with known structure so the pipeline's
central comparisons are testable without external data: textual structure
lives in topic co-occurrence, visual structure in shared appearance
prototypes, and "visual synonyms" are word pairs that never co-occur in
text yet share an appearance prototype. Word-pair ratings and priming
reaction times are generated from those two similarity channels with
configurable weights, so setting the visual weight to zero yields a null
world in which grounded embeddings carry no extra predictive signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Caption, ImageFeatureStore, PairedCorpus
from .priming import (CONDITIONS, SOA_LONG, SOA_SHORT, TASK_LDT, TASK_NAMING,
                      Lexicon, RawPrimingTrial, lexical_covariates)
from .simeval import SimilarityDataset

_FUNCTION_WORD_POOL = ["the", "a", "of", "on", "with", "and", "near", "some",
                       "by", "under", "over", "into", "from", "at", "about",
                       "beside"]

# Log-RT generator constants (covariate effects and task/SOA shifts; the
# task/SOA main effects are removed again by per-cell standardization).
_RT_BASE = 6.35
_RT_LENGTH = 0.012
_RT_LOG_FREQ = -0.025
_RT_DIVERSITY = -0.0008
_RT_NEIGHBORHOOD = -0.006
_RT_NAMING = -0.12
_RT_LONG_SOA = 0.04


@dataclass
class WorldSpec:
    n_concepts: int = 24
    n_topics: int = 4
    n_synonym_pairs: int = 6
    n_function_words: int = 8
    feature_dim: int = 48
    n_images: int = 50
    captions_per_image: int = 5
    concepts_per_image: tuple[int, int] = (2, 3)
    caption_len: tuple[int, int] = (5, 9)
    feature_noise_sd: float = 0.05
    rating_noise_sd: float = 0.5
    text_weight: float = 1.0
    visual_weight: float = 1.0
    rt_text_effect: float = 0.06
    rt_visual_effect: float = 0.06
    rt_noise_sd: float = 0.12
    n_sim_pairs: int = 90
    n_targets: int = 20
    n_subjects: int = 32
    error_rate: float = 0.02
    missing_rate: float = 0.01
    seed: int = 0

    def validate(self):
        topic_size = self.n_concepts // self.n_topics
        if self.n_topics < 2:
            raise ValueError("infeasible world: need at least 2 topics")
        if topic_size < 3:
            raise ValueError("infeasible world: topics need at least 3 concepts "
                             "(strong and weak primes must exist)")
        if self.n_synonym_pairs * 2 > self.n_concepts:
            raise ValueError("infeasible world: too many synonym pairs")
        if self.n_images < self.n_concepts:
            raise ValueError("infeasible world: more concept words than images "
                             "can cover")
        if self.concepts_per_image[0] < 1 or \
                self.concepts_per_image[1] > 1 + topic_size // 2:
            raise ValueError("infeasible world: concepts_per_image out of range "
                             "(images draw companions from half a topic)")
        if self.caption_len[0] < self.concepts_per_image[1] + 1:
            raise ValueError("infeasible world: captions too short to hold the "
                             "image concepts plus a function word")
        if self.caption_len[0] > self.caption_len[1]:
            raise ValueError("infeasible world: bad caption length range")
        if not 2 <= self.n_function_words <= len(_FUNCTION_WORD_POOL):
            raise ValueError("infeasible world: n_function_words out of range")
        if self.n_targets > self.n_concepts:
            raise ValueError("infeasible world: more targets than concepts")
        if self.feature_dim < 8 or self.feature_dim > 2048:
            raise ValueError("infeasible world: feature_dim out of range")
        for name in ("text_weight", "visual_weight", "rt_text_effect",
                     "rt_visual_effect"):
            v = getattr(self, name)
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"infeasible world: {name} must be >= 0")
        if self.text_weight + self.visual_weight <= 0:
            raise ValueError("infeasible world: rating weights sum to zero")
        if not 0 <= self.error_rate < 0.5 or not 0 <= self.missing_rate < 0.5:
            raise ValueError("infeasible world: error/missing rates out of range")
        if self.n_subjects < 1:
            raise ValueError("infeasible world: need at least one subject")


@dataclass
class WorldTruth:
    """Generator-side ground truth, exposed for calibration tests.

    The text channel is distributional: the cosine between the words'
    damped caption co-occurrence profiles, with the pair's own mutual
    entries zeroed. This is the second-order structure a text model
    measures, which keeps the null calibration honest (a channel defined
    by first-order co-occurrence is anti-correlated with what skip-gram
    cosines report). The visual channel is appearance-prototype similarity.
    """

    concepts: list[str]
    topics: dict[str, int]
    prototypes: dict[str, np.ndarray]
    synonym_pairs: list[tuple[str, str]]
    text_weight: float
    visual_weight: float
    cooccurrence: dict[frozenset, int] = field(default_factory=dict)
    _profiles: dict[str, np.ndarray] = field(default_factory=dict)
    _column_of: dict[str, int] = field(default_factory=dict)

    def set_cooccurrence(self, counts: dict[frozenset, int],
                         vocabulary: list[str]) -> None:
        self.cooccurrence = counts
        self._column_of = {w: i for i, w in enumerate(vocabulary)}
        self._profiles = {}
        for w in self.concepts:
            row = np.zeros(len(vocabulary))
            for c, j in self._column_of.items():
                if c != w:
                    row[j] = math.log1p(counts.get(frozenset((w, c)), 0))
            self._profiles[w] = row

    def text_sim(self, w1: str, w2: str) -> float:
        if w1 == w2:
            return 0.0
        p1 = self._profiles[w1].copy()
        p2 = self._profiles[w2].copy()
        p1[self._column_of[w2]] = 0.0
        p2[self._column_of[w1]] = 0.0
        n1 = np.linalg.norm(p1)
        n2 = np.linalg.norm(p2)
        if n1 == 0.0 or n2 == 0.0:
            return 0.0
        return max(0.0, float(p1 @ p2) / (n1 * n2))

    def visual_sim(self, w1: str, w2: str) -> float:
        cos = float(self.prototypes[w1] @ self.prototypes[w2])
        return max(0.0, cos)


@dataclass
class World:
    corpus: PairedCorpus
    sim_dataset: SimilarityDataset
    trials: list[RawPrimingTrial]
    lexicon: Lexicon
    truth: WorldTruth


def _word_forms(rng, n: int, taken: set[str]) -> list[str]:
    """Random forms, a third of them one edit away from an earlier form so
    the orthographic-neighborhood covariate varies."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    out: list[str] = []
    while len(out) < n:
        if out and len(out) % 3 == 2:
            base = out[int(rng.integers(len(out)))]
            i = int(rng.integers(len(base)))
            word = base[:i] + letters[rng.integers(26)] + base[i + 1:]
        else:
            length = int(rng.integers(3, 9))
            word = "".join(letters[rng.integers(26)] for _ in range(length))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def generate_world(spec: WorldSpec) -> World:
    """Deterministic world generation.

    Four independent RNG streams are spawned from the seed (corpus, design,
    ratings, reaction times), so changing the rating/RT weights leaves the
    corpus, features, and trial structure byte-identical; only the human
    measurements move.
    """
    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(4)
    corpus_rng = np.random.default_rng(seeds[0])
    design_rng = np.random.default_rng(seeds[1])
    rating_rng = np.random.default_rng(seeds[2])
    rt_rng = np.random.default_rng(seeds[3])

    function_words = _FUNCTION_WORD_POOL[:spec.n_function_words]
    concepts = _word_forms(corpus_rng, spec.n_concepts, set(function_words))
    topics = {w: i % spec.n_topics for i, w in enumerate(concepts)}
    by_topic: dict[int, list[str]] = {}
    for w in concepts:
        by_topic.setdefault(topics[w], []).append(w)
    # Topics are bipartite: scenes combine words from opposite halves, so
    # direct co-occurrence (shared images) and distributional similarity
    # (shared contexts, i.e. same half) are distinct relations. Without the
    # split they coincide and the control cannot isolate the text channel.
    half_of: dict[str, int] = {}
    for words in by_topic.values():
        cut = (len(words) + 1) // 2
        for p, w in enumerate(words):
            half_of[w] = 0 if p < cut else 1

    # Visual synonym pairs: same appearance prototype, different topics,
    # each concept used at most once.
    shuffled = list(concepts)
    corpus_rng.shuffle(shuffled)
    synonym_pairs: list[tuple[str, str]] = []
    used: set[str] = set()
    for a in shuffled:
        if len(synonym_pairs) == spec.n_synonym_pairs:
            break
        if a in used:
            continue
        partner = next((b for b in shuffled
                        if b not in used and b != a and topics[b] != topics[a]),
                       None)
        if partner is None:
            continue
        used.update((a, partner))
        synonym_pairs.append((a, partner))
    if len(synonym_pairs) < spec.n_synonym_pairs:
        raise ValueError("infeasible world: could not place all synonym pairs")

    # One orthonormal appearance prototype per visual class (synonym pairs
    # share theirs): orthogonality keeps distinct appearances from
    # interfering in the summed image features.
    n_classes = spec.n_concepts - spec.n_synonym_pairs
    basis, _ = np.linalg.qr(corpus_rng.normal(size=(spec.feature_dim, n_classes)))
    in_pair = {w for pair in synonym_pairs for w in pair}
    prototypes: dict[str, np.ndarray] = {}
    col = 0
    for w in concepts:
        if w in prototypes or w in in_pair:
            continue
        prototypes[w] = basis[:, col].copy()
        col += 1
    for a, b in synonym_pairs:
        prototypes[a] = basis[:, col].copy()
        prototypes[b] = basis[:, col].copy()
        col += 1

    # Images: every concept anchors at least one image; companions come from
    # the anchor's topic, so cross-topic words never share a caption.
    captions: list[Caption] = []
    features: dict[str, np.ndarray] = {}
    for i in range(spec.n_images):
        anchor = concepts[i % spec.n_concepts]
        topic_words = by_topic[topics[anchor]]
        k = int(corpus_rng.integers(spec.concepts_per_image[0],
                                    spec.concepts_per_image[1] + 1))
        others = [w for w in topic_words
                  if w != anchor and half_of[w] != half_of[anchor]]
        corpus_rng.shuffle(others)
        image_concepts = [anchor] + others[:k - 1]
        iid = f"img{i:04d}"
        feat = sum(prototypes[w] for w in image_concepts)
        feat = feat + corpus_rng.normal(0.0, spec.feature_noise_sd,
                                        size=spec.feature_dim)
        features[iid] = feat
        for _ in range(spec.captions_per_image):
            length = int(corpus_rng.integers(spec.caption_len[0],
                                             spec.caption_len[1] + 1))
            fillers = [function_words[corpus_rng.integers(len(function_words))]
                       for _ in range(max(1, length - len(image_concepts)))]
            tokens = image_concepts + fillers
            corpus_rng.shuffle(tokens)
            captions.append(Caption(iid, tokens))
    corpus = PairedCorpus(captions, ImageFeatureStore(spec.feature_dim, features))

    truth = WorldTruth(concepts=concepts, topics=topics, prototypes=prototypes,
                       synonym_pairs=synonym_pairs,
                       text_weight=spec.text_weight,
                       visual_weight=spec.visual_weight)
    # Profiles over concept contexts only; the function words co-occur with
    # everything and would just add a shared floor to every pair.
    truth.set_cooccurrence(_cooccurrence_counts(corpus), concepts)

    sim_dataset = _build_sim_dataset(spec, truth, design_rng, rating_rng)
    lexicon = _build_lexicon(corpus)
    trials = _build_trials(spec, truth, corpus, lexicon, design_rng, rt_rng)
    return World(corpus=corpus, sim_dataset=sim_dataset, trials=trials,
                 lexicon=lexicon, truth=truth)


def _rating(spec: WorldSpec, truth: WorldTruth, w1: str, w2: str, rng) -> float:
    weight_sum = spec.text_weight + spec.visual_weight
    raw = (spec.text_weight * truth.text_sim(w1, w2)
           + spec.visual_weight * truth.visual_sim(w1, w2)) / weight_sum
    return 10.0 * raw + rng.normal(0.0, spec.rating_noise_sd)


def _build_sim_dataset(spec, truth, design_rng, rating_rng) -> SimilarityDataset:
    pairs: list[tuple[str, str]] = list(truth.synonym_pairs)
    seen = {frozenset(p) for p in pairs}

    def sample(candidates, count):
        candidates = [c for c in candidates if frozenset(c) not in seen]
        order = design_rng.permutation(len(candidates))
        for idx in order[:count]:
            pair = candidates[idx]
            seen.add(frozenset(pair))
            pairs.append(pair)

    within = [(a, b) for t, words in sorted(truth_topics_items(truth))
              for i, a in enumerate(words) for b in words[i + 1:]]
    across = [(a, b) for i, a in enumerate(truth.concepts)
              for b in truth.concepts[i + 1:]
              if truth.topics[a] != truth.topics[b]]
    # One third same-topic, the rest cross-topic: the cross pairs anchor the
    # low end of both channels and keep the analysis grid well conditioned.
    remaining = max(0, spec.n_sim_pairs - len(pairs))
    sample(within, remaining // 3)
    sample(across, max(0, spec.n_sim_pairs - len(pairs)))

    rated = [(w1, w2, _rating(spec, truth, w1, w2, rating_rng))
             for w1, w2 in pairs]
    ds = SimilarityDataset(name=f"synthetic_world_{spec.seed}", pairs=rated,
                           kind="similarity")
    ds.validate()
    return ds


def truth_topics_items(truth: WorldTruth):
    by_topic: dict[int, list[str]] = {}
    for w in truth.concepts:
        by_topic.setdefault(truth.topics[w], []).append(w)
    return by_topic.items()


def _build_lexicon(corpus: PairedCorpus) -> Lexicon:
    doc_counts: dict[str, int] = {}
    for c in corpus.captions:
        for w in set(c.tokens):
            doc_counts[w] = doc_counts.get(w, 0) + 1
    entries = {w: (corpus.vocab.counts[w], doc_counts[w])
               for w in sorted(doc_counts)}
    return Lexicon(entries=entries,
                   total_tokens=corpus.token_count(),
                   total_documents=len(corpus.captions))


def _cooccurrence_counts(corpus: PairedCorpus) -> dict[frozenset, int]:
    counts: dict[frozenset, int] = {}
    for c in corpus.captions:
        toks = sorted(set(c.tokens))
        for i, a in enumerate(toks):
            for b in toks[i + 1:]:
                key = frozenset((a, b))
                counts[key] = counts.get(key, 0) + 1
    return counts


def _build_trials(spec, truth, corpus, lexicon, design_rng, rt_rng):
    cooc = truth.cooccurrence
    partner_of = {}
    for a, b in truth.synonym_pairs:
        partner_of[a] = b
        partner_of[b] = a

    paired = [w for w in truth.concepts if w in partner_of]
    unpaired = [w for w in truth.concepts if w not in partner_of]
    design_rng.shuffle(paired)
    design_rng.shuffle(unpaired)
    targets = (paired + unpaired)[:spec.n_targets]

    covariates = lexical_covariates(targets, lexicon)

    trials: list[RawPrimingTrial] = []
    for target in targets:
        same_topic = [w for w in truth.concepts
                      if w != target and truth.topics[w] == truth.topics[target]]
        same_topic.sort(key=lambda w: (-truth.text_sim(target, w), w))
        strong, weak = same_topic[0], same_topic[1]
        cross = [w for w in truth.concepts
                 if truth.topics[w] != truth.topics[target]
                 and w != partner_of.get(target)]
        design_rng.shuffle(cross)
        if target in partner_of:
            unrelated1 = partner_of[target]  # the visual synonym: no text link
            unrelated2 = cross[0]
        else:
            unrelated1, unrelated2 = cross[0], cross[1]
        primes = {"strong": strong, "weak": weak,
                  "unrelated1": unrelated1, "unrelated2": unrelated2}

        cov = covariates[target]
        for condition in CONDITIONS:
            prime = primes[condition]
            t_sim = truth.text_sim(prime, target)
            v_sim = truth.visual_sim(prime, target)
            for soa in (SOA_SHORT, SOA_LONG):
                for task in (TASK_LDT, TASK_NAMING):
                    mu = (_RT_BASE
                          + _RT_LENGTH * cov.length
                          + _RT_LOG_FREQ * cov.log_frequency
                          + _RT_DIVERSITY * cov.contextual_diversity
                          + _RT_NEIGHBORHOOD * cov.orth_neighborhood
                          - spec.rt_text_effect * spec.text_weight * t_sim
                          - spec.rt_visual_effect * spec.visual_weight * v_sim
                          + (_RT_NAMING if task == TASK_NAMING else 0.0)
                          + (_RT_LONG_SOA if soa == SOA_LONG else 0.0))
                    for subject in range(1, spec.n_subjects + 1):
                        log_rt = rt_rng.normal(mu, spec.rt_noise_sd)
                        is_error = rt_rng.random() < spec.error_rate
                        is_missing = rt_rng.random() < spec.missing_rate
                        trials.append(RawPrimingTrial(
                            subject=f"s{subject:02d}", target=target,
                            prime=prime, condition=condition, soa=soa,
                            task=task,
                            rt=None if is_missing else math.exp(log_rt),
                            error=is_error, missing=is_missing))
    return trials
