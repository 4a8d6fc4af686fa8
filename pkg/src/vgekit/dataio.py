"""File formats and run configuration.

Text formats throughout (inspectable); the model checkpoint in
``encoder`` is the single binary format. Loaders reject malformed input
rather than repairing it, with one documented exception: duplicate words
in a vector file keep the first occurrence with a warning, matching how
public pretrained vector files are usually consumed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import Caption, ImageFeatureStore, PairedCorpus
from .encoder import TrainConfig, Vocabulary
from .priming import Lexicon, PrimingConfig, RawPrimingTrial, SOAS, TASKS, CONDITIONS
from .simeval import EvalConfig, SimilarityDataset
from .table import EmbeddingTable
from .textmodels import FastTextConfig, GloveConfig, SgnsConfig
from .world import WorldSpec

log = logging.getLogger(__name__)

TRAILING_PUNCT = ".!?;"


class DataError(ValueError):
    """Malformed input file."""


def load_corpus(path) -> PairedCorpus:
    """Read caption TSV lines ``image_id<TAB>space-separated tokens``.

    Normalization: lowercase everything and strip one trailing punctuation
    mark (``.!?;``) from the final token. Sentence markers are added at
    model input time, not stored.
    """
    captions = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise DataError(f"{path}:{lineno}: expected 'image_id<TAB>tokens'")
            tokens = [t.lower() for t in parts[1].split()]
            if tokens and len(tokens[-1]) and tokens[-1][-1] in TRAILING_PUNCT:
                tokens[-1] = tokens[-1][:-1]
                if not tokens[-1]:
                    tokens.pop()
            if not tokens:
                raise DataError(f"{path}:{lineno}: empty caption")
            captions.append(Caption(parts[0], tokens))
    if not captions:
        raise DataError(f"{path}: no captions")
    return PairedCorpus(captions)


def save_corpus(corpus: PairedCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in corpus.captions:
            f.write(f"{c.image_id}\t{' '.join(c.tokens)}\n")


def load_image_features(path) -> ImageFeatureStore:
    """Read ``#dim=D`` then ``image_id<TAB>D space-separated decimals`` rows."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("#dim="):
            raise DataError(f"{path}: missing '#dim=D' header")
        try:
            dim = int(header[5:])
        except ValueError:
            raise DataError(f"{path}: bad dimension in header {header!r}") from None
        feats: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'image_id<TAB>values'")
            iid = parts[0]
            if iid in feats:
                raise DataError(f"{path}:{lineno}: duplicate image id {iid!r}")
            values = parts[1].split()
            if len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: image {iid!r} has {len(values)} values, "
                    f"expected {dim}")
            try:
                feats[iid] = np.array([float(v) for v in values])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    return ImageFeatureStore(dim, feats)


def save_image_features(store: ImageFeatureStore, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#dim={store.dim}\n")
        for iid, vec in store.features.items():
            f.write(iid + "\t" + " ".join(f"{v:.9g}" for v in vec) + "\n")


def format_vectors(table: EmbeddingTable) -> str:
    """Word-vector text format: header ``V D`` then ``word v1 ... vD`` rows."""
    lines = [f"{len(table.vectors)} {table.dimension}"]
    for word, vec in table.vectors.items():
        lines.append(word + " " + " ".join(f"{v:.9g}" for v in vec))
    return "\n".join(lines) + "\n"


def save_vectors(table: EmbeddingTable, path) -> None:
    Path(path).write_text(format_vectors(table), encoding="utf-8")


def load_vectors(path, expect_dim: int | None = None) -> EmbeddingTable:
    """Load a vector file; rows are L2-normalized on load."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty vector file")
    head = lines[0].split()
    if len(head) != 2:
        raise DataError(f"{path}: header must be 'V D'")
    try:
        count, dim = int(head[0]), int(head[1])
    except ValueError:
        raise DataError(f"{path}: header must be 'V D'") from None
    if expect_dim is not None and dim != expect_dim:
        raise DataError(f"{path}: dimension {dim} does not match expected {expect_dim}")
    body = [ln for ln in lines[1:] if ln]
    if len(body) != count:
        raise DataError(f"{path}: header promises {count} rows, found {len(body)}")
    raw: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(body, start=2):
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise DataError(
                f"{path}:{lineno}: row has {len(parts) - 1} values, expected {dim}")
        word = parts[0]
        try:
            vec = np.array([float(v) for v in parts[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric vector value") from None
        if word in raw:
            log.warning("%s:%d: duplicate word %r, keeping first", path, lineno, word)
            continue
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not np.isfinite(norm):
            raise DataError(f"{path}:{lineno}: vector for {word!r} cannot be normalized")
        raw[word] = vec / norm
    return EmbeddingTable(dim, raw, metadata={"source": str(path)})


def load_sim_dataset(path, name: str | None = None) -> SimilarityDataset:
    """TSV ``word1<TAB>word2<TAB>rating`` with optional ``#name=``/``#type=``
    comment headers."""
    kind = "NA"
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#name="):
                    name = name or line[6:]
                elif line.startswith("#type="):
                    kind = line[6:]
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'word1<TAB>word2<TAB>rating'")
            try:
                rating = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric rating {parts[2]!r}") from None
            if not np.isfinite(rating):
                raise DataError(f"{path}:{lineno}: non-finite rating")
            pairs.append((parts[0], parts[1], rating))
    if name is None:
        name = Path(path).stem
    ds = SimilarityDataset(name=name, pairs=pairs, kind=kind)
    ds.validate()
    return ds


def save_sim_dataset(ds: SimilarityDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#name={ds.name}\n#type={ds.kind}\n")
        for w1, w2, rating in ds.pairs:
            f.write(f"{w1}\t{w2}\t{rating:.9g}\n")


_SPP_COLUMNS = ["subject", "target", "prime", "condition", "soa", "task",
                "rt", "error", "missing"]


def load_spp(path) -> list[RawPrimingTrial]:
    """Priming trial CSV with the exact header
    ``subject,target,prime,condition,soa,task,rt,error,missing``."""
    import csv

    trials = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _SPP_COLUMNS:
            raise DataError(f"{path}: bad header, expected {','.join(_SPP_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_SPP_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(_SPP_COLUMNS)} fields")
            subject, target, prime, condition, soa, task, rt, error, missing = row
            if condition not in CONDITIONS:
                raise DataError(f"{path}:{lineno}: bad condition {condition!r}")
            try:
                soa_val = int(soa)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad soa {soa!r}") from None
            if soa_val not in SOAS:
                raise DataError(f"{path}:{lineno}: soa must be one of {sorted(SOAS)}")
            if task not in TASKS:
                raise DataError(f"{path}:{lineno}: bad task {task!r}")
            if error not in ("0", "1") or missing not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: error/missing must be 0 or 1")
            is_missing = missing == "1"
            rt_val: float | None = None
            if rt != "":
                try:
                    rt_val = float(rt)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad rt {rt!r}") from None
            if not is_missing:
                if rt_val is None or not np.isfinite(rt_val) or rt_val <= 0:
                    raise DataError(f"{path}:{lineno}: rt must be positive")
            trials.append(RawPrimingTrial(
                subject=subject, target=target, prime=prime, condition=condition,
                soa=soa_val, task=task, rt=rt_val, error=error == "1",
                missing=is_missing))
    return trials


def save_spp(trials: list[RawPrimingTrial], path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_SPP_COLUMNS)
        for t in trials:
            writer.writerow([
                t.subject, t.target, t.prime, t.condition, t.soa, t.task,
                "" if t.rt is None else f"{t.rt:.9g}",
                "1" if t.error else "0", "1" if t.missing else "0"])


def load_lexicon(path) -> Lexicon:
    """Lexicon TSV: ``word<TAB>frequency count<TAB>document count`` with
    optional ``#total_tokens=``/``#total_documents=`` headers."""
    entries: dict[str, tuple[int, int]] = {}
    total_tokens = total_documents = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#total_tokens="):
                    total_tokens = int(line.split("=", 1)[1])
                elif line.startswith("#total_documents="):
                    total_documents = int(line.split("=", 1)[1])
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 'word<TAB>count<TAB>docs'")
            word = parts[0]
            if word in entries:
                raise DataError(f"{path}:{lineno}: duplicate word {word!r}")
            try:
                count, docs = int(parts[1]), int(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer counts") from None
            if count < 1 or docs < 1:
                raise DataError(f"{path}:{lineno}: counts must be >= 1")
            entries[word] = (count, docs)
    if not entries:
        raise DataError(f"{path}: empty lexicon")
    return Lexicon(
        entries=entries,
        total_tokens=total_tokens if total_tokens is not None
        else sum(c for c, _ in entries.values()),
        total_documents=total_documents if total_documents is not None
        else max(d for _, d in entries.values()),
    )


def save_lexicon(lexicon: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#total_tokens={lexicon.total_tokens}\n")
        f.write(f"#total_documents={lexicon.total_documents}\n")
        for word, (count, docs) in lexicon.entries.items():
            f.write(f"{word}\t{count}\t{docs}\n")


def save_vocab(vocab: Vocabulary, path) -> None:
    """Sidecar vocabulary file for checkpoints; order is significant."""
    with open(path, "w", encoding="utf-8") as f:
        for word in vocab.words:
            f.write(f"{word}\t{vocab.counts.get(word, 0)}\n")


def load_vocab(path) -> Vocabulary:
    words = []
    counts = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'word<TAB>count'")
            words.append(parts[0])
            counts[parts[0]] = int(parts[1])
    return Vocabulary.from_word_list(words, counts)


# ---------------------------------------------------------------------------
# Run configuration: a flat "section.key=value" text file.

_SECTIONS: dict[str, type] = {}


@dataclass
class RunConfig:
    grounded: TrainConfig
    sgns: SgnsConfig
    fasttext: FastTextConfig
    glove: GloveConfig
    world: WorldSpec
    priming: PrimingConfig
    eval: EvalConfig

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(grounded=TrainConfig(), sgns=SgnsConfig(),
                   fasttext=FastTextConfig(), glove=GloveConfig(),
                   world=WorldSpec(), priming=PrimingConfig(), eval=EvalConfig())


def _coerce(raw: str, typ, where: str):
    origin = typing.get_origin(typ)
    if origin is tuple:
        args = typing.get_args(typ)
        parts = raw.split(",")
        if len(parts) != len(args):
            raise DataError(f"{where}: expected {len(args)} comma-separated values")
        return tuple(_coerce(p.strip(), a, where) for p, a in zip(parts, args))
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise DataError(f"{where}: expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is str:
        return raw
    raise DataError(f"{where}: unsupported config field type {typ!r}")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse key=value lines into a RunConfig; unknown keys are rejected."""
    cfg = base if base is not None else RunConfig.default()
    hints = {f.name: typing.get_type_hints(type(getattr(cfg, f.name)))
             for f in fields(cfg)}
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"config line {lineno}: expected 'section.key=value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if "." not in key:
            raise DataError(f"config line {lineno}: key {key!r} has no section")
        section, _, field_name = key.partition(".")
        if section not in sections:
            raise DataError(f"config line {lineno}: unknown section {section!r}")
        obj = sections[section]
        if field_name not in hints[section]:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        setattr(obj, field_name, _coerce(raw, hints[section][field_name], key))
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: RunConfig) -> str:
    """Canonical rendering: every field explicit, keys sorted.
    parse(serialize(parse(text))) == parse(text)."""
    lines = []
    for f in fields(cfg):
        obj = getattr(cfg, f.name)
        for sub in fields(obj):
            lines.append(f"{f.name}.{sub.name}={_render(getattr(obj, sub.name))}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, cfg: RunConfig,
                   seeds: dict[str, int], outputs: dict[str, str]) -> Path:
    """Record config hash, seeds, and output file hashes; no timestamps, so
    equal inputs give byte-identical manifests."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seeds": dict(sorted(seeds.items())),
        "outputs": {name: hashlib.sha256(Path(p).read_bytes()).hexdigest()
                    for name, p in sorted(outputs.items())},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
