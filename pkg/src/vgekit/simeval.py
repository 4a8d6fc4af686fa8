"""Similarity-judgement evaluation: cosine scoring against human ratings,
partial correlations with control embeddings, and Benjamini-Hochberg
correction over the analysis grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .table import EmbeddingTable

log = logging.getLogger(__name__)

_TINY_P = np.finfo(float).tiny


@dataclass
class EvalConfig:
    fdr_q: float = 0.05


@dataclass
class SimilarityDataset:
    name: str
    pairs: list[tuple[str, str, float]]
    kind: str = "NA"  # similarity | relatedness | NA

    def validate(self):
        seen = set()
        for w1, w2, rating in self.pairs:
            if not np.isfinite(rating):
                raise ValueError(f"{self.name}: non-finite rating for ({w1}, {w2})")
            key = frozenset((w1, w2))
            if key in seen:
                raise ValueError(f"{self.name}: duplicate pair ({w1}, {w2})")
            seen.add(key)


def pair_similarities(table: EmbeddingTable, dataset: SimilarityDataset):
    """Cosine scores for the dataset pairs covered by the table.

    Pairs with either word missing are dropped (vocabulary coverage varies
    by training corpus); returns (kept pairs, scores).
    """
    kept = [(w1, w2, r) for w1, w2, r in dataset.pairs
            if w1 in table and w2 in table]
    if not kept:
        raise ValueError(f"no pairs of {dataset.name!r} are covered by the table")
    scores = np.array([table.cosine(w1, w2) for w1, w2, _ in kept])
    return kept, scores


def pearson(x, y) -> tuple[float, float]:
    """Product-moment correlation with a two-sided t-test p-value
    (t = r sqrt((n-2)/(1-r^2)), df = n-2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson: shape mismatch {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError("pearson: need at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson: constant input")
    r = float(xc @ yc) / math.sqrt(sx * sy)
    r = max(-1.0, min(1.0, r))
    p = _pearson_p(r, n - 2)
    return r, p


def _pearson_p(r: float, df: int) -> float:
    if df <= 0:
        raise ValueError("pearson: not enough degrees of freedom")
    denom = 1.0 - r * r
    if denom <= 0.0:
        return _TINY_P
    t = r * math.sqrt(df / denom)
    return max(float(2.0 * sstats.t.sf(abs(t), df)), _TINY_P)


def _residualize(v: np.ndarray, controls: np.ndarray) -> np.ndarray:
    beta, *_ = np.linalg.lstsq(controls, v, rcond=None)
    return v - controls @ beta


def partial_correlation(target, human, controls) -> tuple[float, float]:
    """Correlation between target and human after regressing both on the
    controls (plus intercept); p from a t-test with df = n - 2 - #controls."""
    target = np.asarray(target, dtype=np.float64)
    human = np.asarray(human, dtype=np.float64)
    controls = [np.asarray(c, dtype=np.float64) for c in controls]
    n = target.size
    g = len(controls)
    if human.shape != target.shape or any(c.shape != target.shape for c in controls):
        raise ValueError("partial_correlation: length mismatch")
    if not controls:
        return pearson(target, human)
    if n < g + 4:
        raise ValueError(f"partial_correlation: need at least {g + 4} observations")
    X = np.column_stack([np.ones(n)] + controls)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("partial_correlation: collinear controls")
    rt = _residualize(target, X)
    rh = _residualize(human, X)
    st = float(rt @ rt)
    sh = float(rh @ rh)
    # Residuals that are pure least-squares round-off count as constant input.
    tc = target - target.mean()
    hc = human - human.mean()
    if st <= 1e-20 * max(float(tc @ tc), 1e-300) or \
            sh <= 1e-20 * max(float(hc @ hc), 1e-300):
        raise ValueError("pearson: constant input (zero residual variance)")
    r = float(rt @ rh) / math.sqrt(st * sh)
    r = max(-1.0, min(1.0, r))
    return r, _pearson_p(r, n - 2 - g)


def incremental_r2(target, human, controls) -> float:
    """R^2 of human ~ controls + target minus R^2 of human ~ controls."""
    human = np.asarray(human, dtype=np.float64)
    n = human.size
    base = np.column_stack([np.ones(n)] + [np.asarray(c) for c in controls])
    full = np.column_stack([base, np.asarray(target)])

    def r2(X):
        resid = human - X @ np.linalg.lstsq(X, human, rcond=None)[0]
        total = human - human.mean()
        return 1.0 - float(resid @ resid) / float(total @ total)

    return r2(full) - r2(base)


def bh_correct(pvalues, q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up: find the largest k with
    p_(k) <= k q / m and flag every p at or below that threshold."""
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("bh_correct: expected a 1-d p-value list")
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("bh_correct: p-values must lie in [0, 1]")
    if not 0 < q < 1:
        raise ValueError("bh_correct: q must lie in (0, 1)")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    ordered = np.sort(p)
    ok = ordered <= (np.arange(1, m + 1) * q) / m
    if not ok.any():
        return np.zeros(m, dtype=bool)
    crit = ordered[np.nonzero(ok)[0][-1]]
    return p <= crit


@dataclass
class PlainScore:
    dataset: str
    model: str
    n: int
    r: float
    r2: float
    p: float


@dataclass
class PartialScore:
    dataset: str
    target: str
    controls: tuple[str, ...]
    n: int
    partial_r: float = math.nan
    partial_r2: float = math.nan
    incremental_r2: float = math.nan
    p: float = math.nan
    significant: bool = False
    applicable: bool = True
    note: str = ""

    @property
    def positive(self) -> bool:
        return self.applicable and self.partial_r > 0


@dataclass
class ControlPlan:
    target: str
    controls: list[tuple[str, ...]] = field(default_factory=list)
    fdr_q: float = 0.05


@dataclass
class EvalReport:
    plain: list[PlainScore]
    partial: list[PartialScore]
    fdr_q: float


def run_similarity_experiment(tables: dict[str, EmbeddingTable],
                              datasets: list[SimilarityDataset],
                              plan: ControlPlan) -> EvalReport:
    """Plain R^2 for every (model, dataset) cell plus partial correlations
    of the target model against each control configuration, BH-corrected
    across the whole partial grid.

    Pairs are intersected per analysis so the target and its controls are
    scored on identical pairs.
    """
    if plan.target not in tables:
        raise KeyError(f"target table {plan.target!r} not found")
    for block in plan.controls:
        for name in block:
            if name not in tables:
                raise KeyError(f"control table {name!r} not found")

    plain: list[PlainScore] = []
    for ds in datasets:
        for model, table in tables.items():
            kept, scores = pair_similarities(table, ds)
            ratings = np.array([r for _, _, r in kept])
            r, p = pearson(scores, ratings)
            plain.append(PlainScore(dataset=ds.name, model=model, n=len(kept),
                                    r=r, r2=r * r, p=p))

    partial: list[PartialScore] = []
    for ds in datasets:
        for block in plan.controls:
            names = [plan.target, *block]
            covered = [
                (w1, w2, r) for w1, w2, r in ds.pairs
                if all(w1 in tables[m] and w2 in tables[m] for m in names)]
            row = PartialScore(dataset=ds.name, target=plan.target,
                               controls=tuple(block), n=len(covered))
            try:
                if not covered:
                    raise ValueError("no pairs covered by target and controls")
                ratings = np.array([r for _, _, r in covered])
                tgt = np.array([tables[plan.target].cosine(w1, w2)
                                for w1, w2, _ in covered])
                ctl = [np.array([tables[m].cosine(w1, w2) for w1, w2, _ in covered])
                       for m in block]
                r, p = partial_correlation(tgt, ratings, ctl)
                row.partial_r = r
                row.partial_r2 = r * r
                row.p = p
                row.incremental_r2 = incremental_r2(tgt, ratings, ctl)
            except ValueError as exc:
                row.applicable = False
                row.note = str(exc)
            partial.append(row)

    applicable = [row for row in partial if row.applicable]
    if applicable:
        flags = bh_correct([row.p for row in applicable], plan.fdr_q)
        for row, flag in zip(applicable, flags):
            row.significant = bool(flag)
    return EvalReport(plain=plain, partial=partial, fdr_q=plan.fdr_q)


def report_tsv(report: EvalReport) -> str:
    """Human-oriented table: plain scores then partial scores."""
    lines = ["dataset\tmodel\tn\tr\tR2\tp"]
    for s in report.plain:
        lines.append(f"{s.dataset}\t{s.model}\t{s.n}\t{s.r:.6f}\t{s.r2:.6f}\t{s.p:.3g}")
    lines.append("")
    lines.append("dataset\ttarget\tcontrols\tn\tpartial_r\tpartial_R2\t"
                 "incremental_R2\tp\tbh_significant\tnote")
    for s in report.partial:
        lines.append(
            f"{s.dataset}\t{s.target}\t{'+'.join(s.controls)}\t{s.n}\t"
            f"{s.partial_r:.6f}\t{s.partial_r2:.6f}\t{s.incremental_r2:.6f}\t"
            f"{s.p:.3g}\t{int(s.significant)}\t{s.note}")
    return "\n".join(lines) + "\n"


def report_long_csv(report: EvalReport) -> str:
    """Plot-ready long format: dataset, model, statistic, value, significance."""
    rows = ["dataset,model,statistic,value,significance"]
    for s in report.plain:
        rows.append(f"{s.dataset},{s.model},r2,{s.r2:.6f},")
        rows.append(f"{s.dataset},{s.model},pearson_r,{s.r:.6f},")
    for s in report.partial:
        model = f"{s.target}|{'+'.join(s.controls)}"
        if not s.applicable:
            rows.append(f"{s.dataset},{model},partial_r2,,na")
            continue
        sig = "significant" if s.significant else "ns"
        rows.append(f"{s.dataset},{model},partial_r2,{s.partial_r2:.6f},{sig}")
        rows.append(f"{s.dataset},{model},partial_r,{s.partial_r:.6f},{sig}")
        rows.append(f"{s.dataset},{model},incremental_r2,{s.incremental_r2:.6f},{sig}")
    return "\n".join(rows) + "\n"
