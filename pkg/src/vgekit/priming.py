"""Priming-experiment statistics: trial preprocessing, lexical covariates,
OLS with factor coding and interactions, AIC, and likelihood-ratio tests.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats
from scipy.special import gammaincc

from .table import EmbeddingTable

log = logging.getLogger(__name__)

SOA_SHORT = 200
SOA_LONG = 1200
SOAS = {SOA_SHORT, SOA_LONG}
TASK_LDT = "lexical_decision"
TASK_NAMING = "naming"
TASKS = {TASK_LDT, TASK_NAMING}
CONDITIONS = ("strong", "weak", "unrelated1", "unrelated2")

BASELINE_TERMS = ("target_length", "is_naming", "is_long_soa",
                  "log_frequency", "contextual_diversity", "orth_neighborhood")


@dataclass
class RawPrimingTrial:
    subject: str
    target: str
    prime: str
    condition: str
    soa: int
    task: str
    rt: float | None
    error: bool = False
    missing: bool = False


@dataclass
class PrimingRow:
    target: str
    prime: str
    soa: int
    task: str
    z_log_rt: float
    target_length: int
    log_frequency: float
    contextual_diversity: float
    orth_neighborhood: int


@dataclass
class PrimingTable:
    rows: list[PrimingRow]

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name == "is_naming":
            return np.array([1.0 if r.task == TASK_NAMING else 0.0 for r in self.rows])
        if name == "is_long_soa":
            return np.array([1.0 if r.soa == SOA_LONG else 0.0 for r in self.rows])
        return np.array([float(getattr(r, name)) for r in self.rows])


@dataclass
class Lexicon:
    entries: dict[str, tuple[int, int]]  # word -> (frequency, document count)
    total_tokens: int
    total_documents: int

    def __contains__(self, word: str) -> bool:
        return word in self.entries


@dataclass
class PrimingConfig:
    sample_sd: bool = True           # z-score with ddof=1 (vs population sd)
    average_before_log: bool = True  # mean raw RT then log, vs log then mean
    strict_lexicon: bool = False     # error (vs drop) on lexicon-missing targets


@dataclass
class Covariates:
    length: int
    log_frequency: float
    contextual_diversity: int
    orth_neighborhood: int


def lexical_covariates(words, lexicon: Lexicon) -> dict[str, Covariates]:
    """Length, ln(frequency), document count, and the number of lexicon words
    one edit (insertion, deletion, or substitution) away."""
    words = list(words)
    absent = sorted({w for w in words if w not in lexicon.entries})
    if absent:
        raise KeyError("words missing from lexicon: " + ", ".join(absent))
    alphabet = sorted({ch for w in lexicon.entries for ch in w})
    out = {}
    for word in words:
        count, docs = lexicon.entries[word]
        out[word] = Covariates(
            length=len(word),
            log_frequency=math.log(count),
            contextual_diversity=docs,
            orth_neighborhood=_neighborhood(word, lexicon.entries, alphabet),
        )
    return out


def _neighborhood(word: str, lexicon: dict, alphabet: list[str]) -> int:
    """Distinct lexicon entries at Levenshtein distance exactly one."""
    candidates = set()
    for i in range(len(word)):
        candidates.add(word[:i] + word[i + 1:])  # deletion
        for ch in alphabet:
            if ch != word[i]:
                candidates.add(word[:i] + ch + word[i + 1:])  # substitution
    for i in range(len(word) + 1):
        for ch in alphabet:
            candidates.add(word[:i] + ch + word[i:])  # insertion
    candidates.discard(word)
    return sum(1 for c in candidates if c in lexicon)


def preprocess_spp(trials: list[RawPrimingTrial], vocab, lexicon: Lexicon,
                   config: PrimingConfig | None = None) -> PrimingTable:
    """SPP preprocessing pipeline, in order: lowercase prime/target; drop
    targets without exactly four distinct primes; drop error and missing
    trials; average raw RT over subjects per (prime, target, soa, task);
    drop rows with out-of-vocabulary prime or target; log-transform;
    z-score within each (soa, task) cell.

    ``vocab`` is the training-corpus word set. Targets missing from the
    lexicon are dropped with a warning unless ``strict_lexicon`` is set.
    """
    cfg = config or PrimingConfig()
    lowered = [(t.target.lower(), t.prime.lower(), t) for t in trials]

    primes_per_target: dict[str, set[str]] = {}
    for target, prime, _ in lowered:
        primes_per_target.setdefault(target, set()).add(prime)
    valid_targets = {t for t, ps in primes_per_target.items() if len(ps) == 4}

    groups: dict[tuple[str, str, int, str], list[float]] = {}
    for target, prime, t in lowered:
        if target not in valid_targets or t.error or t.missing:
            continue
        groups.setdefault((prime, target, t.soa, t.task), []).append(t.rt)

    cells: dict[tuple[int, str], list[tuple[str, str, float]]] = {}
    dropped_oov = dropped_lexicon = 0
    lexicon_missing: set[str] = set()
    for (prime, target, soa, task), rts in sorted(groups.items()):
        if prime not in vocab or target not in vocab:
            dropped_oov += 1
            continue
        if target not in lexicon:
            if cfg.strict_lexicon:
                raise KeyError(f"target {target!r} missing from lexicon")
            lexicon_missing.add(target)
            dropped_lexicon += 1
            continue
        if cfg.average_before_log:
            value = math.log(sum(rts) / len(rts))
        else:
            value = sum(math.log(r) for r in rts) / len(rts)
        cells.setdefault((soa, task), []).append((prime, target, value))
    if lexicon_missing:
        log.warning("dropped %d rows for %d lexicon-missing targets",
                    dropped_lexicon, len(lexicon_missing))

    if not cells:
        raise ValueError("cannot standardize: no trials survived preprocessing")
    covariates = lexical_covariates(
        sorted({target for rows in cells.values() for _, target, _ in rows}),
        lexicon)

    ddof = 1 if cfg.sample_sd else 0
    out_rows: list[PrimingRow] = []
    for (soa, task), rows in sorted(cells.items()):
        if len(rows) < 3:
            raise ValueError(
                f"cannot standardize: cell (soa={soa}, task={task}) has "
                f"{len(rows)} rows")
        values = np.array([v for _, _, v in rows])
        mean = values.mean()
        sd = values.std(ddof=ddof)
        if sd == 0.0:
            raise ValueError(
                f"cannot standardize: cell (soa={soa}, task={task}) is constant")
        for (prime, target, value) in rows:
            cov = covariates[target]
            out_rows.append(PrimingRow(
                target=target, prime=prime, soa=soa, task=task,
                z_log_rt=(value - mean) / sd,
                target_length=cov.length,
                log_frequency=cov.log_frequency,
                contextual_diversity=cov.contextual_diversity,
                orth_neighborhood=cov.orth_neighborhood))
    table = PrimingTable(out_rows)
    log.info("priming table: %d rows (%d dropped OOV, %d dropped lexicon)",
             len(table), dropped_oov, dropped_lexicon)
    return table


def design_matrix(table: PrimingTable, similarities: dict[str, np.ndarray],
                  terms) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Assemble the regression design: an intercept column plus one column
    per term. SOA and Task use treatment coding (references: 200 ms,
    lexical decision). A term ``a:b`` is the elementwise product of a and b.
    """
    n = len(table)

    def base_column(name: str) -> np.ndarray:
        if name in similarities:
            col = np.asarray(similarities[name], dtype=np.float64)
            if col.shape != (n,):
                raise ValueError(f"similarity column {name!r} has wrong length")
            return col
        try:
            return table.column(name)
        except AttributeError:
            raise ValueError(f"unknown design term {name!r}") from None

    names = ["intercept"]
    cols = [np.ones(n)]
    for term in terms:
        if ":" in term:
            a, _, b = term.partition(":")
            cols.append(base_column(a) * base_column(b))
        else:
            cols.append(base_column(term))
        names.append(term)
    X = np.column_stack(cols)
    y = table.column("z_log_rt")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        _, _, pivots = sla.qr(X, mode="economic", pivoting=True)
        dropped = sorted(names[i] for i in pivots[rank:])
        raise ValueError("rank-deficient design; collinear terms: "
                         + ", ".join(dropped))
    return X, y, names


@dataclass
class RegressionResult:
    terms: list[str]
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    n: int
    k: int
    rss: float
    loglik: float
    aic: float

    def coef(self, term: str) -> tuple[float, float]:
        """(beta, p) for a named term."""
        i = self.terms.index(term)
        return float(self.beta[i]), float(self.p[i])


def ols_fit(X: np.ndarray, y: np.ndarray,
            terms: list[str] | None = None) -> RegressionResult:
    """QR-based least squares with Gaussian log-likelihood and AIC.

    k counts the regression coefficients (intercept included, variance
    parameter excluded), so AIC = 2k - 2 lnL with
    lnL = -n/2 (ln(2 pi RSS / n) + 1).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    if n <= k:
        raise ValueError(f"need more observations ({n}) than columns ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise ValueError("design matrix is rank deficient")
    q, r = np.linalg.qr(X, mode="reduced")
    beta = sla.solve_triangular(r, q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    ynorm2 = float(y @ y)
    if rss < 1e-12 * max(ynorm2, 1e-300):
        raise ValueError("degenerate fit: residual sum of squares is ~0")
    sigma2 = rss / (n - k)
    rinv = sla.solve_triangular(r, np.eye(k))
    xtx_inv = rinv @ rinv.T
    se = np.sqrt(sigma2 * np.diag(xtx_inv))
    tvals = beta / se
    pvals = 2.0 * sstats.t.sf(np.abs(tvals), df=n - k)
    loglik = -n / 2.0 * (math.log(2.0 * math.pi * rss / n) + 1.0)
    aic = 2.0 * k - 2.0 * loglik
    return RegressionResult(
        terms=list(terms) if terms is not None else [f"x{i}" for i in range(k)],
        beta=beta, se=se, t=tvals, p=pvals, n=n, k=k, rss=rss,
        loglik=loglik, aic=aic)


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability Q(df/2, x/2) via the regularized
    upper incomplete gamma function."""
    if x < 0 or not np.isfinite(x):
        raise ValueError("chi2_sf: statistic must be finite and >= 0")
    if df < 1:
        raise ValueError("chi2_sf: df must be >= 1")
    return float(gammaincc(df / 2.0, x / 2.0))


def loglik_ratio_test(full: RegressionResult,
                      reduced: RegressionResult) -> tuple[float, int, float]:
    """LLR = 2 (lnL_full - lnL_reduced), chi-square with df = k_full - k_reduced."""
    if not set(reduced.terms) <= set(full.terms):
        raise ValueError("models are not nested (reduced terms not in full model)")
    if full.n != reduced.n:
        raise ValueError("models were fitted on different numbers of observations")
    df = full.k - reduced.k
    if df < 0:
        raise ValueError("full model has fewer columns than the reduced model")
    llr = 2.0 * (full.loglik - reduced.loglik)
    if llr < -1e-9 * max(1.0, abs(full.loglik)):
        raise ValueError("reduced model fits better than the full model; not nested")
    llr = max(llr, 0.0)
    p = 1.0 if df == 0 else chi2_sf(llr, df)
    return llr, df, p


def similarity_terms(name: str) -> list[str]:
    """The three regressors an embedding model contributes to a design."""
    col = f"sim_{name}"
    return [col, f"{col}:is_naming", f"{col}:is_long_soa"]


@dataclass
class SingleModelFit:
    name: str
    result: RegressionResult
    aic: float
    d_aic_vge: float
    d_aic_baseline: float
    beta: float
    beta_p: float
    task_interaction: tuple[float, float]
    soa_interaction: tuple[float, float]


@dataclass
class StackedFit:
    controls: tuple[str, ...]
    llr: float
    df: int
    p: float
    beta_vge: float
    beta_vge_p: float
    full: RegressionResult
    reduced: RegressionResult


@dataclass
class PrimingPlan:
    vge: str
    text_models: list[str]
    stacked: list[tuple[str, ...]] = field(default_factory=list)
    baseline_terms: tuple[str, ...] = BASELINE_TERMS


@dataclass
class PrimingReport:
    baseline: RegressionResult
    singles: list[SingleModelFit]
    stacked: list[StackedFit]
    n_rows: int
    n_dropped_oov: int


def priming_report_tsv(report: PrimingReport) -> str:
    """AIC comparison table plus the LLR table for the stacked models."""
    lines = ["model\tAIC\tdVGE\tdBaseline\tbeta\tp\t"
             "beta_task_inter\tp_task_inter\tbeta_soa_inter\tp_soa_inter"]
    for s in report.singles:
        lines.append(
            f"{s.name}\t{s.aic:.2f}\t{s.d_aic_vge:.2f}\t{s.d_aic_baseline:.2f}\t"
            f"{s.beta:.4f}\t{s.beta_p:.3g}\t{s.task_interaction[0]:.4f}\t"
            f"{s.task_interaction[1]:.3g}\t{s.soa_interaction[0]:.4f}\t"
            f"{s.soa_interaction[1]:.3g}")
    lines.append(f"baseline\t{report.baseline.aic:.2f}\t"
                 f"{report.baseline.aic - report.singles[0].aic:.2f}\t0.00\t\t\t\t\t\t")
    lines.append("")
    lines.append("controls\tLLR\tdf\tp\tbeta_VGE\tp_beta_VGE")
    for s in report.stacked:
        lines.append(f"{'+'.join(s.controls)}\t{s.llr:.2f}\t{s.df}\t{s.p:.3g}\t"
                     f"{s.beta_vge:.4f}\t{s.beta_vge_p:.3g}")
    return "\n".join(lines) + "\n"


def priming_report_long_csv(report: PrimingReport) -> str:
    rows = ["model,statistic,value,p"]
    rows.append(f"baseline,aic,{report.baseline.aic:.4f},")
    for s in report.singles:
        rows.append(f"{s.name},aic,{s.aic:.4f},")
        rows.append(f"{s.name},d_aic_baseline,{s.d_aic_baseline:.4f},")
        rows.append(f"{s.name},beta,{s.beta:.6f},{s.beta_p:.6g}")
        rows.append(f"{s.name},beta_task_interaction,"
                    f"{s.task_interaction[0]:.6f},{s.task_interaction[1]:.6g}")
        rows.append(f"{s.name},beta_soa_interaction,"
                    f"{s.soa_interaction[0]:.6f},{s.soa_interaction[1]:.6g}")
    for s in report.stacked:
        name = "+".join(s.controls)
        rows.append(f"{name},llr,{s.llr:.4f},{s.p:.6g}")
        rows.append(f"{name},beta_vge,{s.beta_vge:.6f},{s.beta_vge_p:.6g}")
    return "\n".join(rows) + "\n"


def run_priming_experiment(table: PrimingTable,
                           tables: dict[str, EmbeddingTable],
                           plan: PrimingPlan) -> PrimingReport:
    """Fit the baseline, one model per embedding table (baseline + similarity
    + its Task/SOA interactions), and the stacked models testing whether the
    grounded similarities add explanatory power over each control block."""
    used = {plan.vge, *plan.text_models, *(m for block in plan.stacked for m in block)}
    for name in used:
        if name not in tables:
            raise KeyError(f"plan references unknown table {name!r}")

    covered_rows = [
        r for r in table.rows
        if all(r.prime in tables[m] and r.target in tables[m] for m in used)]
    dropped = len(table.rows) - len(covered_rows)
    if dropped:
        log.info("dropped %d rows not covered by every table", dropped)
    sub = PrimingTable(covered_rows)
    if len(sub) == 0:
        raise ValueError("no rows covered by all embedding tables")

    sims = {f"sim_{name}": np.array([tables[name].cosine(r.prime, r.target)
                                     for r in sub.rows])
            for name in used}

    def fit(terms):
        X, y, names = design_matrix(sub, sims, terms)
        return ols_fit(X, y, names)

    baseline = fit(list(plan.baseline_terms))

    singles = []
    by_name = {}
    for name in [plan.vge, *plan.text_models]:
        res = fit(list(plan.baseline_terms) + similarity_terms(name))
        by_name[name] = res
        col = f"sim_{name}"
        beta, beta_p = res.coef(col)
        singles.append(SingleModelFit(
            name=name, result=res, aic=res.aic,
            d_aic_vge=0.0,  # filled below
            d_aic_baseline=res.aic - baseline.aic,
            beta=beta, beta_p=beta_p,
            task_interaction=res.coef(f"{col}:is_naming"),
            soa_interaction=res.coef(f"{col}:is_long_soa")))
    vge_aic = by_name[plan.vge].aic
    for s in singles:
        s.d_aic_vge = s.aic - vge_aic

    stacked = []
    for block in plan.stacked:
        reduced_terms = list(plan.baseline_terms)
        for name in block:
            reduced_terms += similarity_terms(name)
        reduced = fit(reduced_terms)
        full = fit(reduced_terms + similarity_terms(plan.vge))
        llr, df, p = loglik_ratio_test(full, reduced)
        beta_vge, beta_vge_p = full.coef(f"sim_{plan.vge}")
        stacked.append(StackedFit(controls=tuple(block), llr=llr, df=df, p=p,
                                  beta_vge=beta_vge, beta_vge_p=beta_vge_p,
                                  full=full, reduced=reduced))
    return PrimingReport(baseline=baseline, singles=singles, stacked=stacked,
                         n_rows=len(sub), n_dropped_oov=dropped)
