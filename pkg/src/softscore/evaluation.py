"""Discrimination and calibration metrics, Platt scaling, cross-validation.

Conventions: a record is predicted positive when its score is >= the cutoff.
ROC points are built from every distinct score (ties grouped into a single
cutoff) plus a sentinel cutoff of +inf where nothing is predicted positive.
AUC is the trapezoidal area of that curve, which equals the Mann-Whitney
pair-count with half credit for ties.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .design import CohortDesign
from .errors import NumericError, ValidationError
from .model import PatientRecord, ScoreDefinition
from .numerics import log1pexp, sigmoid
from .optimizer import OptimizerConfig, fit

logger = logging.getLogger("softscore")

PLATT_TOL = 1e-8
PLATT_MAX_ITER = 100


@dataclass(frozen=True)
class RocPoint:
    """Operating point at one cutoff; precision is None when nothing is
    predicted positive (the sentinel +inf cutoff)."""

    cutoff: float
    sensitivity: float
    specificity: float
    precision: Optional[float]


@dataclass(frozen=True)
class FoldMetrics:
    """Held-out metrics of one fold; discrimination fields are None when the
    test split contains a single class."""

    fold: int
    n_test: int
    n_positive: int
    auc: Optional[float]
    youden_j: Optional[float]
    youden_cutoff: Optional[float]
    prec_rec_balance: Optional[float]
    prec_rec_cutoff: Optional[float]
    brier: float
    platt_a: float
    platt_b: float


@dataclass(frozen=True)
class EvaluationReport:
    """Pooled metrics, the ROC polyline, and the per-fold table."""

    n: int
    n_positive: int
    auc: float
    youden_j: float
    youden_cutoff: float
    prec_rec_balance: float
    prec_rec_cutoff: float
    brier: float
    platt: Optional[tuple[float, float]]
    roc: tuple[RocPoint, ...]
    folds: tuple[FoldMetrics, ...] = ()
    subgroup: Optional[str] = None

    @property
    def prevalence(self) -> float:
        return self.n_positive / self.n


@dataclass(frozen=True)
class ScoredRow:
    """Per-record output of an evaluation run."""

    id: str
    fold: int
    score: float
    probability: float
    label: int


# ----------------------------------------------------------------------
# metric primitives
# ----------------------------------------------------------------------


def _check_scores_labels(scores, labels, require_both_classes=True):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValidationError("scores and labels must be 1-d and equally long")
    if s.size == 0:
        raise ValidationError("empty score list")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValidationError("labels must be -1 or +1")
    y = y.astype(int)
    if require_both_classes and (not np.any(y == 1) or not np.any(y == -1)):
        raise ValidationError("both outcome classes are required")
    return s, y


def roc_and_auc(scores, labels) -> tuple[tuple[RocPoint, ...], float]:
    """ROC curve over all distinct cutoffs and its trapezoidal area."""
    s, y = _check_scores_labels(scores, labels)
    pos_total = int(np.sum(y == 1))
    neg_total = int(np.sum(y == -1))
    cutoffs = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [RocPoint(math.inf, 0.0, 1.0, None)]
    tp = fp = 0
    pos_idx = 0
    for c in cutoffs:
        while pos_idx < s.size and s_sorted[pos_idx] >= c:
            if y_sorted[pos_idx] == 1:
                tp += 1
            else:
                fp += 1
            pos_idx += 1
        points.append(
            RocPoint(
                float(c),
                tp / pos_total,
                1.0 - fp / neg_total,
                tp / (tp + fp),
            )
        )
    auc = 0.0
    for prev, cur in zip(points, points[1:]):
        fpr_prev, fpr_cur = 1.0 - prev.specificity, 1.0 - cur.specificity
        auc += 0.5 * (cur.sensitivity + prev.sensitivity) * (fpr_cur - fpr_prev)
    return tuple(points), auc


def youden(scores, labels) -> tuple[float, float]:
    """Max of sensitivity + specificity - 1, with the smallest cutoff
    achieving it."""
    points, _ = roc_and_auc(scores, labels)
    best_j = -math.inf
    best_cutoff = math.inf
    for p in points:
        j = p.sensitivity + p.specificity - 1.0
        if j >= best_j:
            best_j = j
            best_cutoff = p.cutoff
    return best_j, best_cutoff


def prec_rec_balance(scores, labels) -> tuple[float, float]:
    """Max over cutoffs of min(precision, recall), smallest cutoff on ties.

    Cutoffs predicting nothing positive have undefined precision and are
    skipped.
    """
    points, _ = roc_and_auc(scores, labels)
    best = -math.inf
    best_cutoff = math.inf
    for p in points:
        if p.precision is None:
            continue
        value = min(p.precision, p.sensitivity)
        if value >= best:
            best = value
            best_cutoff = p.cutoff
    return best, best_cutoff


def brier(probabilities, labels) -> float:
    """Mean squared error between probabilities and 0/1 outcomes."""
    p = np.asarray(probabilities, dtype=float)
    _, y = _check_scores_labels(
        np.zeros_like(p), labels, require_both_classes=False
    )
    if p.shape != y.shape:
        raise ValidationError("probabilities and labels must be equally long")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValidationError("probabilities must lie in [0, 1]")
    c = (y + 1) / 2.0
    return float(np.mean((p - c) ** 2))


# ----------------------------------------------------------------------
# Platt scaling
# ----------------------------------------------------------------------


def platt_scale(scores, labels) -> tuple[float, float]:
    """Fit pi(s) = 1 / (1 + exp(A s + B)) by maximum likelihood.

    Damped Newton iteration; the normal equations are solved by least squares
    so constant-score (rank-deficient) inputs converge to the prevalence fit.
    Raises NumericError if 100 iterations do not reach tolerance 1e-8.
    """
    s, y = _check_scores_labels(scores, labels)
    c = (y + 1) / 2.0
    n_pos = float(np.sum(c))
    n_neg = float(len(c) - n_pos)
    theta = np.array([0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))])

    def nll_of(th):
        u = th[0] * s + th[1]
        return float(np.sum(c * log1pexp(u) + (1.0 - c) * log1pexp(-u)))

    f = nll_of(theta)
    for _ in range(PLATT_MAX_ITER):
        u = theta[0] * s + theta[1]
        p = sigmoid(-u)
        resid = c - p
        g = np.array([float(resid @ s), float(np.sum(resid))])
        q = p * (1.0 - p)
        H = np.array(
            [
                [float(q @ (s * s)), float(q @ s)],
                [float(q @ s), float(np.sum(q))],
            ]
        )
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        damp = 1.0
        f_new = nll_of(theta - damp * step)
        while f_new > f and damp > 1e-12:
            damp *= 0.5
            f_new = nll_of(theta - damp * step)
        theta = theta - damp * step
        if abs(f - f_new) <= PLATT_TOL and float(np.max(np.abs(g))) <= 1e-6:
            return float(theta[0]), float(theta[1])
        f = f_new
    raise NumericError("Platt scaling did not converge within 100 iterations")


def platt_probabilities(scores, a: float, b: float) -> np.ndarray:
    """Apply fitted Platt coefficients: 1 / (1 + exp(A s + B))."""
    s = np.asarray(scores, dtype=float)
    return sigmoid(-(a * s + b))


# ----------------------------------------------------------------------
# report assembly
# ----------------------------------------------------------------------


def evaluate_scores(
    scores,
    labels,
    probabilities=None,
    platt: Optional[tuple[float, float]] = None,
    folds: tuple[FoldMetrics, ...] = (),
    subgroup: Optional[str] = None,
) -> EvaluationReport:
    """Assemble a full report from held-out scores.

    When ``probabilities`` is not given, Platt coefficients are fitted on the
    scores themselves (in-sample calibration) and used for the Brier score.
    """
    s, y = _check_scores_labels(scores, labels)
    if probabilities is None:
        if platt is None:
            platt = platt_scale(s, y)
        probabilities = platt_probabilities(s, *platt)
    points, auc = roc_and_auc(s, y)
    j, j_cut = youden(s, y)
    pr, pr_cut = prec_rec_balance(s, y)
    return EvaluationReport(
        n=int(s.size),
        n_positive=int(np.sum(y == 1)),
        auc=auc,
        youden_j=j,
        youden_cutoff=j_cut,
        prec_rec_balance=pr,
        prec_rec_cutoff=pr_cut,
        brier=brier(probabilities, y),
        platt=platt,
        roc=points,
        folds=folds,
        subgroup=subgroup,
    )


def evaluate_subgroup(
    cohort: Sequence[PatientRecord],
    scores,
    probabilities,
    predicate: Callable[[PatientRecord], bool],
    label: Optional[str] = None,
) -> EvaluationReport:
    """Metrics recomputed on the filtered records, without any refitting.

    ``scores`` and ``probabilities`` must align with ``cohort``; probabilities
    are reused as-is, so the report's Platt field is empty.
    """
    s = np.asarray(scores, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    if len(cohort) != s.size or p.size != s.size:
        raise ValidationError("cohort, scores, and probabilities must align")
    mask = np.array([bool(predicate(r)) for r in cohort])
    if not mask.any():
        raise ValidationError("subgroup is empty")
    y = np.array([r.outcome for r in cohort])[mask]
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValidationError("subgroup contains a single outcome class")
    return evaluate_scores(
        s[mask], y, probabilities=p[mask], platt=None, subgroup=label
    )


# ----------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------


def stratified_fold_assignment(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic stratified fold ids with total sizes differing by <= 1.

    Each class is shuffled and dealt round-robin; the dealing start rotates
    between classes so remainders spread over different folds.
    """
    y = np.asarray(labels)
    n = y.size
    if not (2 <= k <= n):
        raise ValidationError(f"fold count must lie in [2, {n}], got {k}")
    assignment = np.empty(n, dtype=np.int64)
    start = 0
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        idx = rng.permutation(idx)
        for j, i in enumerate(idx):
            assignment[i] = (start + j) % k
        start = (start + idx.size) % k
    return assignment


def _fold_assignment(labels, folds, seed: int) -> tuple[np.ndarray, int]:
    y = np.asarray(labels)
    n = y.size
    if folds == "loo":
        if np.sum(y == 1) < 2 or np.sum(y == -1) < 2:
            raise ValidationError(
                "leave-one-out needs at least two records per class"
            )
        return np.arange(n, dtype=np.int64), n
    k = int(folds)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        assignment = stratified_fold_assignment(y, k, rng)
        ok = all(
            np.any(y[assignment != f] == 1) and np.any(y[assignment != f] == -1)
            for f in range(k)
        )
        if ok:
            return assignment, k
    raise ValidationError(
        "could not build folds whose training splits keep both classes"
    )


def cross_validate(
    cohort: Sequence[PatientRecord],
    definition: ScoreDefinition,
    config: OptimizerConfig,
    folds="loo",
    n_jobs: int = 1,
) -> tuple[EvaluationReport, tuple[ScoredRow, ...]]:
    """Fit on each training split, score its held-out records, pool.

    ``folds`` is "loo" or a fold count for seeded stratified k-fold.  Platt
    coefficients are fitted within each training split and produce the
    held-out probabilities; pooled metrics are computed over all held-out
    scores, and the report's own Platt pair is refitted on the pooled scores
    as a descriptive summary.  Per-fold rows are omitted for leave-one-out,
    where single-record test splits make fold metrics undefined.

    Deterministic given (cohort, definition, config, folds); folds may be
    evaluated concurrently with ``n_jobs`` > 1 without changing any output.
    """
    records = list(cohort)
    labels = np.array([r.outcome for r in records])
    assignment, k = _fold_assignment(labels, folds, config.seed)
    loo = folds == "loo"

    def run_fold(f: int):
        test_mask = assignment == f
        train = [r for r, m in zip(records, test_mask) if not m]
        test = [r for r, m in zip(records, test_mask) if m]
        params, _ = fit(train, definition, config)
        train_design = CohortDesign(train, definition)
        s_train = train_design.scores_for(params)
        y_train = train_design.y.astype(int)
        a, b = platt_scale(s_train, y_train)
        test_design = CohortDesign(test, definition)
        s_test = test_design.scores_for(params)
        p_test = platt_probabilities(s_test, a, b)
        return f, np.flatnonzero(test_mask), s_test, p_test, (a, b)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_fold, range(k)))
    else:
        results = [run_fold(f) for f in range(k)]
    results.sort(key=lambda r: r[0])

    n = len(records)
    scores = np.empty(n)
    probs = np.empty(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_rows: list[FoldMetrics] = []
    for f, idx, s_test, p_test, (a, b) in results:
        scores[idx] = s_test
        probs[idx] = p_test
        fold_of[idx] = f
        if loo:
            continue
        y_test = labels[idx]
        single_class = not (np.any(y_test == 1) and np.any(y_test == -1))
        if single_class:
            auc = j = j_cut = pr = pr_cut = None
        else:
            _, auc = roc_and_auc(s_test, y_test)
            j, j_cut = youden(s_test, y_test)
            pr, pr_cut = prec_rec_balance(s_test, y_test)
        fold_rows.append(
            FoldMetrics(
                fold=f,
                n_test=int(idx.size),
                n_positive=int(np.sum(y_test == 1)),
                auc=auc,
                youden_j=j,
                youden_cutoff=j_cut,
                prec_rec_balance=pr,
                prec_rec_cutoff=pr_cut,
                brier=brier(p_test, y_test),
                platt_a=a,
                platt_b=b,
            )
        )

    pooled_platt = platt_scale(scores, labels)
    report = evaluate_scores(
        scores,
        labels,
        probabilities=probs,
        platt=pooled_platt,
        folds=tuple(fold_rows),
    )
    rows = tuple(
        ScoredRow(
            id=r.id,
            fold=int(fold_of[i]),
            score=float(scores[i]),
            probability=float(probs[i]),
            label=int(labels[i]),
        )
        for i, r in enumerate(records)
    )
    return report, rows
