"""Missing-value imputation and the ridge logistic reference model.

kNN imputation measures record similarity over commonly observed variables
only: the Euclidean distance between standardized values is divided by the
number of shared variables, and a missing cell takes the average of that
variable over the k nearest records that observe it, walking further down
the neighbor list when closer records lack it.  Every imputed value is
computed from the original (not already-imputed) cohort, so a second pass is
a no-op.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import PatientRecord, ScoreDefinition
from .numerics import log1pexp, sigmoid

logger = logging.getLogger("softscore")

KNN = "knn"
MEAN = "mean"
NORMAL = "normal"


@dataclass(frozen=True)
class ImputationMethod:
    """Imputation strategy: kNN with a neighbor count, column mean, or the
    score's normal (healthy) values."""

    kind: str
    k: int = 5
    normal_values: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.kind not in (KNN, MEAN, NORMAL):
            raise ValidationError(f"unknown imputation method {self.kind!r}")
        if self.kind == KNN and self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.kind == NORMAL:
            if not self.normal_values:
                raise ValidationError("normal imputation needs a normal-value table")
            object.__setattr__(
                self,
                "normal_values",
                {str(k): float(v) for k, v in self.normal_values.items()},
            )

    @classmethod
    def knn(cls, k: int = 5) -> "ImputationMethod":
        return cls(KNN, k=k)

    @classmethod
    def mean(cls) -> "ImputationMethod":
        return cls(MEAN)

    @classmethod
    def normal_from_definition(cls, definition: ScoreDefinition) -> "ImputationMethod":
        """Normal-value table from the definition; every continuous variable
        must declare one."""
        table = {}
        missing = []
        for v in definition.variables:
            if v.normal_value is not None:
                table[v.name] = v.normal_value
            elif v.kind != "binary":
                missing.append(v.name)
        if missing:
            raise ValidationError(
                f"variables without a normal_value: {', '.join(missing)}"
            )
        return cls(NORMAL, normal_values=table)


def _cohort_matrix(cohort: Sequence[PatientRecord]):
    variables: list[str] = []
    seen = set()
    for r in cohort:
        for name in r.values:
            if name not in seen:
                seen.add(name)
                variables.append(name)
    n, m = len(cohort), len(variables)
    X = np.full((n, m), np.nan)
    for i, r in enumerate(cohort):
        for j, name in enumerate(variables):
            v = r.value(name)
            if v is not None:
                X[i, j] = v
    return variables, X


def impute(
    cohort: Sequence[PatientRecord], method: ImputationMethod
) -> list[PatientRecord]:
    """Return a copy of the cohort with every missing value filled in.

    Deterministic; neighbor ties break on the earlier record.  Raises if a
    variable is observed nowhere, or if kNN is asked for more neighbors than
    records exist to supply (k > n - 1).
    """
    if not cohort:
        raise ValidationError("cohort is empty")
    variables, X = _cohort_matrix(cohort)
    observed = ~np.isnan(X)
    n = len(cohort)

    for j, name in enumerate(variables):
        if method.kind != NORMAL and not observed[:, j].any():
            raise ValidationError(f"variable {name!r} is observed nowhere")

    if method.kind == MEAN:
        fill = {
            j: float(np.mean(X[observed[:, j], j])) for j in range(len(variables))
        }
        filled = _fill_constant(X, observed, fill)
    elif method.kind == NORMAL:
        fill = {}
        for j, name in enumerate(variables):
            if not (~observed[:, j]).any():
                continue
            if name not in method.normal_values:
                raise ValidationError(
                    f"variable {name!r} is missing and has no normal_value"
                )
            fill[j] = method.normal_values[name]
        filled = _fill_constant(X, observed, fill)
    else:
        if method.k > n - 1:
            raise ValidationError(
                f"k = {method.k} exceeds the {n - 1} neighbors available"
            )
        filled = _fill_knn(X, observed, method.k)

    out = []
    for i, r in enumerate(cohort):
        values = {name: float(filled[i, j]) for j, name in enumerate(variables)}
        out.append(
            PatientRecord(
                id=r.id, age_months=r.age_months, outcome=r.outcome, values=values
            )
        )
    return out


def _fill_constant(X, observed, fill):
    filled = X.copy()
    for j, value in fill.items():
        col_missing = ~observed[:, j]
        filled[col_missing, j] = value
    return filled


def knn_distances(X: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """All-pairs distances over standardized values and shared variables.

    Entry (i, j) is sqrt(sum of squared standardized differences over the
    variables both records observe) divided by the number of those variables;
    infinite when they share none, or on the diagonal.
    """
    n, m = X.shape
    mu = np.empty(m)
    sd = np.empty(m)
    for j in range(m):
        col = X[observed[:, j], j]
        mu[j] = np.mean(col)
        sd[j] = np.std(col)
    Z = np.where(observed, (X - mu) / np.where(sd > 0, sd, 1.0), np.nan)
    Z = np.where(observed & (sd > 0), Z, np.where(observed, 0.0, np.nan))
    D = np.full((n, n), np.inf)
    for i in range(n):
        common = observed[i] & observed
        diff = np.where(common, Z - Z[i], 0.0)
        counts = common.sum(axis=1)
        with np.errstate(invalid="ignore"):
            d = np.sqrt(np.sum(diff * diff, axis=1)) / counts
        d[counts == 0] = np.inf
        d[i] = np.inf
        D[i] = d
    return D


def _fill_knn(X, observed, k):
    n = X.shape[0]
    filled = X.copy()
    col_means = {
        j: float(np.mean(X[observed[:, j], j])) for j in range(X.shape[1])
    }
    D = knn_distances(X, observed)
    for i in range(n):
        missing_cols = np.flatnonzero(~observed[i])
        if missing_cols.size == 0:
            continue
        order = np.argsort(D[i], kind="stable")
        for j in missing_cols:
            donors = []
            for cand in order:
                if not np.isfinite(D[i, cand]):
                    break
                if observed[cand, j]:
                    donors.append(X[cand, j])
                    if len(donors) == k:
                        break
            if donors:
                filled[i, j] = sum(donors) / len(donors)
            else:
                filled[i, j] = col_means[j]
    return filled


# ----------------------------------------------------------------------
# ridge logistic baseline
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RidgeLogisticFit:
    """Result of the penalized logistic baseline."""

    variables: tuple[str, ...]
    weights: np.ndarray
    intercept: float
    objective_history: tuple[float, ...]
    gradient_norm: float
    converged: bool

    def scores(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept

    def probabilities(self, X) -> np.ndarray:
        return sigmoid(self.scores(X))


def standardize_columns(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column z-scores; constant columns map to zero."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    Z = (X - mu) / np.where(sd > 0, sd, 1.0)
    Z[:, sd == 0] = 0.0
    return Z, mu, sd


def cohort_matrix(
    cohort: Sequence[PatientRecord], variables: Optional[Sequence[str]] = None
) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Complete-data design matrix plus labels; raises on missing cells."""
    if variables is None:
        variables, X = _cohort_matrix(cohort)
    else:
        variables = list(variables)
        X = np.full((len(cohort), len(variables)), np.nan)
        for i, r in enumerate(cohort):
            for j, name in enumerate(variables):
                v = r.value(name)
                if v is not None:
                    X[i, j] = v
    if np.isnan(X).any():
        raise ValidationError("cohort still contains missing values; impute first")
    y = np.array([r.outcome for r in cohort], dtype=float)
    return tuple(variables), X, y


def ridge_logistic_fit(
    cohort: Sequence[PatientRecord],
    lambda_ridge: float = 1.0,
    variables: Optional[Sequence[str]] = None,
    tol: float = 1e-6,
    max_iter: int = 20000,
) -> RidgeLogisticFit:
    """Gradient descent with Armijo line search on NLL + lambda ||beta||^2.

    The cohort must be complete (impute first) and is expected standardized;
    the intercept is unpenalized.  ``tol`` bounds the gradient norm at the
    reported optimum.  Deterministic.
    """
    if lambda_ridge < 0:
        raise ValidationError("lambda_ridge must be >= 0")
    names, X, y = cohort_matrix(cohort, variables)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValidationError("both outcome classes are required to fit")
    n, m = X.shape
    beta = np.zeros(m)
    # At beta = 0 the NLL is minimized over the intercept exactly at the
    # base-rate log-odds; starting there keeps the unpenalized direction from
    # dominating the iteration count when lambda is large.
    prevalence = float(np.mean(y == 1))
    b = float(np.log(prevalence / (1.0 - prevalence)))

    def objective(beta_, b_):
        s = X @ beta_ + b_
        return float(np.sum(log1pexp(-y * s)) + lambda_ridge * np.dot(beta_, beta_))

    def gradient(beta_, b_):
        s = X @ beta_ + b_
        r = sigmoid(-y * s)
        gb = -(X.T @ (y * r)) + 2.0 * lambda_ridge * beta_
        gi = float(-np.sum(y * r))
        return gb, gi

    history = [objective(beta, b)]
    converged = False
    gnorm = np.inf
    for _ in range(max_iter):
        gb, gi = gradient(beta, b)
        gnorm = float(np.sqrt(np.dot(gb, gb) + gi * gi))
        if gnorm < tol:
            converged = True
            break
        f0 = history[-1]
        d2 = gnorm * gnorm
        h = 1.0
        accepted = False
        for _ in range(61):
            f_try = objective(beta - h * gb, b - h * gi)
            # strict decrease: a step whose improvement is below float
            # resolution must not be accepted, or the loop spins in place
            if f_try < f0 and f_try <= f0 - 0.2 * h * d2:
                accepted = True
                break
            h *= 0.5
        if not accepted:
            break
        beta = beta - h * gb
        b = b - h * gi
        history.append(f_try)
    return RidgeLogisticFit(
        variables=names,
        weights=beta,
        intercept=float(b),
        objective_history=tuple(history),
        gradient_norm=gnorm,
        converged=converged,
    )
