"""Vectorized cohort representation used by the optimizer and batch scoring.

Per-record transforms are exact but slow in the inner loop of a fit; this
module lays the cohort out as numpy arrays once and evaluates scores,
likelihoods, and gradients column-wise.  The arithmetic mirrors the scalar
operations in :mod:`softscore.model` entry for entry.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import (
    UP,
    PatientRecord,
    ScoreDefinition,
    ScoreParameters,
)
from .numerics import log1pexp, sigmoid


class CohortDesign:
    """Numeric layout of a cohort against a score definition.

    Attributes
    ----------
    y : (n,) outcomes in {-1, +1}
    step_x : (n, n_slopes) raw values of step features, NaN where missing
    step_observed : (n, n_slopes) bool
    step_up : (n_slopes,) bool, True for up-steps
    step_wcol : (n_slopes,) weight-vector column of each step feature
    t_index : (n, n_slopes) index into the threshold vector resolved by age
    bin_z : (n, n_binary) 0/1 indicators, 0 where missing
    bin_observed : (n, n_binary) bool
    bin_wcol : (n_binary,) weight-vector column of each binary feature
    """

    def __init__(self, cohort: Sequence[PatientRecord], definition: ScoreDefinition):
        if not cohort:
            raise ValidationError("cohort is empty")
        self.definition = definition
        d = definition
        n = len(cohort)
        self.n = n
        self.ids = tuple(r.id for r in cohort)
        self.ages = np.array([r.age_months for r in cohort], dtype=float)
        self.y = np.array([r.outcome for r in cohort], dtype=float)

        m_a = d.n_slopes
        self.step_x = np.full((n, m_a), np.nan)
        self.step_observed = np.zeros((n, m_a), dtype=bool)
        self.t_index = np.zeros((n, m_a), dtype=np.int64)
        self.step_up = np.array(
            [d.features[fi].direction == UP for fi in d.step_feature_indices],
            dtype=bool,
        ).reshape(-1)
        self.step_wcol = np.array(d.step_feature_indices, dtype=np.int64)

        m_b = len(d.binary_feature_indices)
        self.bin_z = np.zeros((n, m_b))
        self.bin_observed = np.zeros((n, m_b), dtype=bool)
        self.bin_wcol = np.array(d.binary_feature_indices, dtype=np.int64)

        for r_idx, rec in enumerate(cohort):
            for j, fi in enumerate(d.step_feature_indices):
                f = d.features[fi]
                lab = d.resolve_band(fi, rec.age_months)
                self.t_index[r_idx, j] = d.threshold_index[(fi, lab)]
                x = rec.value(f.variable.name)
                if x is not None:
                    self.step_x[r_idx, j] = x
                    self.step_observed[r_idx, j] = True
            for b, fi in enumerate(d.binary_feature_indices):
                f = d.features[fi]
                x = rec.value(f.variable.name)
                if x is not None:
                    self.bin_observed[r_idx, b] = True
                    if x == 1.0:
                        self.bin_z[r_idx, b] = 1.0

    # ------------------------------------------------------------------

    @property
    def has_both_classes(self) -> bool:
        return bool(np.any(self.y > 0) and np.any(self.y < 0))

    def unobserved_features(self) -> tuple[str, ...]:
        """Keys of features with no observed value anywhere in the cohort."""
        keys = []
        for j, fi in enumerate(self.definition.step_feature_indices):
            if not self.step_observed[:, j].any():
                keys.append(self.definition.features[fi].key)
        for b, fi in enumerate(self.definition.binary_feature_indices):
            if not self.bin_observed[:, b].any():
                keys.append(self.definition.features[fi].key)
        return tuple(keys)

    def step_z(
        self, a: np.ndarray, t: np.ndarray, cols: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Soft step values for the selected slope columns; 0 where missing.

        Matches transform_feature exactly: up gives sigmoid(a (x - t)), down
        gives 1 minus that value.
        """
        sel = slice(None) if cols is None else cols
        obs = self.step_observed[:, sel]
        diff = np.where(obs, self.step_x[:, sel] - t[self.t_index[:, sel]], 0.0)
        s = sigmoid(a[sel] * diff)
        z = np.where(self.step_up[sel], s, 1.0 - s)
        return np.where(obs, z, 0.0)

    def step_diff(self, t: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
        """x - t with zeros where missing, for the selected columns."""
        sel = slice(None) if cols is None else cols
        obs = self.step_observed[:, sel]
        return np.where(obs, self.step_x[:, sel] - t[self.t_index[:, sel]], 0.0)

    def scores(self, a: np.ndarray, t: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Linear scores w'z for every record."""
        s = np.zeros(self.n)
        if self.step_wcol.size:
            s = s + self.step_z(a, t) @ w[self.step_wcol]
        if self.bin_wcol.size:
            s = s + self.bin_z @ w[self.bin_wcol]
        return s

    def scores_for(self, params: ScoreParameters) -> np.ndarray:
        if (
            params.definition is not self.definition
            and params.definition != self.definition
        ):
            raise ValidationError("parameters belong to a different score definition")
        return self.scores(params.slopes, params.thresholds, params.weights)

    def z_matrix(self, a: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Full (n, n_weights) feature matrix in definition feature order."""
        Z = np.zeros((self.n, self.definition.n_weights))
        if self.step_wcol.size:
            Z[:, self.step_wcol] = self.step_z(a, t)
        if self.bin_wcol.size:
            Z[:, self.bin_wcol] = self.bin_z
        return Z

    def nll_of_scores(self, s: np.ndarray) -> float:
        """Sum over records of log(1 + exp(-y * s))."""
        return float(np.sum(log1pexp(-self.y * s)))


def soft_scores(
    cohort: Sequence[PatientRecord],
    definition: ScoreDefinition,
    params: ScoreParameters,
) -> np.ndarray:
    """Batch linear scores; equals transform_record + linear_score per record."""
    return CohortDesign(cohort, definition).scores_for(params)


def hard_scores(
    cohort: Sequence[PatientRecord], definition: ScoreDefinition
) -> np.ndarray:
    """Batch classic table scores."""
    from .model import hard_score

    return np.array([hard_score(r, definition) for r in cohort], dtype=float)
