"""Domain types and feature transforms for soft-threshold additive risk scores.

A score definition lists raw clinical variables, age bands, and an ordered set
of scoring features.  A step feature turns a continuous variable into a value
in [0, 1] through a logistic ramp around an age-resolved threshold; a binary
feature contributes an indicator.  The classic table-based score is recovered
by `hard_score`, and the smooth replacement by `transform_record` plus
`linear_score`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ContractViolation, ValidationError
from .numerics import sigmoid

logger = logging.getLogger("softscore")

MAX_VALUED = "max-valued"
MIN_VALUED = "min-valued"
BINARY = "binary"

UP = "up"
DOWN = "down"

#: provenance flags carried by FeatureVector entries
TRANSFORMED = "transformed"
MISSING_ZERO = "missing-zero"
BINARY_ENTRY = "binary"


@dataclass(frozen=True)
class RawVariable:
    """A measured clinical quantity.

    ``kind`` states how the worst value over an observation window was taken:
    ``max-valued`` variables are risky when high, ``min-valued`` when low,
    ``binary`` variables are 0/1 indicators.
    """

    name: str
    kind: str
    unit: str = ""
    physiological_range: tuple[float, float] = (0.0, 1.0)
    normal_value: Optional[float] = None

    def __post_init__(self):
        if not self.name:
            raise ValidationError("variable name must be non-empty")
        if self.kind not in (MAX_VALUED, MIN_VALUED, BINARY):
            raise ValidationError(
                f"variable {self.name!r}: unknown kind {self.kind!r}"
            )
        lo, hi = self.physiological_range
        if not (float(lo) < float(hi)):
            raise ValidationError(
                f"variable {self.name!r}: physiological_range must satisfy lo < hi"
            )
        object.__setattr__(self, "physiological_range", (float(lo), float(hi)))
        if self.normal_value is not None:
            v = float(self.normal_value)
            if not (lo <= v <= hi):
                raise ValidationError(
                    f"variable {self.name!r}: normal_value {v} outside physiological_range"
                )
            object.__setattr__(self, "normal_value", v)

    @property
    def direction(self) -> Optional[str]:
        """UP for max-valued, DOWN for min-valued, None for binary."""
        if self.kind == MAX_VALUED:
            return UP
        if self.kind == MIN_VALUED:
            return DOWN
        return None


@dataclass(frozen=True)
class AgeBand:
    """Half-open age interval [min_age_months, max_age_months)."""

    label: str
    min_age_months: int
    max_age_months: int

    def __post_init__(self):
        if not self.label:
            raise ValidationError("age band label must be non-empty")
        if not (0 <= self.min_age_months < self.max_age_months):
            raise ValidationError(
                f"age band {self.label!r}: need 0 <= min < max, "
                f"got [{self.min_age_months}, {self.max_age_months})"
            )

    def contains(self, age_months: float) -> bool:
        return self.min_age_months <= age_months < self.max_age_months


@dataclass(frozen=True)
class FeatureStep:
    """One threshold step of a continuous variable.

    ``thresholds`` maps age-band labels to the hard threshold used for
    patients in that band.  ``initial_weight`` is the point value of the step
    in the existing table-based score.
    """

    variable: RawVariable
    step_index: int
    thresholds: Mapping[str, float]
    initial_weight: float
    or_group: Optional[str] = None

    def __post_init__(self):
        if self.variable.kind == BINARY:
            raise ValidationError(
                f"feature for {self.variable.name!r}: binary variables cannot carry steps"
            )
        if self.step_index < 0:
            raise ValidationError(
                f"feature {self.variable.name!r}: step_index must be >= 0"
            )
        if not self.thresholds:
            raise ValidationError(
                f"feature {self.variable.name!r}: thresholds must be non-empty"
            )
        object.__setattr__(
            self, "thresholds", {str(k): float(v) for k, v in self.thresholds.items()}
        )
        if not (float(self.initial_weight) > 0):
            raise ValidationError(
                f"feature {self.variable.name!r}: initial_weight must be positive"
            )
        object.__setattr__(self, "initial_weight", float(self.initial_weight))
        if self.or_group is not None and not self.or_group:
            raise ValidationError("or_group label must be non-empty when present")

    @property
    def direction(self) -> str:
        return UP if self.variable.kind == MAX_VALUED else DOWN

    @property
    def key(self) -> str:
        return f"{self.variable.name}:step{self.step_index}"


@dataclass(frozen=True)
class BinaryFeature:
    """An indicator feature contributing its weight when the value equals 1."""

    variable: RawVariable
    initial_weight: float
    or_group: Optional[str] = None

    def __post_init__(self):
        if self.variable.kind != BINARY:
            raise ValidationError(
                f"binary feature requires a binary variable, got {self.variable.name!r}"
            )
        if not (float(self.initial_weight) > 0):
            raise ValidationError(
                f"feature {self.variable.name!r}: initial_weight must be positive"
            )
        object.__setattr__(self, "initial_weight", float(self.initial_weight))
        if self.or_group is not None and not self.or_group:
            raise ValidationError("or_group label must be non-empty when present")

    @property
    def key(self) -> str:
        return self.variable.name


Feature = Union[FeatureStep, BinaryFeature]


@dataclass(frozen=True)
class Block:
    """All feature indices belonging to one raw variable."""

    variable: str
    feature_indices: tuple[int, ...]


@dataclass(frozen=True)
class ScoreDefinition:
    """A complete score: variables, age bands, and the ordered feature list.

    Feature order fixes the layout of every parameter vector.  Weights carry
    one entry per feature; slopes one entry per step feature; thresholds one
    entry per (step feature, age band) pair, bands ordered by min age.
    """

    name: str
    variables: tuple[RawVariable, ...]
    features: tuple[Feature, ...]
    age_bands: tuple[AgeBand, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "age_bands", tuple(self.age_bands))
        self._validate()

    def _validate(self):
        if not self.name:
            raise ValidationError("score definition needs a name")
        if not self.features:
            raise ValidationError("score definition needs at least one feature")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValidationError("variable names must be unique")
        labels = [b.label for b in self.age_bands]
        if len(set(labels)) != len(labels):
            raise ValidationError("age band labels must be unique")
        by_name = {v.name: v for v in self.variables}
        band_by_label = {b.label: b for b in self.age_bands}
        for f in self.features:
            reg = by_name.get(f.variable.name)
            if reg is None or reg != f.variable:
                raise ValidationError(
                    f"feature {f.key!r} references a variable not declared in the definition"
                )
            if isinstance(f, FeatureStep):
                for lab in f.thresholds:
                    if lab not in band_by_label:
                        raise ValidationError(
                            f"feature {f.key!r}: unknown age band {lab!r}"
                        )
        keys = [f.key for f in self.features]
        if len(set(keys)) != len(keys):
            raise ValidationError("feature keys must be unique (variable, step_index)")
        self._validate_steps(band_by_label)

    def _validate_steps(self, band_by_label):
        lo = min(b.min_age_months for b in self.age_bands) if self.age_bands else 0
        hi = max(b.max_age_months for b in self.age_bands) if self.age_bands else 0
        steps_by_var: dict[str, list[FeatureStep]] = {}
        for f in self.features:
            if isinstance(f, FeatureStep):
                steps_by_var.setdefault(f.variable.name, []).append(f)
        for var, steps in steps_by_var.items():
            idx = [s.step_index for s in steps]
            if len(set(idx)) != len(idx):
                raise ValidationError(f"variable {var!r}: duplicate step_index")
            band_sets = {frozenset(s.thresholds) for s in steps}
            if len(band_sets) != 1:
                raise ValidationError(
                    f"variable {var!r}: all steps must use the same age-band set"
                )
            bands = sorted(
                (band_by_label[lab] for lab in next(iter(band_sets))),
                key=lambda b: b.min_age_months,
            )
            cursor = lo
            for b in bands:
                if b.min_age_months != cursor:
                    raise ValidationError(
                        f"variable {var!r}: age bands must tile [{lo}, {hi}) "
                        f"without gaps or overlap"
                    )
                cursor = b.max_age_months
            if cursor != hi:
                raise ValidationError(
                    f"variable {var!r}: age bands must cover ages up to {hi}"
                )
            ordered = sorted(steps, key=lambda s: s.step_index)
            sign = 1.0 if ordered[0].direction == UP else -1.0
            for a, b in zip(ordered, ordered[1:]):
                for lab in a.thresholds:
                    if not (sign * b.thresholds[lab] > sign * a.thresholds[lab]):
                        raise ValidationError(
                            f"variable {var!r}: thresholds of successive steps must be "
                            f"strictly {'increasing' if sign > 0 else 'decreasing'} "
                            f"in band {lab!r}"
                        )

    # ------------------------------------------------------------------
    # derived layout
    # ------------------------------------------------------------------

    @cached_property
    def variable_by_name(self) -> Mapping[str, RawVariable]:
        return {v.name: v for v in self.variables}

    @cached_property
    def band_by_label(self) -> Mapping[str, AgeBand]:
        return {b.label: b for b in self.age_bands}

    @cached_property
    def step_feature_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, f in enumerate(self.features) if isinstance(f, FeatureStep)
        )

    @cached_property
    def binary_feature_indices(self) -> tuple[int, ...]:
        return tuple(
            i for i, f in enumerate(self.features) if isinstance(f, BinaryFeature)
        )

    @property
    def n_weights(self) -> int:
        return len(self.features)

    @property
    def n_slopes(self) -> int:
        return len(self.step_feature_indices)

    @property
    def n_thresholds(self) -> int:
        return len(self.threshold_layout)

    @cached_property
    def threshold_layout(self) -> tuple[tuple[int, str], ...]:
        """Flattened (feature index, band label) pairs defining the t vector."""
        layout = []
        for i in self.step_feature_indices:
            f = self.features[i]
            labs = sorted(
                f.thresholds, key=lambda lab: self.band_by_label[lab].min_age_months
            )
            layout.extend((i, lab) for lab in labs)
        return tuple(layout)

    @cached_property
    def threshold_index(self) -> Mapping[tuple[int, str], int]:
        return {pair: m for m, pair in enumerate(self.threshold_layout)}

    @cached_property
    def slope_index(self) -> Mapping[int, int]:
        """Feature index -> position in the slope vector."""
        return {fi: j for j, fi in enumerate(self.step_feature_indices)}

    @cached_property
    def blocks(self) -> tuple[Block, ...]:
        """Feature indices grouped by raw variable, in order of first use."""
        order: list[str] = []
        members: dict[str, list[int]] = {}
        for i, f in enumerate(self.features):
            var = f.variable.name
            if var not in members:
                order.append(var)
                members[var] = []
            members[var].append(i)
        return tuple(Block(v, tuple(members[v])) for v in order)

    @cached_property
    def threshold_chains(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Ordered t-vector index chains, one per (variable, age band).

        Each chain lists the threshold entries of a variable's steps for one
        band, in step order; projections must keep every chain monotone.
        """
        chains = []
        for block in self.blocks:
            steps = [
                i
                for i in block.feature_indices
                if isinstance(self.features[i], FeatureStep)
            ]
            if not steps:
                continue
            steps = sorted(steps, key=lambda i: self.features[i].step_index)
            direction = self.features[steps[0]].direction
            labels = sorted(
                self.features[steps[0]].thresholds,
                key=lambda lab: self.band_by_label[lab].min_age_months,
            )
            for lab in labels:
                chains.append(
                    (direction, tuple(self.threshold_index[(i, lab)] for i in steps))
                )
        return tuple(chains)

    @cached_property
    def feature_keys(self) -> tuple[str, ...]:
        return tuple(f.key for f in self.features)

    @property
    def population_age_range(self) -> tuple[int, int]:
        return (
            min(b.min_age_months for b in self.age_bands),
            max(b.max_age_months for b in self.age_bands),
        )

    def resolve_band(self, feature_index: int, age_months: float) -> str:
        """Age-band label applying to ``age_months`` for a step feature."""
        f = self.features[feature_index]
        if not isinstance(f, FeatureStep):
            raise ContractViolation(f"feature {f.key!r} has no age-banded thresholds")
        for lab in f.thresholds:
            if self.band_by_label[lab].contains(age_months):
                return lab
        raise ValidationError(
            f"age {age_months} months falls outside every age band of feature {f.key!r}"
        )


@dataclass(frozen=True)
class PatientRecord:
    """One subject: id, age, outcome in {-1, +1}, and raw values.

    A value of ``None`` (or an absent key) marks the variable as MISSING;
    no sentinel numbers are used.
    """

    id: str
    age_months: int
    outcome: int
    values: Mapping[str, Optional[float]]

    def __post_init__(self):
        if self.outcome not in (-1, 1):
            raise ValidationError(
                f"record {self.id!r}: outcome must be -1 or +1, got {self.outcome!r}"
            )
        if self.age_months < 0:
            raise ValidationError(f"record {self.id!r}: negative age")
        vals = {}
        for k, v in self.values.items():
            vals[str(k)] = None if v is None else float(v)
        object.__setattr__(self, "values", vals)

    def value(self, variable: str) -> Optional[float]:
        return self.values.get(variable)


@dataclass(frozen=True, eq=False)
class ScoreParameters:
    """Slopes, thresholds, and weights tied to a definition's feature layout.

    Arrays are stored read-only.  Slopes are non-negative, weights strictly
    positive, and within each variable the thresholds keep the step order of
    the definition (equal values are allowed: steps may collapse).
    """

    definition: ScoreDefinition
    slopes: np.ndarray
    thresholds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.array(self.slopes, dtype=float)
        t = np.array(self.thresholds, dtype=float)
        w = np.array(self.weights, dtype=float)
        d = self.definition
        if a.shape != (d.n_slopes,):
            raise ContractViolation(
                f"slopes: expected shape ({d.n_slopes},), got {a.shape}"
            )
        if t.shape != (d.n_thresholds,):
            raise ContractViolation(
                f"thresholds: expected shape ({d.n_thresholds},), got {t.shape}"
            )
        if w.shape != (d.n_weights,):
            raise ContractViolation(
                f"weights: expected shape ({d.n_weights},), got {w.shape}"
            )
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ContractViolation("slopes must be finite and >= 0")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ContractViolation("weights must be finite and > 0")
        if not np.all(np.isfinite(t)):
            raise ContractViolation("thresholds must be finite")
        self._check_threshold_order(d, t)
        for arr in (a, t, w):
            arr.flags.writeable = False
        object.__setattr__(self, "slopes", a)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "weights", w)

    @staticmethod
    def _check_threshold_order(d: ScoreDefinition, t: np.ndarray):
        for direction, chain in d.threshold_chains:
            vals = t[list(chain)]
            sign = 1.0 if direction == UP else -1.0
            if np.any(sign * np.diff(vals) < 0):
                raise ContractViolation(
                    "thresholds must preserve the step order within each variable"
                )

    @classmethod
    def initial(
        cls, definition: ScoreDefinition, a_init: float = 0.01
    ) -> "ScoreParameters":
        """Starting point of the optimizer: flat slopes, table thresholds and weights."""
        if not (a_init > 0):
            raise ValidationError("a_init must be positive")
        a = np.full(definition.n_slopes, float(a_init))
        t = np.array(
            [
                definition.features[i].thresholds[lab]
                for i, lab in definition.threshold_layout
            ],
            dtype=float,
        )
        w = np.array([f.initial_weight for f in definition.features], dtype=float)
        return cls(definition, a, t, w)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Transformed feature values z with per-entry provenance flags."""

    z: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim != 1 or len(self.provenance) != z.shape[0]:
            raise ContractViolation("provenance must carry one flag per entry")
        if np.any(z < 0) or np.any(z > 1):
            raise ContractViolation("feature values must lie in [0, 1]")
        for flag, v in zip(self.provenance, z):
            if flag == MISSING_ZERO and v != 0.0:
                raise ContractViolation("missing entries must transform to exactly 0")
            if flag not in (TRANSFORMED, MISSING_ZERO, BINARY_ENTRY):
                raise ContractViolation(f"unknown provenance flag {flag!r}")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return self.z.shape[0]


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------


def transform_feature(
    x: Optional[float], direction: str, a: float, t: float
) -> float:
    """Soft step value of a single observation.

    Up-steps rise from 0 to 1 as x crosses t; down-steps fall from 1 to 0.
    Missing observations (``x is None``) contribute exactly 0.  The two
    directions sum to exactly 1 for any observed x.
    """
    if direction not in (UP, DOWN):
        raise ContractViolation(f"unknown direction {direction!r}")
    if not (a >= 0):
        raise ContractViolation("slope must be non-negative; project first")
    if x is None:
        return 0.0
    u = a * (float(x) - float(t))
    s = float(sigmoid(u))
    return s if direction == UP else 1.0 - s


def transform_record(
    record: PatientRecord, definition: ScoreDefinition, params: ScoreParameters
) -> FeatureVector:
    """Full feature vector of one record under the given parameters."""
    _check_same_definition(definition, params)
    z = np.zeros(definition.n_weights)
    prov: list[str] = []
    for i, f in enumerate(definition.features):
        x = record.value(f.variable.name)
        if isinstance(f, FeatureStep):
            if x is None:
                prov.append(MISSING_ZERO)
                continue
            lab = definition.resolve_band(i, record.age_months)
            a = params.slopes[definition.slope_index[i]]
            t = params.thresholds[definition.threshold_index[(i, lab)]]
            z[i] = transform_feature(x, f.direction, a, t)
            prov.append(TRANSFORMED)
        else:
            if x is None:
                prov.append(MISSING_ZERO)
                continue
            z[i] = 1.0 if x == 1.0 else 0.0
            prov.append(BINARY_ENTRY)
    return FeatureVector(z, tuple(prov))


def linear_score(z, w) -> float:
    """Weighted sum w'z of a feature vector."""
    zv = z.z if isinstance(z, FeatureVector) else np.asarray(z, dtype=float)
    wv = np.asarray(w, dtype=float)
    if zv.shape != wv.shape:
        raise ContractViolation(
            f"dimension mismatch: z has shape {zv.shape}, w has shape {wv.shape}"
        )
    return float(np.dot(wv, zv))


def mortality_probability(score: float) -> float:
    """P(y = +1) = 1 / (1 + exp(-score)); safe for |score| up to 1e4 and beyond."""
    return float(sigmoid(score))


def survival_probability(score: float) -> float:
    """P(y = -1); complements mortality_probability to exactly 1."""
    return 1.0 - mortality_probability(score)


def hard_score(record: PatientRecord, definition: ScoreDefinition) -> float:
    """Classic table score: sum of weights of triggered steps and indicators.

    A step triggers when the observed value crosses its age-resolved hard
    threshold strictly (above for max-valued, below for min-valued); a value
    exactly at the threshold does not trigger.  Missing values never trigger.
    Within an OR-group the group contributes the maximum triggered weight;
    multiple triggered steps of one variable outside OR-groups add up.
    """
    total = 0.0
    group_best: dict[str, float] = {}
    for i, f in enumerate(definition.features):
        x = record.value(f.variable.name)
        if x is None:
            continue
        if isinstance(f, FeatureStep):
            lab = definition.resolve_band(i, record.age_months)
            t = f.thresholds[lab]
            triggered = x > t if f.direction == UP else x < t
        else:
            triggered = x == 1.0
        if not triggered:
            continue
        if f.or_group is not None:
            group_best[f.or_group] = max(
                group_best.get(f.or_group, 0.0), f.initial_weight
            )
        else:
            total += f.initial_weight
    return total + sum(group_best.values())


def validate_cohort(
    cohort: Sequence[PatientRecord],
    definition: ScoreDefinition,
    sanity_margin: float = 0.0,
) -> list[str]:
    """Warn (never reject) about values outside the expected windows.

    The sanity window is the physiological range widened on each side by
    ``sanity_margin`` times the range width.  Returns the warning messages,
    which are also emitted on the package logger.
    """
    warnings = []
    for r in cohort:
        for v in definition.variables:
            x = r.value(v.name)
            if x is None:
                continue
            if v.kind == BINARY:
                if x not in (0.0, 1.0):
                    warnings.append(
                        f"record {r.id!r}: {v.name} = {x} is not a 0/1 indicator"
                    )
                continue
            lo, hi = v.physiological_range
            pad = sanity_margin * (hi - lo)
            if not (lo - pad <= x <= hi + pad):
                warnings.append(
                    f"record {r.id!r}: {v.name} = {x} outside "
                    f"[{lo - pad}, {hi + pad}] {v.unit}".rstrip()
                )
    for msg in warnings:
        logger.warning(msg)
    return warnings


def _check_same_definition(definition: ScoreDefinition, params: ScoreParameters):
    if params.definition is not definition and params.definition != definition:
        raise ContractViolation("parameters belong to a different score definition")
