"""Hand-built definitions, cohorts, and random instances shared by the tests."""
from __future__ import annotations

import numpy as np

from softscore.model import (
    BINARY,
    MAX_VALUED,
    MIN_VALUED,
    AgeBand,
    BinaryFeature,
    FeatureStep,
    PatientRecord,
    RawVariable,
    ScoreDefinition,
    ScoreParameters,
)

BAND_ALL = AgeBand("all", 0, 1200)


def rec(id, values, age=60, outcome=-1):
    return PatientRecord(id=str(id), age_months=age, outcome=outcome, values=values)


def mixed_definition(with_binary=True, or_group=None):
    """Two steps on an up variable, one on a down variable, optional binary.

    ``or_group`` (a label or None) is applied to the down step and the binary
    feature so OR-group handling can be exercised.
    """
    lactate = RawVariable(
        "lactate_max", MAX_VALUED, "mmol/L", (0.0, 30.0), normal_value=1.0
    )
    gcs = RawVariable("gcs_min", MIN_VALUED, "points", (3.0, 15.0), normal_value=15.0)
    variables = [lactate, gcs]
    features = [
        FeatureStep(lactate, 0, {"all": 4.0}, initial_weight=2.0),
        FeatureStep(lactate, 1, {"all": 8.0}, initial_weight=3.0),
        FeatureStep(gcs, 0, {"all": 8.0}, initial_weight=5.0, or_group=or_group),
    ]
    if with_binary:
        pupils = RawVariable("pupils_fixed", BINARY, "", (0.0, 1.0), normal_value=0.0)
        variables.append(pupils)
        features.append(BinaryFeature(pupils, initial_weight=4.0, or_group=or_group))
    return ScoreDefinition(
        name="mixed-test-score",
        variables=tuple(variables),
        features=tuple(features),
        age_bands=(BAND_ALL,),
    )


def banded_definition():
    """One up variable with two steps whose thresholds differ by age band."""
    hr = RawVariable("hr_max", MAX_VALUED, "bpm", (0.0, 350.0), normal_value=90.0)
    young = AgeBand("young", 0, 120)
    old = AgeBand("old", 120, 1200)
    features = (
        FeatureStep(hr, 0, {"young": 160.0, "old": 130.0}, initial_weight=2.0),
        FeatureStep(hr, 1, {"young": 190.0, "old": 160.0}, initial_weight=3.0),
    )
    return ScoreDefinition(
        name="banded-test-score",
        variables=(hr,),
        features=features,
        age_bands=(young, old),
    )


def random_instance(rng, n_records=12, allow_binary=True, allow_bands=True,
                    missing_rate=0.2, max_slope=3.0):
    """A random small (definition, parameters, cohort) triple.

    Variables are a random mix of up and down step variables (one or two
    steps each) plus an optional binary indicator; thresholds, slopes,
    weights, values, and the missingness pattern are all drawn from ``rng``.
    The cohort always contains both outcome classes.
    """
    n_up = int(rng.integers(0, 3))
    n_down = int(rng.integers(0, 3))
    if n_up + n_down == 0:
        n_up = 1
    use_binary = allow_binary and bool(rng.integers(0, 2))
    two_bands = allow_bands and bool(rng.integers(0, 2))
    if two_bands:
        bands = (AgeBand("young", 0, 120), AgeBand("old", 120, 1200))
    else:
        bands = (BAND_ALL,)
    labels = tuple(b.label for b in bands)

    variables = []
    features = []
    for k in range(n_up):
        v = RawVariable(f"up{k}", MAX_VALUED, "", (-8.0, 8.0))
        variables.append(v)
        n_steps = int(rng.integers(1, 3))
        base = {lab: float(rng.uniform(-4.0, 2.0)) for lab in labels}
        for s in range(n_steps):
            th = {lab: base[lab] + s * float(rng.uniform(0.5, 2.0)) for lab in labels}
            features.append(
                FeatureStep(v, s, th, initial_weight=float(rng.uniform(0.5, 4.0)))
            )
    for k in range(n_down):
        v = RawVariable(f"down{k}", MIN_VALUED, "", (-8.0, 8.0))
        variables.append(v)
        n_steps = int(rng.integers(1, 3))
        base = {lab: float(rng.uniform(-2.0, 4.0)) for lab in labels}
        for s in range(n_steps):
            th = {lab: base[lab] - s * float(rng.uniform(0.5, 2.0)) for lab in labels}
            features.append(
                FeatureStep(v, s, th, initial_weight=float(rng.uniform(0.5, 4.0)))
            )
    if use_binary:
        v = RawVariable("flag", BINARY, "", (0.0, 1.0))
        variables.append(v)
        features.append(BinaryFeature(v, initial_weight=float(rng.uniform(0.5, 4.0))))

    definition = ScoreDefinition(
        name="random-test-score",
        variables=tuple(variables),
        features=tuple(features),
        age_bands=bands,
    )

    slopes = rng.uniform(0.05, max_slope, size=definition.n_slopes)
    thresholds = np.empty(definition.n_thresholds)
    for direction, chain in definition.threshold_chains:
        vals = np.sort(rng.uniform(-4.0, 4.0, size=len(chain)))
        if direction == "down":
            vals = vals[::-1]
        thresholds[list(chain)] = vals
    weights = rng.uniform(0.2, 4.0, size=definition.n_weights)
    params = ScoreParameters(definition, slopes, thresholds, weights)

    cohort = []
    for i in range(n_records):
        age = int(rng.integers(0, 1200))
        values = {}
        for v in variables:
            if rng.uniform() < missing_rate:
                values[v.name] = None
            elif v.kind == BINARY:
                values[v.name] = float(rng.integers(0, 2))
            else:
                values[v.name] = float(rng.uniform(-6.0, 6.0))
        outcome = 1 if i == 0 else (-1 if i == 1 else int(rng.choice((-1, 1))))
        cohort.append(
            PatientRecord(id=f"r{i}", age_months=age, outcome=outcome, values=values)
        )
    return definition, params, cohort
