"""Ready-made score definitions and matching synthetic-cohort generators.

Three presets are shipped:

``demo``
    A small four-variable score with a single age band and no OR-groups.
    Its generator uses gentle true slopes, which makes it the reference
    setting for parameter-recovery experiments.

``pediatric_icu``
    A seven-variable score with four age bands, age-specific thresholds
    for blood pressure and heart rate, and an OR-group for severe
    acidosis.  The default cohort is small (n=217), sized for
    leave-one-out cross-validation.

``adult_icu``
    An organ-dysfunction style score with many steps per variable and a
    single adult age band.  The default cohort is large (n=3711), sized
    for 10-fold cross-validation.

Generator intercepts are fixed constants chosen so the default cohorts
land near their target prevalence (demo ~7%, pediatric ~11%, adult ~7%).
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Mapping, NamedTuple

import numpy as np

from .model import (
    BINARY,
    MAX_VALUED,
    MIN_VALUED,
    AgeBand,
    BinaryFeature,
    FeatureStep,
    RawVariable,
    ScoreDefinition,
    ScoreParameters,
)
from .synthetic import GeneratorConfig, ValueDistribution


def _true_params(
    definition: ScoreDefinition,
    slope_by_variable: Mapping[str, float],
    weight_by_key: Mapping[str, float] | None = None,
) -> ScoreParameters:
    """Table thresholds, hand-picked true slopes, optional true weights."""
    start = ScoreParameters.initial(definition)
    slopes = np.array(start.slopes)
    for fi, j in definition.slope_index.items():
        slopes[j] = slope_by_variable[definition.features[fi].variable.name]
    weights = np.array(start.weights)
    if weight_by_key is not None:
        for fi, key in enumerate(definition.feature_keys):
            weights[fi] = weight_by_key[key]
    return ScoreParameters(
        definition, slopes, np.array(start.thresholds), weights
    )


# ----------------------------------------------------------------------
# demo
# ----------------------------------------------------------------------

DEMO_INTERCEPT = -5.32


def demo_definition() -> ScoreDefinition:
    lactate = RawVariable(
        "lactate_max", MAX_VALUED, "mmol/L", (0.1, 30.0), normal_value=1.0
    )
    gcs = RawVariable("gcs_min", MIN_VALUED, "points", (3.0, 15.0), normal_value=15.0)
    creatinine = RawVariable(
        "creatinine_max", MAX_VALUED, "mg/dL", (0.1, 30.0), normal_value=0.9
    )
    pupils = RawVariable("pupils_fixed", BINARY, "", (0.0, 1.0), normal_value=0.0)
    band = AgeBand("all", 0, 1200)
    all_bands = ("all",)

    def t(value):
        return dict.fromkeys(all_bands, value)

    features = (
        FeatureStep(lactate, 0, t(4.4), initial_weight=2.0),
        FeatureStep(lactate, 1, t(5.9), initial_weight=3.0),
        FeatureStep(gcs, 0, t(8.0), initial_weight=5.0),
        FeatureStep(creatinine, 0, t(2.4), initial_weight=1.0),
        FeatureStep(creatinine, 1, t(3.6), initial_weight=2.0),
        BinaryFeature(pupils, initial_weight=4.0),
    )
    return ScoreDefinition(
        name="demo",
        variables=(lactate, gcs, creatinine, pupils),
        features=features,
        age_bands=(band,),
    )


def demo_generator(n: int = 2000, seed: int = 1123) -> GeneratorConfig:
    """Demo cohort generator with a known, recoverable ground truth.

    Thresholds sit in the tails of the value distributions (crossing
    rates around 10%), true slopes are moderate, and the true weights
    deliberately differ from the table weights, so a fitted score can
    out-rank the hard table on held-out data.
    """
    definition = demo_definition()
    true_params = _true_params(
        definition,
        {
            "lactate_max": 1.5,
            "gcs_min": 1.2,
            "creatinine_max": 1.5,
        },
        {
            "lactate_max:step0": 4.0,
            "lactate_max:step1": 2.0,
            "gcs_min:step0": 3.0,
            "creatinine_max:step0": 3.0,
            "creatinine_max:step1": 2.0,
            "pupils_fixed": 5.0,
        },
    )
    return GeneratorConfig(
        definition=definition,
        true_params=true_params,
        n=n,
        seed=seed,
        intercept=DEMO_INTERCEPT,
        value_distributions={
            "lactate_max": ValueDistribution.normal(2.2, 1.5),
            "gcs_min": ValueDistribution.normal(11.5, 3.0),
            "creatinine_max": ValueDistribution.normal(1.2, 1.0),
            "pupils_fixed": ValueDistribution.bernoulli(0.04),
        },
        age_distribution={"all": 1.0},
        missing_rate=0.20,
    )


# ----------------------------------------------------------------------
# pediatric ICU
# ----------------------------------------------------------------------

PEDIATRIC_INTERCEPT = -4.93


def pediatric_icu_definition() -> ScoreDefinition:
    sbp = RawVariable("sbp_min", MIN_VALUED, "mmHg", (20.0, 250.0), normal_value=95.0)
    hr = RawVariable("hr_max", MAX_VALUED, "bpm", (30.0, 350.0), normal_value=110.0)
    gcs = RawVariable("gcs_min", MIN_VALUED, "points", (3.0, 15.0), normal_value=15.0)
    ph_max = RawVariable("ph_max", MAX_VALUED, "pH", (6.5, 8.0), normal_value=7.40)
    ph_min = RawVariable("ph_min", MIN_VALUED, "pH", (6.5, 8.0), normal_value=7.38)
    tco2 = RawVariable("tco2_min", MIN_VALUED, "mmol/L", (1.0, 60.0), normal_value=24.0)
    pupils = RawVariable("pupils_fixed", BINARY, "", (0.0, 1.0), normal_value=0.0)
    bands = (
        AgeBand("neonate", 0, 1),
        AgeBand("infant", 1, 12),
        AgeBand("child", 12, 144),
        AgeBand("adolescent", 144, 216),
    )
    labels = tuple(b.label for b in bands)

    def t(value):
        return dict.fromkeys(labels, value)

    features = (
        FeatureStep(
            sbp,
            0,
            {"neonate": 65.0, "infant": 75.0, "child": 83.0, "adolescent": 90.0},
            initial_weight=2.0,
        ),
        FeatureStep(
            sbp,
            1,
            {"neonate": 45.0, "infant": 50.0, "child": 55.0, "adolescent": 60.0},
            initial_weight=3.0,
        ),
        FeatureStep(
            hr,
            0,
            {"neonate": 180.0, "infant": 170.0, "child": 150.0, "adolescent": 120.0},
            initial_weight=2.0,
        ),
        FeatureStep(
            hr,
            1,
            {"neonate": 205.0, "infant": 195.0, "child": 180.0, "adolescent": 145.0},
            initial_weight=3.0,
        ),
        FeatureStep(gcs, 0, t(8.0), initial_weight=5.0),
        FeatureStep(ph_max, 0, t(7.48), initial_weight=1.0),
        FeatureStep(ph_max, 1, t(7.55), initial_weight=2.0),
        FeatureStep(ph_min, 0, t(7.0), initial_weight=6.0, or_group="acidosis"),
        FeatureStep(tco2, 0, t(5.0), initial_weight=6.0, or_group="acidosis"),
        BinaryFeature(pupils, initial_weight=4.0),
    )
    return ScoreDefinition(
        name="pediatric_icu",
        variables=(sbp, hr, gcs, ph_max, ph_min, tco2, pupils),
        features=features,
        age_bands=bands,
    )


def pediatric_icu_generator(n: int = 217, seed: int = 60217) -> GeneratorConfig:
    definition = pediatric_icu_definition()
    true_params = _true_params(
        definition,
        {
            "sbp_min": 0.35,
            "hr_max": 0.30,
            "gcs_min": 0.9,
            "ph_max": 35.0,
            "ph_min": 40.0,
            "tco2_min": 0.8,
        },
    )
    return GeneratorConfig(
        definition=definition,
        true_params=true_params,
        n=n,
        seed=seed,
        intercept=PEDIATRIC_INTERCEPT,
        value_distributions={
            "sbp_min": {
                "neonate": ValueDistribution.normal(70.0, 12.0),
                "infant": ValueDistribution.normal(80.0, 13.0),
                "child": ValueDistribution.normal(90.0, 15.0),
                "adolescent": ValueDistribution.normal(100.0, 16.0),
            },
            "hr_max": {
                "neonate": ValueDistribution.normal(165.0, 20.0),
                "infant": ValueDistribution.normal(155.0, 20.0),
                "child": ValueDistribution.normal(135.0, 22.0),
                "adolescent": ValueDistribution.normal(110.0, 20.0),
            },
            "gcs_min": ValueDistribution.normal(13.5, 2.8),
            "ph_max": ValueDistribution.normal(7.42, 0.06),
            "ph_min": ValueDistribution.normal(7.30, 0.12),
            "tco2_min": ValueDistribution.normal(22.0, 6.0),
            "pupils_fixed": ValueDistribution.bernoulli(0.05),
        },
        age_distribution={
            "neonate": 0.12,
            "infant": 0.25,
            "child": 0.38,
            "adolescent": 0.25,
        },
        missing_rate=0.15,
    )


# ----------------------------------------------------------------------
# adult ICU
# ----------------------------------------------------------------------

ADULT_INTERCEPT = -8.39


def adult_icu_definition() -> ScoreDefinition:
    platelets = RawVariable(
        "platelets_min", MIN_VALUED, "10^3/uL", (1.0, 1000.0), normal_value=250.0
    )
    bilirubin = RawVariable(
        "bilirubin_max", MAX_VALUED, "mg/dL", (0.1, 60.0), normal_value=0.8
    )
    creatinine = RawVariable(
        "creatinine_max", MAX_VALUED, "mg/dL", (0.1, 30.0), normal_value=0.9
    )
    map_min = RawVariable("map_min", MIN_VALUED, "mmHg", (20.0, 200.0), normal_value=85.0)
    gcs = RawVariable("gcs_min", MIN_VALUED, "points", (3.0, 15.0), normal_value=15.0)
    resp = RawVariable("resp_support", BINARY, "", (0.0, 1.0), normal_value=0.0)
    vaso = RawVariable("vasopressor", BINARY, "", (0.0, 1.0), normal_value=0.0)
    band = AgeBand("adult", 216, 1440)

    def t(value):
        return {"adult": value}

    features = (
        FeatureStep(platelets, 0, t(150.0), initial_weight=1.0),
        FeatureStep(platelets, 1, t(100.0), initial_weight=1.0),
        FeatureStep(platelets, 2, t(50.0), initial_weight=1.0),
        FeatureStep(platelets, 3, t(20.0), initial_weight=1.0),
        FeatureStep(bilirubin, 0, t(1.2), initial_weight=1.0),
        FeatureStep(bilirubin, 1, t(2.0), initial_weight=1.0),
        FeatureStep(bilirubin, 2, t(6.0), initial_weight=1.0),
        FeatureStep(bilirubin, 3, t(12.0), initial_weight=1.0),
        FeatureStep(creatinine, 0, t(1.2), initial_weight=1.0),
        FeatureStep(creatinine, 1, t(2.0), initial_weight=1.0),
        FeatureStep(creatinine, 2, t(3.5), initial_weight=1.0),
        FeatureStep(creatinine, 3, t(5.0), initial_weight=1.0),
        FeatureStep(map_min, 0, t(70.0), initial_weight=1.0),
        FeatureStep(gcs, 0, t(13.0), initial_weight=1.0),
        FeatureStep(gcs, 1, t(10.0), initial_weight=1.0),
        FeatureStep(gcs, 2, t(6.0), initial_weight=1.0),
        BinaryFeature(resp, initial_weight=2.0),
        BinaryFeature(vaso, initial_weight=3.0),
    )
    return ScoreDefinition(
        name="adult_icu",
        variables=(platelets, bilirubin, creatinine, map_min, gcs, resp, vaso),
        features=features,
        age_bands=(band,),
    )


def adult_icu_generator(n: int = 3711, seed: int = 43711) -> GeneratorConfig:
    definition = adult_icu_definition()
    true_params = _true_params(
        definition,
        {
            "platelets_min": 0.08,
            "bilirubin_max": 1.2,
            "creatinine_max": 1.5,
            "map_min": 0.25,
            "gcs_min": 0.9,
        },
    )
    return GeneratorConfig(
        definition=definition,
        true_params=true_params,
        n=n,
        seed=seed,
        intercept=ADULT_INTERCEPT,
        value_distributions={
            "platelets_min": ValueDistribution.normal(220.0, 90.0),
            "bilirubin_max": ValueDistribution.normal(1.0, 2.2),
            "creatinine_max": ValueDistribution.normal(1.1, 1.0),
            "map_min": ValueDistribution.normal(78.0, 14.0),
            "gcs_min": ValueDistribution.normal(13.2, 3.0),
            "resp_support": ValueDistribution.bernoulli(0.35),
            "vasopressor": ValueDistribution.bernoulli(0.20),
        },
        age_distribution={"adult": 1.0},
        missing_rate=0.05,
    )


# ----------------------------------------------------------------------
# registry
# ----------------------------------------------------------------------


class Preset(NamedTuple):
    definition: Callable[[], ScoreDefinition]
    generator: Callable[[], GeneratorConfig]


PRESETS: dict[str, Preset] = {
    "demo": Preset(demo_definition, demo_generator),
    "pediatric_icu": Preset(pediatric_icu_definition, pediatric_icu_generator),
    "adult_icu": Preset(adult_icu_definition, adult_icu_generator),
}


def preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; available: {known}") from None


def preset_cohort(name: str, **overrides):
    """Generate the default cohort for a preset.

    Returns ``(cohort, true_probabilities, config)``.  Keyword overrides
    (``n``, ``seed``, ``missing_rate``, ...) are applied to the preset's
    generator config before sampling.
    """
    from .synthetic import generate

    config = preset(name).generator()
    if overrides:
        config = dataclasses.replace(config, **overrides)
    cohort, probabilities = generate(config)
    return cohort, probabilities, config
