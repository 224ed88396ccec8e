"""Command-line interface.

Commands: ``presets``, ``simulate``, ``fit``, ``evaluate``, ``cv`` and
``impute``.  Every command that writes a primary output also writes a
``<output>.manifest.json`` run manifest recording the command line, the
package version, SHA-256 digests of all inputs and outputs, and the wall
time.  Manifests are the only outputs that differ between identical
reruns; all other artifacts are byte-identical for the same inputs and
seed.

Exit codes: 0 on success, 1 for invalid inputs or I/O failures, 2 for
numeric failures (non-convergence or non-finite objectives).  The
``SOFTSCORE_LOG`` environment variable sets the logging level (for
example ``SOFTSCORE_LOG=debug``).
"""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import logging
import os
import sys
import time

import click

from . import __version__
from .errors import NumericError, ValidationError
from .evaluation import (
    ScoredRow,
    cross_validate,
    evaluate_scores,
    evaluate_subgroup,
    platt_probabilities,
)
from .imputation import ImputationMethod, impute
from .io import (
    load_cohort,
    load_fitted,
    load_generator_config,
    load_optimizer_config,
    load_score_definition,
    save_cohort,
    save_fitted,
    save_generator_config,
    save_report,
    save_score_definition,
    save_scores,
    save_truth,
    _dump_json,
)
from .model import hard_score, validate_cohort
from .design import hard_scores, soft_scores
from .optimizer import KINDS, OptimizerConfig, fit as fit_params
from .presets import PRESETS, preset
from .synthetic import generate

log = logging.getLogger("softscore")

EXIT_INVALID = 1
EXIT_NUMERIC = 2


def _configure_logging():
    level_name = os.environ.get("SOFTSCORE_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Manifest:
    """Collects inputs/outputs of one command and writes the manifest."""

    def __init__(self, command: str):
        self.command = command
        self.argv = sys.argv[1:]
        self.started = time.perf_counter()
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.seed = None

    def add_input(self, path):
        if path is not None:
            self.inputs[str(path)] = _sha256(path)

    def add_output(self, path):
        if path is not None:
            self.outputs[str(path)] = _sha256(path)

    def write(self, primary_output):
        payload = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time_seconds": time.perf_counter() - self.started,
        }
        path = f"{primary_output}.manifest.json"
        _dump_json(path, payload)
        log.info("wrote manifest %s", path)


def _exits(func):
    """Map package errors to documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValidationError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INVALID)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


def _cohort_variables(cohort):
    return list(cohort[0].values.keys())


def _optimizer_config(config_path, optimize, seed) -> OptimizerConfig:
    if config_path is not None:
        config = load_optimizer_config(config_path)
    else:
        config = OptimizerConfig()
    replacements = {}
    if optimize is not None:
        kinds = tuple(token.strip() for token in optimize.split(","))
        for kind in kinds:
            if kind not in KINDS:
                raise ValidationError(
                    f"--optimize: unknown parameter kind {kind!r}; "
                    f"expected a comma-separated subset of {','.join(KINDS)}"
                )
        replacements["optimize_over"] = kinds
    if seed is not None:
        replacements["seed"] = seed
    if replacements:
        config = dataclasses.replace(config, **replacements)
    return config


def _parse_folds(folds: str):
    if folds == "loo":
        return "loo"
    try:
        return int(folds)
    except ValueError:
        raise ValidationError(
            f"--folds: expected an integer or 'loo', got {folds!r}"
        ) from None


def _band_predicate(definition, spec: str):
    if ":" not in spec:
        raise ValidationError(
            f"--filter: expected age:BAND_LABEL, got {spec!r}"
        )
    field, label = spec.split(":", 1)
    if field != "age":
        raise ValidationError(f"--filter: unknown field {field!r}; only 'age'")
    band = definition.band_by_label.get(label)
    if band is None:
        known = ", ".join(b.label for b in definition.age_bands)
        raise ValidationError(
            f"--filter: unknown age band {label!r}; known bands: {known}"
        )
    return (lambda record: band.contains(record.age_months)), f"age:{label}"


@click.group()
@click.version_option(__version__, prog_name="softscore")
def main():
    """Soft-threshold additive risk scores: simulate, fit, evaluate."""
    _configure_logging()


@main.command("presets")
@click.option("--name", required=True, help=f"One of: {', '.join(sorted(PRESETS))}.")
@click.option(
    "--out-dir",
    required=True,
    type=click.Path(file_okay=False),
    help="Directory for the definition and generator files.",
)
@_exits
def presets_cmd(name, out_dir):
    """Write a preset score definition and its generator config."""
    try:
        p = preset(name)
    except KeyError as exc:
        raise ValidationError(str(exc).strip('"')) from None
    os.makedirs(out_dir, exist_ok=True)
    definition_path = os.path.join(out_dir, f"{name}.definition.json")
    generator_path = os.path.join(out_dir, f"{name}.generator.json")
    manifest = _Manifest("presets")
    save_score_definition(definition_path, p.definition())
    save_generator_config(generator_path, p.generator())
    manifest.add_output(definition_path)
    manifest.add_output(generator_path)
    manifest.write(definition_path)
    click.echo(definition_path)
    click.echo(generator_path)


@main.command("simulate")
@click.option("--score-def", "score_def", required=True, type=click.Path())
@click.option("--generator", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--truth", type=click.Path(), help="Optional true-probability CSV.")
@click.option("--n", type=int, help="Override the configured cohort size.")
@click.option("--seed", type=int, help="Override the configured seed.")
@_exits
def simulate_cmd(score_def, generator, out, truth, n, seed):
    """Sample a synthetic cohort from a generator config."""
    manifest = _Manifest("simulate")
    manifest.add_input(score_def)
    manifest.add_input(generator)
    definition = load_score_definition(score_def)
    config = load_generator_config(generator, definition)
    replacements = {}
    if n is not None:
        replacements["n"] = n
    if seed is not None:
        replacements["seed"] = seed
    if replacements:
        config = dataclasses.replace(config, **replacements)
    manifest.seed = config.seed
    cohort, probabilities = generate(config)
    save_cohort(out, cohort, [v.name for v in definition.variables])
    manifest.add_output(out)
    if truth is not None:
        save_truth(truth, cohort, probabilities)
        manifest.add_output(truth)
    manifest.write(out)
    positives = sum(1 for r in cohort if r.outcome == 1)
    click.echo(
        f"simulate: n={len(cohort)} positives={positives} "
        f"({positives / len(cohort):.1%}) -> {out}"
    )


@main.command("fit")
@click.option("--cohort", "cohort_path", required=True, type=click.Path())
@click.option("--score-def", "score_def", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option(
    "--optimize",
    help="Comma-separated parameter kinds to optimize (subset of a,t,w).",
)
@click.option("--config", "config_path", type=click.Path())
@click.option("--seed", type=int)
@_exits
def fit_cmd(cohort_path, score_def, out, optimize, config_path, seed):
    """Fit score parameters to a cohort."""
    manifest = _Manifest("fit")
    manifest.add_input(cohort_path)
    manifest.add_input(score_def)
    manifest.add_input(config_path)
    definition = load_score_definition(score_def)
    cohort = load_cohort(cohort_path)
    validate_cohort(cohort, definition)
    config = _optimizer_config(config_path, optimize, seed)
    manifest.seed = config.seed
    params, trace = fit_params(cohort, definition, config)
    save_fitted(out, params, config, trace)
    manifest.add_output(out)
    manifest.write(out)
    click.echo(
        f"fit: objective {trace.initial_objective:.6f} -> "
        f"{trace.final_objective:.6f} in {trace.outer_iterations} outer "
        f"iterations ({trace.converged_reason}) -> {out}"
    )


@main.command("evaluate")
@click.option("--cohort", "cohort_path", required=True, type=click.Path())
@click.option("--score-def", "score_def", required=True, type=click.Path())
@click.option(
    "--fitted",
    "fitted_path",
    type=click.Path(),
    help="Fitted parameters; omit to evaluate the hard table score.",
)
@click.option("--out", required=True, type=click.Path())
@click.option("--scores", "scores_path", type=click.Path())
@click.option("--filter", "filter_spec", help="Subgroup filter, e.g. age:child.")
@_exits
def evaluate_cmd(cohort_path, score_def, fitted_path, out, scores_path, filter_spec):
    """Evaluate soft (fitted) or hard (table) scores on a cohort."""
    manifest = _Manifest("evaluate")
    manifest.add_input(cohort_path)
    manifest.add_input(score_def)
    manifest.add_input(fitted_path)
    definition = load_score_definition(score_def)
    cohort = load_cohort(cohort_path)
    validate_cohort(cohort, definition)
    if fitted_path is not None:
        params = load_fitted(fitted_path, definition)
        scores = soft_scores(cohort, definition, params)
    else:
        scores = hard_scores(cohort, definition)
    labels = [r.outcome for r in cohort]
    report = evaluate_scores(scores, labels)
    probabilities = platt_probabilities(scores, *report.platt)
    if filter_spec is not None:
        predicate, label = _band_predicate(definition, filter_spec)
        report = evaluate_subgroup(cohort, scores, probabilities, predicate, label)
    save_report(out, report)
    manifest.add_output(out)
    if scores_path is not None:
        rows = tuple(
            ScoredRow(
                id=r.id,
                fold=0,
                score=float(s),
                probability=float(p),
                label=r.outcome,
            )
            for r, s, p in zip(cohort, scores, probabilities)
        )
        save_scores(scores_path, rows)
        manifest.add_output(scores_path)
    manifest.write(out)
    kind = "soft" if fitted_path is not None else "hard"
    click.echo(
        f"evaluate[{kind}]: n={report.n} auc={_fmt(report.auc)} "
        f"brier={_fmt(report.brier)} -> {out}"
    )


@main.command("cv")
@click.option("--cohort", "cohort_path", required=True, type=click.Path())
@click.option("--score-def", "score_def", required=True, type=click.Path())
@click.option(
    "--folds",
    default="loo",
    show_default=True,
    help="Number of stratified folds, or 'loo' for leave-one-out.",
)
@click.option("--out", required=True, type=click.Path())
@click.option("--scores", "scores_path", type=click.Path())
@click.option("--optimize", help="Comma-separated subset of a,t,w.")
@click.option("--config", "config_path", type=click.Path())
@click.option("--seed", type=int)
@click.option(
    "--parallel-folds",
    default=1,
    show_default=True,
    type=int,
    help="Number of folds fitted concurrently.",
)
@_exits
def cv_cmd(
    cohort_path,
    score_def,
    folds,
    out,
    scores_path,
    optimize,
    config_path,
    seed,
    parallel_folds,
):
    """Cross-validate a fitted score on held-out folds."""
    manifest = _Manifest("cv")
    manifest.add_input(cohort_path)
    manifest.add_input(score_def)
    manifest.add_input(config_path)
    definition = load_score_definition(score_def)
    cohort = load_cohort(cohort_path)
    validate_cohort(cohort, definition)
    config = _optimizer_config(config_path, optimize, seed)
    manifest.seed = config.seed
    report, rows = cross_validate(
        cohort, definition, config, folds=_parse_folds(folds), n_jobs=parallel_folds
    )
    save_report(out, report)
    manifest.add_output(out)
    if scores_path is not None:
        save_scores(scores_path, rows)
        manifest.add_output(scores_path)
    manifest.write(out)
    click.echo(
        f"cv[{folds}]: n={report.n} auc={_fmt(report.auc)} "
        f"brier={_fmt(report.brier)} -> {out}"
    )


@main.command("impute")
@click.option("--cohort", "cohort_path", required=True, type=click.Path())
@click.option(
    "--method",
    required=True,
    help="One of: knn, mean, normal.",
)
@click.option("--k", default=5, show_default=True, type=int, help="kNN neighbours.")
@click.option(
    "--score-def",
    "score_def",
    type=click.Path(),
    help="Required for --method normal (supplies the normal values).",
)
@click.option("--out", required=True, type=click.Path())
@_exits
def impute_cmd(cohort_path, method, k, score_def, out):
    """Fill missing values and write the completed cohort."""
    manifest = _Manifest("impute")
    manifest.add_input(cohort_path)
    manifest.add_input(score_def)
    cohort = load_cohort(cohort_path)
    if method == "knn":
        spec = ImputationMethod.knn(k)
    elif method == "mean":
        spec = ImputationMethod.mean()
    elif method == "normal":
        if score_def is None:
            raise ValidationError(
                "--method normal requires --score-def for the normal values"
            )
        definition = load_score_definition(score_def)
        spec = ImputationMethod.normal_from_definition(definition)
    else:
        raise ValidationError(
            f"unknown imputation method {method!r}; expected knn, mean or normal"
        )
    completed = impute(cohort, spec)
    save_cohort(out, completed, _cohort_variables(cohort))
    manifest.add_output(out)
    manifest.write(out)
    click.echo(f"impute[{method}]: n={len(completed)} -> {out}")


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


if __name__ == "__main__":
    main()
