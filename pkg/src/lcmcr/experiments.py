"""Reproducible experiment pipelines.

Each experiment simulates replicate populations, fits a working model,
estimates totals under both readings, and assembles a report whose JSON
form is byte-stable for a given master seed.  Replicate seeds are derived
from (master seed, replicate index, stream), so reports do not depend on
thread count or execution order.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .counts import CaptureCounts
from .errors import NumericalError, UnboundedEstimateError, ValidationError, Violation
from .fit import FitConfig, fit, e_step
from .model import ModelSpec, DependenceTerm
from .popsize import designate_target, estimate_overcoverage
from .simulate import (
    SCENARIO1_REGISTERS,
    GeneratingConfig,
    preset_critique,
    preset_scenario1,
    simulate,
)
from .structure import degrees_of_freedom

logger = logging.getLogger(__name__)

SCENARIO1_VARIANTS = ("independence", "shared-cd")


@dataclass(frozen=True)
class ExperimentReport:
    """Replicate records plus aggregates for one experiment run."""

    experiment_id: str
    config: dict
    records: tuple
    aggregates: dict
    provenance: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "experiment_id": self.experiment_id,
            "config": self.config,
            "records": list(self.records),
            "aggregates": self.aggregates,
            "provenance": self.provenance,
        }

    def records_csv_text(self) -> str:
        if not self.records:
            return ""
        fields = sorted({k for r in self.records for k in r})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for record in self.records:
            writer.writerow({k: _flatten_csv_value(record.get(k)) for k in fields})
        return buf.getvalue()

    def write_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.records_csv_text())


def _flatten_csv_value(value):
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    if isinstance(value, dict):
        return ";".join(f"{k}={v}" for k, v in sorted(value.items()))
    return value


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])


def _run_replicates(run_one, reps: int, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one, range(reps)))
    return [run_one(i) for i in range(reps)]


def _relative_bias(estimate: float, truth: float) -> float:
    return (estimate - truth) / truth


def _base_record(rep: int, sim_seed: int, fit_seed: int, sim) -> dict:
    return {
        "replicate": rep,
        "sim_seed": sim_seed,
        "fit_seed": fit_seed,
        "n_observed": sim.observed_counts.n,
        "true_class_sizes": list(sim.true_class_sizes),
        "true_target_size": sim.true_target_size,
    }


def _fit_and_estimate(fitspec, sim, fit_config, record):
    """Shared replicate tail: fit, designate, estimate, fill the record.

    Returns the FitResult, or None when the fit failed outright; failures
    are recorded, not raised, so one bad replicate cannot sink a run."""
    try:
        result = fit(fitspec, sim.observed_counts, fit_config)
        target = designate_target(result, "highest-mean-inclusion")
        estimate = estimate_overcoverage(fitspec, result.params, sim.observed_counts, target)
    except (NumericalError, UnboundedEstimateError) as exc:
        record.update({"fit_failed": True, "failure": str(exc), "converged": False})
        return None
    truth_all = sum(sim.true_class_sizes)
    truth_target = sim.true_target_size
    record.update(
        {
            "fit_failed": False,
            "converged": result.converged,
            "cond_loglik": result.cond_loglik,
            "iterations": result.iterations,
            "best_start": result.start_index,
            "boundary_count": len(result.boundary_parameters),
            "target_classes": sorted(target),
            "total_standard": estimate.total_all_classes,
            "total_target_only": estimate.total_target_only,
            # each reading is judged against its own truth: every class for
            # the standard total, target classes only for the other
            "rel_bias_standard": _relative_bias(estimate.total_all_classes, truth_all),
            "rel_bias_target_only": _relative_bias(estimate.total_target_only, truth_target),
            "class_sizes": list(estimate.class_sizes),
        }
    )
    return result


def _aggregate_biases(records) -> dict:
    used = [r for r in records if not r["fit_failed"] and r["converged"]]
    agg = {
        "replicates": len(records),
        "fit_failures": sum(1 for r in records if r["fit_failed"]),
        "non_converged": sum(1 for r in records if not r["fit_failed"] and not r["converged"]),
        "replicates_used": len(used),
    }
    for key in ("rel_bias_standard", "rel_bias_target_only"):
        values = np.asarray([r[key] for r in used]) if used else np.zeros(0)
        agg[f"mean_{key}"] = float(values.mean()) if values.size else None
        agg[f"median_{key}"] = float(np.median(values)) if values.size else None
    agg["share_negative_target_bias"] = (
        float(np.mean([r["rel_bias_target_only"] < 0 for r in used])) if used else None
    )
    return agg


def _provenance(master_seed: int, fit_config: FitConfig) -> dict:
    # No timestamps and no thread counts: reports must be byte-identical
    # across runs and across --threads settings.
    return {
        "master_seed": master_seed,
        "num_starts": fit_config.num_starts,
        "tol": fit_config.tol,
        "max_iter": fit_config.max_iter,
    }


def run_scenario1(
    reps: int,
    population_size: int,
    seed: int,
    fit_config: FitConfig | None = None,
    variant: str = "independence",
    cd_value: float | None = None,
    threads: int = 1,
) -> ExperimentReport:
    """Parameter-recovery and estimator-fidelity experiment on the
    two-class design, fitting the same structure that generated the data.

    variant "shared-cd" adds a shared log odds interaction of cd_value
    between the last two registers to both the generator and the fitted
    model."""
    if variant not in SCENARIO1_VARIANTS:
        raise ValidationError(Violation("bad-argument", f"unknown variant {variant!r}"))
    if variant == "shared-cd" and cd_value is None:
        raise ValidationError(Violation("bad-argument", "variant shared-cd needs cd_value"))
    if reps < 1:
        raise ValidationError(Violation("bad-argument", "reps must be >= 1"))
    template = fit_config if fit_config is not None else FitConfig(seed=0)

    cd = float(cd_value) if variant == "shared-cd" else None
    if cd is None:
        fitspec = ModelSpec(SCENARIO1_REGISTERS, 2)
    else:
        fitspec = ModelSpec(
            SCENARIO1_REGISTERS, 2, (DependenceTerm(("C", "D"), class_specific=False),)
        )
    report = degrees_of_freedom(fitspec)
    if report.degrees_of_freedom < 0:
        raise ValidationError(
            Violation("negative-df", f"fitted model {fitspec.notation()} has negative df")
        )

    def run_one(rep: int) -> dict:
        sim_seed = _derive_seed(seed, rep, 0)
        fit_seed = _derive_seed(seed, rep, 1)
        sim = simulate(preset_scenario1(population_size, sim_seed, cd))
        record = _base_record(rep, sim_seed, fit_seed, sim)
        result = _fit_and_estimate(fitspec, sim, replace(template, seed=fit_seed), record)
        if result is not None:
            record["fitted_class_weights"] = [float(v) for v in result.params.class_weights]
            record["fitted_inclusion_probs"] = [
                [float(v) for v in row] for row in result.params.inclusion_probs
            ]
            if cd is not None:
                record["fitted_cd_interaction"] = float(result.params.shared_interactions[0][0])
        return record

    records = _run_replicates(run_one, reps, threads)
    aggregates = _aggregate_biases(records)
    used = [r for r in records if not r["fit_failed"] and r["converged"]]
    if used:
        aggregates["mean_fitted_class_weights"] = [
            float(v) for v in np.mean([r["fitted_class_weights"] for r in used], axis=0)
        ]
        aggregates["mean_fitted_inclusion_probs"] = [
            [float(v) for v in row]
            for row in np.mean([r["fitted_inclusion_probs"] for r in used], axis=0)
        ]
    config = {
        "reps": reps,
        "population_size": population_size,
        "variant": variant,
        "cd_value": cd,
        "fitted_model": fitspec.notation(),
    }
    return ExperimentReport(
        "scenario1", config, tuple(records), aggregates, _provenance(seed, template)
    )


def run_critique(
    reps: int,
    population_size: int,
    seed: int,
    fit_config: FitConfig | None = None,
    generating_overrides: dict | None = None,
    threads: int = 1,
) -> ExperimentReport:
    """Confounding experiment: data come from three classes (erroneous
    records, hard-to-reach targets, mainstream targets) but a two-class
    model is fitted and its low-inclusion class discarded.

    Each record carries a posterior origin decomposition of the fitted
    low class: how much of its observed mass came from each true class.
    The aggregate shows the discarded class absorbing real hard-to-reach
    population, which is what drives the downward bias of the
    overcoverage reading under heterogeneity."""
    if reps < 1:
        raise ValidationError(Violation("bad-argument", "reps must be >= 1"))
    template = fit_config if fit_config is not None else FitConfig(seed=0)
    overrides = dict(generating_overrides or {})
    weights = tuple(overrides.pop("class_weights", ()))
    htr = tuple(overrides.pop("hard_to_reach_probs", ()))
    if overrides:
        raise ValidationError(
            Violation("bad-argument", f"unknown generating overrides {sorted(overrides)}")
        )
    preset_kwargs = {}
    if weights:
        preset_kwargs["class_weights"] = weights
    if htr:
        preset_kwargs["hard_to_reach_probs"] = htr

    fitspec = ModelSpec(SCENARIO1_REGISTERS, 2)
    origin_names = ("overcoverage", "hard_to_reach", "mainstream")

    def run_one(rep: int) -> dict:
        sim_seed = _derive_seed(seed, rep, 0)
        fit_seed = _derive_seed(seed, rep, 1)
        gen = preset_critique(population_size, sim_seed, **preset_kwargs)
        sim = simulate(gen)
        record = _base_record(rep, sim_seed, fit_seed, sim)
        result = _fit_and_estimate(fitspec, sim, replace(template, seed=fit_seed), record)
        if result is not None:
            record["origin_decomposition"] = _origin_decomposition(
                fitspec, result, sim, origin_names
            )
        return record

    records = _run_replicates(run_one, reps, threads)
    aggregates = _aggregate_biases(records)
    used = [
        r
        for r in records
        if not r["fit_failed"] and r["converged"] and "origin_decomposition" in r
    ]
    if used:
        fractions = np.asarray(
            [[r["origin_decomposition"]["fractions"][name] for name in origin_names] for r in used]
        )
        aggregates["mean_low_class_origin_fractions"] = {
            name: float(fractions[:, i].mean()) for i, name in enumerate(origin_names)
        }
        aggregates["share_low_class_absorbs_both"] = float(
            np.mean((fractions[:, 0] >= 0.05) & (fractions[:, 1] >= 0.05))
        )
    config = {
        "reps": reps,
        "population_size": population_size,
        "generating_overrides": {
            **({"class_weights": list(weights)} if weights else {}),
            **({"hard_to_reach_probs": list(htr)} if htr else {}),
        },
        "fitted_model": fitspec.notation(),
    }
    return ExperimentReport(
        "critique", config, tuple(records), aggregates, _provenance(seed, template)
    )


def _origin_decomposition(fitspec, result, sim, origin_names) -> dict:
    """Splits the fitted low-inclusion class's observed mass by the true
    class each individual came from.  Canonical ordering puts the lowest
    mean-margin fitted class at index 0."""
    posts = e_step(fitspec, result.params, sim.observed_counts).posteriors
    low = posts[:, 0]
    complete = sim.complete_table.astype(np.float64).copy()
    complete[0, :] = 0.0  # unobserved individuals carry no observed mass
    by_origin = complete.T @ low
    total = float(by_origin.sum())
    safe = max(total, 1e-300)
    return {
        "fitted_low_class_mass": total,
        "mass_by_true_class": {name: float(v) for name, v in zip(origin_names, by_origin)},
        "fractions": {name: float(v / safe) for name, v in zip(origin_names, by_origin)},
    }


# The degrees-of-freedom family: the standard four-register two-class
# structure, then progressively richer dependence structures up to the
# first one the counting bound rejects.
_DF_FAMILY = (
    (),
    (DependenceTerm(("C", "D"), class_specific=False),),
    (DependenceTerm(("C", "D"), class_specific=True),),
    (DependenceTerm(("A", "B"), class_specific=True), DependenceTerm(("C", "D"), class_specific=True)),
    (DependenceTerm(("A", "B", "C"), class_specific=True),),
)


def df_family_table() -> list[dict]:
    """Degrees-of-freedom ledger over the standard model family.

    Rows stop at the first structure with negative degrees of freedom,
    which is included and flagged: richer dependence is not free, and the
    budget runs out within one block of growth."""
    rows = []
    for terms in _DF_FAMILY:
        spec = ModelSpec(SCENARIO1_REGISTERS, 2, terms)
        report = degrees_of_freedom(spec)
        rows.append(
            {
                "model": spec.notation(),
                "independent_cells": report.independent_cells,
                "parameter_count": report.parameter_count,
                "degrees_of_freedom": report.degrees_of_freedom,
                "flag": report.flag,
            }
        )
        if report.degrees_of_freedom < 0:
            break
    return rows
