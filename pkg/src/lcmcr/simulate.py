"""Synthetic population generation under configured latent-class regimes.

A generating config labels every class with a role, "target" or
"overcoverage", so simulated data carry their true target size alongside
the complete (profile x class) table.  Two presets cover the standard
evaluation designs: a two-class population with one erroneous-record
class, and a three-class critique design that adds a hard-to-reach
target class with low inclusion everywhere.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .counts import CaptureCounts
from .errors import ValidationError, Violation
from .model import (
    ModelSpec,
    DependenceTerm,
    ParameterSet,
    class_conditional_table,
    ensure_valid,
    index_to_bitstring,
)

CLASS_ROLES = ("target", "overcoverage")

SCENARIO1_REGISTERS = ("A", "B", "C", "D")
SCENARIO1_CLASS_WEIGHTS = (0.4, 0.6)
# class 0: erroneous records, seen rarely; class 1: true population, seen often
SCENARIO1_LOW_PROBS = (0.25, 0.20, 0.21, 0.29)
SCENARIO1_HIGH_PROBS = (0.70, 0.82, 0.86, 0.83)
SCENARIO1_ROLES = ("overcoverage", "target")

CRITIQUE_DEFAULT_WEIGHTS = (0.2, 0.3, 0.5)
CRITIQUE_HARD_TO_REACH_PROBS = (0.35, 0.30, 0.32, 0.28)
CRITIQUE_ROLES = ("overcoverage", "target", "target")


@dataclass(frozen=True)
class GeneratingConfig:
    """A fully specified data-generating process."""

    spec: ModelSpec
    params: ParameterSet
    population_size: int
    class_roles: tuple[str, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "class_roles", tuple(self.class_roles))
        ensure_valid(self.spec, self.params)
        bad = []
        if self.population_size < 1:
            bad.append(Violation("population-too-small", "population_size must be >= 1"))
        if len(self.class_roles) != self.spec.num_classes:
            bad.append(
                Violation(
                    "roles-length-mismatch",
                    f"{len(self.class_roles)} roles for {self.spec.num_classes} classes",
                )
            )
        for role in self.class_roles:
            if role not in CLASS_ROLES:
                bad.append(Violation("roles-invalid", f"unknown class role {role!r}"))
        if not any(r == "target" for r in self.class_roles):
            bad.append(Violation("no-target-class", "at least one class must be a target"))
        if self.seed < 0:
            bad.append(Violation("bad-argument", "seed must be a non-negative integer"))
        if bad:
            raise ValidationError(bad)

    @property
    def target_classes(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.class_roles) if r == "target")


@dataclass(frozen=True)
class SimOutput:
    """One simulated population."""

    complete_table: np.ndarray          # (2^K, L) integer counts incl. all-zero row
    observed_counts: CaptureCounts
    true_class_sizes: tuple[int, ...]
    true_target_size: int

    def write_complete_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.complete_csv_text())

    def complete_csv_text(self) -> str:
        P, L = self.complete_table.shape
        K = P.bit_length() - 1
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["profile", "class", "count"])
        for i in range(P):
            for x in range(L):
                v = int(self.complete_table[i, x])
                if v > 0:
                    writer.writerow([index_to_bitstring(i, K), x, v])
        return buf.getvalue()


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    raw = total * weights
    sizes = np.floor(raw).astype(np.int64)
    short = total - int(sizes.sum())
    if short > 0:
        frac = raw - sizes
        # ties go to the lower class index
        order = np.lexsort((np.arange(weights.size), -frac))
        sizes[order[:short]] += 1
    return sizes


def simulate(config: GeneratingConfig, fixed_classes: bool = False) -> SimOutput:
    """Draws one population.

    Class sizes are multinomial in N (or deterministic largest-remainder
    rounding with fixed_classes), then each class draws its profiles from
    its conditional distribution on an independent seed stream, so adding
    classes never disturbs earlier streams.  The observed counts drop the
    all-zero column sum.
    """
    spec, params = config.spec, config.params
    root = np.random.SeedSequence(config.seed)
    size_seed, *class_seeds = root.spawn(spec.num_classes + 1)

    w = np.asarray(params.class_weights, dtype=np.float64)
    if fixed_classes:
        sizes = _largest_remainder(config.population_size, w)
    else:
        rng = np.random.Generator(np.random.PCG64(size_seed))
        sizes = rng.multinomial(config.population_size, w / w.sum())

    table = class_conditional_table(spec, params, eps=0.0)
    table = table / table.sum(axis=1, keepdims=True)

    P = 2**spec.num_registers
    complete = np.zeros((P, spec.num_classes), dtype=np.int64)
    for x in range(spec.num_classes):
        rng = np.random.Generator(np.random.PCG64(class_seeds[x]))
        complete[:, x] = rng.multinomial(int(sizes[x]), table[x])

    observed_vec = complete.sum(axis=1).astype(np.float64)
    observed_vec[0] = 0.0
    if observed_vec.sum() < 1:
        raise ValidationError(
            Violation("counts-empty", "simulation produced no observed individuals")
        )
    observed = CaptureCounts.from_vector(observed_vec, spec.num_registers)

    target = int(sum(int(sizes[i]) for i in config.target_classes))
    return SimOutput(
        complete_table=complete,
        observed_counts=observed,
        true_class_sizes=tuple(int(s) for s in sizes),
        true_target_size=target,
    )


def two_by_two_from_margins(margin_first: float, margin_second: float, odds_ratio: float) -> np.ndarray:
    """The 2x2 cell probabilities [p00, p01, p10, p11] with the given
    margins and odds ratio.

    Solves (w-1) p11^2 - (1 + (w-1)(mc+md)) p11 + w mc md = 0 and takes
    the root on the minus branch, which is the one inside the Frechet
    bounds; w = 1 degenerates to the independent table.
    """
    mc, md, w = float(margin_first), float(margin_second), float(odds_ratio)
    if not (0 < mc < 1 and 0 < md < 1):
        raise ValidationError(Violation("bad-argument", "margins must lie strictly inside (0, 1)"))
    if w <= 0:
        raise ValidationError(Violation("bad-argument", "odds ratio must be positive"))
    if abs(w - 1.0) < 1e-12:
        p11 = mc * md
    else:
        a = w - 1.0
        b = -(1.0 + a * (mc + md))
        c = w * mc * md
        disc = b * b - 4.0 * a * c
        p11 = (-b - np.sqrt(disc)) / (2.0 * a)
    p10 = mc - p11
    p01 = md - p11
    p00 = 1.0 - p11 - p10 - p01
    cells = np.array([p00, p01, p10, p11])
    if np.any(cells < -1e-12):
        raise ValidationError(
            Violation("bad-argument", f"margins {mc}, {md} and odds ratio {w} leave no valid table")
        )
    return np.clip(cells, 0.0, 1.0)


def preset_scenario1(
    population_size: int, seed: int, cd_interaction: float | None = None
) -> GeneratingConfig:
    """Two classes over four registers: a large well-covered target class
    and a smaller erroneous-record class seen by every register at low
    rates.  With cd_interaction set, the last two registers gain a shared
    log odds interaction of that size."""
    weights = np.asarray(SCENARIO1_CLASS_WEIGHTS)
    probs = np.asarray([SCENARIO1_LOW_PROBS, SCENARIO1_HIGH_PROBS])
    if cd_interaction is None:
        spec = ModelSpec(SCENARIO1_REGISTERS, 2)
        params = ParameterSet(weights, probs)
    else:
        spec = ModelSpec(
            SCENARIO1_REGISTERS, 2, (DependenceTerm(("C", "D"), class_specific=False),)
        )
        params = ParameterSet(
            weights, probs, shared_interactions=(np.asarray([float(cd_interaction)]),)
        )
    return GeneratingConfig(spec, params, int(population_size), SCENARIO1_ROLES, int(seed))


def preset_critique(
    population_size: int,
    seed: int,
    class_weights=CRITIQUE_DEFAULT_WEIGHTS,
    hard_to_reach_probs=CRITIQUE_HARD_TO_REACH_PROBS,
) -> GeneratingConfig:
    """Three classes over four registers: erroneous records, a
    hard-to-reach target class with uniformly low inclusion, and a
    mainstream target class.  Fitting a two-class model to this design
    shows the erroneous-record class and the hard-to-reach class being
    absorbed into one low-inclusion class."""
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (3,):
        raise ValidationError(Violation("bad-argument", "class_weights must have length 3"))
    htr = np.asarray(hard_to_reach_probs, dtype=np.float64)
    if htr.shape != (4,):
        raise ValidationError(Violation("bad-argument", "hard_to_reach_probs must have length 4"))
    probs = np.asarray([SCENARIO1_LOW_PROBS, htr, SCENARIO1_HIGH_PROBS])
    spec = ModelSpec(SCENARIO1_REGISTERS, 3)
    params = ParameterSet(weights / weights.sum(), probs)
    return GeneratingConfig(spec, params, int(population_size), CRITIQUE_ROLES, int(seed))
