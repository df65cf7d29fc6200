"""Class-size and total population estimates.

Each class size is the posterior-weighted observed mass inflated by that
class's capture probability, m_x / (1 - q_x).  Two totals follow: the
standard reading sums every class, the overcoverage reading sums only the
classes designated as target and treats the rest as erroneous records.
Both are always computed; a PopEstimate carries them side by side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .counts import CaptureCounts
from .errors import UnboundedEstimateError, ValidationError, Violation
from .fit import FitResult, _estep_arrays
from .model import PROB_EPS, ModelSpec, ParameterSet, ensure_valid, miss_probability

# Beyond this miss probability the inflation factor exceeds 1e9 and the
# estimate is numerically meaningless.
_MISS_CEILING = 1.0 - 1e-9

TARGET_RULES = ("highest-mean-inclusion", "all")


@dataclass(frozen=True)
class PopEstimate:
    """Population size under both readings of the latent classes."""

    class_sizes: tuple[float, ...]
    total_all_classes: float
    total_target_only: float
    target_classes: tuple[int, ...]
    observed_n: int
    miss_probs: tuple[float, ...]
    observed_class_masses: tuple[float, ...]
    interpretation: str

    @property
    def headline(self) -> float:
        return (
            self.total_all_classes
            if self.interpretation == "standard"
            else self.total_target_only
        )

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "interpretation": self.interpretation,
            "headline": self.headline,
            "class_sizes": list(self.class_sizes),
            "total_all_classes": self.total_all_classes,
            "total_target_only": self.total_target_only,
            "target_classes": list(self.target_classes),
            "observed_n": self.observed_n,
            "miss_probs": list(self.miss_probs),
            "observed_class_masses": list(self.observed_class_masses),
        }


def class_sizes(spec: ModelSpec, params: ParameterSet, counts: CaptureCounts) -> np.ndarray:
    """Inflated size of every latent class, observed mass over capture
    probability."""
    ensure_valid(spec, params)
    if counts.num_registers != spec.num_registers:
        raise ValidationError(
            Violation(
                "counts-width-mismatch",
                f"counts have {counts.num_registers}-bit profiles, model has "
                f"{spec.num_registers} registers",
            )
        )
    masses = _observed_masses(spec, params, counts)
    q = np.asarray(miss_probability(spec, params).per_class)
    _check_bounded(q)
    return masses / (1.0 - q)


def _observed_masses(spec, params, counts) -> np.ndarray:
    _, posts, _ = _estep_arrays(spec, params, counts.to_vector(), PROB_EPS)
    return posts @ counts.to_vector()


def _check_bounded(q: np.ndarray) -> None:
    worst = int(np.argmax(q))
    if q[worst] > _MISS_CEILING:
        raise UnboundedEstimateError(
            f"class {worst} has miss probability {q[worst]!r}; its inflated "
            f"size has no finite value"
        )


def _assemble(spec, params, counts, target, interpretation) -> PopEstimate:
    masses = _observed_masses(spec, params, counts)
    q = np.asarray(miss_probability(spec, params).per_class)
    _check_bounded(q)
    sizes = masses / (1.0 - q)
    target = tuple(sorted(target))
    return PopEstimate(
        class_sizes=tuple(float(s) for s in sizes),
        total_all_classes=float(sizes.sum()),
        total_target_only=float(sizes[list(target)].sum()),
        target_classes=target,
        observed_n=counts.n,
        miss_probs=tuple(float(v) for v in q),
        observed_class_masses=tuple(float(v) for v in masses),
        interpretation=interpretation,
    )


def _check_target(spec: ModelSpec, target: Iterable[int]) -> tuple[int, ...]:
    target = tuple(int(t) for t in target)
    if not target:
        raise ValidationError(Violation("target-empty", "target class set is empty"))
    bad = [t for t in target if t < 0 or t >= spec.num_classes]
    if bad:
        raise ValidationError(
            Violation(
                "target-unknown-class",
                f"target classes {bad} do not exist in a {spec.num_classes}-class model",
            )
        )
    if len(set(target)) != len(target):
        raise ValidationError(Violation("target-duplicate", f"target classes {target} repeat an index"))
    return target


def estimate_standard(spec: ModelSpec, params: ParameterSet, counts: CaptureCounts) -> PopEstimate:
    """Every class is real population; the headline is the sum of all
    class sizes."""
    ensure_valid(spec, params)
    _require_width(spec, counts)
    return _assemble(spec, params, counts, range(spec.num_classes), "standard")


def estimate_overcoverage(
    spec: ModelSpec,
    params: ParameterSet,
    counts: CaptureCounts,
    target_classes: Iterable[int],
) -> PopEstimate:
    """Only the designated classes are real population; the rest are
    erroneous records and the headline drops them."""
    ensure_valid(spec, params)
    _require_width(spec, counts)
    target = _check_target(spec, target_classes)
    return _assemble(spec, params, counts, target, "overcoverage")


def _require_width(spec, counts):
    if counts.num_registers != spec.num_registers:
        raise ValidationError(
            Violation(
                "counts-width-mismatch",
                f"counts have {counts.num_registers}-bit profiles, model has "
                f"{spec.num_registers} registers",
            )
        )


def designate_target(fit_result: FitResult, rule="highest-mean-inclusion") -> set[int]:
    """Chooses which fitted classes count as target population.

    "highest-mean-inclusion" keeps every class except the one with the
    lowest mean implied capture margin (the presumed erroneous-record
    class); "all" keeps everything; an explicit iterable of class indices
    is validated and passed through.
    """
    spec = fit_result.spec
    if isinstance(rule, str):
        if rule == "all":
            return set(range(spec.num_classes))
        if rule == "highest-mean-inclusion":
            if spec.num_classes == 1:
                return {0}
            from .model import implied_capture_margins

            margins = implied_capture_margins(spec, fit_result.params)
            means = margins.mean(axis=1)
            lowest = int(np.argmin(means))  # canonical order puts it at 0
            return set(range(spec.num_classes)) - {lowest}
        raise ValidationError(
            Violation("target-rule-unknown", f"unknown designation rule {rule!r}")
        )
    return set(_check_target(spec, rule))
