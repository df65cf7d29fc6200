"""Parameter counting, degrees of freedom, and a numeric rank diagnostic.

The observable data live on 2^K - 1 capture cells with one multinomial
constraint, so a model spends its parameters against 2^K - 2 independent
cells.  Degrees of freedom below zero mean the structure cannot be
identified from capture data at all; zero means it is saturated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import CapacityError, ValidationError, Violation
from .model import (
    ModelSpec,
    ParameterSet,
    distribution_array,
    ensure_valid,
    ensure_valid_spec,
    interaction_masks,
    profile_matrix,
)

# Registers above this make the 2^K-point Jacobian too wide to probe.
MAX_RANK_CHECK_REGISTERS = 10

_DEGENERATE_TOL = 1e-8


@dataclass(frozen=True)
class StructureReport:
    """Degrees-of-freedom arithmetic for one model structure."""

    independent_cells: int
    parameter_count: int
    degrees_of_freedom: int
    flag: str
    jacobian_rank: int | None = None
    rank_deficient: bool | None = None

    def to_json_dict(self) -> dict:
        out = {
            "independent_cells": self.independent_cells,
            "parameter_count": self.parameter_count,
            "degrees_of_freedom": self.degrees_of_freedom,
            "flag": self.flag,
        }
        if self.jacobian_rank is not None:
            out["jacobian_rank"] = self.jacobian_rank
            out["rank_deficient"] = self.rank_deficient
        return out


def parameter_count(spec: ModelSpec) -> int:
    """Number of free parameters in the structure.

    L - 1 class weights, plus L inclusion probabilities for every register
    outside a class-specific block, plus L(2^m - 1) cells per
    class-specific block, plus 2^m - 1 - m shared effects per shared block.
    """
    ensure_valid_spec(spec)
    L = spec.num_classes
    in_specific = spec.specific_block_register_indices
    count = L - 1
    count += L * (spec.num_registers - len(in_specific))
    for term in spec.specific_terms:
        count += L * (2**term.size - 1)
    for term in spec.shared_terms:
        count += 2**term.size - 1 - term.size
    return count


def degrees_of_freedom(spec: ModelSpec) -> StructureReport:
    ensure_valid_spec(spec)
    cells = 2**spec.num_registers - 2
    pcount = parameter_count(spec)
    df = cells - pcount
    flag = "negative" if df < 0 else ("saturated" if df == 0 else "ok")
    return StructureReport(cells, pcount, df, flag)


# ---------------------------------------------------------------------------
# unconstrained chart over the parameter space, used for differentiation


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def params_to_chart(spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """Flattens params into an unconstrained vector of length parameter_count.

    Weights map through log ratios against the last class, inclusion
    probabilities through logits, block tables through log ratios against
    their all-zero cell, and shared effects pass through unchanged.
    """
    L = spec.num_classes
    coords = [np.log(params.class_weights[:-1] / params.class_weights[-1])]
    free_cols = sorted(set(range(spec.num_registers)) - spec.specific_block_register_indices)
    if free_cols:
        coords.append(_logit(params.inclusion_probs[:, free_cols]).ravel())
    for table in params.block_tables:
        coords.append(np.log(table[:, 1:] / table[:, :1]).ravel())
    for values in params.shared_interactions:
        coords.append(values)
    return np.concatenate(coords) if coords else np.zeros(0)


def params_from_chart(spec: ModelSpec, theta: np.ndarray) -> ParameterSet:
    """Inverse of params_to_chart."""
    L, K = spec.num_classes, spec.num_registers
    theta = np.asarray(theta, dtype=np.float64)
    pos = 0

    logw = np.concatenate([theta[pos : pos + L - 1], [0.0]])
    pos += L - 1
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()

    probs = np.full((L, K), 0.5)
    free_cols = sorted(set(range(K)) - spec.specific_block_register_indices)
    if free_cols:
        block = theta[pos : pos + L * len(free_cols)].reshape(L, len(free_cols))
        pos += L * len(free_cols)
        probs[:, free_cols] = _expit(block)

    tables = []
    for term in spec.specific_terms:
        ncells = 2**term.size
        raw = theta[pos : pos + L * (ncells - 1)].reshape(L, ncells - 1)
        pos += L * (ncells - 1)
        logt = np.concatenate([np.zeros((L, 1)), raw], axis=1)
        logt -= logt.max(axis=1, keepdims=True)
        t = np.exp(logt)
        t /= t.sum(axis=1, keepdims=True)
        tables.append(t)

    shared = []
    for term in spec.shared_terms:
        nvals = 2**term.size - 1 - term.size
        shared.append(theta[pos : pos + nvals])
        pos += nvals

    return ParameterSet.for_spec(spec, w, probs, tuple(tables), tuple(shared))


class RankCheck(NamedTuple):
    rank: int
    rank_deficient: bool
    parameter_count: int
    point_ranks: tuple[int, ...]


def _reject_degenerate(spec: ModelSpec, params: ParameterSet) -> None:
    bad = (
        np.any(params.class_weights < _DEGENERATE_TOL)
        or np.any(params.inclusion_probs < _DEGENERATE_TOL)
        or np.any(params.inclusion_probs > 1 - _DEGENERATE_TOL)
        or any(np.any(t < _DEGENERATE_TOL) for t in params.block_tables)
    )
    if bad:
        raise ValidationError(
            Violation(
                "degenerate-params",
                "rank check needs interior parameters; a weight or probability "
                "sits on the simplex boundary",
            )
        )


def jacobian_rank_check(
    spec: ModelSpec,
    params: ParameterSet,
    num_points: int = 5,
    seed: int = 0,
    step: float = 1e-6,
    rank_rtol: float = 1e-8,
) -> RankCheck:
    """Numeric local identifiability probe.

    Differentiates the map from the unconstrained chart to the 2^K - 1
    observable cell probabilities by central differences at the supplied
    point and at random interior points, and reports the maximum Jacobian
    rank seen.  rank < parameter_count at every point flags the structure
    as locally rank deficient (a stronger warning than the counting bound).
    """
    ensure_valid(spec, params)
    if spec.num_registers > MAX_RANK_CHECK_REGISTERS:
        raise CapacityError(
            f"rank check enumerates 2^K cells and is limited to "
            f"K <= {MAX_RANK_CHECK_REGISTERS}, got {spec.num_registers}"
        )
    _reject_degenerate(spec, params)
    if num_points < 1:
        raise ValidationError(Violation("bad-argument", "num_points must be >= 1"))

    pcount = parameter_count(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    points = [params_to_chart(spec, params)]
    for _ in range(num_points - 1):
        points.append(rng.uniform(-2.0, 2.0, size=pcount))

    ranks = []
    for theta in points:
        jac = np.empty((2**spec.num_registers - 1, pcount))
        for j in range(pcount):
            hi = theta.copy()
            lo = theta.copy()
            hi[j] += step
            lo[j] -= step
            fhi = distribution_array(spec, params_from_chart(spec, hi))[1:]
            flo = distribution_array(spec, params_from_chart(spec, lo))[1:]
            jac[:, j] = (fhi - flo) / (2.0 * step)
        sv = np.linalg.svd(jac, compute_uv=False)
        tol = rank_rtol * (sv[0] if sv.size else 0.0)
        ranks.append(int(np.sum(sv > tol)))

    rank = max(ranks)
    return RankCheck(rank, rank < pcount, pcount, tuple(ranks))


def attach_rank(report: StructureReport, check: RankCheck) -> StructureReport:
    return replace(report, jacobian_rank=check.rank, rank_deficient=check.rank_deficient)
