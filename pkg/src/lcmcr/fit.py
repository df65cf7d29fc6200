"""Conditional-likelihood EM fitting.

The all-zero cell is unobservable, so fitting maximizes the multinomial
likelihood of the observed profiles renormalized by 1 - P(all zero).
Each iteration imputes the expected all-zero count at the current
parameters, completes the (profile x class) table with posterior weights,
and then updates parameters on the completed table: closed-form weighted
proportions for weights and independent registers, normalized marginal
tables for class-specific blocks, and iterative proportional fitting for
shared blocks.  The imputation argument makes the capture-truncated log
likelihood non-decreasing across iterations, which is checked by tests.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _backend
from .counts import CaptureCounts
from .errors import (
    NonIdentifiableError,
    NumericalError,
    ValidationError,
    Violation,
)
from .model import (
    PROB_EPS,
    ModelSpec,
    ParameterSet,
    block_cell_indices,
    class_conditional_table,
    ensure_valid,
    ensure_valid_spec,
    implied_capture_margins,
    index_to_bitstring,
    interaction_masks,
    profile_matrix,
    shared_block_table,
)
from .structure import StructureReport, degrees_of_freedom

logger = logging.getLogger(__name__)

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class FitConfig:
    """Knobs for one fit call.  All randomness flows from seed."""

    seed: int
    num_starts: int = 20
    tol: float = 1e-8
    max_iter: int = 5000
    ipf_tol: float = 1e-10
    ipf_max_iter: int = 500

    def __post_init__(self):
        bad = []
        if self.seed < 0:
            bad.append(Violation("bad-argument", "seed must be a non-negative integer"))
        if self.num_starts < 1:
            bad.append(Violation("bad-argument", "num_starts must be >= 1"))
        if not self.tol > 0:
            bad.append(Violation("bad-argument", "tol must be positive"))
        if self.max_iter < 1:
            bad.append(Violation("bad-argument", "max_iter must be >= 1"))
        if not self.ipf_tol > 0 or self.ipf_max_iter < 1:
            bad.append(Violation("bad-argument", "ipf_tol must be positive and ipf_max_iter >= 1"))
        if bad:
            raise ValidationError(bad)


class EStepResult(NamedTuple):
    posteriors: np.ndarray      # (2^K, L), rows sum to 1
    expected_table: np.ndarray  # (2^K, L), completed counts incl. imputed zero row


class _IpfFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# layout: spec geometry precomputed once per fit


@dataclass
class _Layout:
    bits: np.ndarray
    bits_f: np.ndarray
    free_idx: np.ndarray
    specific: list
    shared: list
    pure_independence: bool


def _build_layout(spec: ModelSpec) -> _Layout:
    bits = np.ascontiguousarray(profile_matrix(spec.num_registers))
    bits_f = bits.astype(np.float64)
    specific = []
    for term in spec.specific_terms:
        regs = spec.term_register_indices(term)
        cellidx = block_cell_indices(bits, regs)
        onehot = np.eye(2**term.size)[cellidx]
        specific.append((regs, cellidx, onehot))
    shared = []
    for term in spec.shared_terms:
        regs = spec.term_register_indices(term)
        cellidx = block_cell_indices(bits, regs)
        onehot = np.eye(2**term.size)[cellidx]
        shared.append((regs, cellidx, onehot, interaction_masks(term.size)))
    return _Layout(
        bits=bits,
        bits_f=bits_f,
        free_idx=spec.free_register_indices,
        specific=specific,
        shared=shared,
        pure_independence=not spec.dependence_terms,
    )


# ---------------------------------------------------------------------------
# E and M pieces (general path; the independence path uses the fused kernel)


def _estep_arrays(spec, params, counts_vec, eps):
    """Returns (loglik, posteriors, completed table), class-major (L, P)."""
    cond = class_conditional_table(spec, params, eps)
    w = params.class_weights
    cell = w @ cond
    p0 = float(cell[0])
    n = float(counts_vec.sum())
    ll = float(counts_vec @ np.log(cell)) - n * float(np.log1p(-p0))
    posts = w[:, None] * cond / cell
    z = posts * counts_vec[None, :]
    z[:, 0] = (n * p0 / (1.0 - p0)) * posts[:, 0]
    return ll, posts, z


def _ipf_shared(expected, tol, max_iter, start=None):
    """Fits the joint (class x cell) table whose generators are every
    {register, class} margin plus the class-pooled block table.

    Scaling by a register margin adjusts per-class main effects; scaling
    by the pooled table adjusts cell effects shared across classes, so
    every iterate stays inside the shared-interaction family.  Each
    scaling is a partial maximization of the complete-data likelihood,
    so warm-starting at the previous parameter value (the EM caller does)
    keeps the outer iteration monotone even when this loop stops early.
    Without a start the per-class independence fit, the zero-interaction
    member, is used.
    """
    L, ncells = expected.shape
    m = ncells.bit_length() - 1
    bb = profile_matrix(m).astype(bool)

    row_tot = expected.sum(axis=1)
    target_one = np.stack([expected[:, bb[:, i]].sum(axis=1) for i in range(m)], axis=1)
    target_zero = row_tot[:, None] - target_one
    target_pool = expected.sum(axis=0)

    if start is not None:
        fitted = np.array(start, dtype=np.float64)
    else:
        safe_tot = np.maximum(row_tot, _LOG_FLOOR)
        pr = target_one / safe_tot[:, None]
        fitted = row_tot[:, None] * np.where(
            bb.T[None, :, :], pr[:, :, None], 1.0 - pr[:, :, None]
        ).prod(axis=1)

    cols_one = [np.flatnonzero(bb[:, i]) for i in range(m)]
    cols_zero = [np.flatnonzero(~bb[:, i]) for i in range(m)]
    for _ in range(max_iter):
        for i in range(m):
            cur_one = fitted[:, cols_one[i]].sum(axis=1)
            cur_zero = fitted[:, cols_zero[i]].sum(axis=1)
            fitted[:, cols_one[i]] *= (target_one[:, i] / np.maximum(cur_one, _LOG_FLOOR))[:, None]
            fitted[:, cols_zero[i]] *= (target_zero[:, i] / np.maximum(cur_zero, _LOG_FLOOR))[:, None]
        cur_pool = fitted.sum(axis=0)
        fitted *= target_pool / np.maximum(cur_pool, _LOG_FLOOR)

        dev = np.abs(fitted.sum(axis=0) - target_pool).max()
        for i in range(m):
            cur_one = fitted[:, cols_one[i]].sum(axis=1)
            dev = max(dev, np.abs(cur_one - target_one[:, i]).max())
        scale = max(1.0, float(expected.sum()))
        if dev <= tol * scale:
            return fitted
    raise _IpfFailure(
        f"proportional fitting did not reach tolerance {tol} in {max_iter} sweeps"
    )


def _extract_shared(fitted, masks):
    """Pulls (base rates, shared effects) out of a fitted block table.

    Corner coordinates: the log cell ratios against the all-zero cell give
    per-class logits at the single-bit cells and, by inclusion-exclusion
    over each mask's subsets, the shared effect values (read off class 0;
    the family makes them equal across classes up to float noise).
    """
    L, ncells = fitted.shape
    m = ncells.bit_length() - 1
    t = fitted / np.maximum(fitted.sum(axis=1, keepdims=True), _LOG_FLOOR)
    logt = np.log(np.maximum(t, _LOG_FLOOR))
    base = np.empty((L, m))
    for i in range(m):
        cell = 1 << (m - 1 - i)
        delta = logt[:, cell] - logt[:, 0]
        base[:, i] = 1.0 / (1.0 + np.exp(-delta))
    values = np.empty(len(masks))
    for j, mask in enumerate(masks):
        acc = 0.0
        sub = mask
        npop = bin(mask).count("1")
        while True:
            sign = -1.0 if (npop - bin(sub).count("1")) % 2 else 1.0
            acc += sign * logt[0, sub]
            if sub == 0:
                break
            sub = (sub - 1) & mask
        values[j] = acc
    return base, values


def _mstep_arrays(spec, layout, z, ipf_tol, ipf_max_iter, prev_params=None):
    """Parameter update from a completed (L, P) table."""
    L, K = spec.num_classes, spec.num_registers
    class_tot = z.sum(axis=1)
    weights = class_tot / class_tot.sum()
    denom = np.maximum(class_tot, _LOG_FLOOR)

    probs = np.full((L, K), 0.5)
    if layout.free_idx.size:
        probs[:, layout.free_idx] = (z @ layout.bits_f[:, layout.free_idx]) / denom[:, None]

    tables = []
    for regs, _, onehot in layout.specific:
        e = z @ onehot
        t = e / denom[:, None]
        tables.append(t)
        probs[:, regs] = t @ profile_matrix(len(regs)).astype(np.float64)

    shared_vals = []
    for si, (regs, _, onehot, masks) in enumerate(layout.shared):
        e = z @ onehot
        start = None
        if prev_params is not None:
            prev_table = shared_block_table(
                prev_params.inclusion_probs[:, regs],
                prev_params.shared_interactions[si],
                PROB_EPS,
            )
            start = class_tot[:, None] * prev_table
        fitted = _ipf_shared(e, ipf_tol, ipf_max_iter, start=start)
        base, values = _extract_shared(fitted, masks)
        probs[:, regs] = base
        shared_vals.append(values)

    return ParameterSet(weights, probs, tuple(tables), tuple(shared_vals))


def _param_delta(a: ParameterSet, b: ParameterSet) -> float:
    d = float(np.abs(a.class_weights - b.class_weights).max())
    d = max(d, float(np.abs(a.inclusion_probs - b.inclusion_probs).max()))
    for ta, tb in zip(a.block_tables, b.block_tables):
        d = max(d, float(np.abs(ta - tb).max()))
    for va, vb in zip(a.shared_interactions, b.shared_interactions):
        if va.size:
            d = max(d, float(np.abs(va - vb).max()))
    return d


# ---------------------------------------------------------------------------
# public single-shot operations


def _check_counts(spec: ModelSpec, counts: CaptureCounts) -> None:
    if counts.num_registers != spec.num_registers:
        raise ValidationError(
            Violation(
                "counts-width-mismatch",
                f"counts have {counts.num_registers}-bit profiles, model has "
                f"{spec.num_registers} registers",
            )
        )


def cond_loglik(spec: ModelSpec, params: ParameterSet, counts: CaptureCounts) -> float:
    """Capture-truncated log likelihood sum n_y log(P(y) / (1 - P(0)))."""
    ensure_valid(spec, params)
    _check_counts(spec, counts)
    ll, _, _ = _estep_arrays(spec, params, counts.to_vector(), PROB_EPS)
    return ll


def e_step(spec: ModelSpec, params: ParameterSet, counts: CaptureCounts) -> EStepResult:
    """Posterior class responsibilities and the completed count table.

    Both arrays are profile-major with one row per profile index; the
    expected table's all-zero row carries the imputed unobserved counts
    n P(0) / (1 - P(0)) split by posterior.
    """
    ensure_valid(spec, params)
    _check_counts(spec, counts)
    _, posts, z = _estep_arrays(spec, params, counts.to_vector(), PROB_EPS)
    return EStepResult(np.ascontiguousarray(posts.T), np.ascontiguousarray(z.T))


def m_step(
    spec: ModelSpec,
    expected_table: np.ndarray,
    ipf_tol: float = 1e-10,
    ipf_max_iter: int = 500,
) -> ParameterSet:
    """Maximizer of the complete-data likelihood for a completed table.

    expected_table is profile-major, (2^K, L), non-negative.
    """
    ensure_valid_spec(spec)
    table = np.asarray(expected_table, dtype=np.float64)
    P, L = 2**spec.num_registers, spec.num_classes
    if table.shape != (P, L):
        raise ValidationError(
            Violation("shape-mismatch", f"expected table of shape ({P}, {L}), got {table.shape}")
        )
    if np.any(~np.isfinite(table)) or np.any(table < 0):
        raise ValidationError(
            Violation("table-negative", "expected table must be finite and non-negative")
        )
    if table.sum() <= 0:
        raise ValidationError(Violation("table-empty", "expected table has zero total mass"))
    layout = _build_layout(spec)
    try:
        return _mstep_arrays(spec, layout, table.T.copy(), ipf_tol, ipf_max_iter)
    except _IpfFailure as exc:
        raise NumericalError(str(exc)) from exc


def canonicalize(spec: ModelSpec, params: ParameterSet) -> ParameterSet:
    """Relabels classes into the canonical order: ascending mean implied
    capture margin, ties broken by the margin row, then the inclusion row,
    then the original index, so identical classes keep their order."""
    order = _canonical_order(spec, params)
    return _permute_classes(spec, params, order)


def _canonical_order(spec: ModelSpec, params: ParameterSet) -> list[int]:
    margins = implied_capture_margins(spec, params)
    keys = [
        (float(margins[x].mean()), tuple(margins[x]), tuple(params.inclusion_probs[x]), x)
        for x in range(spec.num_classes)
    ]
    return [k[-1] for k in sorted(keys)]


def _permute_classes(spec: ModelSpec, params: ParameterSet, order) -> ParameterSet:
    idx = np.asarray(order, dtype=np.int64)
    return ParameterSet(
        params.class_weights[idx],
        params.inclusion_probs[idx],
        tuple(t[idx] for t in params.block_tables),
        params.shared_interactions,
    )


# ---------------------------------------------------------------------------
# multi-start driver


@dataclass
class _StartOutcome:
    start_index: int
    params: ParameterSet | None
    loglik: float
    trace: tuple
    iterations: int
    converged: bool
    aborted: bool = False
    reason: str = ""


def _random_init(spec: ModelSpec, rng: np.random.Generator) -> ParameterSet:
    L, K = spec.num_classes, spec.num_registers
    w = 0.9 * rng.dirichlet(np.ones(L)) + 0.1 / L
    probs = rng.uniform(0.1, 0.9, size=(L, K))
    tables = []
    for term in spec.specific_terms:
        ncells = 2**term.size
        tables.append(0.9 * rng.dirichlet(np.ones(ncells), size=L) + 0.1 / ncells)
    shared = []
    for term in spec.shared_terms:
        shared.append(rng.uniform(-1.0, 1.0, size=2**term.size - 1 - term.size))
    return ParameterSet.for_spec(spec, w, probs, tuple(tables), tuple(shared))


def _moment_init(spec: ModelSpec, layout: _Layout, counts_vec, config: FitConfig) -> ParameterSet:
    """Deterministic start: soft-assign profiles to classes by how many
    registers caught them, then take one M step."""
    L = spec.num_classes
    K = spec.num_registers
    captures = layout.bits.sum(axis=1).astype(np.int64)
    group = np.minimum((captures * L) // (K + 1), L - 1)
    posts = np.full((L, counts_vec.size), 0.1 / L)
    posts[group, np.arange(counts_vec.size)] += 0.9
    z = posts * counts_vec[None, :]
    z += 1e-9  # keeps every class alive even when a group is empty
    return _mstep_arrays(spec, layout, z, config.ipf_tol, config.ipf_max_iter)


def _run_start(spec, layout, counts_vec, init_params, config, start_index):
    eps = PROB_EPS
    trace: list[float] = []
    converged = False
    backend = _backend.active()

    if layout.pure_independence:
        w = np.array(init_params.class_weights)
        p = np.array(init_params.inclusion_probs)
        prev_ll = None
        for _ in range(config.max_iter):
            ll, new_w, new_p, dmax = backend.em_step_indep(layout.bits, counts_vec, w, p, eps)
            trace.append(ll)
            w, p = new_w, new_p
            if (
                prev_ll is not None
                and abs(ll - prev_ll) <= config.tol * max(1.0, abs(ll))
                and dmax <= config.tol / 10.0
            ):
                converged = True
                break
            prev_ll = ll
        params = ParameterSet(w, p)
    else:
        params = init_params
        prev_ll = None
        for _ in range(config.max_iter):
            ll, _, z = _estep_arrays(spec, params, counts_vec, eps)
            try:
                new_params = _mstep_arrays(
                    spec, layout, z, config.ipf_tol, config.ipf_max_iter, prev_params=params
                )
            except _IpfFailure as exc:
                return _StartOutcome(
                    start_index, None, -np.inf, tuple(trace), len(trace), False,
                    aborted=True, reason=str(exc),
                )
            dmax = _param_delta(params, new_params)
            trace.append(ll)
            params = new_params
            if (
                prev_ll is not None
                and abs(ll - prev_ll) <= config.tol * max(1.0, abs(ll))
                and dmax <= config.tol / 10.0
            ):
                converged = True
                break
            prev_ll = ll

    final_ll, _, _ = _estep_arrays(spec, params, counts_vec, eps)
    trace.append(final_ll)
    return _StartOutcome(
        start_index, params, final_ll, tuple(trace), len(trace) - 1, converged
    )


def fit(
    spec: ModelSpec,
    counts: CaptureCounts,
    config: FitConfig,
    force: bool = False,
    threads: int = 1,
) -> "FitResult":
    """Multi-start EM fit of spec to observed counts.

    Starts: index 0 is a deterministic moment heuristic, the rest draw
    from a seed sequence rooted at config.seed, so results depend only on
    (spec, counts, config), never on thread count.  The best start by
    final conditional log likelihood wins; ties go to the lower index.
    """
    ensure_valid_spec(spec)
    _check_counts(spec, counts)
    if counts.n < 1:
        raise ValidationError(Violation("counts-empty", "no observed individuals"))
    structure = degrees_of_freedom(spec)
    if structure.degrees_of_freedom < 0 and not force:
        raise NonIdentifiableError(
            f"model {spec.notation()} has {structure.degrees_of_freedom} degrees of "
            f"freedom; pass force=True to fit anyway"
        )

    layout = _build_layout(spec)
    counts_vec = counts.to_vector()

    children = np.random.SeedSequence(config.seed).spawn(config.num_starts)
    inits = []
    for i in range(config.num_starts):
        if i == 0:
            try:
                inits.append(_moment_init(spec, layout, counts_vec, config))
                continue
            except _IpfFailure:
                pass  # fall through to a random start
        inits.append(_random_init(spec, np.random.Generator(np.random.PCG64(children[i]))))

    def run(i: int) -> _StartOutcome:
        return _run_start(spec, layout, counts_vec, inits[i], config, i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, range(config.num_starts)))
    else:
        outcomes = [run(i) for i in range(config.num_starts)]

    failed = tuple(
        {"start_index": o.start_index, "reason": o.reason} for o in outcomes if o.aborted
    )
    alive = [o for o in outcomes if not o.aborted]
    if not alive:
        raise NumericalError(
            "every start aborted: " + "; ".join(f["reason"] for f in failed)
        )
    best = max(alive, key=lambda o: (o.loglik, -o.start_index))
    if not best.converged:
        logger.warning(
            "best start %d stopped at max_iter=%d without meeting tol=%g",
            best.start_index, config.max_iter, config.tol,
        )

    order = _canonical_order(spec, best.params)
    params = _permute_classes(spec, best.params, order)
    ll, posts, _ = _estep_arrays(spec, params, counts_vec, PROB_EPS)

    posteriors = {
        key: tuple(float(v) for v in posts[:, int(key, 2)]) for key in counts.counts
    }
    pcount = structure.parameter_count
    n = counts.n
    return FitResult(
        spec=spec,
        params=params,
        cond_loglik=ll,
        iterations=best.iterations,
        converged=best.converged,
        start_index=best.start_index,
        loglik_trace=best.trace,
        posteriors=posteriors,
        structure=structure,
        aic=2.0 * pcount - 2.0 * ll,
        bic=pcount * float(np.log(n)) - 2.0 * ll,
        n_observed=n,
        boundary_parameters=_boundary_parameters(spec, params),
        failed_starts=failed,
    )


def _boundary_parameters(spec: ModelSpec, params: ParameterSet, eps: float = PROB_EPS):
    """Parameters sitting on the probability boundary after fitting."""
    flags = []
    for x, w in enumerate(params.class_weights):
        if w <= eps or w >= 1.0 - eps:
            flags.append({"kind": "class-weight", "class": x, "value": float(w)})
    in_specific = spec.specific_block_register_indices
    for x in range(spec.num_classes):
        for k, name in enumerate(spec.register_names):
            if k in in_specific:
                continue
            v = params.inclusion_probs[x, k]
            if v <= eps or v >= 1.0 - eps:
                flags.append(
                    {"kind": "inclusion", "class": x, "register": name, "value": float(v)}
                )
    for i, (term, table) in enumerate(zip(spec.specific_terms, params.block_tables)):
        for x in range(spec.num_classes):
            for cell in range(table.shape[1]):
                v = table[x, cell]
                if v <= eps or v >= 1.0 - eps:
                    flags.append(
                        {
                            "kind": "block-cell",
                            "term": i,
                            "class": x,
                            "cell": index_to_bitstring(cell, term.size),
                            "value": float(v),
                        }
                    )
    return tuple(flags)


@dataclass(frozen=True)
class FitResult:
    """Everything a fit produced, serializable to deterministic JSON."""

    spec: ModelSpec
    params: ParameterSet
    cond_loglik: float
    iterations: int
    converged: bool
    start_index: int
    loglik_trace: tuple
    posteriors: dict
    structure: StructureReport
    aic: float
    bic: float
    n_observed: int
    boundary_parameters: tuple = ()
    failed_starts: tuple = ()

    def to_json_dict(self, include_trace: bool = False) -> dict:
        out = {
            "schema_version": 1,
            "spec": self.spec.to_json_dict(),
            "params": self.params.to_json_dict(self.spec),
            "cond_loglik": self.cond_loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "start_index": self.start_index,
            "posteriors": {k: list(v) for k, v in sorted(self.posteriors.items())},
            "structure": self.structure.to_json_dict(),
            "aic": self.aic,
            "bic": self.bic,
            "n_observed": self.n_observed,
            "boundary_parameters": list(self.boundary_parameters),
            "failed_starts": list(self.failed_starts),
        }
        if include_trace:
            out["loglik_trace"] = list(self.loglik_trace)
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "FitResult":
        try:
            spec = ModelSpec.from_json_dict(data["spec"])
            params = ParameterSet.from_json_dict(spec, data["params"])
            structure = StructureReport(
                independent_cells=data["structure"]["independent_cells"],
                parameter_count=data["structure"]["parameter_count"],
                degrees_of_freedom=data["structure"]["degrees_of_freedom"],
                flag=data["structure"]["flag"],
                jacobian_rank=data["structure"].get("jacobian_rank"),
                rank_deficient=data["structure"].get("rank_deficient"),
            )
            return cls(
                spec=spec,
                params=params,
                cond_loglik=float(data["cond_loglik"]),
                iterations=int(data["iterations"]),
                converged=bool(data["converged"]),
                start_index=int(data["start_index"]),
                loglik_trace=tuple(data.get("loglik_trace", ())),
                posteriors={k: tuple(v) for k, v in data["posteriors"].items()},
                structure=structure,
                aic=float(data["aic"]),
                bic=float(data["bic"]),
                n_observed=int(data["n_observed"]),
                boundary_parameters=tuple(data.get("boundary_parameters", ())),
                failed_starts=tuple(data.get("failed_starts", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                Violation("fit-bad-json", f"malformed fit result document: {exc}")
            ) from exc
