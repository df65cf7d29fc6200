"""Model family: registers, latent classes, and capture-profile probabilities.

A model has K named registers and L latent classes.  Given the class,
register inclusions are independent Bernoulli draws, except for registers
grouped into a dependence block:

* a class-specific block carries one full joint table per class over the
  block's 2^m cells;
* a shared block keeps class-specific per-register base rates but adds
  log-scale interaction effects common to all classes, with the block
  cells renormalized per class.

Each register may appear in at most one block.  Capture profiles are
encoded MSB-first: the leftmost character of a profile string is the
first register in spec order, and the integer index of a profile is the
value of that bitstring, so index 0 is the unobservable all-zero cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import CapacityError, ValidationError, Violation

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] while evaluating
# likelihoods so boundary estimates cannot produce log(0).  Stored
# parameters are never clamped; boundary values are reported, not hidden.
PROB_EPS = 1e-10

# Dense enumeration over all 2^K profiles is refused above this K.
MAX_DENSE_REGISTERS = 20

_WEIGHT_TOL = 1e-12
_TABLE_TOL = 1e-12
_MARGIN_TOL = 1e-9


@lru_cache(maxsize=None)
def profile_matrix(num_registers: int) -> np.ndarray:
    """All 2^K profiles as a read-only (2^K, K) uint8 array.

    Row i holds the bits of i, MSB first, so row order matches profile
    index order and row 0 is the all-zero profile.
    """
    if num_registers > MAX_DENSE_REGISTERS:
        raise CapacityError(
            f"dense profile enumeration supports at most "
            f"{MAX_DENSE_REGISTERS} registers, got {num_registers}"
        )
    idx = np.arange(2**num_registers, dtype=np.int64)
    shifts = num_registers - 1 - np.arange(num_registers, dtype=np.int64)
    bits = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    bits.flags.writeable = False
    return bits


def index_to_bitstring(index: int, num_registers: int) -> str:
    return format(index, f"0{num_registers}b")


@lru_cache(maxsize=None)
def interaction_masks(block_size: int) -> tuple[int, ...]:
    """Cell-index masks of the interaction effects in a shared block.

    One effect per subset of the block's registers with two or more
    members, in ascending mask order; a block of m registers therefore
    has 2^m - 1 - m of them.
    """
    return tuple(
        mask for mask in range(1, 2**block_size) if bin(mask).count("1") >= 2
    )


@dataclass(frozen=True)
class CaptureProfile:
    """An observed inclusion pattern, one bit per register in spec order."""

    bits: tuple[int, ...]

    @classmethod
    def from_string(cls, text: str) -> "CaptureProfile":
        if not text or any(c not in "01" for c in text):
            raise ValidationError(
                Violation("profile-bad-value", f"profile {text!r} is not a bitstring")
            )
        return cls(tuple(int(c) for c in text))

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    @property
    def index(self) -> int:
        return int(self.to_string(), 2) if self.bits else 0

    def __str__(self) -> str:
        return self.to_string()


def coerce_profile(profile, num_registers: int) -> np.ndarray:
    """Accepts a CaptureProfile, bitstring, or 0/1 sequence; returns (K,) uint8."""
    if isinstance(profile, CaptureProfile):
        bits = profile.bits
    elif isinstance(profile, str):
        bits = CaptureProfile.from_string(profile).bits
    else:
        bits = tuple(int(b) for b in profile)
    if len(bits) != num_registers:
        raise ValidationError(
            Violation(
                "profile-length-mismatch",
                f"profile has {len(bits)} bits, model has {num_registers} registers",
            )
        )
    if any(b not in (0, 1) for b in bits):
        raise ValidationError(
            Violation("profile-bad-value", f"profile bits must be 0 or 1, got {bits}")
        )
    return np.asarray(bits, dtype=np.uint8)


@dataclass(frozen=True)
class DependenceTerm:
    """A block of registers that are dependent given the latent class."""

    registers: tuple[str, ...]
    class_specific: bool = False

    def __post_init__(self):
        object.__setattr__(self, "registers", tuple(self.registers))

    @property
    def size(self) -> int:
        return len(self.registers)


@dataclass(frozen=True)
class ModelSpec:
    """Structure of a latent-class capture model (no parameter values)."""

    register_names: tuple[str, ...]
    num_classes: int
    dependence_terms: tuple[DependenceTerm, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "register_names", tuple(self.register_names))
        object.__setattr__(self, "dependence_terms", tuple(self.dependence_terms))

    @property
    def num_registers(self) -> int:
        return len(self.register_names)

    def register_index(self, name: str) -> int:
        return self.register_names.index(name)

    def term_register_indices(self, term: DependenceTerm) -> np.ndarray:
        return np.asarray([self.register_index(r) for r in term.registers], dtype=np.int64)

    @property
    def specific_terms(self) -> tuple[DependenceTerm, ...]:
        return tuple(t for t in self.dependence_terms if t.class_specific)

    @property
    def shared_terms(self) -> tuple[DependenceTerm, ...]:
        return tuple(t for t in self.dependence_terms if not t.class_specific)

    @property
    def blocked_registers(self) -> frozenset[str]:
        return frozenset(r for t in self.dependence_terms for r in t.registers)

    @property
    def free_register_indices(self) -> np.ndarray:
        """Registers in no block at all; shared-block registers are excluded
        because their base rates enter through the block table."""
        blocked = self.blocked_registers
        return np.asarray(
            [i for i, r in enumerate(self.register_names) if r not in blocked],
            dtype=np.int64,
        )

    @property
    def specific_block_register_indices(self) -> frozenset[int]:
        return frozenset(
            int(i) for t in self.specific_terms for i in self.term_register_indices(t)
        )

    def notation(self) -> str:
        """Bracket string naming the structure, e.g. [AX][BX][CDX] or
        [AX][BX][CX][DX][CD]."""
        parts = []
        emitted: set[str] = set()
        specific_of = {r: t for t in self.specific_terms for r in t.registers}
        for name in self.register_names:
            if name in emitted:
                continue
            term = specific_of.get(name)
            if term is None:
                parts.append(f"[{name}X]")
                emitted.add(name)
            else:
                parts.append("[" + "".join(term.registers) + "X]")
                emitted.update(term.registers)
        for term in self.shared_terms:
            parts.append("[" + "".join(term.registers) + "]")
        return "".join(parts)

    def to_json_dict(self) -> dict:
        return {
            "registers": list(self.register_names),
            "classes": self.num_classes,
            "dependence": [
                {"registers": list(t.registers), "class_specific": t.class_specific}
                for t in self.dependence_terms
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelSpec":
        try:
            registers = tuple(str(r) for r in data["registers"])
            classes = int(data["classes"])
            terms = tuple(
                DependenceTerm(
                    tuple(str(r) for r in t["registers"]),
                    bool(t.get("class_specific", False)),
                )
                for t in data.get("dependence", [])
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                Violation("spec-bad-json", f"malformed model spec document: {exc}")
            ) from exc
        spec = cls(registers, classes, terms)
        ensure_valid_spec(spec)
        return spec


@dataclass(frozen=True)
class ParameterSet:
    """Numeric parameters for a ModelSpec.

    inclusion_probs has one column per register; columns of registers in
    a class-specific block are the implied block margins rather than free
    parameters, kept so that marginal rates are always directly readable.
    block_tables holds one (L, 2^m) row-normalized table per
    class-specific term, in term order; shared_interactions holds one
    flat effect vector per shared term, ordered by interaction_masks.
    """

    class_weights: np.ndarray
    inclusion_probs: np.ndarray
    block_tables: tuple[np.ndarray, ...] = ()
    shared_interactions: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "class_weights", _freeze(np.asarray(self.class_weights, dtype=np.float64))
        )
        object.__setattr__(
            self, "inclusion_probs", _freeze(np.asarray(self.inclusion_probs, dtype=np.float64))
        )
        object.__setattr__(
            self,
            "block_tables",
            tuple(_freeze(np.asarray(t, dtype=np.float64)) for t in self.block_tables),
        )
        object.__setattr__(
            self,
            "shared_interactions",
            tuple(
                _freeze(np.atleast_1d(np.asarray(v, dtype=np.float64)))
                for v in self.shared_interactions
            ),
        )

    @property
    def num_classes(self) -> int:
        return int(self.class_weights.shape[0])

    @classmethod
    def independence(cls, class_weights, inclusion_probs) -> "ParameterSet":
        return cls(np.asarray(class_weights), np.asarray(inclusion_probs))

    @classmethod
    def for_spec(
        cls,
        spec: ModelSpec,
        class_weights,
        inclusion_probs,
        block_tables=(),
        shared_interactions=(),
    ) -> "ParameterSet":
        """Builds a ParameterSet, overwriting the inclusion columns of
        class-specific block registers with the margins their tables imply."""
        probs = np.array(inclusion_probs, dtype=np.float64)
        tables = tuple(np.asarray(t, dtype=np.float64) for t in block_tables)
        for term, table in zip(spec.specific_terms, tables):
            regs = spec.term_register_indices(term)
            bb = profile_matrix(term.size).astype(np.float64)
            probs[:, regs] = table @ bb
        return cls(np.asarray(class_weights), probs, tables, shared_interactions)

    def to_json_dict(self, spec: ModelSpec) -> dict:
        return {
            "class_weights": self.class_weights.tolist(),
            "inclusion_probs": self.inclusion_probs.tolist(),
            "block_tables": [
                {"registers": list(t.registers), "tables": tab.tolist()}
                for t, tab in zip(spec.specific_terms, self.block_tables)
            ],
            "shared_interactions": [
                {"registers": list(t.registers), "values": v.tolist()}
                for t, v in zip(spec.shared_terms, self.shared_interactions)
            ],
        }

    @classmethod
    def from_json_dict(cls, spec: ModelSpec, data: dict) -> "ParameterSet":
        try:
            weights = data["class_weights"]
            probs = data["inclusion_probs"]
            tables = []
            for term, entry in zip(spec.specific_terms, data.get("block_tables", [])):
                if tuple(entry["registers"]) != term.registers:
                    raise ValidationError(
                        Violation(
                            "params-term-mismatch",
                            f"block table registers {entry['registers']} do not match "
                            f"spec term {list(term.registers)}",
                        )
                    )
                tables.append(entry["tables"])
            shared = []
            for term, entry in zip(spec.shared_terms, data.get("shared_interactions", [])):
                if tuple(entry["registers"]) != term.registers:
                    raise ValidationError(
                        Violation(
                            "params-term-mismatch",
                            f"interaction registers {entry['registers']} do not match "
                            f"spec term {list(term.registers)}",
                        )
                    )
                shared.append(entry["values"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(
                Violation("params-bad-json", f"malformed parameter document: {exc}")
            ) from exc
        params = cls(np.asarray(weights), np.asarray(probs), tuple(tables), tuple(shared))
        ensure_valid(spec, params)
        return params


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# validation


def validate_spec(spec: ModelSpec) -> list[Violation]:
    out: list[Violation] = []
    names = spec.register_names
    if len(names) < 2:
        out.append(Violation("too-few-registers", f"need at least 2 registers, got {len(names)}"))
    if spec.num_classes < 1:
        out.append(Violation("too-few-classes", f"need at least 1 class, got {spec.num_classes}"))
    for name in names:
        if not isinstance(name, str) or not name:
            out.append(Violation("bad-register-name", f"register name {name!r} is empty or not a string"))
    if len(set(names)) != len(names):
        out.append(Violation("duplicate-register", f"register names {names} contain duplicates"))
    seen_sets: set[frozenset[str]] = set()
    used: dict[str, int] = {}
    for i, term in enumerate(spec.dependence_terms):
        regs = term.registers
        if len(regs) < 2:
            out.append(Violation("term-too-small", f"dependence term {i} has {len(regs)} registers, need >= 2"))
        if len(set(regs)) != len(regs):
            out.append(Violation("term-duplicate-register", f"dependence term {i} repeats a register"))
        for r in regs:
            if r not in names:
                out.append(Violation("unknown-register", f"dependence term {i} references undeclared register {r!r}"))
            if r in used:
                out.append(
                    Violation(
                        "register-in-multiple-terms",
                        f"register {r!r} appears in dependence terms {used[r]} and {i}",
                    )
                )
            used.setdefault(r, i)
        key = frozenset(regs)
        if key in seen_sets:
            out.append(Violation("duplicate-term", f"dependence term {i} repeats register set {sorted(key)}"))
        seen_sets.add(key)
    return out


def validate(spec: ModelSpec, params: ParameterSet) -> list[Violation]:
    """All structural and numeric violations of (spec, params), empty if valid."""
    out = validate_spec(spec)
    if out:
        return out
    L, K = spec.num_classes, spec.num_registers
    w = params.class_weights
    if w.shape != (L,):
        out.append(Violation("weights-length-mismatch", f"class_weights has shape {w.shape}, expected ({L},)"))
    else:
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
            out.append(Violation("prob-out-of-range", "class weights must lie in [0, 1]"))
        elif abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            out.append(Violation("weights-not-normalized", f"class weights sum to {w.sum()!r}, not 1"))
    p = params.inclusion_probs
    if p.shape != (L, K):
        out.append(Violation("shape-mismatch", f"inclusion_probs has shape {p.shape}, expected ({L}, {K})"))
        return out
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        out.append(Violation("prob-out-of-range", "inclusion probabilities must lie in [0, 1]"))
    specific = spec.specific_terms
    if len(params.block_tables) != len(specific):
        out.append(
            Violation(
                "block-tables-count-mismatch",
                f"got {len(params.block_tables)} block tables for {len(specific)} class-specific terms",
            )
        )
        return out
    for i, (term, table) in enumerate(zip(specific, params.block_tables)):
        m = term.size
        if table.shape != (L, 2**m):
            out.append(
                Violation(
                    "block-table-shape-mismatch",
                    f"block table {i} has shape {table.shape}, expected ({L}, {2 ** m})",
                )
            )
            continue
        if not np.all(np.isfinite(table)) or np.any(table < 0) or np.any(table > 1):
            out.append(Violation("prob-out-of-range", f"block table {i} cells must lie in [0, 1]"))
            continue
        if np.any(np.abs(table.sum(axis=1) - 1.0) > _TABLE_TOL):
            out.append(Violation("block-table-not-normalized", f"block table {i} rows must each sum to 1"))
            continue
        regs = spec.term_register_indices(term)
        margins = table @ profile_matrix(m).astype(np.float64)
        if np.any(np.abs(margins - p[:, regs]) > _MARGIN_TOL):
            out.append(
                Violation(
                    "block-margin-mismatch",
                    f"inclusion columns for registers {list(term.registers)} do not "
                    f"match the margins of block table {i}",
                )
            )
    shared = spec.shared_terms
    if len(params.shared_interactions) != len(shared):
        out.append(
            Violation(
                "shared-interactions-count-mismatch",
                f"got {len(params.shared_interactions)} interaction vectors for "
                f"{len(shared)} shared terms",
            )
        )
        return out
    for i, (term, values) in enumerate(zip(shared, params.shared_interactions)):
        expected = 2**term.size - 1 - term.size
        if values.shape != (expected,):
            out.append(
                Violation(
                    "shared-interactions-length-mismatch",
                    f"interaction vector {i} has shape {values.shape}, expected ({expected},)",
                )
            )
        elif not np.all(np.isfinite(values)):
            out.append(Violation("shared-interaction-not-finite", f"interaction vector {i} has non-finite entries"))
    return out


def ensure_valid_spec(spec: ModelSpec) -> None:
    violations = validate_spec(spec)
    if violations:
        raise ValidationError(violations)


def ensure_valid(spec: ModelSpec, params: ParameterSet) -> None:
    violations = validate(spec, params)
    if violations:
        raise ValidationError(violations)


# ---------------------------------------------------------------------------
# probability assembly


def shared_block_table(
    base_probs: np.ndarray, values: np.ndarray, eps: float = PROB_EPS
) -> np.ndarray:
    """Cell probabilities of a shared block, one row per class.

    Rows are the Bernoulli product measure at the class's base rates
    tilted by exp(sum of interaction effects over subsets of the cell),
    renormalized.  With all effects zero this reduces exactly to the
    independent product table.
    """
    base = np.atleast_2d(np.asarray(base_probs, dtype=np.float64))
    m = base.shape[1]
    bb = profile_matrix(m)
    pc = np.clip(base, eps, 1.0 - eps)
    cells = np.where(bb[None, :, :].astype(bool), pc[:, None, :], 1.0 - pc[:, None, :]).prod(axis=2)
    bonus = np.zeros(2**m)
    cell_ids = np.arange(2**m)
    for lam, mask in zip(np.atleast_1d(values), interaction_masks(m)):
        bonus[(cell_ids & mask) == mask] += lam
    cells = cells * np.exp(bonus)[None, :]
    return cells / cells.sum(axis=1, keepdims=True)


def _eval_specific_table(table: np.ndarray, eps: float) -> np.ndarray:
    if eps <= 0:
        return table
    t = np.clip(table, eps, 1.0 - eps)
    return t / t.sum(axis=1, keepdims=True)


def block_cell_indices(bits: np.ndarray, reg_idx: np.ndarray) -> np.ndarray:
    """Maps each profile row to its cell index within a block."""
    m = len(reg_idx)
    shifts = m - 1 - np.arange(m, dtype=np.int64)
    return (bits[:, reg_idx].astype(np.int64) << shifts[None, :]).sum(axis=1)


def class_conditional_table(
    spec: ModelSpec, params: ParameterSet, eps: float = PROB_EPS
) -> np.ndarray:
    """P(profile | class) for every profile, as an (L, 2^K) array.

    Pass eps=0 to evaluate at the exact stored parameters (used when the
    parameters are known to be interior, e.g. for data generation).
    """
    K = spec.num_registers
    if K > MAX_DENSE_REGISTERS:
        raise CapacityError(
            f"full distribution needs 2^{K} cells; the dense bound is K <= {MAX_DENSE_REGISTERS}"
        )
    bits = profile_matrix(K)
    L = spec.num_classes
    table = np.ones((L, 2**K))
    free = spec.free_register_indices
    if free.size:
        pc = np.clip(params.inclusion_probs[:, free], eps, 1.0 - eps) if eps > 0 else params.inclusion_probs[:, free]
        bf = bits[:, free].astype(bool)
        table *= np.where(bf[None, :, :], pc[:, None, :], 1.0 - pc[:, None, :]).prod(axis=2)
    for term, tab in zip(spec.specific_terms, params.block_tables):
        regs = spec.term_register_indices(term)
        cellidx = block_cell_indices(bits, regs)
        table *= _eval_specific_table(tab, eps)[:, cellidx]
    for term, values in zip(spec.shared_terms, params.shared_interactions):
        regs = spec.term_register_indices(term)
        cellidx = block_cell_indices(bits, regs)
        bt = shared_block_table(params.inclusion_probs[:, regs], values, eps)
        table *= bt[:, cellidx]
    return table


def _class_profile_probs(
    spec: ModelSpec, params: ParameterSet, bvec: np.ndarray, eps: float
) -> np.ndarray:
    """P(profile | class) for a single profile, as an (L,) array."""
    L = spec.num_classes
    out = np.ones(L)
    free = spec.free_register_indices
    if free.size:
        pc = np.clip(params.inclusion_probs[:, free], eps, 1.0 - eps) if eps > 0 else params.inclusion_probs[:, free]
        bf = bvec[free].astype(bool)
        out *= np.where(bf[None, :], pc, 1.0 - pc).prod(axis=1)
    row = bvec[None, :]
    for term, tab in zip(spec.specific_terms, params.block_tables):
        regs = spec.term_register_indices(term)
        cell = int(block_cell_indices(row, regs)[0])
        out *= _eval_specific_table(tab, eps)[:, cell]
    for term, values in zip(spec.shared_terms, params.shared_interactions):
        regs = spec.term_register_indices(term)
        cell = int(block_cell_indices(row, regs)[0])
        out *= shared_block_table(params.inclusion_probs[:, regs], values, eps)[:, cell]
    return out


def cell_probability(spec: ModelSpec, params: ParameterSet, profile) -> float:
    """Mixture probability of one capture profile."""
    ensure_valid(spec, params)
    bvec = coerce_profile(profile, spec.num_registers)
    return float(params.class_weights @ _class_profile_probs(spec, params, bvec, PROB_EPS))


def distribution_array(
    spec: ModelSpec, params: ParameterSet, eps: float = PROB_EPS
) -> np.ndarray:
    """Mixture probability of every profile, indexed by profile integer."""
    return params.class_weights @ class_conditional_table(spec, params, eps)


def full_distribution(spec: ModelSpec, params: ParameterSet) -> dict[str, float]:
    """All 2^K cell probabilities keyed by profile string; sums to one."""
    ensure_valid(spec, params)
    dist = distribution_array(spec, params)
    K = spec.num_registers
    return {index_to_bitstring(i, K): float(v) for i, v in enumerate(dist)}


class MissProbability(NamedTuple):
    overall: float
    per_class: tuple[float, ...]


def miss_probability(spec: ModelSpec, params: ParameterSet) -> MissProbability:
    """Probability of the all-zero profile, overall and per class."""
    ensure_valid(spec, params)
    zero = np.zeros(spec.num_registers, dtype=np.uint8)
    per_class = _class_profile_probs(spec, params, zero, PROB_EPS)
    overall = float(params.class_weights @ per_class)
    return MissProbability(overall, tuple(float(q) for q in per_class))


def implied_capture_margins(
    spec: ModelSpec, params: ParameterSet, eps: float = PROB_EPS
) -> np.ndarray:
    """P(register captured | class) for every register, as (L, K).

    For registers outside any class-specific block these are the stored
    inclusion probabilities; block registers get their table margins.
    Used as the structure-independent key for canonical class ordering.
    """
    L, K = spec.num_classes, spec.num_registers
    margins = np.array(params.inclusion_probs, dtype=np.float64)
    for term, tab in zip(spec.specific_terms, params.block_tables):
        regs = spec.term_register_indices(term)
        bb = profile_matrix(term.size).astype(np.float64)
        margins[:, regs] = _eval_specific_table(tab, eps) @ bb
    for term, values in zip(spec.shared_terms, params.shared_interactions):
        regs = spec.term_register_indices(term)
        bt = shared_block_table(params.inclusion_probs[:, regs], values, eps)
        bb = profile_matrix(term.size).astype(np.float64)
        margins[:, regs] = bt @ bb
    return margins
