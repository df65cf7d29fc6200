"""Exception types and structured validation violations."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    """One machine-readable invariant breach found during validation."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class LcmcrError(Exception):
    """Base class for all library errors."""


class ValidationError(LcmcrError):
    """A spec, parameter set, or data file breaks an invariant."""

    def __init__(self, violations):
        if isinstance(violations, Violation):
            violations = [violations]
        self.violations = tuple(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class CapacityError(LcmcrError):
    """A dense enumeration bound (register count) was exceeded."""


class NonIdentifiableError(LcmcrError):
    """Fitting was refused because the model has negative degrees of freedom."""


class UnboundedEstimateError(LcmcrError):
    """A class miss probability is so close to one that the inflated
    size estimate has no finite value."""


class NumericalError(LcmcrError):
    """An iterative procedure failed outright (all starts aborted,
    inner scaling loop did not converge, and similar)."""
