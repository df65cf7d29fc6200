"""Observed capture-profile counts and their CSV form.

The canonical file format is two columns, `profile,count`, where profile
is a K-character bitstring (leftmost character = first register) and the
all-zero profile never appears: it is unobservable by construction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ValidationError, Violation
from .model import index_to_bitstring


@dataclass(frozen=True)
class CaptureCounts:
    """Multiset of observed capture profiles."""

    counts: dict[str, int]
    num_registers: int

    def __post_init__(self):
        object.__setattr__(
            self, "counts", dict(sorted((str(k), int(v)) for k, v in self.counts.items()))
        )

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_dict(cls, counts: Mapping[str, int], num_registers: int | None = None) -> "CaptureCounts":
        violations = []
        keys = list(counts)
        if num_registers is None:
            if not keys:
                raise ValidationError(Violation("counts-empty", "no observed profiles"))
            num_registers = len(keys[0])
        clean: dict[str, int] = {}
        for key, value in counts.items():
            key = str(key)
            if len(key) != num_registers or any(c not in "01" for c in key):
                violations.append(
                    Violation("counts-bad-profile", f"profile {key!r} is not a {num_registers}-bit string")
                )
                continue
            v = int(value)
            if v < 0:
                violations.append(Violation("counts-negative", f"profile {key} has negative count {v}"))
                continue
            if set(key) == {"0"}:
                violations.append(
                    Violation("counts-contains-all-zero", "the all-zero profile is unobservable and cannot appear")
                )
                continue
            if v > 0:
                clean[key] = clean.get(key, 0) + v
        if violations:
            raise ValidationError(violations)
        if sum(clean.values()) < 1:
            raise ValidationError(Violation("counts-empty", "total observed count is zero"))
        return cls(clean, num_registers)

    @classmethod
    def from_vector(cls, vec: np.ndarray, num_registers: int) -> "CaptureCounts":
        counts = {
            index_to_bitstring(i, num_registers): int(v)
            for i, v in enumerate(np.asarray(vec))
            if i != 0 and v > 0
        }
        return cls.from_dict(counts, num_registers)

    def to_vector(self) -> np.ndarray:
        """Counts as a dense (2^K,) float array; index 0 is always zero."""
        vec = np.zeros(2**self.num_registers)
        for key, value in self.counts.items():
            vec[int(key, 2)] = float(value)
        return vec

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["profile", "count"])
        for key in sorted(self.counts):
            writer.writerow([key, self.counts[key]])
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path, num_registers: int | None = None) -> "CaptureCounts":
        with open(path, newline="") as fh:
            return cls.from_csv_text(fh.read(), num_registers)

    @classmethod
    def from_csv_text(cls, text: str, num_registers: int | None = None) -> "CaptureCounts":
        reader = csv.reader(io.StringIO(text))
        rows = [row for row in reader if row]
        if not rows or [c.strip() for c in rows[0]] != ["profile", "count"]:
            raise ValidationError(
                Violation("counts-bad-header", "first row must be exactly 'profile,count'")
            )
        violations = []
        counts: dict[str, int] = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 2:
                violations.append(Violation("counts-bad-row", f"line {lineno}: expected 2 fields, got {len(row)}"))
                continue
            key, raw = row[0].strip(), row[1].strip()
            try:
                value = int(raw)
            except ValueError:
                violations.append(Violation("counts-bad-count", f"line {lineno}: count {raw!r} is not an integer"))
                continue
            if key in counts:
                violations.append(Violation("counts-duplicate-profile", f"line {lineno}: profile {key} repeated"))
                continue
            counts[key] = value
        if violations:
            raise ValidationError(violations)
        return cls.from_dict(counts, num_registers)
