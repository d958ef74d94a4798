"""Uniform result records for verification checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .scalars import QVec, rat_str

MAX_WITNESSES = 20


def show(value) -> str:
    """Deterministic text for scalars and sparse vectors."""
    if isinstance(value, QVec):
        inner = ", ".join(f"{k}: {show(v)}" for k, v in sorted(value.items(), key=lambda kv: str(kv[0])))
        return "{" + inner + "}"
    if isinstance(value, Fraction):
        return rat_str(value)
    if isinstance(value, complex):
        return f"{value.real:.12g}{value.imag:+.12g}j"
    return str(value)


@dataclass
class CheckReport:
    """Outcome of one named identity check.

    ``tag`` names the identity (for example ``"jacobi"``); ``checked`` counts
    compared coefficients; ``failures`` keeps the first few witnesses while
    ``failed`` counts all of them.
    """

    tag: str
    checked: int = 0
    failed: int = 0
    failures: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failed == 0

    def record(self, ok: bool, **witness):
        self.checked += 1
        if not ok:
            self.failed += 1
            if len(self.failures) < MAX_WITNESSES:
                self.failures.append({k: show(v) for k, v in witness.items()})

    def merge(self, other: "CheckReport") -> "CheckReport":
        self.checked += other.checked
        self.failed += other.failed
        room = MAX_WITNESSES - len(self.failures)
        self.failures.extend(other.failures[:max(room, 0)])
        for k, v in other.notes.items():
            self.notes.setdefault(k, v)
        return self

    def to_dict(self) -> dict:
        return {"tag": self.tag, "passed": self.passed, "checked": self.checked,
                "failed": self.failed, "failures": self.failures,
                "notes": {k: show(v) if not isinstance(v, (int, str, bool, list, dict)) else v
                          for k, v in self.notes.items()}}


def all_passed(reports) -> bool:
    return all(r.passed for r in reports)
