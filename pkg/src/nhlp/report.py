"""Structured verification records with stable JSON serialization."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _clean(obj, digits: int | None = None):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values.

    ``digits`` rounds floats to that many significant digits, which keeps
    serialized output stable under BLAS reduction-order changes.
    """
    if isinstance(obj, dict):
        return {str(k): _clean(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), digits)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{digits}g}") if digits else x
    return obj


STABLE_DIGITS = 12


def stable(obj):
    """JSON-safe copy with floats rounded to STABLE_DIGITS significant digits."""
    return _clean(obj, STABLE_DIGITS)


def config_hash(config: dict) -> str:
    blob = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class VerificationReport:
    lemma: str
    measured_constants: dict = field(default_factory=dict)
    worst_witness: dict = field(default_factory=dict)
    passed: bool = True
    tolerances: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self, extra: dict | None = None) -> dict:
        out = {"lemma": self.lemma, "measured_constants": self.measured_constants,
               "worst_witness": self.worst_witness, "pass": bool(self.passed),
               "tolerances": self.tolerances}
        if self.details:
            out["details"] = self.details
        if extra:
            out.update(extra)
        return _clean(out)

    def to_json(self, extra: dict | None = None) -> str:
        return json.dumps(_clean(self.to_dict(extra), STABLE_DIGITS), sort_keys=True, indent=2)

    def write(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(self.to_json(extra) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationReport":
        return cls(data["lemma"], data.get("measured_constants", {}), data.get("worst_witness", {}),
                   bool(data["pass"]), data.get("tolerances", {}), data.get("details", {}))

    def summary(self) -> str:
        consts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured_constants.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.lemma}: {consts}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
