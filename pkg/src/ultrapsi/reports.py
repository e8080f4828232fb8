"""Report containers shared by the checking routines.

All reports are plain dataclasses with a ``to_dict`` that produces
JSON-serializable output (complex numbers and numpy scalars are converted).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np


def jsonable(obj: Any) -> Any:
    """Recursively convert numpy / complex values into JSON-friendly types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return obj


@dataclass
class ConditionReport:
    """Outcome of testing one weight-sequence condition over a finite range."""

    condition: str
    holds: bool
    constants: dict[str, float] = field(default_factory=dict)
    violating_index: int | tuple[int, ...] | None = None
    caveats: list[str] = field(default_factory=list)
    extremal: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return jsonable(asdict(self))


@dataclass
class FitReport:
    """Estimated constants from a sup / least-feasible-constant search."""

    name: str
    verdict: bool
    sup: float
    constants: dict[str, Any] = field(default_factory=dict)
    per_order: list[float] = field(default_factory=list)
    argmax: dict[str, Any] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return jsonable(asdict(self))


@dataclass
class HypoellipticityReport:
    """Verdicts for the lower bound (i) and derivative-quotient bound (ii)."""

    B: float
    mode: str
    K: int
    grid: dict[str, Any]
    lower_bound: dict[str, Any]
    quotient_bound: dict[str, Any]
    verdict_lower: bool
    verdict_quotient: bool
    witness: dict[str, Any] | None = None

    @property
    def verdict(self) -> bool:
        return self.verdict_lower and self.verdict_quotient

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["verdict"] = self.verdict
        return jsonable(out)
