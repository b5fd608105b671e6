"""Structured pass/fail records shared by the operator checks and the verify harness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any


@dataclass
class CheckReport:
    """Outcome of one executable property check.

    ``worst_case`` is a signed margin: non-negative (up to ``tolerance``) means
    the property held everywhere it was sampled.
    """

    name: str
    passed: bool
    worst_case: float
    location: Any = None
    metadata: dict[str, Any] = field(default_factory=dict)
    children: list["CheckReport"] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        d["worst_case"] = _jsonable(self.worst_case)
        d["location"] = _jsonable(self.location)
        d["metadata"] = {k: _jsonable(v) for k, v in self.metadata.items()}
        d["children"] = [c.to_dict() for c in self.children]
        return d

    def summary(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: worst_case={self.worst_case:.6g} at {self.location}"


def _jsonable(v: Any) -> Any:
    import math

    import numpy as np

    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v
