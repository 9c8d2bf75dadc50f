"""Machine-readable pass/fail records."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any


def _clean(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and getattr(value, "ndim", 1) == 0:
        return _clean(value.item())
    if hasattr(value, "tolist"):
        return _clean(value.tolist())
    return value


@dataclass
class CheckReport:
    """Outcome of one theorem-derived check.

    ``measured`` holds the quantities the verdict was based on, ``tolerance``
    the threshold(s) applied and ``worst`` the location of the worst case.
    """

    name: str
    passed: bool
    measured: dict[str, Any] = field(default_factory=dict)
    tolerance: dict[str, Any] = field(default_factory=dict)
    worst: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __bool__(self):
        return bool(self.passed)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return _clean(d)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items() if not isinstance(v, (list, dict)))
        return f"[{status}] {self.name}: {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def combine(name, reports):
    """All-of aggregate of several reports."""
    reports = list(reports)
    return CheckReport(
        name=name,
        passed=all(r.passed for r in reports),
        measured={r.name: r.passed for r in reports},
        worst={r.name: r.worst for r in reports if not r.passed},
    )
