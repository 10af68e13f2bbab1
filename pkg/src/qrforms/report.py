"""Verification records and their JSON / CSV serializations.

JSON schema (keys sorted, two-space indent, trailing newline)::

    {
      "checks": [
        {"anchor": str, "check_id": str, "inputs_digest": str,
         "kind": str, "measured": {...}, "sense": "le" | "ge",
         "tolerance": float, "value": float | str, "verdict": "pass" | "fail"}
      ],
      "config_digest": str,
      "seed": int,
      "summary": {"fail": int, "pass": int}
    }

Non-finite floats are written as the strings "inf", "-inf" and "nan" so the
output stays strict JSON. Wall time is kept out of the report so that a
fixed configuration reproduces identical bytes; the CLI writes it to a
separate timing file.

CSV: header ``check_id,kind,anchor,inputs_digest,value,sense,tolerance,verdict,measured``
then one row per check; ``measured`` holds the compact JSON of the
measured-values mapping.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


def clean(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if value is None or isinstance(value, str):
        return value
    return str(value)


def digest(obj) -> str:
    text = json.dumps(clean(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Check:
    check_id: str
    kind: str
    anchor: str
    inputs_digest: str
    value: object
    sense: str
    tolerance: float
    verdict: str
    measured: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    seed: int = 0
    config_digest: str = ""

    def add(self, check: Check) -> None:
        if any(c.check_id == check.check_id for c in self.checks):
            raise ValueError(f"duplicate check id {check.check_id}")
        self.checks.append(check)

    @property
    def summary(self) -> dict:
        passed = sum(c.passed for c in self.checks)
        return {"fail": len(self.checks) - passed, "pass": passed}

    @property
    def ok(self) -> bool:
        return self.summary["fail"] == 0

    def to_dict(self) -> dict:
        return {"checks": [asdict(c) for c in self.checks], "config_digest": self.config_digest,
                "seed": self.seed, "summary": self.summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> VerificationReport:
        data = json.loads(text)
        rep = cls(seed=data["seed"], config_digest=data["config_digest"])
        for c in data["checks"]:
            rep.add(Check(**c))
        if rep.summary != data["summary"]:
            raise ValueError("summary does not match the checks")
        return rep

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check_id", "kind", "anchor", "inputs_digest", "value", "sense", "tolerance",
                    "verdict", "measured"])
        for c in self.checks:
            w.writerow([c.check_id, c.kind, c.anchor, c.inputs_digest, json.dumps(c.value),
                        c.sense, repr(c.tolerance), c.verdict,
                        json.dumps(c.measured, sort_keys=True, separators=(",", ":"))])
        return buf.getvalue()


def emit_report(report: VerificationReport, fmt: str = "json", path=None) -> str:
    """Serialize ``report``; write it to ``path`` when given. Returns the text."""
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = report.to_csv()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
