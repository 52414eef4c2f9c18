"""Verification rows and their JSON/CSV serialisation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

FIELDS = ("check", "reference", "measured", "bound", "fitted", "margin", "passed", "advisory", "runtime")


@dataclass
class CheckRow:
    """One verified quantity.

    ``reference`` names the identity or estimate being checked, or
    ``"plumbing"`` for infrastructure checks.  ``margin`` defaults to
    ``bound - fitted`` when a fitted constant is present, else
    ``bound - measured``.
    """

    check: str
    reference: str
    measured: float
    bound: float
    fitted: float | None = None
    margin: float | None = None
    passed: bool = True
    advisory: bool = False
    runtime: float = 0.0

    def __post_init__(self) -> None:
        if not self.reference:
            raise ValueError("every row needs a reference string")
        if self.margin is None:
            base = self.fitted if self.fitted is not None else self.measured
            self.margin = self.bound - base


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(float(f"{x:.17g}")) if math.isfinite(x) else str(x)
    return str(x)


def write_report(rows: list[CheckRow], path, fmt: str = "json", header: dict | None = None) -> None:
    """Write rows in a stable field order; floats keep 17 significant digits."""
    path = Path(path)
    if fmt == "json":
        payload = {"config": header or {}, "rows": [{k: getattr(r, k) for k in FIELDS} for r in rows]}
        path.write_text(json.dumps(payload, indent=1, allow_nan=True) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FIELDS)
            for r in rows:
                w.writerow([_fmt(getattr(r, k)) for k in FIELDS])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _parse(name: str, text: str):
    if name in ("check", "reference"):
        return text
    if name in ("passed", "advisory"):
        return text == "true"
    if text == "":
        return None
    return float(text)


def read_report(path, fmt: str = "json") -> list[CheckRow]:
    path = Path(path)
    if fmt == "json":
        return [CheckRow(**row) for row in json.loads(path.read_text())["rows"]]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if tuple(head) != FIELDS:
            raise ValueError(f"unexpected CSV header {head}")
        return [CheckRow(**{k: _parse(k, v) for k, v in zip(FIELDS, line)}) for line in reader]


def failing(rows: list[CheckRow]) -> list[CheckRow]:
    return [r for r in rows if not r.passed and not r.advisory]


def row_names(rows) -> list[str]:
    return [r.check for r in rows]

