"""Deterministic report serialization, CSV trajectories and report comparison."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA = "stabkit.report/1"


class ReportSchemaError(ValueError):
    pass


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "nan", "inf", "-inf"."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(report: dict) -> str:
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: Path, report: dict) -> None:
    path.write_bytes(dumps(report).encode("utf-8"))


def trajectory_csv(values: Sequence[float], gains: np.ndarray | None = None,
                   sign_ok: Sequence[bool] | None = None) -> str:
    """CSV text with one row per step; closed loops add gain columns.

    Row ``n = 0`` is the initial sample and carries empty gain cells.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["n", "x_n"]
    if gains is not None:
        header += ["lambda", "lambda_tilde", "bound", "sign_ok"]
    w.writerow(header)
    for n, x in enumerate(values):
        row = [n, repr(float(x))]
        if gains is not None:
            if n == 0:
                row += ["", "", "", ""]
            else:
                _, lam, lam_t, bound = gains[n - 1]
                ok = "" if sign_ok is None else int(sign_ok[n - 1])
                row += [repr(float(lam)), repr(float(lam_t)), repr(float(bound)), ok]
        w.writerow(row)
    return buf.getvalue()


def load_report(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        return source
    return json.loads(Path(source).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Discrepancy:
    path: str
    a: Any
    b: Any

    def __str__(self) -> str:
        return f"{self.path}: {self.a!r} != {self.b!r}"


def _walk(a, b, path: str, tol: float, out: list[Discrepancy]) -> None:
    if isinstance(a, dict) and isinstance(b, dict):
        for k in sorted(set(a) | set(b)):
            p = f"{path}.{k}" if path else k
            if k not in a or k not in b:
                out.append(Discrepancy(p, a.get(k), b.get(k)))
            else:
                _walk(a[k], b[k], p, tol, out)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out.append(Discrepancy(f"{path}#len", len(a), len(b)))
        for i, (u, v) in enumerate(zip(a, b)):
            _walk(u, v, f"{path}[{i}]", tol, out)
    elif _is_number(a) and _is_number(b):
        if a != b and not abs(a - b) <= tol * max(1.0, abs(a), abs(b)):
            out.append(Discrepancy(path, a, b))
    elif a != b:
        out.append(Discrepancy(path, a, b))


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def diff_reports(a, b, tol: float = 0.0, sections: Iterable[str] | None = None) -> list[Discrepancy]:
    """Fields that differ between two reports beyond a relative tolerance.

    Reports are dicts or paths to JSON files.  ``sections`` restricts the
    comparison to some top-level keys.
    """
    ra, rb = load_report(a), load_report(b)
    sa, sb = ra.get("schema"), rb.get("schema")
    if sa != sb:
        raise ReportSchemaError(f"schema mismatch: {sa!r} vs {sb!r}")
    if sections is not None:
        keep = set(sections)
        ra = {k: v for k, v in ra.items() if k in keep}
        rb = {k: v for k, v in rb.items() if k in keep}
    out: list[Discrepancy] = []
    _walk(ra, rb, "", tol, out)
    return out
