"""ResultRow and deterministic CSV emission."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Optional


@dataclass
class ResultRow:
    experiment: str
    model_id: str
    algorithm: str
    policy: str
    N: int
    mode: str
    kl: Optional[float] = None
    kl_bound: Optional[float] = None
    tv: Optional[float] = None
    chi2: Optional[float] = None
    ess_min_inf: Optional[float] = None
    ess_min_2: Optional[float] = None
    assumption_ok: Optional[bool] = None
    eps_minorization: Optional[float] = None
    runtime_ms: Optional[float] = None
    seed: Optional[int] = None


FIELDS = tuple(f.name for f in fields(ResultRow))
_FLOATS = {"kl", "kl_bound", "tv", "chi2", "ess_min_inf", "ess_min_2", "eps_minorization", "runtime_ms"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if not math.isfinite(value):
            return ""
        return format(value, ".17g")
    return str(value)


def render_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in rows:
        w.writerow([_cell(getattr(r, f)) for f in FIELDS])
    return buf.getvalue()


def write_csv(rows, path: str) -> None:
    text = render_csv(rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _FLOATS:
        return float(text)
    if name in ("N", "seed"):
        return int(text)
    if name == "assumption_ok":
        return text == "true"
    return text


def read_csv(path: str) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FIELDS:
            raise ValueError(f"unexpected CSV header in {path}")
        return [ResultRow(**{f: _parse(f, v) for f, v in zip(FIELDS, row)}) for row in reader]
