"""Benchmark result rows and their summary tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

RESULT_COLUMNS = ("instance", "n", "method", "seed", "loss", "best_known", "gap", "wall_seconds", "evaluations")
SUMMARY_COLUMNS = ("n", "method", "count", "gap_p10", "gap_median", "gap_p90", "gap_min", "gap_max", "optimal_fraction")
GAP_COLUMNS = ("n", "method", "instance", "seed", "gap")


@dataclass(frozen=True)
class ResultRow:
    instance: str
    n: int
    method: str
    seed: int
    loss: float
    best_known: float | None
    gap: float | None
    wall_seconds: float | None = None
    evaluations: int | None = None


def _num(x) -> str:
    return "" if x is None else f"{x:.10g}"


def format_rows(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([r.instance, r.n, r.method, r.seed, _num(r.loss), _num(r.best_known), _num(r.gap),
                    _num(r.wall_seconds), "" if r.evaluations is None else r.evaluations])
    return buf.getvalue()


def parse_rows(text: str) -> list[ResultRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise ValueError(f"result CSV must have columns {','.join(RESULT_COLUMNS)}")

    def opt(v, cast=float):
        return None if v == "" else cast(v)

    return [ResultRow(r["instance"], int(r["n"]), r["method"], int(r["seed"]), float(r["loss"]),
                      opt(r["best_known"]), opt(r["gap"]), opt(r["wall_seconds"]), opt(r["evaluations"], int))
            for r in reader]


def nearest_rank(values: Sequence[float], q: float) -> float:
    """The smallest value with at least a fraction ``q`` of the data at or below it."""
    if not values:
        raise ValueError("no values")
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    v = sorted(values)
    k = max(1, math.ceil(q * len(v)))
    return v[k - 1]


def summarize(rows: Sequence[ResultRow], tol: float = 1e-9) -> list[dict]:
    if not rows:
        raise ValueError("no result rows to summarize")
    groups: dict[tuple[int, str], list[float]] = {}
    for r in rows:
        if r.gap is not None:
            groups.setdefault((r.n, r.method), []).append(r.gap)
    out = []
    for (n, method) in sorted(groups):
        g = groups[(n, method)]
        out.append({"n": n, "method": method, "count": len(g),
                    "gap_p10": nearest_rank(g, 0.1), "gap_median": nearest_rank(g, 0.5),
                    "gap_p90": nearest_rank(g, 0.9), "gap_min": min(g), "gap_max": max(g),
                    "optimal_fraction": sum(x <= tol for x in g) / len(g)})
    return out


def emit_report(rows: Sequence[ResultRow]) -> dict[str, str]:
    """Summary table plus a plot-ready gap table, as file name -> CSV text."""
    summary = summarize(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        w.writerow([s["n"], s["method"], s["count"]] + [_num(s[k]) for k in SUMMARY_COLUMNS[3:]])
    gaps = io.StringIO()
    g = csv.writer(gaps, lineterminator="\n")
    g.writerow(GAP_COLUMNS)
    for r in sorted((r for r in rows if r.gap is not None), key=lambda r: (r.n, r.method, r.instance, r.seed)):
        g.writerow([r.n, r.method, r.instance, r.seed, _num(r.gap)])
    return {"summary.csv": buf.getvalue(), "gaps.csv": gaps.getvalue()}
