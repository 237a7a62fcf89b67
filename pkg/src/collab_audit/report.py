"""Cross-case aggregation and table/series emission.

Per-case values come from audit records through a metric registry. Cells
are means over the cases that have a value (a ``None`` case value is left
out and does not count toward coverage). Sums are kept as exact fractions so
sharded aggregation merges to the same result as a single pass.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

from .trail import StageTag

__all__ = [
    "UnknownMetric",
    "UnsupportedFormat",
    "METRICS",
    "SERIES_METRICS",
    "MetricTable",
    "StageSeries",
    "TableAccumulator",
    "SeriesAccumulator",
    "corpus_hash",
    "provenance",
    "aggregate",
    "emit",
    "parse_json",
    "OVERALL",
]

OVERALL = "Overall"
FORMATS = ("csv", "json", "markdown")


class UnknownMetric(KeyError):
    pass


class UnsupportedFormat(ValueError):
    pass


def _get(rec: Mapping[str, Any], *path: str) -> Any:
    cur: Any = rec
    for key in path:
        if not isinstance(cur, Mapping):
            return None
        cur = cur.get(key)
    return cur


def _flag(value: Any) -> float | None:
    return None if value is None else float(bool(value))


def _pattern_rate(name: str) -> Callable[[Mapping], float | None]:
    def extract(rec):
        p = _get(rec, "viewpoint", "pattern", "pattern")
        if p not in ("M1", "M2", "M3", "M4"):
            return None
        return float(p == name)

    return extract


def _superfluous(rec):
    p = _get(rec, "viewpoint", "pattern")
    if not p or not p.get("final_correct"):
        return None
    return float(bool(p.get("unanimous_correct")))


def _bypass(rec):
    b = _get(rec, "quality", "vote_bypass")
    if not b or b.get("stage") is None:
        return None
    return float(bool(b["flag"]))


def _share(kind):
    return lambda rec: _get(rec, "viewpoint", "attribution", "shares", kind)


# metric id -> per-case scalar
METRICS: dict[str, Callable[[Mapping[str, Any]], float | None]] = {
    "accuracy": lambda rec: rec.get("accuracy"),
    "keu_missing_rate": lambda rec: _get(rec, "keu", "missing_rate"),
    "conflict_dropout": lambda rec: _get(rec, "conflict", "dropout", "overall", "overall", "rate"),
    "vote_bypass": _bypass,
    "activation_rate": lambda rec: _get(rec, "quality", "activation_rate"),
    "priority_mismatch_rate": lambda rec: _get(rec, "quality", "priority_mismatch_rate"),
    "m1_rate": _pattern_rate("M1"),
    "m2_rate": _pattern_rate("M2"),
    "m3_rate": _pattern_rate("M3"),
    "m4_rate": _pattern_rate("M4"),
    "superfluous_share": _superfluous,
    "evidence_based_share": _share("evidence_based"),
    "consensus_based_share": _share("consensus_based"),
}


def _retention(rec):
    return [(label, r) for label, r in (_get(rec, "keu", "retention") or [])]


def _bypass_by_stage(rec):
    return [(label, _flag(flag)) for label, flag in (_get(rec, "quality", "vote_bypass_by_stage") or [])]


def _dropout_grouped(grouping):
    def extract(rec):
        table = _get(rec, "conflict", "dropout", grouping) or {}
        key = (lambda k: f"R{k}") if grouping == "round" else (lambda k: k)
        return [(key(k), v["rate"]) for k, v in table.items()]

    return extract


def _activation_by_stage(rec):
    by: dict[str, list[bool]] = {}
    for a in _get(rec, "quality", "assessments") or []:
        if a.get("archetype") == "Domain" and a.get("insight") is not None:
            by.setdefault(a["stage"], []).append(a["insight"] == "High")
    return [(s, sum(v) / len(v)) for s, v in by.items()]


def _mismatch_by_stage(rec):
    levels = {"Immediate": 2, "Standard": 1, "Delayed": 0}
    rows = [(a["stage"], levels[a["urgency"]]) for a in _get(rec, "quality", "assessments") or [] if a.get("urgency")]
    if not rows:
        return []
    top = max(r for _, r in rows)
    by: dict[str, list[bool]] = {}
    for s, r in rows:
        by.setdefault(s, []).append(r < top)
    return [(s, sum(v) / len(v)) for s, v in by.items()]


# metric id -> per-case list of (point key, value)
SERIES_METRICS: dict[str, Callable[[Mapping[str, Any]], list[tuple[str, float | None]]]] = {
    "keu_retention": _retention,
    "vote_bypass_by_stage": _bypass_by_stage,
    "conflict_dropout_by_stage": _dropout_grouped("stage"),
    "conflict_dropout_by_round": _dropout_grouped("round"),
    "activation_by_stage": _activation_by_stage,
    "priority_mismatch_by_stage": _mismatch_by_stage,
}


def _point_order(key: str):
    try:
        tag = StageTag.parse(key)
        return (tag.round, tag.stage.rank)
    except (ValueError, KeyError):
        pass
    if key.startswith("R") and key[1:].isdigit():
        return (int(key[1:]), 99)
    return (10**9, key)


def _mean(total: Fraction, n: int) -> float | None:
    return float(total / n) if n else None


# ---------------------------------------------------------------- results


@dataclass
class MetricTable:
    metric_id: str
    row_key: str
    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], float | None]
    counts: dict[tuple[str, str], int]
    provenance: dict[str, Any] = field(default_factory=dict)

    def cell(self, row: str, column: str) -> float | None:
        return self.cells.get((row, column))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "table",
            "metric_id": self.metric_id,
            "row_key": self.row_key,
            "rows": list(self.rows),
            "columns": list(self.columns),
            "cells": [[self.cells.get((r, c)) for c in self.columns] for r in self.rows],
            "counts": [[self.counts.get((r, c), 0) for c in self.columns] for r in self.rows],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MetricTable":
        rows, cols = list(doc["rows"]), list(doc["columns"])
        cells = {(r, c): doc["cells"][i][j] for i, r in enumerate(rows) for j, c in enumerate(cols)}
        counts = {(r, c): doc["counts"][i][j] for i, r in enumerate(rows) for j, c in enumerate(cols)}
        return cls(doc["metric_id"], doc["row_key"], rows, cols, cells, counts, dict(doc.get("provenance", {})))


@dataclass
class StageSeries:
    metric_id: str
    points: list[tuple[str, float | None]]
    counts: dict[str, int]
    provenance: dict[str, Any] = field(default_factory=dict)

    def value(self, key: str) -> float | None:
        return dict(self.points).get(key)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "series",
            "metric_id": self.metric_id,
            "points": [[k, v] for k, v in self.points],
            "counts": {k: self.counts.get(k, 0) for k, _ in self.points},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "StageSeries":
        return cls(
            doc["metric_id"],
            [(k, v) for k, v in doc["points"]],
            dict(doc["counts"]),
            dict(doc.get("provenance", {})),
        )


# ---------------------------------------------------------------- accumulators


class TableAccumulator:
    """Exact running sums per (row, dataset); merge is associative and
    commutative, so shards can be reduced in any order."""

    def __init__(self, metric_id: str, group_by: str = "framework"):
        if metric_id not in METRICS:
            raise UnknownMetric(metric_id)
        if group_by not in ("framework", "dataset"):
            raise ValueError(f"tables group by framework or dataset, not {group_by!r}")
        self.metric_id = metric_id
        self.group_by = group_by
        self.sums: dict[tuple[str, str], Fraction] = {}
        self.counts: dict[tuple[str, str], int] = {}
        self.seen: dict[tuple[str, str], int] = {}

    def add(self, record: Mapping[str, Any]) -> None:
        row = str(record.get(self.group_by))
        col = str(record.get("dataset")) if self.group_by == "framework" else OVERALL
        key = (row, col)
        self.seen[key] = self.seen.get(key, 0) + 1
        value = METRICS[self.metric_id](record)
        if value is None:
            return
        self.sums[key] = self.sums.get(key, Fraction(0)) + Fraction(value)
        self.counts[key] = self.counts.get(key, 0) + 1

    def merge(self, other: "TableAccumulator") -> "TableAccumulator":
        if (other.metric_id, other.group_by) != (self.metric_id, self.group_by):
            raise ValueError("cannot merge accumulators for different metrics")
        out = TableAccumulator(self.metric_id, self.group_by)
        for src in (self, other):
            for k, v in src.sums.items():
                out.sums[k] = out.sums.get(k, Fraction(0)) + v
            for k, v in src.counts.items():
                out.counts[k] = out.counts.get(k, 0) + v
            for k, v in src.seen.items():
                out.seen[k] = out.seen.get(k, 0) + v
        return out

    def finish(self, weighting: str = "case", provenance: Mapping[str, Any] | None = None) -> MetricTable:
        if weighting not in ("case", "dataset"):
            raise ValueError(f"unknown weighting {weighting!r}")
        rows = sorted({r for r, _ in self.seen})
        datasets = sorted({c for _, c in self.seen if c != OVERALL})
        columns = datasets + [OVERALL]
        cells: dict[tuple[str, str], float | None] = {}
        counts: dict[tuple[str, str], int] = {}
        for r in rows:
            for c in datasets:
                n = self.counts.get((r, c), 0)
                cells[(r, c)] = _mean(self.sums.get((r, c), Fraction(0)), n)
                counts[(r, c)] = n
            if datasets:
                populated = [c for c in datasets if counts[(r, c)]]
                n = sum(counts[(r, c)] for c in populated)
                if weighting == "case":
                    total = sum((self.sums[(r, c)] for c in populated), Fraction(0))
                    cells[(r, OVERALL)] = _mean(total, n)
                else:
                    means = [self.sums[(r, c)] / counts[(r, c)] for c in populated]
                    cells[(r, OVERALL)] = float(sum(means, Fraction(0)) / len(means)) if means else None
                counts[(r, OVERALL)] = n
            else:
                n = self.counts.get((r, OVERALL), 0)
                cells[(r, OVERALL)] = _mean(self.sums.get((r, OVERALL), Fraction(0)), n)
                counts[(r, OVERALL)] = n
        prov = dict(provenance or {})
        prov.setdefault("weighting", weighting)
        return MetricTable(self.metric_id, self.group_by, rows, columns, cells, counts, prov)


class SeriesAccumulator:
    def __init__(self, metric_id: str):
        if metric_id not in SERIES_METRICS:
            raise UnknownMetric(metric_id)
        self.metric_id = metric_id
        self.sums: dict[str, Fraction] = {}
        self.counts: dict[str, int] = {}

    def add(self, record: Mapping[str, Any]) -> None:
        for key, value in SERIES_METRICS[self.metric_id](record):
            if value is None:
                continue
            self.sums[key] = self.sums.get(key, Fraction(0)) + Fraction(value)
            self.counts[key] = self.counts.get(key, 0) + 1

    def merge(self, other: "SeriesAccumulator") -> "SeriesAccumulator":
        if other.metric_id != self.metric_id:
            raise ValueError("cannot merge accumulators for different metrics")
        out = SeriesAccumulator(self.metric_id)
        for src in (self, other):
            for k, v in src.sums.items():
                out.sums[k] = out.sums.get(k, Fraction(0)) + v
            for k, v in src.counts.items():
                out.counts[k] = out.counts.get(k, 0) + v
        return out

    def finish(self, provenance: Mapping[str, Any] | None = None) -> StageSeries:
        keys = sorted(self.sums, key=_point_order)
        points = [(k, _mean(self.sums[k], self.counts[k])) for k in keys]
        return StageSeries(self.metric_id, points, dict(self.counts), dict(provenance or {}))


# ---------------------------------------------------------------- aggregate


def corpus_hash(records: Iterable[Mapping[str, Any]]) -> str:
    """Order-independent digest of the audit records."""
    lines = sorted(json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records)
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def provenance(
    records: Sequence[Mapping[str, Any]],
    metric_id: str,
    weighting: str = "case",
    judge: Mapping[str, Any] | None = None,
    timestamp: str | None = None,
) -> dict[str, Any]:
    return {
        "metric_id": metric_id,
        "weighting": weighting,
        "overall": "case-weighted mean over populated dataset cells" if weighting == "case" else "mean of dataset cells",
        "cases": len(records),
        "corpus_hash": corpus_hash(records),
        "judge": dict(judge or {}),
        "generated_at": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def aggregate(
    records: Sequence[Mapping[str, Any]],
    metric_id: str,
    group_by: str = "framework",
    weighting: str = "case",
    judge: Mapping[str, Any] | None = None,
    timestamp: str | None = None,
    where: Mapping[str, str] | None = None,
) -> MetricTable | StageSeries:
    """Table for a per-case metric (rows by framework or dataset), or a
    stage/round series for a series metric (``group_by="stage"``).
    ``where`` keeps only records whose fields equal the given values."""
    records = [r for r in records if all(r.get(k) == v for k, v in (where or {}).items())]
    prov = provenance(records, metric_id, weighting, judge, timestamp)
    if group_by in ("stage", "round"):
        if metric_id not in SERIES_METRICS:
            raise UnknownMetric(metric_id)
        prov.pop("overall")
        acc = SeriesAccumulator(metric_id)
        for r in records:
            acc.add(r)
        return acc.finish(prov)
    acc = TableAccumulator(metric_id, group_by)
    for r in records:
        acc.add(r)
    return acc.finish(weighting, prov)


# ---------------------------------------------------------------- emit


def _pct(value: float | None, digits: int | None) -> str | None:
    if value is None:
        return None
    scaled = value * 100
    return f"{scaled:.{digits}f}" if digits is not None else f"{scaled:.10g}"


def emit(result: MetricTable | StageSeries, fmt: str, compat_zero: bool = False) -> str:
    """Render as ``json`` (rates as fractions), ``csv`` (percent, full
    precision, nulls blank) or ``markdown`` (percent, two decimals, nulls as
    an em rule or ``0.00`` with ``compat_zero``)."""
    if fmt not in FORMATS:
        raise UnsupportedFormat(fmt)
    if fmt == "json":
        return json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    header = [f"{k}: {json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v}" for k, v in sorted(result.provenance.items())]
    if isinstance(result, MetricTable):
        head = [result.row_key.capitalize()] + result.columns
        body = [[r] + [result.cells.get((r, c)) for c in result.columns] for r in result.rows]
        count_head = [f"n:{c}" for c in result.columns]
        count_body = [[result.counts.get((r, c), 0) for c in result.columns] for r in result.rows]
    else:
        head = ["Point", result.metric_id]
        body = [[k, v] for k, v in result.points]
        count_head = ["n"]
        count_body = [[result.counts.get(k, 0)] for k, _ in result.points]

    if fmt == "csv":
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head + count_head)
        for row, counts in zip(body, count_body):
            w.writerow([row[0]] + [_pct(v, None) or "" for v in row[1:]] + counts)
        return buf.getvalue()

    null = "0.00" if compat_zero else "—"
    lines = [f"<!-- {line} -->" for line in header]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "|".join(["---"] + ["---:"] * (len(head) - 1)) + "|")
    for row in body:
        lines.append("| " + " | ".join([str(row[0])] + [_pct(v, 2) or null for v in row[1:]]) + " |")
    return "\n".join(lines) + "\n"


def parse_json(text: str) -> MetricTable | StageSeries:
    doc = json.loads(text)
    if doc.get("kind") == "series":
        return StageSeries.from_dict(doc)
    return MetricTable.from_dict(doc)
