"""Failure/success taxonomy, annotation records, tallies and Cohen's kappa."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

__all__ = [
    "TaxonomyLabel",
    "Vocabulary",
    "AnnotationRecord",
    "UnknownLabel",
    "DegenerateMarginals",
    "CaseSetMismatch",
    "PerLabelKappa",
    "load_vocabulary",
    "read_annotations",
    "write_annotations",
    "tally_distribution",
    "case_shares",
    "phase_rollup",
    "kappa_from_rates",
    "cohen_kappa",
]

VOCABULARY_FILE = "taxonomy_v1.json"


class UnknownLabel(KeyError):
    def __init__(self, code: str):
        super().__init__(code)
        self.code = code


class DegenerateMarginals(ZeroDivisionError):
    pass


class CaseSetMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TaxonomyLabel:
    code: str
    phase: str
    name: str


@dataclass(frozen=True)
class Vocabulary:
    version: str
    phases: Mapping[str, str]
    labels: tuple[TaxonomyLabel, ...]

    def __post_init__(self):
        codes = [lab.code for lab in self.labels]
        if len(set(codes)) != len(codes):
            raise ValueError("duplicate label codes")
        for lab in self.labels:
            if lab.phase not in self.phases:
                raise ValueError(f"label {lab.code} has unknown phase {lab.phase}")

    def __contains__(self, code: object) -> bool:
        return any(lab.code == code for lab in self.labels)

    def get(self, code: str) -> TaxonomyLabel:
        for lab in self.labels:
            if lab.code == code:
                return lab
        raise UnknownLabel(code)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(lab.code for lab in self.labels)


def load_vocabulary(path: str | Path | None = None) -> Vocabulary:
    if path is None:
        text = resources.files("collab_audit").joinpath("data", VOCABULARY_FILE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    return Vocabulary(
        version=str(doc["version"]),
        phases=dict(doc["phases"]),
        labels=tuple(TaxonomyLabel(d["code"], d["phase"], d["name"]) for d in doc["labels"]),
    )


@dataclass(frozen=True)
class AnnotationRecord:
    case_id: str
    annotator_id: str
    labels: tuple[str, ...]
    critical_round: int = 1

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"{self.case_id}: labels must be nonempty")
        if self.critical_round < 1:
            raise ValueError(f"{self.case_id}: critical_round must be >= 1")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "AnnotationRecord":
        return cls(str(doc["case_id"]), str(doc["annotator_id"]), tuple(doc["labels"]), int(doc.get("critical_round", 1)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "annotator_id": self.annotator_id,
            "labels": list(self.labels),
            "critical_round": self.critical_round,
        }


def read_annotations(path: str | Path, vocab: Vocabulary | None = None) -> list[AnnotationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(AnnotationRecord.from_dict(json.loads(line)))
    if vocab is not None:
        _check(out, vocab)
    return out


def write_annotations(path: str | Path, records: Iterable[AnnotationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def _check(records: Iterable[AnnotationRecord], vocab: Vocabulary) -> None:
    for r in records:
        for code in r.labels:
            if code not in vocab:
                raise UnknownLabel(code)


def tally_distribution(records: Sequence[AnnotationRecord], vocab: Vocabulary | None = None) -> dict[str, float]:
    """Percentage of all label assignments carried by each code."""
    if not records:
        raise ValueError("no annotation records")
    vocab = vocab or load_vocabulary()
    _check(records, vocab)
    counts = Counter(code for r in records for code in r.labels)
    total = sum(counts.values())
    return {code: 100.0 * counts[code] / total for code in vocab.codes if counts[code]}


def case_shares(records: Sequence[AnnotationRecord], vocab: Vocabulary | None = None) -> dict[str, float]:
    """Percentage of records carrying each code (per-case denominator)."""
    if not records:
        raise ValueError("no annotation records")
    vocab = vocab or load_vocabulary()
    _check(records, vocab)
    counts = Counter(code for r in records for code in set(r.labels))
    return {code: 100.0 * counts[code] / len(records) for code in vocab.codes if counts[code]}


def phase_rollup(distribution: Mapping[str, float], vocab: Vocabulary | None = None) -> dict[str, float]:
    vocab = vocab or load_vocabulary()
    out = {p: 0.0 for p in vocab.phases}
    for code, share in distribution.items():
        out[vocab.get(code).phase] += share
    return {p: v for p, v in out.items() if v}


def kappa_from_rates(p_o: float, p_e: float) -> float:
    if p_e == 1:
        raise DegenerateMarginals("expected agreement is 1")
    return (p_o - p_e) / (1 - p_e)


def _kappa(pairs: Sequence[tuple[Any, Any]]) -> float:
    n = len(pairs)
    p_o = Fraction(sum(a == b for a, b in pairs), n)
    ca = Counter(a for a, _ in pairs)
    cb = Counter(b for _, b in pairs)
    p_e = sum(Fraction(ca[k] * cb[k], n * n) for k in ca.keys() | cb.keys())
    return float(kappa_from_rates(p_o, p_e))


class PerLabelKappa(NamedTuple):
    per_label: dict[str, float | None]
    macro: float | None


def _paired(a: Sequence[AnnotationRecord], b: Sequence[AnnotationRecord]):
    ma = {r.case_id: r for r in a}
    mb = {r.case_id: r for r in b}
    if len(ma) != len(a) or len(mb) != len(b):
        raise CaseSetMismatch("an annotator labelled a case twice")
    if ma.keys() != mb.keys():
        raise CaseSetMismatch("annotators cover different case sets")
    if not ma:
        raise CaseSetMismatch("no cases")
    ids = sorted(ma)
    return [(ma[i], mb[i]) for i in ids]


def cohen_kappa(
    records_a: Sequence[AnnotationRecord],
    records_b: Sequence[AnnotationRecord],
    mode: str = "per-label-binary",
) -> float | PerLabelKappa:
    """Cohen's kappa between two annotators.

    ``primary-label`` compares each case's first label and returns a float
    (DegenerateMarginals when undefined). ``per-label-binary`` computes a
    present/absent kappa for every code either annotator used; undefined
    labels map to None and are left out of the macro average.
    """
    pairs = _paired(records_a, records_b)
    if mode == "primary-label":
        return _kappa([(ra.labels[0], rb.labels[0]) for ra, rb in pairs])
    if mode != "per-label-binary":
        raise ValueError(f"unknown kappa mode {mode!r}")
    used = sorted({c for ra, rb in pairs for c in (*ra.labels, *rb.labels)})
    per_label: dict[str, float | None] = {}
    for code in used:
        try:
            per_label[code] = _kappa([(code in ra.labels, code in rb.labels) for ra, rb in pairs])
        except DegenerateMarginals:
            per_label[code] = None
    defined = [k for k in per_label.values() if k is not None]
    return PerLabelKappa(per_label, sum(defined) / len(defined) if defined else None)
