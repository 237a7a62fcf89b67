import json
import random

import pytest
from sklearn.metrics import cohen_kappa_score

from oracles import kappa_table, search_kappa_table
from collab_audit.taxonomy import (
    AnnotationRecord,
    CaseSetMismatch,
    DegenerateMarginals,
    UnknownLabel,
    case_shares,
    cohen_kappa,
    kappa_from_rates,
    load_vocabulary,
    phase_rollup,
    read_annotations,
    tally_distribution,
    write_annotations,
)

# Reported failure-mode shares, as counts per 10,000 label assignments.
REPORTED = {
    "flawed-consensus": 1970,
    "visual-extraction": 1650,
    "wrong-knowledge": 1350,
    "sole-reliance": 1010,
    "role-assignment": 840,
    "minority-suppression": 590,
    "risk-prioritization": 430,
    "voting-bypass": 300,
    "info-loss": 170,
    "collective-misidentification": 100,
    "tangential-query": 80,
    "neglect-visual-evidence": 75,
    "benchmark-flaws": 1371,
    "self-contradiction": 64,
}


def rec(i, labels, who="a"):
    return AnnotationRecord(f"c{i:04d}", who, tuple(labels))


def fixture_from_table(a, b, c, d, code="flawed-consensus", other="info-loss"):
    """Two annotators over a+b+c+d cases; ``code`` present/absent per the
    2x2 table (a: both present, d: both absent)."""
    cells = [(True, True)] * a + [(True, False)] * b + [(False, True)] * c + [(False, False)] * d
    ra = [rec(i, [code] if x else [other], "a") for i, (x, _) in enumerate(cells)]
    rb = [rec(i, [code] if y else [other], "b") for i, (_, y) in enumerate(cells)]
    return ra, rb


def test_vocabulary_shape():
    vocab = load_vocabulary()
    assert len(vocab.codes) == len(set(vocab.codes)) == 19
    assert set(REPORTED) <= set(vocab.codes)
    assert {lab.phase for lab in vocab.labels} == set(vocab.phases)
    with pytest.raises(UnknownLabel):
        vocab.get("nope")


def test_reported_distribution_reproduced():
    records = []
    i = 0
    for code, n in REPORTED.items():
        for _ in range(n):
            records.append(rec(i, [code]))
            i += 1
    dist = tally_distribution(records)
    for code, n in REPORTED.items():
        assert round(dist[code], 2) == n / 100
    assert sum(dist.values()) == pytest.approx(100.0, abs=0.1)
    phases = phase_rollup(dist)
    assert round(phases["P1"], 2) == 36.85 and round(phases["P4"], 2) == 32.21


def test_single_record_single_label():
    assert tally_distribution([rec(0, ["info-loss"])]) == {"info-loss": 100.0}


def test_assignment_vs_case_denominator():
    records = [rec(0, ["info-loss", "voting-bypass"]), rec(1, ["info-loss"])]
    assert tally_distribution(records) == {"voting-bypass": pytest.approx(100 / 3), "info-loss": pytest.approx(200 / 3)}
    assert case_shares(records) == {"voting-bypass": 50.0, "info-loss": 100.0}


def test_unknown_label_rejected(tmp_path):
    with pytest.raises(UnknownLabel):
        tally_distribution([rec(0, ["made-up"])])
    path = tmp_path / "a.jsonl"
    path.write_text(json.dumps({"case_id": "c", "annotator_id": "a", "labels": ["bogus"]}) + "\n")
    with pytest.raises(UnknownLabel):
        read_annotations(path, load_vocabulary())


def test_record_invariants():
    with pytest.raises(ValueError):
        AnnotationRecord("c", "a", ())
    with pytest.raises(ValueError):
        AnnotationRecord("c", "a", ("info-loss",), critical_round=0)


def test_annotations_round_trip(tmp_path):
    records = [rec(i, ["info-loss", "self-correction"]) for i in range(3)]
    write_annotations(tmp_path / "x.jsonl", records)
    assert read_annotations(tmp_path / "x.jsonl") == records


def test_kappa_from_rates():
    assert kappa_from_rates(0.9, 0.5) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(DegenerateMarginals):
        kappa_from_rates(1.0, 1.0)


def test_identical_annotations_give_one():
    ra = [rec(i, [["info-loss", "voting-bypass", "self-correction"][i % 3]]) for i in range(30)]
    rb = [AnnotationRecord(r.case_id, "b", r.labels) for r in ra]
    assert cohen_kappa(ra, rb, "primary-label") == 1.0
    per = cohen_kappa(ra, rb)
    assert per.macro == 1.0 and set(per.per_label.values()) == {1.0}


def test_two_hundred_item_fixture_hits_target():
    table = search_kappa_table(200, 0.82, 1e-9)
    assert abs(float(kappa_table(*table)) - 0.82) <= 1e-9
    ra, rb = fixture_from_table(*table)
    assert len(ra) == 200
    assert abs(cohen_kappa(ra, rb, "primary-label") - 0.82) <= 1e-9
    assert abs(cohen_kappa(ra, rb).per_label["flawed-consensus"] - 0.82) <= 1e-9


def test_agrees_with_sklearn():
    rng = random.Random(5)
    codes = ["info-loss", "voting-bypass", "self-correction", "role-assignment"]
    ra = [rec(i, [rng.choice(codes)]) for i in range(150)]
    rb = [AnnotationRecord(r.case_id, "b", (r.labels[0] if rng.random() < 0.7 else rng.choice(codes),)) for r in ra]
    ours = cohen_kappa(ra, rb, "primary-label")
    theirs = cohen_kappa_score([r.labels[0] for r in ra], [r.labels[0] for r in rb])
    assert ours == pytest.approx(theirs, abs=1e-12)


def test_degenerate_label_is_null_in_per_label_mode():
    ra = [rec(i, ["info-loss"]) for i in range(5)]
    rb = [AnnotationRecord(r.case_id, "b", ("info-loss",)) for r in ra]
    per = cohen_kappa(ra, rb)
    assert per.per_label == {"info-loss": None} and per.macro is None
    with pytest.raises(DegenerateMarginals):
        cohen_kappa(ra, rb, "primary-label")


def test_case_set_mismatch():
    with pytest.raises(CaseSetMismatch):
        cohen_kappa([rec(0, ["info-loss"])], [rec(1, ["info-loss"], "b")])
