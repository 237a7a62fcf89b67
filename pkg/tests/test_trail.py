import json

import pytest

from conftest import case_doc, turn, two_round_doc
from collab_audit.trail import (
    DuplicateTurnId,
    EmptyTurns,
    SchemaError,
    Stage,
    StageTag,
    parse_case,
    read_cases,
    serialize_case,
    stage_slices,
    validate_case,
    write_cases,
)


def minimal():
    return case_doc([turn(1, 1, "Propose", "d1", response="A", structured={"current_viewpoint": "A"})])


def test_minimal_case_parses():
    case = parse_case(json.dumps(minimal()))
    assert len(case.turns) == 1
    assert case.final_answer == "A"


def test_round_zero_rejected():
    doc = minimal()
    doc["turns"][0]["round"] = 0
    with pytest.raises(SchemaError) as err:
        parse_case(doc)
    assert err.value.field == "round"
    assert err.value.reason == "must be ≥ 1"


def test_empty_turns_and_duplicate_ids():
    doc = minimal()
    doc["turns"] = []
    with pytest.raises(EmptyTurns):
        parse_case(doc)
    doc = minimal()
    doc["turns"].append(dict(doc["turns"][0]))
    with pytest.raises(DuplicateTurnId):
        parse_case(doc)


@pytest.mark.parametrize("field", ["case_id", "gold_answer", "turns"])
def test_missing_required_field(field):
    doc = minimal()
    del doc[field]
    with pytest.raises(SchemaError):
        parse_case(doc)


def test_bad_json_is_schema_error():
    with pytest.raises(SchemaError):
        parse_case("{not json")


def test_stage_tag_order_and_labels():
    tags = [StageTag(2, Stage.PROPOSE), StageTag(1, Stage.CONCLUDE), StageTag(1, Stage.PROPOSE), StageTag(1, Stage.REVIEW)]
    assert [t.label for t in sorted(tags)] == ["R1.Propose", "R1.Review", "R1.Conclude", "R2.Propose"]
    assert StageTag.parse("R3.Synthesize") == StageTag(3, Stage.SYNTHESIZE)


def test_clean_two_round_case_validates():
    assert validate_case(parse_case(two_round_doc())) == []


def test_audit_agent_answer_is_violation():
    doc = two_round_doc()
    doc["turns"].insert(0, turn(0, 1, "Propose", "aud", "Audit", structured={"answer": "B"}))
    vs = validate_case(parse_case(doc))
    assert [v.invariant for v in vs] == ["audit-no-vote"]


def test_conclude_then_propose_is_stage_order_violation():
    doc = case_doc(
        [
            turn(1, 1, "Propose", "d1", structured={"current_viewpoint": "A"}),
            turn(2, 1, "Conclude", "m1", "Meta", structured={"answer": "A"}),
            turn(3, 1, "Propose", "d2", structured={"current_viewpoint": "A"}),
        ]
    )
    invariants = {v.invariant for v in validate_case(parse_case(doc))}
    assert "stage-order" in invariants


def test_final_not_in_options_is_violation():
    doc = two_round_doc()
    doc["final_answer"] = "Z"
    assert "final-in-options" in {v.invariant for v in validate_case(parse_case(doc))}


def test_slices_for_one_round():
    doc = case_doc(
        [
            turn(1, 1, "Propose", "d1"),
            turn(2, 1, "Propose", "d2"),
            turn(3, 1, "Synthesize", "m", "Meta"),
            turn(4, 1, "Conclude", "m", "Meta"),
        ]
    )
    slices = stage_slices(parse_case(doc))
    assert [(t.label, [x.turn_id for x in ts]) for t, ts in slices.items()] == [
        ("R1.Propose", [1, 2]),
        ("R1.Synthesize", [3]),
        ("R1.Conclude", [4]),
    ]
    assert StageTag(1, Stage.REVIEW) not in slices


def test_three_rounds_slice_in_order():
    turns, n = [], 0
    for r in (1, 2, 3):
        for s in ("Propose", "Review", "Synthesize", "Conclude"):
            n += 1
            turns.append(turn(n, r, s, "d1" if s in ("Propose", "Review") else "m", "Domain" if s in ("Propose", "Review") else "Meta"))
    keys = list(stage_slices(parse_case(case_doc(turns))))
    assert len(keys) == 12 and keys == sorted(keys)
    assert [k.round for k in keys] == [1] * 4 + [2] * 4 + [3] * 4


def test_verbatim_round_trip_with_unknown_keys():
    doc = two_round_doc()
    doc["vendor_meta"] = {"x": [1, 2]}
    doc["turns"][0]["response"] = "  leading space\ttab é\n"
    doc["turns"][0]["latency_ms"] = 12
    doc["turns"][1]["stage"] = "propose"
    line = json.dumps(doc, ensure_ascii=False)
    out = serialize_case(parse_case(line))
    assert json.loads(out) == doc


def test_stage_map_and_aliases():
    doc = case_doc([turn(1, 1, "Brainstorm", "d1"), turn(2, 1, "Decide", "m", "Meta")], framework="X")
    case = parse_case(doc, {"X": {"Brainstorm": "Propose", "Decide": "Conclude"}})
    assert [t.stage.stage for t in case.turns] == [Stage.PROPOSE, Stage.CONCLUDE]
    assert json.loads(serialize_case(case))["turns"][0]["stage"] == "Brainstorm"


def test_read_write_jsonl(tmp_path):
    cases = [parse_case(dict(two_round_doc(), case_id=f"c{i}")) for i in range(3)]
    path = tmp_path / "cases.jsonl"
    write_cases(path, cases)
    assert [c.case_id for c in read_cases(path)] == ["c0", "c1", "c2"]
