import pytest

from conftest import case_doc, turn, voting_case
from oracles import shift_configurations, shift_pattern_oracle
from collab_audit.labels import JustificationType
from collab_audit.synth import ScenarioSpec, generate_case
from collab_audit.trail import parse_case
from collab_audit.viewpoint import (
    NoInitialOpinions,
    Pattern,
    ShiftPattern,
    attribution_breakdown,
    classify_case,
    opinion_trajectory,
    shift_rates,
)


@pytest.mark.parametrize(
    "initial,gold,final,expected",
    [
        (["A", "A", "B"], "B", "B", "M1"),
        (["A", "A", "B"], "B", "A", "M2"),
        (["B", "B", "A"], "B", "B", "M3"),
        (["B", "B", "A"], "B", "A", "M4"),
        (["A", "A", "A"], "A", "A", "NoDynamics"),
        (["A", "B"], "A", "A", "Unclassifiable"),
        (["A", "A", "C"], "B", "B", "Unclassifiable"),
    ],
)
def test_definition_cases(initial, gold, final, expected):
    assert classify_case(voting_case(initial, gold, final)).pattern.value == expected


def test_matches_oracle_on_every_small_configuration():
    n = 0
    for initial, gold, final in shift_configurations():
        got = classify_case(voting_case(initial, gold, final, options=["A", "B", "C"])).pattern.value
        assert got == shift_pattern_oracle(initial, gold, final), (initial, gold, final)
        n += 1
    assert n == 3240


def test_majority_relation_holds_in_outputs():
    for initial, gold, final in shift_configurations():
        sp = classify_case(voting_case(initial, gold, final, options=["A", "B", "C"]))
        if sp.pattern in (Pattern.M3, Pattern.M4):
            assert sp.initial_majority == gold.lower()
        if sp.pattern in (Pattern.M1, Pattern.M2):
            assert sp.initial_majority != gold.lower() and sp.minority_correct_present


def test_single_agent_is_not_classifiable():
    with pytest.raises(NoInitialOpinions):
        classify_case(voting_case(["A"], "A", "A"))


def _two_stage_doc(review_agents=("d1", "d2", "d3")):
    turns = [
        turn(i + 1, 1, "Propose", a, structured={"current_viewpoint": ans})
        for i, (a, ans) in enumerate([("d1", "A"), ("d2", "A"), ("d3", "B")])
    ]
    n = len(turns)
    for a in review_agents:
        n += 1
        payload = {"current_viewpoint": "A"}
        if a == "d3":
            payload.update(viewpoint_changed=True, justification_type="consensus_based")
        turns.append(turn(n, 1, "Review", a, structured=payload))
    turns.append(turn(n + 1, 1, "Conclude", "m", "Meta", structured={"answer": "A"}))
    return case_doc(turns)


def test_trajectory_records():
    traj = opinion_trajectory(parse_case(_two_stage_doc()))
    assert sum(len(v) for v in traj.values()) == 6
    d3 = traj["d3"][-1]
    assert d3.viewpoint_changed and d3.justification_type is JustificationType.CONSENSUS_BASED
    assert traj["d1"][-1].justification_type is JustificationType.UNREPORTED


def test_silent_agent_has_no_record():
    traj = opinion_trajectory(parse_case(_two_stage_doc(review_agents=("d1", "d3"))))
    assert [r.stage.label for r in traj["d2"]] == ["R1.Propose"]


def test_answers_from_response_text():
    doc = case_doc(
        [
            turn(1, 1, "Propose", "d1", response='{"current_viewpoint": "B", "reason": "x"}'),
            turn(2, 1, "Propose", "d2", response="After review, my final answer is (c)."),
            turn(3, 1, "Conclude", "m", "Meta", structured={"answer": "B"}),
        ],
        gold="B",
        final="B",
    )
    traj = opinion_trajectory(parse_case(doc))
    assert traj["d1"][0].answer == "b" and traj["d2"][0].answer == "c"


def _pattern(p, final_correct=False, unanimous=False):
    return ShiftPattern(p, "a", False, {}, final_correct, unanimous)


def test_rates_fixture_m2_share():
    patterns = [_pattern(Pattern.M2)] * 5 + [_pattern(Pattern.M3, True)] * 6 + [_pattern(Pattern.M1, True)] * 2
    rates = shift_rates(patterns)
    assert round(rates.rates["M2"] * 100, 2) == 38.46
    assert sum(v for v in rates.rates.values()) == pytest.approx(1.0)


def test_all_no_dynamics():
    rates = shift_rates([_pattern(Pattern.NO_DYNAMICS, True, True)] * 4)
    assert all(v is None for v in rates.rates.values())
    assert rates.superfluous_share == 1.0


def test_attribution_shares():
    spec = ScenarioSpec(
        case_id="attr",
        rounds=2,
        domain_agents=4,
        gold="B",
        opinions={"D0": ["A", "B"], "D1": ["A", "B"], "D2": ["A", "B"], "D3": ["A", "B"]},
        justifications={
            "D0": {"R1.Review": "consensus_based"},
            "D1": {"R1.Review": "consensus_based"},
            "D2": {"R1.Review": "consensus_based"},
            "D3": {"R1.Review": "evidence_based"},
        },
    )
    traj = opinion_trajectory(generate_case(spec).case)
    assert attribution_breakdown(traj) == (0.25, 0.75, 0.0)
    assert attribution_breakdown({}) == (None, None, None)
