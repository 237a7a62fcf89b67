import random

import pytest

from conftest import case_doc, turn
from collab_audit.judge import JudgeGateway, ScriptedBackend, ScriptedJudgeTape, TemplateId
from collab_audit.labels import QualityLevel, Relevance, Urgency
from collab_audit.quality import (
    QualityAssessment,
    activation_rate,
    assess_arguments,
    assessment_stages,
    audit_quality,
    corpus_priority_mismatch,
    overall_quality_context,
    priority_mismatch_rate,
    role_context,
    urgency_context,
    vote_bypass,
)
from collab_audit.synth import ScenarioSpec, generate_case
from collab_audit.trail import Archetype, Stage, StageTag, parse_case

R1P = StageTag(1, Stage.PROPOSE)
R1C = StageTag(1, Stage.CONCLUDE)


def proposal_case(votes, final, texts=None):
    texts = texts or {}
    turns = [
        turn(i + 1, 1, "Propose", aid, response=texts.get(aid, f"Argument for {ans}."), structured={"current_viewpoint": ans})
        for i, (aid, ans) in enumerate(votes.items())
    ]
    turns.append(turn(len(turns) + 1, 1, "Conclude", "m", "Meta", response=f"Final: {final}", structured={"answer": final}))
    return parse_case(case_doc(turns, final=final, gold="A"))


def label_tape(case, labels, meta_urgency="Standard"):
    """labels: agent -> (overall, insight, relevance, urgency) at R1.Propose."""
    tape = ScriptedJudgeTape()
    live = [(t.agent.agent_id, t.response_text) for t in case.turns if t.stage == R1P and t.response_text.strip()]
    tape.add(
        TemplateId.OVERALL_QUALITY,
        overall_quality_context(case, R1P, live),
        [{"agent_id": a, "overall_quality_category": labels[a][0], "auditor_reasoning": ""} for a, _ in live],
    )
    for aid, text in live:
        _, insight, rel, urg = labels[aid]
        tape.add(
            TemplateId.ROLE_EFFECTIVENESS,
            role_context(case, R1P, aid, text),
            {"specialized_insight_emergence": insight, "expertise_relevance_category": rel, "auditor_reasoning": ""},
        )
        tape.add(
            TemplateId.URGENCY,
            urgency_context(case, R1P, aid, text),
            {"diagnostic_urgency_level": urg, "auditor_reasoning": ""},
        )
    meta = [t for t in case.turns if t.agent.archetype is Archetype.META]
    for t in meta:
        tape.add(
            TemplateId.URGENCY,
            urgency_context(case, t.stage, t.agent.agent_id, t.response_text),
            {"diagnostic_urgency_level": meta_urgency, "auditor_reasoning": ""},
        )
    return JudgeGateway(ScriptedBackend(tape))


def qa(aid, overall=None, insight=None, urgency=None, archetype=Archetype.DOMAIN, stage=R1P):
    return QualityAssessment(
        aid,
        stage,
        archetype,
        QualityLevel(overall) if overall else None,
        QualityLevel(insight) if insight else None,
        None,
        Urgency(urgency) if urgency else None,
    )


def test_three_agents_three_assessments():
    case = proposal_case({"a1": "A", "a2": "A", "a3": "B"}, "A")
    labels = {
        "a1": ("Low", "High", "Core", "Immediate"),
        "a2": ("Medium", "Low", "Relevant", "Standard"),
        "a3": ("High", "Medium", "Ancillary", "Delayed"),
    }
    out = assess_arguments(case, label_tape(case, labels))
    domain = [a for a in out if a.archetype is Archetype.DOMAIN]
    assert [(a.agent_id, a.overall_quality.value, a.insight.value, a.relevance.value, a.urgency.value) for a in domain] == [
        (k, *v) for k, v in labels.items()
    ]
    meta = [a for a in out if a.archetype is Archetype.META]
    assert [(a.agent_id, a.stage, a.urgency) for a in meta] == [("m", R1C, Urgency.STANDARD)]


def test_empty_argument_is_unassessed():
    case = proposal_case({"a1": "A", "a2": "A"}, "A", texts={"a2": "   "})
    gw = label_tape(case, {"a1": ("High", "High", "Core", "Standard")})
    out = assess_arguments(case, gw, urgency_scope="domain")
    assert sorted((a.agent_id, a.assessed) for a in out) == [("a1", True), ("a2", False)]


def test_bypass_definition_cases():
    case = proposal_case({"a1": "A", "a2": "A", "a3": "B"}, "A")
    labelled = [qa("a1", "Low"), qa("a2", "Medium"), qa("a3", "High")]
    assert vote_bypass(case, labelled).flag is True
    case_b = proposal_case({"a1": "A", "a2": "A", "a3": "B"}, "B")
    assert vote_bypass(case_b, labelled).flag is False
    same = [qa("a1", "High"), qa("a2", "Medium"), qa("a3", "Low")]
    assert vote_bypass(case, same).flag is False


def test_bypass_never_with_equal_qualities():
    case = proposal_case({"a1": "A", "a2": "A", "a3": "B"}, "A")
    for level in ("High", "Medium", "Low"):
        assert not vote_bypass(case, [qa(a, level) for a in ("a1", "a2", "a3")]).flag


def test_bypass_needs_strict_plurality():
    case = proposal_case({"a1": "A", "a2": "B", "a3": "C"}, "A")
    result = vote_bypass(case, [qa("a1", "Low"), qa("a2", "High"), qa("a3", "Low")])
    assert result.majority is None and not result.flag


def test_activation():
    assert activation_rate([qa("a", insight=x) for x in ("High", "Low", "Medium", "High")]) == 0.5
    assert activation_rate([qa("m", urgency="Standard", archetype=Archetype.META)]) is None
    assert activation_rate([qa("a", insight="Low")]) == 0.0


def test_activation_order_invariant():
    items = [qa(f"a{i}", insight=x) for i, x in enumerate(["High", "Low", "Medium", "High", "High", "Low"])]
    rng = random.Random(3)
    for _ in range(20):
        rng.shuffle(items)
        assert activation_rate(items) == 0.5


def test_priority_mismatch_worked_example():
    urg = [qa("a1", urgency="Immediate"), qa("a2", urgency="Standard"), qa("a3", urgency="Standard")]
    assert priority_mismatch_rate(urg) == 2 / 3
    assert priority_mismatch_rate([qa("a", urgency="Delayed")] * 3) == 0.0
    assert priority_mismatch_rate([]) is None


def test_priority_mismatch_domain_only_toggle():
    items = [qa("a1", urgency="Standard"), qa("m", urgency="Immediate", archetype=Archetype.META)]
    assert priority_mismatch_rate(items) == 0.5
    assert priority_mismatch_rate(items, domain_only=True) == 0.0


def test_corpus_mismatch_is_mean_of_case_rates():
    assert corpus_priority_mismatch([0.5, None, 1.0, 0.0]) == 0.5
    assert corpus_priority_mismatch([None]) is None


def test_default_stage_selection():
    spec = ScenarioSpec(case_id="stages", rounds=2)
    case = generate_case(spec).case
    assert [t.label for t in assessment_stages(case)] == ["R1.Propose", "R2.Review"]
    assert [t.label for t in assessment_stages(case, "all")] == ["R1.Propose", "R1.Review", "R2.Propose", "R2.Review"]


def test_harness_dissenter_recovered():
    spec = ScenarioSpec(
        case_id="dissent",
        gold="B",
        final="A",
        opinions={"D0": "A", "D1": "A", "D2": "B"},
        bypass={"R1.Propose": True, "R1.Review": True},
        labels={"R1.Propose": {"D2": {"insight": "High", "relevance": "Core", "urgency": "Immediate"}}},
    )
    g = generate_case(spec)
    audit = audit_quality(g.case, JudgeGateway(ScriptedBackend(g.tape)))
    flags = [[b.stage.label, b.flag] for b in audit.bypass_by_stage]
    assert flags == g.truth["quality"]["bypass_by_stage"] == [["R1.Propose", True], ["R1.Review", True]]
    assert audit.bypass.flag is True and audit.bypass.top_quality == "b"
    d2 = [a for a in audit.assessments if a.agent_id == "D2" and a.stage == R1P][0]
    assert (d2.insight, d2.relevance, d2.urgency) == (QualityLevel.HIGH, Relevance.CORE, Urgency.IMMEDIATE)


def test_raising_to_top_never_creates_mismatch():
    base = ["Immediate", "Standard", "Delayed", "Standard"]
    items = [qa(f"a{i}", urgency=u) for i, u in enumerate(base)]
    before = priority_mismatch_rate(items)
    items[2] = qa("a2", urgency="Immediate")
    assert priority_mismatch_rate(items) < before


@pytest.mark.parametrize("levels", [["Low"], ["High", "High"], ["Medium", "Low", "High"]])
def test_rates_in_unit_interval(levels):
    items = [qa(f"a{i}", insight=lv, urgency=u) for i, (lv, u) in enumerate(zip(levels, ["Immediate", "Standard", "Delayed"]))]
    for r in (activation_rate(items), priority_mismatch_rate(items)):
        assert 0.0 <= r <= 1.0
