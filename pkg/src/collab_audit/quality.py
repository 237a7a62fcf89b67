"""Collaboration-quality audit.

Per argument the judge labels overall quality, specialty insight, relevance
and diagnostic urgency. Three rates are derived from those labels:

* vote bypass: the final answer follows a strict-plurality vote although a
  different answer had the unique best-quality argument;
* domain activation: share of domain arguments with High insight;
* clinical priority mismatch: share of outputs whose urgency is below the
  highest urgency raised in the case.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .judge import JudgeGateway, TemplateId
from .labels import QualityLevel, Relevance, Urgency
from .trail import Archetype, InteractionCase, Stage, StageTag, Turn, stage_slices
from .viewpoint import OpinionRecord, opinion_trajectory

__all__ = [
    "QualityAssessment",
    "VoteBypass",
    "QualityAudit",
    "assessment_stages",
    "overall_quality_context",
    "role_context",
    "urgency_context",
    "agent_arguments",
    "assess_arguments",
    "vote_bypass",
    "activation_rate",
    "priority_mismatch_rate",
    "corpus_priority_mismatch",
    "audit_quality",
]


@dataclass(frozen=True)
class QualityAssessment:
    agent_id: str
    stage: StageTag
    archetype: Archetype = Archetype.DOMAIN
    overall_quality: QualityLevel | None = None
    insight: QualityLevel | None = None
    relevance: Relevance | None = None
    urgency: Urgency | None = None
    auditor_reasoning: str = ""
    assessed: bool = True

    def to_dict(self) -> dict[str, Any]:
        def v(x):
            return x.value if x is not None else None

        return {
            "agent_id": self.agent_id,
            "stage": self.stage.label,
            "archetype": self.archetype.value,
            "overall_quality": v(self.overall_quality),
            "insight": v(self.insight),
            "relevance": v(self.relevance),
            "urgency": v(self.urgency),
            "assessed": self.assessed,
        }


def assessment_stages(case: InteractionCase, stages: str | Sequence[StageTag] = "default") -> list[StageTag]:
    """Stages whose domain arguments get assessed.

    ``"default"``: the initial proposal and the last stage with domain turns
    before the final conclusion. ``"all"``: every stage with domain turns.
    """
    slices = stage_slices(case)
    with_domain = [tag for tag, turns in slices.items() if any(t.agent.archetype is Archetype.DOMAIN for t in turns)]
    if not isinstance(stages, str):
        return sorted(set(stages))
    if stages == "all":
        return with_domain
    if stages != "default":
        raise ValueError(f"unknown stage selection {stages!r}")
    picked = []
    proposes = [t for t in with_domain if t.stage is Stage.PROPOSE]
    if proposes:
        picked.append(proposes[0])
    concludes = [t for t in slices if t.stage is Stage.CONCLUDE]
    final = concludes[-1] if concludes else None
    before = [t for t in with_domain if final is None or t < final]
    if before and before[-1] not in picked:
        picked.append(before[-1])
    return picked


def agent_arguments(turns: Iterable[Turn], archetype: Archetype) -> list[tuple[str, str]]:
    """(agent_id, text) per agent of one archetype, in first-turn order; an
    agent's several turns in one slice are joined."""
    texts: dict[str, list[str]] = {}
    for t in turns:
        if t.agent.archetype is archetype:
            texts.setdefault(t.agent.agent_id, []).append(t.response_text)
    return [(aid, "\n\n".join(parts)) for aid, parts in texts.items()]


def overall_quality_context(case: InteractionCase, stage: StageTag, args: Sequence[tuple[str, str]]) -> dict[str, Any]:
    return {
        "question": case.question,
        "stage": stage.label,
        "arguments": [{"agent_id": aid, "argument": text} for aid, text in args],
    }


def role_context(case: InteractionCase, stage: StageTag, agent_id: str, text: str) -> dict[str, Any]:
    role = case.agents[agent_id].role
    return {"question": case.question, "stage": stage.label, "agent_id": agent_id, "specialty": role, "argument": text}


def urgency_context(case: InteractionCase, stage: StageTag, agent_id: str, text: str) -> dict[str, Any]:
    return {"question": case.question, "stage": stage.label, "agent_id": agent_id, "argument": text}


def assess_arguments(
    case: InteractionCase,
    gateway: JudgeGateway,
    stages: str | Sequence[StageTag] = "default",
    urgency_scope: str = "all",
) -> list[QualityAssessment]:
    """Label every domain argument at the selected stages.

    With ``urgency_scope="all"`` meta-agent outputs at every stage also get an
    urgency-only assessment. Empty arguments come back with ``assessed=False``.
    """
    if urgency_scope not in ("all", "domain"):
        raise ValueError(f"unknown urgency scope {urgency_scope!r}")
    slices = stage_slices(case)
    out: list[QualityAssessment] = []
    for tag in assessment_stages(case, stages):
        args = agent_arguments(slices.get(tag, []), Archetype.DOMAIN)
        live = [(aid, text) for aid, text in args if text.strip()]
        for aid, text in args:
            if not text.strip():
                out.append(QualityAssessment(aid, tag, assessed=False))
        if not live:
            continue
        overall = gateway.call(TemplateId.OVERALL_QUALITY, overall_quality_context(case, tag, live)).parsed
        by_agent = {v.agent_id: v for v in overall}
        requests = []
        for aid, text in live:
            requests.append((TemplateId.ROLE_EFFECTIVENESS, role_context(case, tag, aid, text)))
            requests.append((TemplateId.URGENCY, urgency_context(case, tag, aid, text)))
        replies = gateway.call_many(requests)
        for i, (aid, _) in enumerate(live):
            role, urgency = replies[2 * i].parsed, replies[2 * i + 1].parsed
            verdict = by_agent.get(aid)
            out.append(
                QualityAssessment(
                    agent_id=aid,
                    stage=tag,
                    archetype=Archetype.DOMAIN,
                    overall_quality=verdict.category if verdict else None,
                    insight=role.insight,
                    relevance=role.relevance,
                    urgency=urgency.level,
                    auditor_reasoning=verdict.reasoning if verdict else role.reasoning,
                )
            )
    if urgency_scope == "all":
        requests, keys = [], []
        for tag, turns in slices.items():
            for aid, text in agent_arguments(turns, Archetype.META):
                if text.strip():
                    requests.append((TemplateId.URGENCY, urgency_context(case, tag, aid, text)))
                    keys.append((aid, tag))
        for (aid, tag), reply in zip(keys, gateway.call_many(requests)):
            out.append(
                QualityAssessment(
                    aid, tag, Archetype.META, urgency=reply.parsed.level, auditor_reasoning=reply.parsed.reasoning
                )
            )
    out.sort(key=lambda a: (a.stage.round, a.stage.stage.rank, a.archetype is Archetype.META))
    return out


@dataclass(frozen=True)
class VoteBypass:
    flag: bool
    stage: StageTag | None
    majority: str | None
    top_quality: str | None
    votes: Mapping[str, str] = field(default_factory=dict)
    qualities: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "flag": self.flag,
            "stage": self.stage.label if self.stage else None,
            "majority": self.majority,
            "top_quality": self.top_quality,
            "votes": dict(self.votes),
            "qualities": dict(self.qualities),
        }


def _vote_at(records: Sequence[OpinionRecord], stage: StageTag) -> str | None:
    answer = None
    for r in records:
        if r.stage <= stage:
            answer = r.answer
    return answer


def vote_bypass(
    case: InteractionCase,
    assessments: Sequence[QualityAssessment],
    stage: StageTag | None = None,
    trajectories: Mapping[str, list[OpinionRecord]] | None = None,
) -> VoteBypass:
    """Whether the final answer followed the vote over the best argument.

    Votes are each assessed agent's latest answer at ``stage`` (default: the
    latest stage with quality labels). Ties for the plurality, or different
    answers sharing the top quality level, make the check inapplicable.
    """
    rated = [a for a in assessments if a.archetype is Archetype.DOMAIN and a.overall_quality is not None]
    if stage is None:
        if not rated:
            return VoteBypass(False, None, None, None)
        stage = max(a.stage for a in rated)
    rated = [a for a in rated if a.stage == stage]
    if trajectories is None:
        trajectories = opinion_trajectory(case)

    votes: dict[str, str] = {}
    levels: dict[str, QualityLevel] = {}
    for a in rated:
        answer = _vote_at(trajectories.get(a.agent_id, []), stage)
        if answer is not None:
            votes[a.agent_id] = answer
            levels[a.agent_id] = a.overall_quality
    qualities = {aid: lvl.value for aid, lvl in levels.items()}
    if not votes:
        return VoteBypass(False, stage, None, None)

    counts = Counter(votes.values())
    top = max(counts.values())
    leaders = [ans for ans, c in counts.items() if c == top]
    majority = leaders[0] if len(leaders) == 1 else None

    best = max(lvl.rank for lvl in levels.values())
    best_answers = {votes[aid] for aid, lvl in levels.items() if lvl.rank == best}
    top_quality = next(iter(best_answers)) if len(best_answers) == 1 else None

    flag = majority is not None and top_quality is not None and top_quality != majority and case.final == majority
    return VoteBypass(flag, stage, majority, top_quality, votes, qualities)


def activation_rate(assessments: Iterable[QualityAssessment]) -> float | None:
    """Share of domain assessments with High insight; None when there are none."""
    insights = [a.insight for a in assessments if a.archetype is Archetype.DOMAIN and a.insight is not None]
    if not insights:
        return None
    return sum(i is QualityLevel.HIGH for i in insights) / len(insights)


def priority_mismatch_rate(assessments: Iterable[QualityAssessment], domain_only: bool = False) -> float | None:
    """Share of urgency-labeled outputs below the case's highest urgency."""
    levels = [
        a.urgency
        for a in assessments
        if a.urgency is not None and (not domain_only or a.archetype is Archetype.DOMAIN)
    ]
    if not levels:
        return None
    top = max(u.rank for u in levels)
    return sum(u.rank < top for u in levels) / len(levels)


def corpus_priority_mismatch(case_rates: Iterable[float | None]) -> float | None:
    rates = [r for r in case_rates if r is not None]
    return sum(rates) / len(rates) if rates else None


@dataclass
class QualityAudit:
    assessments: list[QualityAssessment]
    bypass: VoteBypass
    bypass_by_stage: list[VoteBypass]
    activation: float | None
    mismatch: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "assessments": [a.to_dict() for a in self.assessments],
            "vote_bypass": self.bypass.to_dict(),
            "vote_bypass_by_stage": [[b.stage.label, b.flag] for b in self.bypass_by_stage],
            "activation_rate": self.activation,
            "priority_mismatch_rate": self.mismatch,
        }


def audit_quality(
    case: InteractionCase,
    gateway: JudgeGateway,
    stages: str | Sequence[StageTag] = "default",
    urgency_scope: str = "all",
    mismatch_domain_only: bool = False,
) -> QualityAudit:
    assessments = assess_arguments(case, gateway, stages, urgency_scope)
    trajectories = opinion_trajectory(case)
    rated_stages = sorted(
        {a.stage for a in assessments if a.archetype is Archetype.DOMAIN and a.overall_quality is not None}
    )
    by_stage = [vote_bypass(case, assessments, s, trajectories) for s in rated_stages]
    final = by_stage[-1] if by_stage else VoteBypass(False, None, None, None)
    return QualityAudit(
        assessments,
        final,
        by_stage,
        activation_rate(assessments),
        priority_mismatch_rate(assessments, mismatch_domain_only),
    )
