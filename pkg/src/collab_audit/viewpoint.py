"""Viewpoint-shift audit: opinion trajectories and M1-M4 case patterns.

Patterns compare the initial strict-plurality answer of the domain agents
with the gold answer and the system's final answer:

    M1  majority wrong, a minority holds gold, final = gold
    M2  majority wrong, a minority holds gold, final != gold
    M3  majority = gold, final = gold
    M4  majority = gold, final != gold

A unanimous start is NoDynamics; a tied start, or a wrong majority with no
agent holding gold, is Unclassifiable.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .judge import ParseError, extract_json, parse_viewpoint
from .labels import JustificationType
from .trail import Archetype, InteractionCase, Stage, StageTag, stage_slices

__all__ = [
    "Pattern",
    "OpinionRecord",
    "ShiftPattern",
    "ShiftRates",
    "NoInitialOpinions",
    "turn_answer",
    "opinion_trajectory",
    "initial_opinions",
    "classify_case",
    "shift_rates",
    "attribution_breakdown",
]

_ANSWER_IN_TEXT = re.compile(r"(?i)\b(?:final\s+)?answer\s*(?:is|:)\s*\(?([A-Za-z0-9][\w-]*)")


class NoInitialOpinions(ValueError):
    pass


class Pattern(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    NO_DYNAMICS = "NoDynamics"
    UNCLASSIFIABLE = "Unclassifiable"


M_PATTERNS = (Pattern.M1, Pattern.M2, Pattern.M3, Pattern.M4)


@dataclass(frozen=True)
class OpinionRecord:
    agent_id: str
    stage: StageTag
    answer: str
    viewpoint_changed: bool
    justification_type: JustificationType
    cited_references: tuple[str, ...] = ()


@dataclass(frozen=True)
class ShiftPattern:
    pattern: Pattern
    initial_majority: str | None  # None for a tie
    minority_correct_present: bool
    initial_distribution: Mapping[str, int] = field(default_factory=dict)
    final_correct: bool = False
    unanimous_correct: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "pattern": self.pattern.value,
            "initial_majority": self.initial_majority if self.initial_majority is not None else "Tie",
            "minority_correct_present": self.minority_correct_present,
            "initial_distribution": dict(sorted(self.initial_distribution.items())),
            "final_correct": self.final_correct,
            "unanimous_correct": self.unanimous_correct,
        }


def turn_answer(case: InteractionCase, turn) -> str | None:
    """Normalized answer expressed by a turn: structured payload first, then a
    JSON self-report in the response, then an ``Answer: X`` phrase."""
    if turn.answer is not None:
        return case.normalize_answer(turn.answer)
    try:
        obj = extract_json(turn.response_text, dict)
    except ParseError:
        obj = None
    if obj:
        for key in ("current_viewpoint", "answer"):
            if isinstance(obj.get(key), str) and obj[key].strip():
                return case.normalize_answer(obj[key])
    m = _ANSWER_IN_TEXT.search(turn.response_text)
    if m:
        return case.normalize_answer(m.group(1))
    return None


def _self_report(turn) -> dict[str, Any]:
    if turn.structured:
        return dict(turn.structured)
    try:
        return parse_viewpoint(turn.response_text)._asdict()
    except ParseError:
        return {}


def opinion_trajectory(case: InteractionCase) -> dict[str, list[OpinionRecord]]:
    """One record per (domain agent, stage) where the agent gave an answer.

    Silent stages get no record. Within a stage the agent's last answer wins.
    """
    out: dict[str, list[OpinionRecord]] = {}
    saw_initial = False
    first_propose = None
    for tag, turns in stage_slices(case).items():
        if first_propose is None and tag.stage is Stage.PROPOSE:
            first_propose = tag
        latest: dict[str, OpinionRecord] = {}
        for t in turns:
            if t.agent.archetype is not Archetype.DOMAIN:
                continue
            answer = turn_answer(case, t)
            if answer is None:
                continue
            aid = t.agent.agent_id
            history = out.get(aid, [])
            report = _self_report(t)
            changed = report.get("viewpoint_changed")
            if not isinstance(changed, bool):
                changed = bool(history) and history[-1].answer != answer
            jt = report.get("justification_type")
            if isinstance(jt, JustificationType):
                justification = jt
            else:
                justification = JustificationType.from_wire(jt)
            refs = report.get("cited_references") or ()
            latest[aid] = OpinionRecord(aid, tag, answer, changed, justification, tuple(str(r) for r in refs))
        for aid, rec in latest.items():
            out.setdefault(aid, []).append(rec)
            if tag == first_propose:
                saw_initial = True
    if not saw_initial:
        raise NoInitialOpinions(case.case_id)
    return out


def initial_opinions(case: InteractionCase, trajectories: Mapping[str, list[OpinionRecord]]) -> dict[str, str]:
    propose = [tag for tag in stage_slices(case) if tag.stage is Stage.PROPOSE]
    if not propose:
        raise NoInitialOpinions(case.case_id)
    first = propose[0]
    return {aid: recs[0].answer for aid, recs in trajectories.items() if recs and recs[0].stage == first}


def classify_case(
    case: InteractionCase, trajectories: Mapping[str, list[OpinionRecord]] | None = None
) -> ShiftPattern:
    if trajectories is None:
        trajectories = opinion_trajectory(case)
    initial = initial_opinions(case, trajectories)
    if len(initial) < 2:
        raise NoInitialOpinions(case.case_id)
    gold, final = case.gold, case.final
    counts = Counter(initial.values())
    top = max(counts.values())
    leaders = [a for a, c in counts.items() if c == top]
    holds_gold = gold in counts
    dist = dict(counts)
    final_correct = final == gold

    if len(counts) == 1:
        return ShiftPattern(Pattern.NO_DYNAMICS, leaders[0], False, dist, final_correct, leaders[0] == gold)
    if len(leaders) > 1:
        return ShiftPattern(Pattern.UNCLASSIFIABLE, None, holds_gold and gold not in leaders, dist, final_correct)
    majority = leaders[0]
    if majority == gold:
        pattern = Pattern.M3 if final_correct else Pattern.M4
        return ShiftPattern(pattern, majority, False, dist, final_correct)
    if not holds_gold:
        return ShiftPattern(Pattern.UNCLASSIFIABLE, majority, False, dist, final_correct)
    pattern = Pattern.M1 if final_correct else Pattern.M2
    return ShiftPattern(pattern, majority, True, dist, final_correct)


@dataclass
class ShiftRates:
    rates: dict[str, float | None]
    counts: dict[str, int]
    superfluous_share: float | None
    """Share of successful cases whose agents were unanimously correct from the start."""

    def to_dict(self) -> dict[str, Any]:
        return {"rates": self.rates, "counts": self.counts, "superfluous_share": self.superfluous_share}


def shift_rates(patterns: Iterable[ShiftPattern]) -> ShiftRates:
    patterns = list(patterns)
    counts = Counter(p.pattern.value for p in patterns)
    m_total = sum(counts[p.value] for p in M_PATTERNS)
    rates = {p.value: (counts[p.value] / m_total if m_total else None) for p in M_PATTERNS}
    successes = [p for p in patterns if p.final_correct]
    superfluous = sum(p.unanimous_correct for p in successes) / len(successes) if successes else None
    return ShiftRates(rates, {p.value: counts[p.value] for p in Pattern}, superfluous)


def attribution_breakdown(
    trajectories: Mapping[str, list[OpinionRecord]],
) -> tuple[float | None, float | None, float | None]:
    """(evidence-based, consensus-based, unreported) shares of changed views."""
    changed = [r for recs in trajectories.values() for r in recs if r.viewpoint_changed]
    if not changed:
        return (None, None, None)
    n = len(changed)
    c = Counter(r.justification_type for r in changed)
    return (
        c[JustificationType.EVIDENCE_BASED] / n,
        c[JustificationType.CONSENSUS_BASED] / n,
        c[JustificationType.UNREPORTED] / n,
    )
