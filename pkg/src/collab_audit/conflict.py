"""Conflict-resolution audit: critical conflict points (CCPs) and dropout.

CCPs are detected from the round-1 arguments (optionally again at every
later round), then every later stage slice is judged for whether each CCP
was substantively addressed. Status latches: once addressed, a CCP stays
addressed. The raw per-stage verdicts are kept alongside for rebound
analysis across rounds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Sequence

from .judge import CriticalConflictPoint, JudgeGateway, TemplateId
from .trail import Archetype, InteractionCase, Stage, StageTag, slice_text, stage_slices

__all__ = [
    "CriticalConflictPoint",
    "ResolutionStatus",
    "ResolutionTrace",
    "DropoutCount",
    "EmptyCcpList",
    "NoDetectionArguments",
    "ccp_detection_context",
    "resolution_context",
    "detection_arguments",
    "detect_ccps",
    "injection_payload",
    "verify_resolution",
    "dropout_rate",
    "ConflictAudit",
    "audit_conflict",
]


class EmptyCcpList(ValueError):
    pass


class NoDetectionArguments(ValueError):
    pass


class ResolutionStatus(str, enum.Enum):
    ADDRESSED = "Addressed"
    UNADDRESSED = "Unaddressed"


@dataclass(frozen=True)
class ResolutionTrace:
    ccp_id: str
    raw: tuple[tuple[StageTag, bool], ...]
    statuses: tuple[tuple[StageTag, ResolutionStatus], ...]
    final_status: ResolutionStatus
    notes: tuple[str, ...] = ()

    def status_at(self, stage: StageTag) -> ResolutionStatus | None:
        for tag, status in self.statuses:
            if tag == stage:
                return status
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "ccp_id": self.ccp_id,
            "raw": [[t.label, v] for t, v in self.raw],
            "statuses": [[t.label, s.value] for t, s in self.statuses],
            "final_status": self.final_status.value,
            "notes": list(self.notes),
        }


def detection_arguments(case: InteractionCase, round_num: int) -> list[tuple[StageTag, str, str]]:
    """(stage, agent_id, text) for the Propose and Review turns of a round."""
    out = []
    for tag, turns in stage_slices(case).items():
        if tag.round == round_num and tag.stage in (Stage.PROPOSE, Stage.REVIEW):
            for t in turns:
                if t.agent.archetype is not Archetype.AUDIT:
                    out.append((tag, t.agent.agent_id, t.response_text))
    return out


def ccp_detection_context(case: InteractionCase, round_num: int, args: Sequence[tuple[StageTag, str, str]]) -> dict:
    return {
        "question": case.question,
        "round": round_num,
        "arguments": [{"agent_id": aid, "stage": tag.label, "argument": text} for tag, aid, text in args],
    }


def resolution_context(ccp: CriticalConflictPoint, stage: StageTag, discussion_text: str) -> dict:
    return {
        "point_of_conflict": {
            "ccp_id": ccp.ccp_id,
            "conflict_summary": ccp.conflict_summary,
            "conflicting_statements": [{"agent_id": a, "statement_content": s} for a, s in ccp.statements],
        },
        "stage": stage.label,
        "discussion_text": discussion_text,
    }


def detect_ccps(case: InteractionCase, gateway: JudgeGateway, per_round: bool = False) -> list[CriticalConflictPoint]:
    rounds = sorted({t.stage.round for t in case.turns}) if per_round else [1]
    known = set(case.agents)
    found: list[CriticalConflictPoint] = []
    for r in rounds:
        args = detection_arguments(case, r)
        if not args:
            if r == 1:
                raise NoDetectionArguments(case.case_id)
            continue
        resp = gateway.call(
            TemplateId.CCP_DETECTION,
            ccp_detection_context(case, r, args),
            detected_at=max(tag for tag, _, _ in args),
            known_agents=known,
            first_index=len(found),
        )
        found.extend(resp.parsed)
    return found


def injection_payload(ccps: Sequence[CriticalConflictPoint]) -> str:
    """Text block for prepending to the next round's user prompts."""
    if not ccps:
        raise EmptyCcpList("no CCPs to inject")
    lines = [
        "Critical Conflict Points (CCPs) were identified between the team's arguments.",
        "You MUST explicitly address each CCP below: acknowledge the disagreement, weigh",
        "the evidence on both sides, and state a reasoned resolution.",
    ]
    for ccp in ccps:
        lines.append("")
        lines.append(f"{ccp.ccp_id}: {ccp.conflict_summary}")
        for agent, statement in ccp.statements:
            lines.append(f'  - {agent}: "{statement}"')
    return "\n".join(lines)


def verify_resolution(
    case: InteractionCase, ccps: Sequence[CriticalConflictPoint], gateway: JudgeGateway
) -> list[ResolutionTrace]:
    if not ccps:
        raise EmptyCcpList(case.case_id)
    slices = [
        (tag, [t for t in turns if t.agent.archetype is not Archetype.AUDIT]) for tag, turns in stage_slices(case).items()
    ]
    slices = [(tag, slice_text(turns)) for tag, turns in slices if turns]
    plan = []
    for ccp in ccps:
        after = [(tag, text) for tag, text in slices if ccp.detected_at is None or tag > ccp.detected_at]
        plan.append((ccp, [tag for tag, _ in after]))
    requests = [
        (TemplateId.CCP_RESOLUTION, resolution_context(ccp, tag, text))
        for ccp in ccps
        for tag, text in slices
        if ccp.detected_at is None or tag > ccp.detected_at
    ]
    verdicts = iter(r.parsed for r in gateway.call_many(requests))

    traces = []
    for ccp, tags in plan:
        raw, statuses, addressed = [], [], False
        for tag in tags:
            v = next(verdicts)
            addressed = addressed or v
            raw.append((tag, v))
            statuses.append((tag, ResolutionStatus.ADDRESSED if addressed else ResolutionStatus.UNADDRESSED))
        notes = []
        if not tags:
            notes.append("no stage after detection")
        elif tags[-1].stage is not Stage.CONCLUDE:
            notes.append("case does not end in a Conclude stage")
        final = statuses[-1][1] if statuses else ResolutionStatus.UNADDRESSED
        traces.append(ResolutionTrace(ccp.ccp_id, tuple(raw), tuple(statuses), final, tuple(notes)))
    return traces


class DropoutCount(NamedTuple):
    unaddressed: int
    addressed: int

    @property
    def total(self) -> int:
        return self.unaddressed + self.addressed

    @property
    def rate(self) -> float | None:
        return self.unaddressed / self.total if self.total else None


def _statuses(trace: ResolutionTrace, latched: bool) -> list[tuple[StageTag, ResolutionStatus]]:
    if latched:
        return list(trace.statuses)
    return [(t, ResolutionStatus.ADDRESSED if v else ResolutionStatus.UNADDRESSED) for t, v in trace.raw]


def dropout_rate(
    traces: Iterable[ResolutionTrace], grouping: str = "overall", latched: bool = True
) -> dict[Any, DropoutCount]:
    """Unaddressed/addressed counts per group.

    ``overall`` uses each CCP's final status; ``stage`` counts every CCP with
    a status at that stage; ``round`` uses each CCP's status at the last
    evaluated stage of the round.
    """
    tallies: dict[Any, list[int]] = {}

    def add(key, status):
        slot = tallies.setdefault(key, [0, 0])
        slot[0 if status is ResolutionStatus.UNADDRESSED else 1] += 1

    for tr in traces:
        statuses = _statuses(tr, latched)
        if grouping == "overall":
            add("overall", statuses[-1][1] if statuses else tr.final_status)
        elif grouping == "stage":
            for tag, status in statuses:
                add(tag, status)
        elif grouping == "round":
            last: dict[int, ResolutionStatus] = {}
            for tag, status in statuses:
                last[tag.round] = status
            for r, status in last.items():
                add(r, status)
        else:
            raise ValueError(f"unknown grouping {grouping!r}")
    return {k: DropoutCount(*tallies[k]) for k in sorted(tallies)}


@dataclass
class ConflictAudit:
    ccps: list[CriticalConflictPoint]
    traces: list[ResolutionTrace]

    def dropout(self, grouping: str = "overall", latched: bool = True) -> dict[Any, DropoutCount]:
        return dropout_rate(self.traces, grouping, latched)

    def to_dict(self) -> dict[str, Any]:
        def table(grouping):
            out = {}
            for key, c in self.dropout(grouping).items():
                name = key.label if isinstance(key, StageTag) else str(key)
                out[name] = {"unaddressed": c.unaddressed, "addressed": c.addressed, "rate": c.rate}
            return out

        return {
            "ccps": [c.to_dict() for c in self.ccps],
            "traces": [t.to_dict() for t in self.traces],
            "dropout": {g: table(g) for g in ("overall", "stage", "round")},
        }


def audit_conflict(case: InteractionCase, gateway: JudgeGateway, per_round: bool = False) -> ConflictAudit:
    ccps = detect_ccps(case, gateway, per_round)
    traces = verify_resolution(case, ccps, gateway) if ccps else []
    return ConflictAudit(ccps, traces)
