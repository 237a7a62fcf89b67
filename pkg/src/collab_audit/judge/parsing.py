"""Strict parsers for judge responses.

Every parser either returns a complete payload or raises :class:`ParseError`;
there is no partial result. Outside strict mode the first syntactically valid
JSON value of the expected kind is taken from the raw text, so a response
wrapped in prose or a code fence still parses.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple

from ..labels import JustificationType, QualityLevel, Relevance, Urgency
from ..trail import StageTag
from .templates import TemplateId

__all__ = [
    "ParseError",
    "UnknownKeuId",
    "CriticalConflictPoint",
    "QualityVerdict",
    "RoleVerdict",
    "UrgencyVerdict",
    "ViewpointReport",
    "extract_json",
    "parse_keu_flags",
    "parse_presence",
    "parse_viewpoint",
    "parse_role_effectiveness",
    "parse_urgency",
    "parse_quality",
    "parse_conflicts",
    "parse_resolution",
    "PARSERS",
]

KEU_ID = re.compile(r"KEU-\d+")
_OPENERS = re.compile(r"[\[{]")


class ParseError(ValueError):
    """Raw judge text does not satisfy the template's response grammar."""


class UnknownKeuId(ParseError):
    def __init__(self, keu_id: str):
        super().__init__(f"unknown KEU id {keu_id!r}")
        self.keu_id = keu_id


@dataclass(frozen=True)
class CriticalConflictPoint:
    ccp_id: str
    conflicting_agents: tuple[str, ...]
    conflict_summary: str
    statements: tuple[tuple[str, str], ...]
    detected_at: StageTag | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "ccp_id": self.ccp_id,
            "conflicting_agents": list(self.conflicting_agents),
            "conflict_summary": self.conflict_summary,
            "statements": [{"agent_id": a, "statement_content": s} for a, s in self.statements],
            "detected_at": self.detected_at.label if self.detected_at else None,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "CriticalConflictPoint":
        at = doc.get("detected_at")
        return cls(
            ccp_id=doc["ccp_id"],
            conflicting_agents=tuple(doc["conflicting_agents"]),
            conflict_summary=doc["conflict_summary"],
            statements=tuple((s["agent_id"], s["statement_content"]) for s in doc["statements"]),
            detected_at=StageTag.parse(at) if at else None,
        )


class QualityVerdict(NamedTuple):
    agent_id: str
    category: QualityLevel
    reasoning: str


class RoleVerdict(NamedTuple):
    insight: QualityLevel
    relevance: Relevance
    reasoning: str


class UrgencyVerdict(NamedTuple):
    level: Urgency
    reasoning: str


class ViewpointReport(NamedTuple):
    agree: bool
    current_viewpoint: str
    viewpoint_changed: bool
    justification_type: JustificationType
    cited_references: tuple[str, ...]
    reason: str


def extract_json(raw: Any, kind: type | tuple[type, ...] = (dict, list), strict: bool = False) -> Any:
    if not isinstance(raw, str):
        raise ParseError("response is not text")
    if strict:
        try:
            value = json.loads(raw.strip())
        except (ValueError, RecursionError):
            raise ParseError("response is not a bare JSON value") from None
        if not isinstance(value, kind):
            raise ParseError("response has the wrong JSON type")
        return value
    decoder = json.JSONDecoder()
    for m in _OPENERS.finditer(raw):
        try:
            value, _ = decoder.raw_decode(raw, m.start())
        except (ValueError, RecursionError):
            continue
        if isinstance(value, kind):
            return value
    raise ParseError("no JSON value of the expected kind found")


def _str(obj: dict, key: str, *, nonempty: bool = False) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or (nonempty and not value.strip()):
        raise ParseError(f"{key!r} must be a {'non-empty ' if nonempty else ''}string")
    return value


def _bool(obj: dict, key: str) -> bool:
    value = obj.get(key)
    if not isinstance(value, bool):
        raise ParseError(f"{key!r} must be a boolean")
    return value


def _str_list(obj: dict, key: str) -> list[str]:
    value = obj.get(key)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError(f"{key!r} must be a list of strings")
    return value


def parse_keu_flags(
    raw: str, unit_ids: Iterable[str] | None = None, strict: bool = False
) -> dict[str, bool]:
    """``{"KEU-0": true, ...}`` -> ``{"KEU-0": True, ...}``.

    With ``unit_ids`` every submitted unit must be judged and no other id may
    appear.
    """
    obj = extract_json(raw, dict, strict)
    out: dict[str, bool] = {}
    for key, value in obj.items():
        if not KEU_ID.fullmatch(key):
            raise ParseError(f"key {key!r} is not a KEU id")
        if not isinstance(value, bool):
            raise ParseError(f"value for {key} must be a boolean")
        out[key] = value
    if unit_ids is not None:
        known = set(unit_ids)
        for key in out:
            if key not in known:
                raise UnknownKeuId(key)
        missing = sorted(known - set(out), key=lambda k: int(k.split("-")[1]))
        if missing:
            raise ParseError(f"no verdict for {', '.join(missing)}")
    return out


def parse_presence(raw: str, strict: bool = False) -> bool:
    return _bool(extract_json(raw, dict, strict), "present")


def parse_resolution(raw: str, strict: bool = False) -> bool:
    return _bool(extract_json(raw, dict, strict), "was_addressed")


def parse_viewpoint(raw: str, strict: bool = False) -> ViewpointReport:
    obj = extract_json(raw, dict, strict)
    jt = obj.get("justification_type")
    if jt not in ("evidence_based", "consensus_based"):
        raise ParseError("'justification_type' must be 'evidence_based' or 'consensus_based'")
    return ViewpointReport(
        agree=_bool(obj, "agree"),
        current_viewpoint=_str(obj, "current_viewpoint", nonempty=True),
        viewpoint_changed=_bool(obj, "viewpoint_changed"),
        justification_type=JustificationType.from_wire(jt),
        cited_references=tuple(_str_list(obj, "cited_references")),
        reason=_str(obj, "reason"),
    )


def _enum(enum_cls, value: Any, key: str):
    if not isinstance(value, str):
        raise ParseError(f"{key!r} must be a string")
    try:
        if enum_cls is Urgency:
            return Urgency.from_label(value)
        return enum_cls(value)
    except ValueError:
        raise ParseError(f"{key!r} has unknown value {value!r}") from None


def parse_role_effectiveness(raw: str, strict: bool = False) -> RoleVerdict:
    obj = extract_json(raw, dict, strict)
    return RoleVerdict(
        insight=_enum(QualityLevel, obj.get("specialized_insight_emergence"), "specialized_insight_emergence"),
        relevance=_enum(Relevance, obj.get("expertise_relevance_category"), "expertise_relevance_category"),
        reasoning=_str(obj, "auditor_reasoning"),
    )


def parse_urgency(raw: str, strict: bool = False) -> UrgencyVerdict:
    obj = extract_json(raw, dict, strict)
    return UrgencyVerdict(
        level=_enum(Urgency, obj.get("diagnostic_urgency_level"), "diagnostic_urgency_level"),
        reasoning=_str(obj, "auditor_reasoning"),
    )


def parse_quality(raw: str, strict: bool = False) -> list[QualityVerdict]:
    items = extract_json(raw, list, strict)
    out = []
    for item in items:
        if not isinstance(item, dict):
            raise ParseError("quality entries must be objects")
        out.append(
            QualityVerdict(
                agent_id=_str(item, "agent_id", nonempty=True),
                category=_enum(QualityLevel, item.get("overall_quality_category"), "overall_quality_category"),
                reasoning=_str(item, "auditor_reasoning"),
            )
        )
    return out


def parse_conflicts(
    raw: str,
    detected_at: StageTag | None = None,
    known_agents: Iterable[str] | None = None,
    first_index: int = 0,
    strict: bool = False,
) -> list[CriticalConflictPoint]:
    obj = extract_json(raw, dict, strict)
    conflicts = obj.get("conflicts")
    if not isinstance(conflicts, list):
        raise ParseError("'conflicts' must be a list")
    known = set(known_agents) if known_agents is not None else None
    out = []
    for i, item in enumerate(conflicts):
        if not isinstance(item, dict):
            raise ParseError("conflict entries must be objects")
        agents = _str_list(item, "conflicting_agents")
        if len(set(agents)) < 2:
            raise ParseError("a conflict needs at least two distinct agents")
        summary = _str(item, "conflict_summary", nonempty=True)
        stmts = item.get("conflicting_statements")
        if not isinstance(stmts, list) or not stmts:
            raise ParseError("'conflicting_statements' must be a non-empty list")
        statements = []
        for s in stmts:
            if not isinstance(s, dict):
                raise ParseError("statements must be objects")
            statements.append((_str(s, "agent_id", nonempty=True), _str(s, "statement_content", nonempty=True)))
        if known is not None:
            for aid in list(agents) + [a for a, _ in statements]:
                if aid not in known:
                    raise ParseError(f"agent {aid!r} is not in the case")
        out.append(
            CriticalConflictPoint(
                ccp_id=f"CCP-{first_index + i}",
                conflicting_agents=tuple(agents),
                conflict_summary=summary,
                statements=tuple(statements),
                detected_at=detected_at,
            )
        )
    return out


PARSERS: dict[TemplateId, Callable[..., Any]] = {
    TemplateId.KEU_FLAGGING: parse_keu_flags,
    TemplateId.KEU_PRESENCE: parse_presence,
    TemplateId.VIEWPOINT_REVIEW: parse_viewpoint,
    TemplateId.ROLE_EFFECTIVENESS: parse_role_effectiveness,
    TemplateId.URGENCY: parse_urgency,
    TemplateId.OVERALL_QUALITY: parse_quality,
    TemplateId.CCP_DETECTION: parse_conflicts,
    TemplateId.CCP_RESOLUTION: parse_resolution,
}
