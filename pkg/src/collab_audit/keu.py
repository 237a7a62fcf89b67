"""Key evidential unit (KEU) propagation audit.

Units are gathered from the initial proposals of domain agents, the judge
marks the key subset, and each later stage slice is checked for whether the
key units are still present. Retention at a stage is the present share of key
units; the missing rate is the share absent at the final conclusion.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from .judge import JudgeGateway, TemplateId
from .trail import Archetype, InteractionCase, Stage, StageTag, Turn, slice_text, stage_slices

__all__ = [
    "EvidentialUnit",
    "PresenceMode",
    "KeuPresenceMatrix",
    "KeuAudit",
    "NoProposeTurns",
    "NoUnits",
    "EmptyKeuSet",
    "NoConcludeColumn",
    "LEXICAL_THRESHOLD",
    "extract_sentences",
    "content_tokens",
    "lexical_present",
    "collect_units",
    "keu_flagging_context",
    "keu_presence_context",
    "presence_columns",
    "flag_keus",
    "presence",
    "retention_curve",
    "missing_rate",
    "audit_keu",
]

LEXICAL_THRESHOLD = 0.6

_STOPWORDS = frozenset(
    """a an and are as at be been but by for from had has have he her his i if in into is it its
    of on or our she so that the their them then there these they this to was we were which while
    with you your not no than too very can will would should could may might also""".split()
)
_TOKEN = re.compile(r"[a-z0-9]+")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_WORD = re.compile(r"[A-Za-z][A-Za-z'-]*|\d")
_VERBS = frozenset(
    """is are was were be been has have had shows show showed shown reveals revealed reveal
    demonstrates demonstrated indicates indicated suggests suggested presents presented reports
    reported denies denied complains appears appear remains remain measured measures noted found
    includes included contains contained lacks lacked exhibits exhibited confirms confirmed
    supports supported excludes excluded rules ruled points pointed requires required""".split()
)


class NoProposeTurns(ValueError):
    pass


class NoUnits(ValueError):
    pass


class EmptyKeuSet(ValueError):
    pass


class NoConcludeColumn(ValueError):
    pass


class PresenceMode(str, enum.Enum):
    JUDGE_CHECKED = "JudgeChecked"
    LEXICAL_FALLBACK = "LexicalFallback"


@dataclass(frozen=True)
class EvidentialUnit:
    keu_id: str
    text: str
    source_agent: str
    origin_stage: StageTag

    def to_dict(self) -> dict[str, Any]:
        return {
            "keu_id": self.keu_id,
            "text": self.text,
            "source_agent": self.source_agent,
            "origin_stage": self.origin_stage.label,
        }


@dataclass(frozen=True)
class KeuPresenceMatrix:
    keu_ids: tuple[str, ...]
    columns: tuple[StageTag, ...]
    cells: tuple[tuple[bool, ...], ...]
    presence_mode: PresenceMode
    origin: StageTag

    def row(self, keu_id: str) -> tuple[bool, ...]:
        return self.cells[self.keu_ids.index(keu_id)]

    def present_count(self, column: StageTag) -> int:
        j = self.columns.index(column)
        return sum(row[j] for row in self.cells)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.presence_mode.value,
            "origin": self.origin.label,
            "columns": [c.label for c in self.columns],
            "rows": {k: list(r) for k, r in zip(self.keu_ids, self.cells)},
        }


def extract_sentences(text: str) -> list[str]:
    """Sentence-level units from free text.

    Sentences that carry neither a content verb nor a number or named-entity
    token (a capitalised word after the first, or an acronym) are dropped.
    """
    out = []
    for sent in _SENTENCE_END.split(text.strip()):
        sent = sent.strip()
        if not sent:
            continue
        words = _WORD.findall(sent)
        has_number = any(ch.isdigit() for ch in sent)
        has_entity = any(w[0].isupper() for w in words[1:]) or any(
            len(w) > 1 and w.isupper() for w in words
        )
        has_verb = any(w.lower() in _VERBS or w.lower().endswith("ed") for w in words)
        if has_number or has_entity or has_verb:
            out.append(sent)
    return out


def content_tokens(text: str) -> list[str]:
    return [t for t in _TOKEN.findall(text.lower()) if t not in _STOPWORDS]


def lexical_present(unit_text: str, text: str, threshold: float = LEXICAL_THRESHOLD) -> bool:
    """True when some window of ``text`` as long as the unit reaches the
    Jaccard threshold against the unit's content tokens."""
    unit = content_tokens(unit_text)
    if not unit:
        return False
    uset = set(unit)
    seq = content_tokens(text)
    w = len(unit)
    starts = set()
    for i, tok in enumerate(seq):
        if tok in uset:
            starts.update(range(max(0, i - w + 1), i + 1))
    for s in starts:
        window = set(seq[s : s + w])
        if len(uset & window) / len(uset | window) >= threshold:
            return True
    return False


def _initial_propose(case: InteractionCase) -> tuple[StageTag, list[Turn]]:
    for tag, turns in stage_slices(case).items():
        if tag.stage is Stage.PROPOSE:
            return tag, turns
    raise NoProposeTurns(case.case_id)


def collect_units(case: InteractionCase) -> list[EvidentialUnit]:
    """Units from domain agents' initial proposals, numbered in turn order.

    A structured ``evidential_units`` list (strings or ``{"text": ...}``
    objects) is used verbatim; otherwise the response is split into sentences.
    """
    tag, turns = _initial_propose(case)
    texts: list[tuple[str, str]] = []
    for t in turns:
        if t.agent.archetype is not Archetype.DOMAIN:
            continue
        listed = (t.structured or {}).get("evidential_units")
        if isinstance(listed, list):
            for item in listed:
                text = item.get("text") if isinstance(item, dict) else item
                if isinstance(text, str) and text.strip():
                    texts.append((t.agent.agent_id, text))
        else:
            texts.extend((t.agent.agent_id, s) for s in extract_sentences(t.response_text))
    return [EvidentialUnit(f"KEU-{i}", text, agent, tag) for i, (agent, text) in enumerate(texts)]


def keu_flagging_context(case: InteractionCase, units: Sequence[EvidentialUnit]) -> dict[str, Any]:
    _, turns = _initial_propose(case)
    return {
        "question": case.question,
        "analyses": [
            {"agent_id": t.agent.agent_id, "role": t.agent.role, "analysis": t.response_text}
            for t in turns
            if t.agent.archetype is Archetype.DOMAIN
        ],
        "evidential_units": [{"keu_id": u.keu_id, "text": u.text, "source_agent": u.source_agent} for u in units],
    }


def keu_presence_context(unit: EvidentialUnit, column: StageTag, discussion_text: str) -> dict[str, Any]:
    return {
        "keu_id": unit.keu_id,
        "evidential_unit": unit.text,
        "stage": column.label,
        "discussion_text": discussion_text,
    }


def presence_columns(case: InteractionCase, scope: str = "all") -> list[tuple[StageTag, str]]:
    """(stage, slice text) for every populated slice after the initial
    proposal. ``scope="meta"`` reads only meta-agent turns."""
    if scope not in ("all", "meta"):
        raise ValueError(f"unknown presence scope {scope!r}")
    origin, _ = _initial_propose(case)
    out = []
    for tag, turns in stage_slices(case).items():
        if tag <= origin:
            continue
        if scope == "meta":
            turns = [t for t in turns if t.agent.archetype is Archetype.META]
        turns = [t for t in turns if t.agent.archetype is not Archetype.AUDIT]
        if turns:
            out.append((tag, slice_text(turns)))
    return out


def flag_keus(case: InteractionCase, units: Sequence[EvidentialUnit], gateway: JudgeGateway) -> frozenset[str]:
    if not units:
        raise NoUnits(case.case_id)
    resp = gateway.call(
        TemplateId.KEU_FLAGGING,
        keu_flagging_context(case, units),
        unit_ids=[u.keu_id for u in units],
    )
    return frozenset(k for k, is_key in resp.parsed.items() if is_key)


def presence(
    case: InteractionCase,
    keus: Sequence[EvidentialUnit],
    gateway: JudgeGateway | None = None,
    mode: PresenceMode | str = PresenceMode.JUDGE_CHECKED,
    scope: str = "all",
    threshold: float = LEXICAL_THRESHOLD,
) -> KeuPresenceMatrix:
    mode = PresenceMode(mode)
    if not keus:
        raise EmptyKeuSet(case.case_id)
    origin, _ = _initial_propose(case)
    columns = presence_columns(case, scope)
    if mode is PresenceMode.JUDGE_CHECKED:
        if gateway is None:
            raise ValueError("judge-checked presence needs a gateway")
        requests = [
            (TemplateId.KEU_PRESENCE, keu_presence_context(u, tag, text)) for u in keus for tag, text in columns
        ]
        verdicts = [r.parsed for r in gateway.call_many(requests)]
    else:
        verdicts = [lexical_present(u.text, text, threshold) for u in keus for _, text in columns]
    width = len(columns)
    cells = tuple(tuple(verdicts[i * width : (i + 1) * width]) for i in range(len(keus)))
    return KeuPresenceMatrix(
        keu_ids=tuple(u.keu_id for u in keus),
        columns=tuple(tag for tag, _ in columns),
        cells=cells,
        presence_mode=mode,
        origin=origin,
    )


def retention_curve(matrix: KeuPresenceMatrix) -> list[tuple[StageTag, float]]:
    n = len(matrix.keu_ids)
    if n == 0:
        raise EmptyKeuSet("no flagged KEUs")
    points = [(matrix.origin, 1.0)]
    for col in matrix.columns:
        points.append((col, matrix.present_count(col) / n))
    return points


def missing_rate(matrix: KeuPresenceMatrix) -> float:
    n = len(matrix.keu_ids)
    if n == 0:
        raise EmptyKeuSet("no flagged KEUs")
    concludes = [c for c in matrix.columns if c.stage is Stage.CONCLUDE]
    if not concludes:
        raise NoConcludeColumn("no Conclude column")
    return (n - matrix.present_count(max(concludes))) / n


@dataclass
class KeuAudit:
    units: list[EvidentialUnit]
    flags: list[str]
    matrix: KeuPresenceMatrix | None = None
    curve: list[tuple[StageTag, float]] | None = None
    missing_rate: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "units": [u.to_dict() for u in self.units],
            "flags": list(self.flags),
            "presence": self.matrix.to_dict() if self.matrix else None,
            "retention": [[t.label, r] for t, r in self.curve] if self.curve is not None else None,
            "missing_rate": self.missing_rate,
            "notes": list(self.notes),
        }


def audit_keu(
    case: InteractionCase,
    gateway: JudgeGateway | None,
    mode: PresenceMode | str = PresenceMode.JUDGE_CHECKED,
    scope: str = "all",
) -> KeuAudit:
    """Full KEU audit of one case. An empty flagged set leaves retention and
    missing rate as None."""
    units = collect_units(case)
    if not units:
        return KeuAudit(units, [], notes=["no evidential units"])
    flagged = flag_keus(case, units, gateway)
    keus = [u for u in units if u.keu_id in flagged]
    audit = KeuAudit(units, [u.keu_id for u in keus])
    if not keus:
        audit.notes.append("no key units flagged")
        return audit
    audit.matrix = presence(case, keus, gateway, mode, scope)
    audit.curve = retention_curve(audit.matrix)
    try:
        audit.missing_rate = missing_rate(audit.matrix)
    except NoConcludeColumn:
        audit.notes.append("no Conclude column")
    return audit
