"""Audit-trail data model: cases, turns, stages, and JSONL ingestion.

One collaborative session is an :class:`InteractionCase`; every agent turn
records the verbatim prompt, the verbatim response and any structured
self-report the framework extracted. Objects are frozen after parsing and
re-serialize to the same JSON document they were read from.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, NamedTuple

__all__ = [
    "Archetype",
    "Stage",
    "StageTag",
    "AgentRef",
    "Turn",
    "InteractionCase",
    "Violation",
    "TrailError",
    "SchemaError",
    "DuplicateTurnId",
    "EmptyTurns",
    "parse_case",
    "serialize_case",
    "case_to_dict",
    "validate_case",
    "stage_slices",
    "slice_text",
    "read_cases",
    "write_cases",
    "ANSWER_KEYS",
]

# Structured-payload keys that carry an agent's answer.
ANSWER_KEYS = ("current_viewpoint", "answer")
JUSTIFICATION_VALUES = ("evidence_based", "consensus_based")


class TrailError(Exception):
    """Base class for ingestion failures."""


class SchemaError(TrailError, ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class DuplicateTurnId(TrailError):
    def __init__(self, turn_id: int):
        super().__init__(f"duplicate turn_id {turn_id}")
        self.turn_id = turn_id


class EmptyTurns(TrailError):
    def __init__(self, case_id: str = ""):
        super().__init__(f"case {case_id!r} has no turns")
        self.case_id = case_id


class Archetype(str, enum.Enum):
    DOMAIN = "Domain"
    META = "Meta"
    AUDIT = "Audit"


class Stage(str, enum.Enum):
    PROPOSE = "Propose"
    REVIEW = "Review"
    SYNTHESIZE = "Synthesize"
    CONCLUDE = "Conclude"

    @property
    def rank(self) -> int:
        return _STAGE_RANK[self]


_STAGE_RANK = {s: i for i, s in enumerate(Stage)}

_STAGE_ALIASES = {
    "propose": Stage.PROPOSE,
    "proposal": Stage.PROPOSE,
    "review": Stage.REVIEW,
    "synthesize": Stage.SYNTHESIZE,
    "synthesis": Stage.SYNTHESIZE,
    "conclude": Stage.CONCLUDE,
    "conclusion": Stage.CONCLUDE,
    "decision": Stage.CONCLUDE,
}


@functools.total_ordering
@dataclass(frozen=True)
class StageTag:
    """A (round, stage) position; ordered by round, then stage rank."""

    round: int
    stage: Stage

    def __post_init__(self):
        if self.round < 1:
            raise SchemaError("round", "must be ≥ 1")

    def __lt__(self, other: "StageTag") -> bool:
        if not isinstance(other, StageTag):
            return NotImplemented
        return (self.round, self.stage.rank) < (other.round, other.stage.rank)

    @property
    def label(self) -> str:
        return f"R{self.round}.{self.stage.value}"

    @classmethod
    def parse(cls, label: str) -> "StageTag":
        head, _, stage = label.partition(".")
        if not head.startswith("R") or not stage:
            raise ValueError(f"bad stage label {label!r}")
        return cls(int(head[1:]), Stage(stage))

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class AgentRef:
    agent_id: str
    archetype: Archetype
    role: str | None = None


@dataclass(frozen=True)
class Turn:
    turn_id: int
    stage: StageTag
    agent: AgentRef
    prompt_system: str
    prompt_user: str
    response_text: str
    structured: Mapping[str, Any] | None = None
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)
    # Source spellings kept so serialization reproduces the input.
    stage_raw: str = field(default="", compare=False, repr=False)
    archetype_raw: str = field(default="", compare=False, repr=False)
    explicit_nulls: frozenset = field(default=frozenset(), compare=False, repr=False)

    @property
    def answer(self) -> str | None:
        """Answer declared in the structured payload, if any."""
        if not self.structured:
            return None
        for key in ANSWER_KEYS:
            value = self.structured.get(key)
            if isinstance(value, str) and value.strip():
                return value
        return None


@dataclass(frozen=True)
class InteractionCase:
    case_id: str
    framework: str
    dataset: str
    question: str
    gold_answer: str
    final_answer: str
    turns: tuple[Turn, ...]
    options: Any = None
    answer_normalization: Mapping[str, str] | None = None
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)
    explicit_nulls: frozenset = field(default=frozenset(), compare=False, repr=False)

    @property
    def option_labels(self) -> list[str] | None:
        if self.options is None:
            return None
        if isinstance(self.options, Mapping):
            return [str(k) for k in self.options]
        labels = []
        for opt in self.options:
            if isinstance(opt, Mapping):
                labels.append(str(opt.get("label", "")))
            else:
                labels.append(str(opt))
        return labels

    def normalize_answer(self, label: str | None) -> str | None:
        """Canonical form of an answer label: table lookup, trimmed, casefolded."""
        if label is None:
            return None
        text = str(label).strip()
        if self.answer_normalization:
            folded = {k.strip().casefold(): v for k, v in self.answer_normalization.items()}
            text = str(folded.get(text.casefold(), text)).strip()
        return text.casefold()

    def same_answer(self, a: str | None, b: str | None) -> bool:
        if a is None or b is None:
            return False
        return self.normalize_answer(a) == self.normalize_answer(b)

    @property
    def gold(self) -> str:
        return self.normalize_answer(self.gold_answer)

    @property
    def final(self) -> str:
        return self.normalize_answer(self.final_answer)

    @property
    def agents(self) -> dict[str, AgentRef]:
        out: dict[str, AgentRef] = {}
        for t in self.turns:
            out.setdefault(t.agent.agent_id, t.agent)
        return out


class Violation(NamedTuple):
    invariant: str
    where: str
    message: str


_CASE_KEYS = (
    "case_id",
    "framework",
    "dataset",
    "question",
    "options",
    "answer_normalization",
    "gold_answer",
    "final_answer",
    "turns",
)
_TURN_KEYS = (
    "turn_id",
    "round",
    "stage",
    "agent_id",
    "archetype",
    "role",
    "prompt",
    "response",
    "structured",
)


def _req(doc: Mapping, key: str, typ: type | tuple, where: str = "") -> Any:
    name = f"{where}{key}"
    if key not in doc:
        raise SchemaError(name, "missing")
    value = doc[key]
    if typ is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(name, "must be an integer")
    elif not isinstance(value, typ):
        raise SchemaError(name, f"must be {getattr(typ, '__name__', typ)}")
    return value


def _parse_stage(raw: Any, mapping: Mapping[str, str] | None, where: str) -> Stage:
    if not isinstance(raw, str):
        raise SchemaError(f"{where}stage", "must be a string")
    if mapping and raw in mapping:
        raw = mapping[raw]
    try:
        return Stage(raw)
    except ValueError:
        pass
    stage = _STAGE_ALIASES.get(raw.strip().lower())
    if stage is None:
        raise SchemaError(f"{where}stage", f"unknown stage {raw!r}")
    return stage


def _parse_archetype(raw: Any, where: str) -> Archetype:
    if not isinstance(raw, str):
        raise SchemaError(f"{where}archetype", "must be a string")
    for a in Archetype:
        if raw.strip().lower() == a.value.lower():
            return a
    raise SchemaError(f"{where}archetype", f"unknown archetype {raw!r}")


def _parse_turn(doc: Any, index: int, stage_map: Mapping[str, str] | None) -> Turn:
    where = f"turns[{index}]."
    if not isinstance(doc, Mapping):
        raise SchemaError(f"turns[{index}]", "must be an object")
    turn_id = _req(doc, "turn_id", int, where)
    rnd = _req(doc, "round", int, where)
    if rnd < 1:
        raise SchemaError("round", "must be ≥ 1")
    stage_raw = _req(doc, "stage", str, where)
    stage = _parse_stage(stage_raw, stage_map, where)
    agent_id = _req(doc, "agent_id", str, where)
    archetype_raw = _req(doc, "archetype", str, where)
    archetype = _parse_archetype(archetype_raw, where)
    prompt = _req(doc, "prompt", Mapping, where)
    system = _req(prompt, "system", str, f"{where}prompt.")
    user = _req(prompt, "user", str, f"{where}prompt.")
    response = _req(doc, "response", str, where)
    nulls = set()
    structured = doc.get("structured")
    if "structured" in doc and structured is None:
        nulls.add("structured")
    if structured is not None and not isinstance(structured, Mapping):
        raise SchemaError(f"{where}structured", "must be an object")
    role = doc.get("role")
    if "role" in doc and role is None:
        nulls.add("role")
    if role is not None and not isinstance(role, str):
        raise SchemaError(f"{where}role", "must be a string")
    extra = {k: v for k, v in doc.items() if k not in _TURN_KEYS}
    prompt_extra = {k: v for k, v in prompt.items() if k not in ("system", "user")}
    if prompt_extra:
        extra["\0prompt"] = prompt_extra
    return Turn(
        turn_id=turn_id,
        stage=StageTag(rnd, stage),
        agent=AgentRef(agent_id, archetype, role),
        prompt_system=system,
        prompt_user=user,
        response_text=response,
        structured=structured,
        extra=extra,
        stage_raw=stage_raw,
        archetype_raw=archetype_raw,
        explicit_nulls=frozenset(nulls),
    )


def parse_case(
    raw: str | bytes | Mapping[str, Any],
    stage_map: Mapping[str, Mapping[str, str]] | None = None,
) -> InteractionCase:
    """Parse one case from a JSON document (or an already-decoded mapping).

    ``stage_map`` maps a framework name to ``{source stage label: canonical
    stage}`` for frameworks whose phase names differ from the canonical four.
    Unknown keys are kept and written back by :func:`serialize_case`.
    """
    if isinstance(raw, (str, bytes)):
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError("<document>", f"invalid JSON: {exc.msg}") from None
    else:
        doc = raw
    if not isinstance(doc, Mapping):
        raise SchemaError("<document>", "must be a JSON object")

    case_id = _req(doc, "case_id", str)
    framework = _req(doc, "framework", str)
    dataset = _req(doc, "dataset", str)
    question = _req(doc, "question", str)
    gold = _req(doc, "gold_answer", str)
    final = _req(doc, "final_answer", str)
    turns_raw = _req(doc, "turns", list)
    if not turns_raw:
        raise EmptyTurns(case_id)

    nulls = set()
    options = doc.get("options")
    if "options" in doc and options is None:
        nulls.add("options")
    if options is not None and not isinstance(options, (list, Mapping)):
        raise SchemaError("options", "must be a list or object")
    norm = doc.get("answer_normalization")
    if "answer_normalization" in doc and norm is None:
        nulls.add("answer_normalization")
    if norm is not None and (
        not isinstance(norm, Mapping) or not all(isinstance(v, str) for v in norm.values())
    ):
        raise SchemaError("answer_normalization", "must map strings to labels")

    fw_map = (stage_map or {}).get(framework)
    turns = [_parse_turn(t, i, fw_map) for i, t in enumerate(turns_raw)]
    seen: set[int] = set()
    for t in turns:
        if t.turn_id in seen:
            raise DuplicateTurnId(t.turn_id)
        seen.add(t.turn_id)

    return InteractionCase(
        case_id=case_id,
        framework=framework,
        dataset=dataset,
        question=question,
        gold_answer=gold,
        final_answer=final,
        turns=tuple(turns),
        options=options,
        answer_normalization=norm,
        extra={k: v for k, v in doc.items() if k not in _CASE_KEYS},
        explicit_nulls=frozenset(nulls),
    )


def _turn_to_dict(t: Turn) -> dict[str, Any]:
    out: dict[str, Any] = {
        "turn_id": t.turn_id,
        "round": t.stage.round,
        "stage": t.stage_raw or t.stage.stage.value,
        "agent_id": t.agent.agent_id,
        "archetype": t.archetype_raw or t.agent.archetype.value,
    }
    if t.agent.role is not None or "role" in t.explicit_nulls:
        out["role"] = t.agent.role
    prompt = {"system": t.prompt_system, "user": t.prompt_user}
    extra = dict(t.extra)
    prompt.update(extra.pop("\0prompt", {}))
    out["prompt"] = prompt
    out["response"] = t.response_text
    if t.structured is not None or "structured" in t.explicit_nulls:
        out["structured"] = t.structured
    out.update(extra)
    return out


def case_to_dict(case: InteractionCase) -> dict[str, Any]:
    out: dict[str, Any] = {
        "case_id": case.case_id,
        "framework": case.framework,
        "dataset": case.dataset,
        "question": case.question,
    }
    if case.options is not None or "options" in case.explicit_nulls:
        out["options"] = case.options
    if case.answer_normalization is not None or "answer_normalization" in case.explicit_nulls:
        out["answer_normalization"] = case.answer_normalization
    out["gold_answer"] = case.gold_answer
    out["final_answer"] = case.final_answer
    out["turns"] = [_turn_to_dict(t) for t in case.turns]
    out.update(case.extra)
    return out


def serialize_case(case: InteractionCase) -> str:
    """One JSONL line (no trailing newline)."""
    return json.dumps(case_to_dict(case), ensure_ascii=False)


def validate_case(case: InteractionCase) -> list[Violation]:
    """Check the type invariants; returns an empty list for a clean case."""
    out: list[Violation] = []
    turns = case.turns

    for prev, cur in zip(turns, turns[1:]):
        if cur.turn_id <= prev.turn_id:
            out.append(
                Violation("turn-order", f"turn {cur.turn_id}", f"turn_id not increasing after {prev.turn_id}")
            )
        if cur.stage < prev.stage:
            out.append(
                Violation(
                    "stage-order",
                    f"turn {cur.turn_id}",
                    f"{cur.stage.label} follows {prev.stage.label}",
                )
            )

    if not any(t.stage.stage is Stage.PROPOSE for t in turns):
        out.append(Violation("propose-present", "turns", "no Propose turn"))

    concludes = [t for t in turns if t.stage.stage is Stage.CONCLUDE]
    if not concludes:
        out.append(Violation("conclude-final", "turns", "no Conclude turn"))
    else:
        last = turns[-1]
        if last.stage.stage is not Stage.CONCLUDE:
            out.append(
                Violation("conclude-final", f"turn {last.turn_id}", f"last turn is {last.stage.label}, not Conclude")
            )
        elif max(t.stage for t in turns) != last.stage:
            out.append(Violation("conclude-final", f"turn {last.turn_id}", "final Conclude is not the last stage"))

    labels = case.option_labels
    if labels is not None:
        canon = {case.normalize_answer(x) for x in labels}
        if case.final not in canon:
            out.append(Violation("final-in-options", "final_answer", f"{case.final_answer!r} not among options"))

    archetypes: dict[str, Archetype] = {}
    for t in turns:
        aid = t.agent.agent_id
        if aid in archetypes and archetypes[aid] is not t.agent.archetype:
            out.append(
                Violation("agent-consistency", f"turn {t.turn_id}", f"agent {aid} changes archetype")
            )
        archetypes.setdefault(aid, t.agent.archetype)

        if t.agent.archetype is Archetype.AUDIT and t.answer is not None:
            out.append(Violation("audit-no-vote", f"turn {t.turn_id}", f"audit agent {aid} posts an answer"))
        if t.structured and "justification_type" in t.structured:
            jt = t.structured["justification_type"]
            if jt not in JUSTIFICATION_VALUES:
                out.append(
                    Violation("justification-type", f"turn {t.turn_id}", f"unknown justification_type {jt!r}")
                )
    return out


def stage_slices(case: InteractionCase) -> dict[StageTag, list[Turn]]:
    """Group turns by stage tag, ordered by (round, stage rank).

    Stages with no turns have no key.
    """
    groups: dict[StageTag, list[Turn]] = {}
    for t in case.turns:
        groups.setdefault(t.stage, []).append(t)
    return {tag: groups[tag] for tag in sorted(groups)}


def slice_text(turns: Iterable[Turn]) -> str:
    """Concatenated responses of a stage slice, one block per turn."""
    return "\n\n".join(f"[{t.agent.agent_id}] {t.response_text}" for t in turns)


def read_cases(
    path: str | Path, stage_map: Mapping[str, Mapping[str, str]] | None = None
) -> Iterator[InteractionCase]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield parse_case(line, stage_map)


def write_cases(path: str | Path, cases: Iterable[InteractionCase]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(serialize_case(case) + "\n")
