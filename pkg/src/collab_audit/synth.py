"""Synthetic interaction cases with planted ground truth.

A :class:`ScenarioSpec` declares what should happen in a case: which
evidential units are key and when they disappear, each agent's answers,
which pairs of agents contradict each other and when the contradiction is
resolved, and the labels the judge will hand out. :func:`generate_case`
writes the plants into literal text, builds a scripted judge tape that
returns exactly the planted labels for the contexts the audits will send,
and returns a ground-truth record to compare audit output against.

Plants are realised lexically: an evidential unit is present in a stage
slice iff its sentence appears there verbatim, and its tokens are unique
pseudo-words, so the lexical fallback and the scripted judge agree.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .conflict import ccp_detection_context, detection_arguments, resolution_context
from .judge import CriticalConflictPoint, ScriptedJudgeTape, TemplateId
from .keu import collect_units, keu_flagging_context, keu_presence_context, presence_columns
from .labels import QualityLevel, Relevance, Urgency
from .quality import agent_arguments, overall_quality_context, role_context, urgency_context
from .trail import Archetype, InteractionCase, Stage, StageTag, parse_case, slice_text, stage_slices

__all__ = [
    "InvalidSpec",
    "InfeasibleTarget",
    "KeuPlant",
    "ConflictPlant",
    "ScenarioSpec",
    "GeneratedCase",
    "CalibrationTarget",
    "Corpus",
    "feasible_count",
    "generate_case",
    "generate_corpus",
    "random_spec",
    "closure_mismatches",
    "CALIBRATION_METRICS",
]

DOMAIN_ROLES = ("Cardiologist", "Radiologist", "Neurologist", "Pathologist", "Oncologist", "Pediatrician")
META_ROLES = ("Synthesizer", "Decision Maker", "Moderator")
DOMAIN_STAGES = (Stage.PROPOSE, Stage.REVIEW)
META_STAGES = (Stage.SYNTHESIZE, Stage.CONCLUDE)
JUSTIFICATIONS = ("evidence_based", "consensus_based", "unreported")

_INTROS = (
    "As the {role}, I reviewed the presentation.",
    "Speaking as the {role}, here is my assessment.",
    "From the {role} perspective, my reading follows.",
)
_ONSETS = "bdfgklmnprstvz"
_NUCLEI = "aeiou"


class InvalidSpec(ValueError):
    pass


class InfeasibleTarget(ValueError):
    pass


@dataclass(frozen=True)
class KeuPlant:
    source: str
    key: bool = True
    drop_at: str | None = None
    present: tuple[str, ...] | None = None

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "KeuPlant":
        present = doc.get("present")
        return cls(doc["source"], bool(doc.get("key", True)), doc.get("drop_at"), tuple(present) if present is not None else None)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"source": self.source, "key": self.key, "drop_at": self.drop_at}
        if self.present is not None:
            out["present"] = list(self.present)
        return out


@dataclass(frozen=True)
class ConflictPlant:
    agents: tuple[str, str]
    resolved_at: str | None = None
    detect_round: int = 1
    raw: Mapping[str, bool] | None = None

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ConflictPlant":
        return cls(tuple(doc["agents"]), doc.get("resolved_at"), int(doc.get("detect_round", 1)), doc.get("raw"))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "agents": list(self.agents),
            "resolved_at": self.resolved_at,
            "detect_round": self.detect_round,
        }
        if self.raw is not None:
            out["raw"] = dict(self.raw)
        return out


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative plan for one synthetic case.

    ``opinions`` maps a domain agent to its answers at each domain stage
    (Propose and Review of every round, in order); a shorter list repeats its
    last answer and a bare string is held throughout. Unlisted agents answer
    the final answer. ``justifications`` maps agent -> stage label -> one of
    ``evidence_based``, ``consensus_based``, ``unreported`` for stages where
    the answer changes (default evidence_based). ``labels`` maps stage label
    -> agent -> {insight, relevance, urgency}; ``meta_urgency`` maps meta
    stage label -> meta agent -> urgency. ``bypass`` plants the vote-bypass
    flag per domain stage.
    """

    seed: int = 0
    case_id: str = "synthetic-0"
    framework: str = "SYN"
    dataset: str = "SYN"
    domain_agents: int = 3
    meta_agents: int = 1
    rounds: int = 1
    options: tuple[str, ...] = ("A", "B", "C", "D")
    gold: str = "A"
    final: str | None = None
    opinions: Mapping[str, Any] = field(default_factory=dict)
    justifications: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    keus: tuple[KeuPlant, ...] = ()
    conflicts: tuple[ConflictPlant, ...] = ()
    labels: Mapping[str, Mapping[str, Mapping[str, str]]] = field(default_factory=dict)
    meta_urgency: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    bypass: Mapping[str, bool] = field(default_factory=dict)

    @property
    def final_answer(self) -> str:
        return self.final if self.final is not None else self.gold

    @property
    def domain_ids(self) -> list[str]:
        return [f"D{i}" for i in range(self.domain_agents)]

    @property
    def meta_ids(self) -> list[str]:
        return [f"M{i}" for i in range(self.meta_agents)]

    def domain_stages(self) -> list[StageTag]:
        return [StageTag(r, s) for r in range(1, self.rounds + 1) for s in DOMAIN_STAGES]

    def meta_stages(self) -> list[StageTag]:
        return [StageTag(r, s) for r in range(1, self.rounds + 1) for s in META_STAGES]

    def all_stages(self) -> list[StageTag]:
        return sorted(self.domain_stages() + self.meta_stages())

    def answers(self, agent: str) -> list[str]:
        plan = self.opinions.get(agent, self.final_answer)
        if isinstance(plan, str):
            plan = [plan]
        plan = list(plan)
        n = len(self.domain_stages())
        return (plan + [plan[-1]] * n)[:n]

    def votes_at(self, stage: StageTag) -> dict[str, str]:
        i = self.domain_stages().index(stage)
        return {a: self.answers(a)[i] for a in self.domain_ids}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {', '.join(sorted(unknown))}")
        kw = dict(doc)
        if "options" in kw:
            kw["options"] = tuple(kw["options"])
        kw["keus"] = tuple(KeuPlant.from_dict(k) for k in doc.get("keus", ()))
        kw["conflicts"] = tuple(ConflictPlant.from_dict(c) for c in doc.get("conflicts", ()))
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "case_id": self.case_id,
            "framework": self.framework,
            "dataset": self.dataset,
            "domain_agents": self.domain_agents,
            "meta_agents": self.meta_agents,
            "rounds": self.rounds,
            "options": list(self.options),
            "gold": self.gold,
            "final": self.final,
            "opinions": {k: v if isinstance(v, str) else list(v) for k, v in self.opinions.items()},
            "justifications": {k: dict(v) for k, v in self.justifications.items()},
            "keus": [k.to_dict() for k in self.keus],
            "conflicts": [c.to_dict() for c in self.conflicts],
            "labels": {s: {a: dict(v) for a, v in m.items()} for s, m in self.labels.items()},
            "meta_urgency": {s: dict(m) for s, m in self.meta_urgency.items()},
            "bypass": dict(self.bypass),
        }


# ---------------------------------------------------------------- validation


def _tag(label: str, allowed: Iterable[StageTag], what: str) -> StageTag:
    try:
        tag = StageTag.parse(label)
    except (ValueError, KeyError):
        raise InvalidSpec(f"{what}: bad stage label {label!r}") from None
    if tag not in set(allowed):
        raise InvalidSpec(f"{what}: stage {label} not allowed here")
    return tag


def _bypass_dissenter(votes: Mapping[str, str], final: str) -> str | None:
    """Agent whose High-quality argument makes the stage a bypass, or None
    when the votes cannot produce one."""
    counts = Counter(votes.values())
    top = max(counts.values())
    leaders = [a for a, c in counts.items() if c == top]
    if len(leaders) != 1 or leaders[0] != final:
        return None
    for agent, answer in votes.items():
        if answer != final:
            return agent
    return None


def _validate(spec: ScenarioSpec) -> None:
    if spec.domain_agents < 2:
        raise InvalidSpec("need at least two domain agents")
    if spec.meta_agents < 1:
        raise InvalidSpec("need at least one meta agent")
    if spec.rounds < 1:
        raise InvalidSpec("rounds must be >= 1")
    if len(set(spec.options)) != len(spec.options) or len(spec.options) < 2:
        raise InvalidSpec("options must be at least two distinct labels")
    for name, value in (("gold", spec.gold), ("final", spec.final_answer)):
        if value not in spec.options:
            raise InvalidSpec(f"{name} {value!r} not among options")
    domain, meta = set(spec.domain_ids), set(spec.meta_ids)
    n_stages = len(spec.domain_stages())
    for agent, plan in spec.opinions.items():
        if agent not in domain:
            raise InvalidSpec(f"opinions: unknown domain agent {agent}")
        plan = [plan] if isinstance(plan, str) else list(plan)
        if not plan or len(plan) > n_stages:
            raise InvalidSpec(f"opinions: {agent} needs 1..{n_stages} answers")
        for ans in plan:
            if ans not in spec.options:
                raise InvalidSpec(f"opinions: {agent} answer {ans!r} not among options")
    for agent, by_stage in spec.justifications.items():
        if agent not in domain:
            raise InvalidSpec(f"justifications: unknown domain agent {agent}")
        for label, jt in by_stage.items():
            _tag(label, spec.domain_stages(), "justifications")
            if jt not in JUSTIFICATIONS:
                raise InvalidSpec(f"justifications: unknown value {jt!r}")
    columns = [t for t in spec.all_stages() if t > StageTag(1, Stage.PROPOSE)]
    for k in spec.keus:
        if k.source not in domain:
            raise InvalidSpec(f"keus: unknown source agent {k.source}")
        if k.drop_at is not None:
            _tag(k.drop_at, columns, "keus.drop_at")
        for label in k.present or ():
            _tag(label, columns, "keus.present")
    for c in spec.conflicts:
        if len(c.agents) != 2 or c.agents[0] == c.agents[1] or not set(c.agents) <= domain:
            raise InvalidSpec(f"conflicts: need two distinct domain agents, got {c.agents}")
        if not 1 <= c.detect_round <= spec.rounds:
            raise InvalidSpec(f"conflicts: detect_round {c.detect_round} out of range")
        after = [t for t in spec.all_stages() if t > StageTag(c.detect_round, Stage.REVIEW)]
        if not after:
            raise InvalidSpec("conflicts: no stage after detection")
        if c.resolved_at is not None:
            _tag(c.resolved_at, after, "conflicts.resolved_at")
        for label in (c.raw or {}):
            _tag(label, after, "conflicts.raw")
    for label, by_agent in spec.labels.items():
        _tag(label, spec.domain_stages(), "labels")
        for agent, lab in by_agent.items():
            if agent not in domain:
                raise InvalidSpec(f"labels: unknown domain agent {agent}")
            try:
                QualityLevel(lab.get("insight", "Low"))
                Relevance(lab.get("relevance", "Relevant"))
                Urgency(lab.get("urgency", "Standard"))
            except ValueError as exc:
                raise InvalidSpec(f"labels: {exc}") from None
    for label, by_agent in spec.meta_urgency.items():
        _tag(label, spec.meta_stages(), "meta_urgency")
        for agent, level in by_agent.items():
            if agent not in meta:
                raise InvalidSpec(f"meta_urgency: unknown meta agent {agent}")
            try:
                Urgency(level)
            except ValueError:
                raise InvalidSpec(f"meta_urgency: unknown level {level!r}") from None
    for label, flag in spec.bypass.items():
        tag = _tag(label, spec.domain_stages(), "bypass")
        if flag and _bypass_dissenter(spec.votes_at(tag), spec.final_answer) is None:
            raise InvalidSpec(f"bypass at {label}: votes have no strict plurality on the final answer with a dissent")


# ---------------------------------------------------------------- realisation


class _Words:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def __call__(self) -> str:
        while True:
            w = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_NUCLEI) for _ in range(3)) + self.rng.choice("xq")
            if w not in self.used:
                self.used.add(w)
                return w


@dataclass
class GeneratedCase:
    case: InteractionCase
    tape: ScriptedJudgeTape
    truth: dict[str, Any]
    spec: ScenarioSpec


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def _pattern(initial: Mapping[str, str], gold: str, final: str) -> tuple[str, str | None]:
    counts = Counter(initial.values())
    if len(counts) == 1:
        return "NoDynamics", next(iter(counts))
    top = max(counts.values())
    leaders = [a for a, c in counts.items() if c == top]
    if len(leaders) > 1:
        return "Unclassifiable", None
    majority = leaders[0]
    if majority == gold:
        return ("M3" if final == gold else "M4"), majority
    if gold not in counts:
        return "Unclassifiable", majority
    return ("M1" if final == gold else "M2"), majority


def generate_case(spec: ScenarioSpec) -> GeneratedCase:
    _validate(spec)
    rng = random.Random(f"{spec.seed}:{spec.case_id}")
    word = _Words(rng)
    final = spec.final_answer
    d_stages, m_stages = spec.domain_stages(), spec.meta_stages()
    stages = spec.all_stages()
    origin = StageTag(1, Stage.PROPOSE)
    columns = [t for t in stages if t > origin]
    roles = {a: DOMAIN_ROLES[i % len(DOMAIN_ROLES)] for i, a in enumerate(spec.domain_ids)}
    roles.update({a: META_ROLES[i % len(META_ROLES)] for i, a in enumerate(spec.meta_ids)})

    # lexical material
    keu_text = [f"Finding {word()} {word()} {word()} {word()} was noted." for _ in spec.keus]
    features = [word() for _ in spec.conflicts]

    def keu_present(j: int, col: StageTag) -> bool:
        plant = spec.keus[j]
        if plant.present is not None:
            return col.label in plant.present
        return plant.drop_at is None or col < StageTag.parse(plant.drop_at)

    resolved_label: dict[int, str] = {}
    for j, c in enumerate(spec.conflicts):
        raw = c.raw if c.raw is not None else ({c.resolved_at: True} if c.resolved_at else {})
        for label in sorted((lab for lab, v in raw.items() if v), key=StageTag.parse)[:1]:
            resolved_label[j] = label

    # turns
    blocks: dict[tuple[StageTag, str], list[str]] = {}
    structured: dict[tuple[StageTag, str], dict[str, Any]] = {}
    order: list[tuple[StageTag, str]] = []
    for tag in stages:
        agents = spec.domain_ids if tag.stage in DOMAIN_STAGES else spec.meta_ids
        for a in agents:
            order.append((tag, a))
            blocks[(tag, a)] = [rng.choice(_INTROS).format(role=roles[a])]

    for a in spec.domain_ids:
        answers = spec.answers(a)
        prev = None
        for i, tag in enumerate(d_stages):
            ans = answers[i]
            payload: dict[str, Any] = {"current_viewpoint": ans}
            changed = prev is not None and ans != prev
            payload["viewpoint_changed"] = changed
            if changed:
                jt = spec.justifications.get(a, {}).get(tag.label, "evidence_based")
                if jt != "unreported":
                    payload["justification_type"] = jt
            if tag == origin:
                payload["evidential_units"] = [keu_text[j] for j, k in enumerate(spec.keus) if k.source == a]
                blocks[(tag, a)].extend(payload["evidential_units"])
            structured[(tag, a)] = payload
            prev = ans

    for j, c in enumerate(spec.conflicts):
        tag = StageTag(c.detect_round, Stage.PROPOSE)
        blocks[(tag, c.agents[0])].append(f"Feature {features[j]} is present in this patient.")
        blocks[(tag, c.agents[1])].append(f"Feature {features[j]} is absent in this patient.")
        if j in resolved_label:
            rtag = StageTag.parse(resolved_label[j])
            first = next(key for key in order if key[0] == rtag)
            blocks[first].append(f"The disagreement about feature {features[j]} was weighed and settled.")

    for col in columns:
        first = next(key for key in order if key[0] == col)
        for j in range(len(spec.keus)):
            if keu_present(j, col):
                blocks[first].append(keu_text[j])

    for (tag, a), parts in blocks.items():
        if tag.stage in DOMAIN_STAGES:
            parts.append(f"My current answer is {structured[(tag, a)]['current_viewpoint']}.")
        elif tag.stage is Stage.SYNTHESIZE:
            parts.append("Summary of the team discussion so far.")
        else:
            parts.append(f"Decision recorded: {final}.")
            structured[(tag, a)] = {"answer": final}

    question = f"Synthetic case {spec.case_id}: which option is correct?"
    turns = []
    for i, (tag, a) in enumerate(order, start=1):
        doc: dict[str, Any] = {
            "turn_id": i,
            "round": tag.round,
            "stage": tag.stage.value,
            "agent_id": a,
            "archetype": "Domain" if a.startswith("D") else "Meta",
            "role": roles[a],
            "prompt": {"system": f"You are the {roles[a]}.", "user": question},
            "response": " ".join(blocks[(tag, a)]),
        }
        if (tag, a) in structured:
            doc["structured"] = structured[(tag, a)]
        turns.append(doc)
    case = parse_case(
        {
            "case_id": spec.case_id,
            "framework": spec.framework,
            "dataset": spec.dataset,
            "question": question,
            "options": list(spec.options),
            "gold_answer": spec.gold,
            "final_answer": final,
            "turns": turns,
        }
    )

    tape = ScriptedJudgeTape()
    truth: dict[str, Any] = {"case_id": spec.case_id, "framework": spec.framework, "dataset": spec.dataset}
    truth["accuracy"] = 1.0 if case.final == case.gold else 0.0

    # KEU plants
    units = collect_units(case)
    id_of = {}
    pos = 0
    for a in spec.domain_ids:
        for j, k in enumerate(spec.keus):
            if k.source == a:
                id_of[j] = units[pos].keu_id
                pos += 1
    if units:
        tape.add(
            TemplateId.KEU_FLAGGING,
            keu_flagging_context(case, units),
            {id_of[j]: k.key for j, k in enumerate(spec.keus)},
        )
        key_idx = sorted((j for j, k in enumerate(spec.keus) if k.key), key=lambda j: int(id_of[j].split("-")[1]))
        col_text = presence_columns(case)
        presence_rows = {}
        for j in key_idx:
            unit = _unit(units, id_of[j])
            row = []
            for tag, text in col_text:
                present = keu_present(j, tag)
                tape.add(TemplateId.KEU_PRESENCE, keu_presence_context(unit, tag, text), {"present": present})
                row.append(present)
            presence_rows[id_of[j]] = row
        n = len(key_idx)
        keu_truth: dict[str, Any] = {
            "units": len(units),
            "flags": [id_of[j] for j in key_idx],
            "columns": [t.label for t, _ in col_text],
            "presence": presence_rows,
            "retention": None,
            "missing_rate": None,
        }
        if n:
            keu_truth["retention"] = [[origin.label, 1.0]] + [
                [t.label, sum(r[c] for r in presence_rows.values()) / n] for c, (t, _) in enumerate(col_text)
            ]
            keu_truth["missing_rate"] = (n - sum(r[-1] for r in presence_rows.values())) / n
        truth["keu"] = keu_truth
    else:
        truth["keu"] = None

    # opinion plants
    initial = {a: spec.answers(a)[0] for a in spec.domain_ids}
    pattern, majority = _pattern(initial, spec.gold, final)
    attribution = Counter()
    for a in spec.domain_ids:
        answers = spec.answers(a)
        for i in range(1, len(answers)):
            if answers[i] != answers[i - 1]:
                attribution[spec.justifications.get(a, {}).get(d_stages[i].label, "evidence_based")] += 1
    truth["viewpoint"] = {
        "pattern": pattern,
        "initial_majority": majority,
        "unanimous_correct": pattern == "NoDynamics" and majority == spec.gold,
        "final_correct": final == spec.gold,
        "attribution": {k: attribution[k] for k in JUSTIFICATIONS},
    }

    # quality plants: every domain stage is scripted, so both stage selections work
    slices = stage_slices(case)
    dom_labels: dict[tuple[StageTag, str], tuple[str, str, str]] = {}
    for tag in d_stages:
        args = agent_arguments(slices[tag], Archetype.DOMAIN)
        dissenter = _bypass_dissenter(spec.votes_at(tag), final) if spec.bypass.get(tag.label) else None
        tape.add(
            TemplateId.OVERALL_QUALITY,
            overall_quality_context(case, tag, args),
            [
                {
                    "agent_id": aid,
                    "overall_quality_category": "High" if aid == dissenter else "Medium",
                    "auditor_reasoning": "scripted",
                }
                for aid, _ in args
            ],
        )
        for aid, text in args:
            lab = spec.labels.get(tag.label, {}).get(aid, {})
            insight = lab.get("insight", "Low")
            relevance = lab.get("relevance", "Relevant")
            urgency = lab.get("urgency", "Standard")
            dom_labels[(tag, aid)] = (insight, relevance, urgency)
            tape.add(
                TemplateId.ROLE_EFFECTIVENESS,
                role_context(case, tag, aid, text),
                {
                    "specialized_insight_emergence": insight,
                    "expertise_relevance_category": relevance,
                    "auditor_reasoning": "scripted",
                },
            )
            tape.add(
                TemplateId.URGENCY,
                urgency_context(case, tag, aid, text),
                {"diagnostic_urgency_level": Urgency(urgency).prompt_label, "auditor_reasoning": "scripted"},
            )
    meta_levels = []
    for tag in m_stages:
        for aid, text in agent_arguments(slices[tag], Archetype.META):
            level = spec.meta_urgency.get(tag.label, {}).get(aid, "Standard")
            meta_levels.append(level)
            tape.add(
                TemplateId.URGENCY,
                urgency_context(case, tag, aid, text),
                {"diagnostic_urgency_level": Urgency(level).prompt_label, "auditor_reasoning": "scripted"},
            )
    default_stages = [d_stages[0], d_stages[-1]]
    assessed = [dom_labels[(t, a)] for t in default_stages for a in spec.domain_ids]
    levels = [Urgency(u).rank for _, _, u in assessed] + [Urgency(u).rank for u in meta_levels]
    top = max(levels)
    truth["quality"] = {
        "bypass_by_stage": [[t.label, bool(spec.bypass.get(t.label, False))] for t in d_stages],
        "activation": _ratio(sum(i == "High" for i, _, _ in assessed), len(assessed)),
        "mismatch": _ratio(sum(r < top for r in levels), len(levels)),
    }

    # conflict plants, numbered in detection order
    ccp_truth = []
    detect_order = sorted(range(len(spec.conflicts)), key=lambda j: spec.conflicts[j].detect_round)
    for r in range(1, spec.rounds + 1):
        planted = [j for j in detect_order if spec.conflicts[j].detect_round == r]
        args = detection_arguments(case, r)
        detected_at = max(t for t, _, _ in args)
        items = []
        for j in planted:
            a, b = spec.conflicts[j].agents
            items.append(
                {
                    "conflicting_agents": [a, b],
                    "conflict_summary": f"{a} and {b} disagree on whether feature {features[j]} is present.",
                    "conflicting_statements": [
                        {"agent_id": a, "statement_content": f"Feature {features[j]} is present in this patient."},
                        {"agent_id": b, "statement_content": f"Feature {features[j]} is absent in this patient."},
                    ],
                }
            )
        tape.add(TemplateId.CCP_DETECTION, ccp_detection_context(case, r, args), {"conflicts": items})
        for j, item in zip(planted, items):
            c = spec.conflicts[j]
            raw = c.raw if c.raw is not None else ({c.resolved_at: True} if c.resolved_at else {})
            ccp_truth.append((j, r, item, detected_at, raw))

    slice_texts = {t: text for t, text in _slice_texts(case)}
    by_mode: dict[str, list] = {"default": [], "per_round": []}
    for mode in ("default", "per_round"):
        index = 0
        for j, r, item, detected_at, raw in ccp_truth:
            if mode == "default" and r != 1:
                continue
            ccp = CriticalConflictPoint(
                ccp_id=f"CCP-{index}",
                conflicting_agents=tuple(item["conflicting_agents"]),
                conflict_summary=item["conflict_summary"],
                statements=tuple((s["agent_id"], s["statement_content"]) for s in item["conflicting_statements"]),
                detected_at=detected_at,
            )
            index += 1
            raw_row, statuses, addressed = [], [], False
            for tag, text in slice_texts.items():
                if tag <= detected_at:
                    continue
                v = bool(raw.get(tag.label, False))
                tape.add(TemplateId.CCP_RESOLUTION, resolution_context(ccp, tag, text), {"was_addressed": v})
                addressed = addressed or v
                raw_row.append([tag.label, v])
                statuses.append([tag.label, "Addressed" if addressed else "Unaddressed"])
            by_mode[mode].append(
                {
                    "ccp_id": ccp.ccp_id,
                    "agents": list(ccp.conflicting_agents),
                    "detect_round": r,
                    "raw": raw_row,
                    "statuses": statuses,
                    "final_status": statuses[-1][1],
                }
            )
    truth["conflict"] = by_mode
    return GeneratedCase(case, tape, truth, spec)


def _unit(units, keu_id):
    return next(u for u in units if u.keu_id == keu_id)


def _slice_texts(case: InteractionCase):
    for tag, turns in stage_slices(case).items():
        live = [t for t in turns if t.agent.archetype is not Archetype.AUDIT]
        if live:
            yield tag, slice_text(live)


# ---------------------------------------------------------------- closure


def closure_mismatches(record: Mapping[str, Any], truth: Mapping[str, Any], per_round: bool = False) -> list[str]:
    """Differences between one pipeline record and its planted truth."""
    out: list[str] = []

    def check(name, got, want):
        if got != want:
            out.append(f"{truth['case_id']}: {name}: got {got!r}, planted {want!r}")

    if record.get("accuracy") != truth["accuracy"]:
        check("accuracy", record.get("accuracy"), truth["accuracy"])

    keu, want = record.get("keu"), truth["keu"]
    if want is None:
        check("keu.units", len((keu or {}).get("units", [])), 0)
    else:
        check("keu.flags", keu.get("flags"), want["flags"])
        presence = keu.get("presence") or {}
        if want["flags"]:
            check("keu.columns", presence.get("columns"), want["columns"])
            check("keu.presence", presence.get("rows"), want["presence"])
        check("keu.retention", keu.get("retention"), want["retention"])
        check("keu.missing_rate", keu.get("missing_rate"), want["missing_rate"])

    vp, want = record.get("viewpoint") or {}, truth["viewpoint"]
    pattern = vp.get("pattern") or {}
    check("viewpoint.pattern", pattern.get("pattern"), want["pattern"])
    check("viewpoint.unanimous_correct", pattern.get("unanimous_correct"), want["unanimous_correct"])
    check("viewpoint.final_correct", pattern.get("final_correct"), want["final_correct"])
    check("viewpoint.attribution", (vp.get("attribution") or {}).get("counts"), want["attribution"])

    q, want = record.get("quality") or {}, truth["quality"]
    planted = dict((label, flag) for label, flag in want["bypass_by_stage"])
    got = q.get("vote_bypass_by_stage") or []
    check("quality.vote_bypass_by_stage", got, [[label, planted.get(label)] for label, _ in got])
    if not got:
        out.append(f"{truth['case_id']}: quality.vote_bypass_by_stage is empty")
    check("quality.activation_rate", q.get("activation_rate"), want["activation"])
    check("quality.priority_mismatch_rate", q.get("priority_mismatch_rate"), want["mismatch"])

    c = record.get("conflict") or {}
    want = truth["conflict"]["per_round" if per_round else "default"]
    got_ccps = [[x["ccp_id"], x["conflicting_agents"]] for x in c.get("ccps", [])]
    check("conflict.ccps", got_ccps, [[w["ccp_id"], w["agents"]] for w in want])
    got_traces = {t["ccp_id"]: (t["statuses"], t["raw"], t["final_status"]) for t in c.get("traces", [])}
    want_traces = {w["ccp_id"]: (w["statuses"], w["raw"], w["final_status"]) for w in want}
    check("conflict.traces", got_traces, want_traces)
    return out


# ---------------------------------------------------------------- random specs


def random_spec(seed: int, index: int, framework: str = "SYN", dataset: str = "SYN") -> ScenarioSpec:
    """A randomly planted case touching every mechanism."""
    rng = random.Random(f"mix:{seed}:{index}")
    nd, nm, rounds = rng.randint(2, 4), rng.randint(1, 2), rng.randint(1, 3)
    options = ("A", "B", "C", "D")
    gold = rng.choice(options)
    final = gold if rng.random() < 0.6 else rng.choice(options)
    domain = [f"D{i}" for i in range(nd)]
    meta = [f"M{i}" for i in range(nm)]
    d_stages = [StageTag(r, s) for r in range(1, rounds + 1) for s in DOMAIN_STAGES]
    all_stages = sorted(d_stages + [StageTag(r, s) for r in range(1, rounds + 1) for s in META_STAGES])
    columns = [t for t in all_stages if t > StageTag(1, Stage.PROPOSE)]

    opinions, justifications = {}, {}
    for a in domain:
        ans = gold if rng.random() < 0.5 else rng.choice(options)
        plan = []
        for tag in d_stages:
            if plan and rng.random() < 0.3:
                new = rng.choice(options)
                if new != ans:
                    justifications.setdefault(a, {})[tag.label] = rng.choice(JUSTIFICATIONS)
                ans = new
            plan.append(ans)
        opinions[a] = plan

    keus = []
    for _ in range(rng.randint(0, 5)):
        src, key = rng.choice(domain), rng.random() < 0.7
        roll = rng.random()
        if roll < 0.2:
            present = tuple(t.label for t in columns if rng.random() < 0.5)
            keus.append(KeuPlant(src, key, None, present))
        elif roll < 0.6:
            keus.append(KeuPlant(src, key, rng.choice(columns).label))
        else:
            keus.append(KeuPlant(src, key))

    conflicts = []
    for _ in range(rng.randint(0, 3)):
        a, b = rng.sample(domain, 2)
        r = rng.randint(1, rounds) if rng.random() < 0.25 else 1
        after = [t for t in all_stages if t > StageTag(r, Stage.REVIEW)]
        roll = rng.random()
        if roll < 0.2:
            conflicts.append(ConflictPlant((a, b), None, r, {t.label: rng.random() < 0.4 for t in after}))
        elif roll < 0.6:
            conflicts.append(ConflictPlant((a, b), rng.choice(after).label, r))
        else:
            conflicts.append(ConflictPlant((a, b), None, r))

    levels = [u.value for u in Urgency]
    labels = {
        t.label: {
            a: {
                "insight": rng.choice([q.value for q in QualityLevel]),
                "relevance": rng.choice([x.value for x in Relevance]),
                "urgency": rng.choice(levels),
            }
            for a in domain
        }
        for t in d_stages
    }
    meta_urgency = {
        t.label: {m: rng.choice(levels) for m in meta}
        for t in all_stages
        if t.stage in META_STAGES
    }
    bypass = {}
    for i, t in enumerate(d_stages):
        votes = {a: opinions[a][i] for a in domain}
        if _bypass_dissenter(votes, final) is not None:
            bypass[t.label] = rng.random() < 0.6
    return ScenarioSpec(
        seed=seed,
        case_id=f"mix-{seed}-{index:05d}",
        framework=framework,
        dataset=dataset,
        domain_agents=nd,
        meta_agents=nm,
        rounds=rounds,
        options=options,
        gold=gold,
        final=final,
        opinions=opinions,
        justifications=justifications,
        keus=tuple(keus),
        conflicts=tuple(conflicts),
        labels=labels,
        meta_urgency=meta_urgency,
        bypass=bypass,
    )


# ---------------------------------------------------------------- calibration


def feasible_count(rate: float, total: int) -> tuple[int, float, float]:
    """Nearest integer count for ``rate`` out of ``total``: (count, achieved, delta)."""
    if total < 1:
        raise InfeasibleTarget(f"corpus size {total} is empty")
    frac = Fraction(str(rate))
    if not 0 <= frac <= 1:
        raise InfeasibleTarget(f"rate {rate} outside [0, 1]")
    scaled = frac * total
    count = int(scaled + Fraction(1, 2))
    achieved = count / total
    return count, achieved, achieved - float(frac)


def _spread(count: int, cases: int) -> list[int]:
    return [count // cases + (1 if i < count % cases else 0) for i in range(cases)]


def _cases_for(units: int, per_case: int, metric: str) -> int:
    if per_case < 1 or units % per_case:
        raise InfeasibleTarget(f"{metric}: {units} units do not split into cases of {per_case}")
    return units // per_case


@dataclass(frozen=True)
class CalibrationTarget:
    """A desired aggregate; ``units`` is the corpus size in counting units
    (KEUs, CCPs, assessments, outputs or cases depending on the metric)."""

    metric: str
    value: float | tuple[float, ...]
    units: int | None = None
    per_case: int | None = None
    framework: str = "SYN"
    dataset: str = "SYN"
    rounds: int | None = None

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CalibrationTarget":
        value = doc["value"]
        return cls(
            doc["metric"],
            tuple(value) if isinstance(value, (list, tuple)) else value,
            doc.get("units"),
            doc.get("per_case"),
            doc.get("framework", "SYN"),
            doc.get("dataset", "SYN"),
            doc.get("rounds"),
        )


def _spec(t: CalibrationTarget, seed: int, i: int, **kw) -> ScenarioSpec:
    return ScenarioSpec(
        seed=seed, case_id=f"{t.framework}-{t.dataset}-{t.metric}-{i:05d}", framework=t.framework, dataset=t.dataset, **kw
    )


def _achieved(t: CalibrationTarget, count, total: int, achieved, delta) -> dict[str, Any]:
    return {
        "metric": t.metric,
        "framework": t.framework,
        "dataset": t.dataset,
        "target": list(t.value) if isinstance(t.value, tuple) else t.value,
        "count": count,
        "total": total,
        "achieved": achieved,
        "delta": delta,
    }


def _keu_missing(t: CalibrationTarget, seed: int):
    units, per_case = t.units or 2500, t.per_case or 25
    n = _cases_for(units, per_case, t.metric)
    count, achieved, delta = feasible_count(t.value, units)
    specs = []
    for i, k in enumerate(_spread(count, n)):
        keus = tuple(
            KeuPlant(f"D{j % 3}", True, "R1.Synthesize" if j < k else None) for j in range(per_case)
        )
        specs.append(_spec(t, seed, i, keus=keus))
    return specs, _achieved(t, count, units, achieved, delta)


_PAIRS = (("D0", "D1"), ("D1", "D2"), ("D0", "D2"))


def _dropout(t: CalibrationTarget, seed: int):
    units, per_case = t.units or 1000, t.per_case or 5
    n = _cases_for(units, per_case, t.metric)
    count, achieved, delta = feasible_count(t.value, units)
    specs = []
    for i, k in enumerate(_spread(count, n)):
        conflicts = tuple(
            ConflictPlant(_PAIRS[j % 3], None if j < k else "R1.Synthesize") for j in range(per_case)
        )
        specs.append(_spec(t, seed, i, conflicts=conflicts))
    return specs, _achieved(t, count, units, achieved, delta)


def _dropout_by_round(t: CalibrationTarget, seed: int):
    values = tuple(t.value) if isinstance(t.value, (tuple, list)) else (t.value,)
    units, per_case = t.units or 1000, t.per_case or 5
    n = _cases_for(units, per_case, t.metric)
    fits = [feasible_count(v, units) for v in values]
    counts = [c for c, _, _ in fits]
    if any(b > a for a, b in zip(counts, counts[1:])):
        raise InfeasibleTarget("resolution latches, so per-round dropout cannot increase")
    rounds = len(values)
    # resolution round per CCP; None = never resolved
    plan: list[int | None] = [None] * counts[-1]
    for r in range(rounds, 0, -1):
        prev = counts[r - 2] if r > 1 else units
        plan += [r] * (prev - counts[r - 1])
    specs = []
    for i in range(n):
        chunk = plan[i * per_case : (i + 1) * per_case]
        conflicts = tuple(
            ConflictPlant(_PAIRS[j % 3], f"R{r}.Synthesize" if r else None) for j, r in enumerate(chunk)
        )
        specs.append(_spec(t, seed, i, rounds=rounds, conflicts=conflicts))
    return specs, _achieved(t, counts, units, [a for _, a, _ in fits], [d for _, _, d in fits])


def _activation(t: CalibrationTarget, seed: int):
    per_case = t.per_case or 6
    if per_case % 2:
        raise InfeasibleTarget("activation: per_case counts two stages per agent and must be even")
    agents = per_case // 2
    units = t.units or 1020
    n = _cases_for(units, per_case, t.metric)
    count, achieved, delta = feasible_count(t.value, units)
    specs = []
    for i, k in enumerate(_spread(count, n)):
        slots = [(s, f"D{a}") for s in ("R1.Propose", "R1.Review") for a in range(agents)]
        labels: dict[str, dict[str, dict[str, str]]] = {}
        for j, (s, a) in enumerate(slots):
            labels.setdefault(s, {})[a] = {"insight": "High" if j < k else "Low"}
        specs.append(_spec(t, seed, i, domain_agents=agents, labels=labels))
    return specs, _achieved(t, count, units, achieved, delta)


def _bypass_trend(t: CalibrationTarget, seed: int):
    values = tuple(t.value)
    if len(values) != 2:
        raise InfeasibleTarget("vote bypass trend takes (initial stage, final stage) rates")
    units = t.units or 1000
    rounds = t.rounds or 2
    (c1, a1, d1), (c2, a2, d2) = (feasible_count(v, units) for v in values)
    last = f"R{rounds}.Review"
    specs = []
    for i in range(units):
        bypass = {"R1.Propose": i < c1, last: i >= units - c2}
        specs.append(
            _spec(t, seed, i, rounds=rounds, opinions={"D0": "A", "D1": "A", "D2": "B"}, bypass=bypass)
        )
    return specs, _achieved(t, [c1, c2], units, [a1, a2], [d1, d2])


def _superfluous(t: CalibrationTarget, seed: int):
    units = t.units or 500
    count, achieved, delta = feasible_count(t.value, units)
    specs = []
    for i in range(units):
        opinions = {} if i < count else {"D2": "B"}
        specs.append(_spec(t, seed, i, opinions=opinions))
    return specs, _achieved(t, count, units, achieved, delta)


def _mismatch(t: CalibrationTarget, seed: int):
    per_case = t.per_case or 8
    agents = (per_case - 2) // 2
    if agents < 2 or per_case != 2 * agents + 2:
        raise InfeasibleTarget("priority mismatch: per_case must be 2 * agents + 2 with agents >= 2")
    units = t.units or 1000
    n = _cases_for(units, per_case, t.metric)
    count, achieved, delta = feasible_count(t.value, units)
    spread = _spread(count, n)
    if max(spread) > per_case - 1:
        raise InfeasibleTarget("priority mismatch: every case needs one output at the top level")
    specs = []
    for i, k in enumerate(spread):
        slots = [("d", s, f"D{a}") for s in ("R1.Propose", "R1.Review") for a in range(agents)]
        slots += [("m", s, "M0") for s in ("R1.Synthesize", "R1.Conclude")]
        labels: dict[str, dict[str, dict[str, str]]] = {}
        meta: dict[str, dict[str, str]] = {}
        for j, (kind, s, a) in enumerate(slots):
            level = "Standard" if 1 <= j <= k else "Immediate"
            if kind == "d":
                labels.setdefault(s, {})[a] = {"urgency": level}
            else:
                meta.setdefault(s, {})[a] = level
        specs.append(_spec(t, seed, i, domain_agents=agents, labels=labels, meta_urgency=meta))
    return specs, _achieved(t, count, units, achieved, delta)


def _accuracy(t: CalibrationTarget, seed: int):
    units = t.units or 400
    count, achieved, delta = feasible_count(t.value, units)
    specs = [_spec(t, seed, i, final="A" if i < count else "B") for i in range(units)]
    return specs, _achieved(t, count, units, achieved, delta)


CALIBRATION_METRICS = {
    "keu_missing_rate": _keu_missing,
    "conflict_dropout": _dropout,
    "conflict_dropout_by_round": _dropout_by_round,
    "activation_rate": _activation,
    "vote_bypass_by_stage": _bypass_trend,
    "superfluous_share": _superfluous,
    "priority_mismatch_rate": _mismatch,
    "accuracy": _accuracy,
}


@dataclass
class Corpus:
    cases: list[GeneratedCase]
    achieved: list[dict[str, Any]] = field(default_factory=list)

    @property
    def tape(self) -> ScriptedJudgeTape:
        tape = ScriptedJudgeTape()
        for g in self.cases:
            tape.update(g.tape)
        return tape

    @property
    def truths(self) -> list[dict[str, Any]]:
        return [g.truth for g in self.cases]


def generate_corpus(
    targets: Sequence[CalibrationTarget | Mapping[str, Any]] = (),
    specs: Sequence[ScenarioSpec | Mapping[str, Any]] = (),
    seed: int = 0,
    mixed: int = 0,
) -> Corpus:
    """Cases from explicit specs, calibration targets and ``mixed`` random
    specs, in that order. Each target reports its nearest-feasible count."""
    all_specs: list[ScenarioSpec] = [s if isinstance(s, ScenarioSpec) else ScenarioSpec.from_dict(s) for s in specs]
    achieved = []
    for t in targets:
        t = t if isinstance(t, CalibrationTarget) else CalibrationTarget.from_dict(t)
        try:
            build = CALIBRATION_METRICS[t.metric]
        except KeyError:
            raise InfeasibleTarget(f"no calibration recipe for metric {t.metric!r}") from None
        built, report = build(t, seed)
        all_specs.extend(built)
        achieved.append(report)
    all_specs.extend(random_spec(seed, i) for i in range(mixed))
    ids = [s.case_id for s in all_specs]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("duplicate case ids in corpus")
    return Corpus([generate_case(s) for s in all_specs], achieved)
