"""Process-level audits of multi-agent collaboration logs.

Four mechanisms read an :class:`~collab_audit.trail.InteractionCase`:
key-evidence propagation (:mod:`.keu`), viewpoint shifts (:mod:`.viewpoint`),
argument quality (:mod:`.quality`) and conflict resolution (:mod:`.conflict`).
An LLM judge is reached through :mod:`.judge`; :mod:`.synth` builds cases with
planted ground truth and :mod:`.report` aggregates results into tables.
"""

from .trail import InteractionCase, StageTag, Stage, parse_case, read_cases, serialize_case, validate_case
from .judge import JudgeGateway, ScriptedBackend, ScriptedJudgeTape, TemplateId, call_judge
from .pipeline import RunConfig, audit_case, audit_corpus

__version__ = "0.1.0"

__all__ = [
    "InteractionCase",
    "StageTag",
    "Stage",
    "parse_case",
    "read_cases",
    "serialize_case",
    "validate_case",
    "JudgeGateway",
    "ScriptedBackend",
    "ScriptedJudgeTape",
    "TemplateId",
    "call_judge",
    "RunConfig",
    "audit_case",
    "audit_corpus",
]
