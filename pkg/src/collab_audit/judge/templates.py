"""Auditor and instrumentation prompt templates.

The bodies live in ``collab_audit/prompts/*.txt`` and are used byte-for-byte.
Placeholders are ``{name}`` with an identifier inside the braces; literal JSON
in the bodies (``{"KEU-0": true, ...}``) never matches that pattern.
"""

from __future__ import annotations

import enum
import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

__all__ = [
    "TemplateId",
    "MissingPlaceholder",
    "template_body",
    "placeholders",
    "render_prompt",
    "render_user_message",
    "build_messages",
    "output_grammar",
]

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class TemplateId(str, enum.Enum):
    KEU_FLAGGING = "KeuFlagging"
    VIEWPOINT_REVIEW = "ViewpointReview"
    ROLE_EFFECTIVENESS = "RoleEffectiveness"
    URGENCY = "Urgency"
    OVERALL_QUALITY = "OverallQuality"
    CCP_DETECTION = "CcpDetection"
    CCP_RESOLUTION = "CcpResolution"
    # Not one of the seven published prompts; used for judge-checked KEU presence.
    KEU_PRESENCE = "KeuPresence"


_FILES = {
    TemplateId.KEU_FLAGGING: "keu_flagging.txt",
    TemplateId.VIEWPOINT_REVIEW: "viewpoint_review.txt",
    TemplateId.ROLE_EFFECTIVENESS: "role_effectiveness.txt",
    TemplateId.URGENCY: "urgency.txt",
    TemplateId.OVERALL_QUALITY: "overall_quality.txt",
    TemplateId.CCP_DETECTION: "ccp_detection.txt",
    TemplateId.CCP_RESOLUTION: "ccp_resolution.txt",
    TemplateId.KEU_PRESENCE: "keu_presence.txt",
}

# First line of the output-format section of each body; restated on retry.
_GRAMMAR_ANCHORS = {
    TemplateId.KEU_FLAGGING: "Your output MUST be a single JSON object",
    TemplateId.VIEWPOINT_REVIEW: "Your output must be a JSON object",
    TemplateId.ROLE_EFFECTIVENESS: "You MUST provide a JSON object with two classifications",
    TemplateId.URGENCY: "You MUST provide a JSON object with one classification",
    TemplateId.OVERALL_QUALITY: "For each doctor, you MUST provide",
    TemplateId.CCP_DETECTION: "Your final output MUST be a single JSON object",
    TemplateId.CCP_RESOLUTION: "You MUST respond with a single JSON object",
    TemplateId.KEU_PRESENCE: "You MUST respond with a single JSON object",
}


class MissingPlaceholder(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"missing placeholder {self.name!r}"


@lru_cache(maxsize=None)
def template_body(template_id: TemplateId | str) -> str:
    tid = TemplateId(template_id)
    ref = resources.files("collab_audit").joinpath("prompts", _FILES[tid])
    with ref.open("rb") as fh:
        return fh.read().decode("utf-8")


def placeholders(template_id: TemplateId | str) -> list[str]:
    seen: list[str] = []
    for m in _PLACEHOLDER.finditer(template_body(template_id)):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def render_prompt(template_id: TemplateId | str, context: Mapping[str, Any]) -> str:
    """Fill the template's placeholders from ``context``.

    Raises :class:`MissingPlaceholder` rather than emitting an unresolved
    ``{name}``. Context keys that are not placeholders are ignored here and
    travel in the user message instead.
    """

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in context:
            raise MissingPlaceholder(name)
        return str(context[name])

    return _PLACEHOLDER.sub(sub, template_body(template_id))


def render_user_message(template_id: TemplateId | str, context: Mapping[str, Any]) -> str:
    names = set(placeholders(template_id))
    payload = {k: v for k, v in context.items() if k not in names}
    return "Input:\n" + json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)


def build_messages(template_id: TemplateId | str, context: Mapping[str, Any]) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": render_prompt(template_id, context)},
        {"role": "user", "content": render_user_message(template_id, context)},
    ]


def output_grammar(template_id: TemplateId | str) -> str:
    body = template_body(template_id)
    anchor = _GRAMMAR_ANCHORS[TemplateId(template_id)]
    return body[body.index(anchor):]
