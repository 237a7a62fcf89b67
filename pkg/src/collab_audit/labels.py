"""Label vocabularies shared by the judge parsers and the audits."""

from __future__ import annotations

import enum

__all__ = ["QualityLevel", "Relevance", "Urgency", "JustificationType"]


class QualityLevel(str, enum.Enum):
    """Three-level scale used for overall quality and insight emergence."""

    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"

    @property
    def rank(self) -> int:
        return {"High": 2, "Medium": 1, "Low": 0}[self.value]


class Relevance(str, enum.Enum):
    CORE = "Core"
    RELEVANT = "Relevant"
    ANCILLARY = "Ancillary"


class Urgency(str, enum.Enum):
    IMMEDIATE = "Immediate"
    STANDARD = "Standard"
    DELAYED = "Delayed"

    @property
    def rank(self) -> int:
        return {"Immediate": 2, "Standard": 1, "Delayed": 0}[self.value]

    @property
    def prompt_label(self) -> str:
        return _URGENCY_PROMPT_LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "Urgency":
        """Accept either the prompt's full label or the bare level name."""
        for u in cls:
            if text == u.value or text == u.prompt_label:
                return u
        raise ValueError(text)


_URGENCY_PROMPT_LABELS = {
    Urgency.IMMEDIATE: "Immediate (STAT)",
    Urgency.STANDARD: "Standard (Routine)",
    Urgency.DELAYED: "Delayed (Deferrable)",
}


class JustificationType(str, enum.Enum):
    EVIDENCE_BASED = "EvidenceBased"
    CONSENSUS_BASED = "ConsensusBased"
    UNREPORTED = "Unreported"

    @property
    def wire(self) -> str | None:
        return {"EvidenceBased": "evidence_based", "ConsensusBased": "consensus_based"}.get(self.value)

    @classmethod
    def from_wire(cls, value: str | None) -> "JustificationType":
        if value is None:
            return cls.UNREPORTED
        if value == "evidence_based":
            return cls.EVIDENCE_BASED
        if value == "consensus_based":
            return cls.CONSENSUS_BASED
        raise ValueError(f"unknown justification_type {value!r}")
