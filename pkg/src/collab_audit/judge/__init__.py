"""Auditor prompts, judge backends, and structured-response parsing."""

from .backends import (
    API_KEY_ENV,
    BackendUnavailable,
    RateLimiter,
    RemoteBackend,
    ScriptedBackend,
    ScriptedJudgeTape,
    fingerprint,
)
from .gateway import DEFAULT_RETRIES, ExhaustedRetries, JudgeGateway, JudgeResponse, call_judge
from .parsing import (
    PARSERS,
    CriticalConflictPoint,
    ParseError,
    QualityVerdict,
    RoleVerdict,
    UnknownKeuId,
    UrgencyVerdict,
    ViewpointReport,
    extract_json,
    parse_conflicts,
    parse_keu_flags,
    parse_presence,
    parse_quality,
    parse_resolution,
    parse_role_effectiveness,
    parse_urgency,
    parse_viewpoint,
)
from .templates import (
    MissingPlaceholder,
    TemplateId,
    build_messages,
    output_grammar,
    placeholders,
    render_prompt,
    render_user_message,
    template_body,
)

__all__ = [name for name in dir() if not name.startswith("_")]
