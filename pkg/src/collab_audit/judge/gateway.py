from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .parsing import PARSERS, ParseError
from .templates import TemplateId, build_messages, output_grammar

__all__ = ["JudgeResponse", "ExhaustedRetries", "call_judge", "JudgeGateway", "DEFAULT_RETRIES"]

DEFAULT_RETRIES = 2


class ExhaustedRetries(RuntimeError):
    def __init__(self, template_id: TemplateId, attempts: int, last_error: ParseError):
        super().__init__(f"{template_id.value}: no parseable response after {attempts} attempts ({last_error})")
        self.template_id = template_id
        self.attempts = attempts
        self.last_error = last_error


@dataclass(frozen=True)
class JudgeResponse:
    template_id: TemplateId
    raw_text: str
    parsed: Any
    attempt_count: int


def call_judge(
    template_id: TemplateId | str,
    context: Mapping[str, Any],
    backend,
    retries: int = DEFAULT_RETRIES,
    strict: bool = False,
    **parse_kwargs: Any,
) -> JudgeResponse:
    """Render, send, parse; on a parse failure re-prompt with the output
    format restated, at most ``retries`` times."""
    tid = TemplateId(template_id)
    parser = PARSERS[tid]
    messages = build_messages(tid, context)
    attempt = 0
    while True:
        attempt += 1
        raw = backend.complete(tid, context, messages)
        try:
            parsed = parser(raw, strict=strict, **parse_kwargs)
        except ParseError as err:
            if attempt > retries:
                raise ExhaustedRetries(tid, attempt, err) from err
            messages = messages + [
                {"role": "assistant", "content": raw},
                {
                    "role": "user",
                    "content": (
                        f"Your previous response could not be parsed ({err}). "
                        "Respond again, following the required output format exactly:\n\n"
                        + output_grammar(tid)
                    ),
                },
            ]
            continue
        return JudgeResponse(tid, raw, parsed, attempt)


class JudgeGateway:
    """Shared entry point for all audit mechanisms.

    ``workers`` bounds how many judge calls one :meth:`call_many` issues at
    once; the remote backend additionally enforces its own in-flight and
    per-minute limits.
    """

    def __init__(self, backend, retries: int = DEFAULT_RETRIES, strict: bool = False, workers: int = 1):
        self.backend = backend
        self.retries = retries
        self.strict = strict
        self.workers = max(1, workers)

    def call(self, template_id: TemplateId | str, context: Mapping[str, Any], **parse_kwargs) -> JudgeResponse:
        return call_judge(template_id, context, self.backend, self.retries, self.strict, **parse_kwargs)

    def call_many(self, requests: Sequence[tuple]) -> list[JudgeResponse]:
        """``requests`` holds ``(template_id, context)`` or
        ``(template_id, context, parse_kwargs)``; results keep input order."""

        def one(req):
            kwargs = req[2] if len(req) > 2 else {}
            return self.call(req[0], req[1], **kwargs)

        if self.workers == 1 or len(requests) < 2:
            return [one(r) for r in requests]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(one, requests))

    def config(self) -> dict[str, Any]:
        cfg = dict(self.backend.config())
        cfg.update({"retries": self.retries, "strict": self.strict})
        return cfg
