"""Judge backends: a scripted tape for deterministic runs, and a remote
chat-completion endpoint with in-flight and per-minute limits."""

from __future__ import annotations

import collections
import hashlib
import json
import os
import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping

import httpx

from .templates import TemplateId

__all__ = [
    "BackendUnavailable",
    "fingerprint",
    "ScriptedJudgeTape",
    "ScriptedBackend",
    "RateLimiter",
    "RemoteBackend",
    "API_KEY_ENV",
]

API_KEY_ENV = "AUDIT_JUDGE_API_KEY"


class BackendUnavailable(RuntimeError):
    pass


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(template_id: TemplateId | str, context: Mapping[str, Any]) -> str:
    """Stable hash of (template, context); independent of mapping order."""
    blob = canonical_json({"template_id": TemplateId(template_id).value, "context": context})
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


class ScriptedJudgeTape:
    """Canned judge payloads keyed by (template id, context fingerprint)."""

    def __init__(self, entries: Mapping[tuple[str, str], Any] | None = None):
        self._entries: dict[tuple[str, str], Any] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._entries

    def add(self, template_id: TemplateId | str, context: Mapping[str, Any], payload: Any) -> str:
        fp = fingerprint(template_id, context)
        self._entries[(TemplateId(template_id).value, fp)] = payload
        return fp

    def lookup(self, template_id: TemplateId | str, context: Mapping[str, Any]) -> Any:
        key = (TemplateId(template_id).value, fingerprint(template_id, context))
        try:
            return self._entries[key]
        except KeyError:
            raise BackendUnavailable(f"tape has no entry for {key[0]} {key[1]}") from None

    def update(self, other: "ScriptedJudgeTape") -> None:
        self._entries.update(other._entries)

    def records(self) -> Iterator[dict[str, Any]]:
        for (tid, fp), payload in self._entries.items():
            yield {"template_id": tid, "fingerprint": fp, "payload": payload}

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "ScriptedJudgeTape":
        tape = cls()
        for rec in records:
            tape._entries[(TemplateId(rec["template_id"]).value, rec["fingerprint"])] = rec["payload"]
        return tape

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedJudgeTape":
        with open(path, encoding="utf-8") as fh:
            return cls.from_records(json.loads(line) for line in fh if line.strip())


class ScriptedBackend:
    """Replays a tape. Never improvises: a miss is BackendUnavailable."""

    name = "scripted"

    def __init__(self, tape: ScriptedJudgeTape):
        self.tape = tape

    def complete(self, template_id, context, messages) -> str:
        return json.dumps(self.tape.lookup(template_id, context), ensure_ascii=False)

    def config(self) -> dict[str, Any]:
        return {"backend": self.name, "tape_entries": len(self.tape)}


class RateLimiter:
    """Sliding one-minute window shared by all threads using a backend."""

    def __init__(
        self,
        requests_per_minute: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        window: float = 60.0,
    ):
        if requests_per_minute < 1:
            raise ValueError("requests_per_minute must be ≥ 1")
        self.limit = requests_per_minute
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = self.window - (now - self._stamps[0])
            self._sleep(wait)


class RemoteBackend:
    """OpenAI-style ``/chat/completions`` endpoint."""

    name = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        temperature: float = 0.0,
        max_in_flight: int = 4,
        requests_per_minute: int = 60,
        timeout: float = 120.0,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        limiter: RateLimiter | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.temperature = temperature
        self.max_in_flight = max_in_flight
        self.requests_per_minute = requests_per_minute
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._limiter = limiter or RateLimiter(requests_per_minute)

    def complete(self, template_id, context, messages) -> str:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        body = {"model": self.model, "temperature": self.temperature, "messages": list(messages)}
        self._limiter.acquire()
        with self._slots:
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                resp.raise_for_status()
                data = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                raise BackendUnavailable(f"judge endpoint failed: {exc}") from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendUnavailable("judge endpoint returned no message content") from None
        if not isinstance(content, str):
            raise BackendUnavailable("judge endpoint returned non-text content")
        return content

    def config(self) -> dict[str, Any]:
        return {
            "backend": self.name,
            "base_url": self.base_url,
            "model": self.model,
            "temperature": self.temperature,
            "max_in_flight": self.max_in_flight,
            "requests_per_minute": self.requests_per_minute,
        }
