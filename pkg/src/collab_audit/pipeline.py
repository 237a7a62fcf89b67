"""Run configuration and the per-case audit record."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .conflict import NoDetectionArguments, audit_conflict
from .judge import (
    API_KEY_ENV,
    BackendUnavailable,
    ExhaustedRetries,
    JudgeGateway,
    RemoteBackend,
    ScriptedBackend,
    ScriptedJudgeTape,
)
from .keu import EmptyKeuSet, NoProposeTurns, PresenceMode, audit_keu
from .quality import audit_quality
from .trail import InteractionCase, validate_case
from .viewpoint import NoInitialOpinions, attribution_breakdown, classify_case, opinion_trajectory

__all__ = ["MECHANISMS", "ConfigError", "RunConfig", "build_gateway", "audit_case", "audit_corpus"]

MECHANISMS = ("keu", "viewpoint", "quality", "conflict")

# data problems that leave one mechanism without a result for one case
_CASE_ERRORS = (NoProposeTurns, EmptyKeuSet, NoInitialOpinions, NoDetectionArguments, ExhaustedRetries)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    judge: str = "scripted"
    tape: str | None = None
    base_url: str | None = None
    model: str | None = None
    requests_per_minute: int = 60
    temperature: float = 0.0
    max_in_flight: int = 4
    timeout: float = 60.0
    retries: int = 2
    strict_parsing: bool = False
    mechanisms: tuple[str, ...] = MECHANISMS
    stage_map: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    presence_mode: str = PresenceMode.JUDGE_CHECKED.value
    presence_scope: str = "all"
    quality_stages: str = "default"
    urgency_scope: str = "all"
    mismatch_domain_only: bool = False
    detect_per_round: bool = False
    workers: int = 1
    judge_workers: int = 1
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        self.mechanisms = tuple(self.mechanisms)
        bad = [m for m in self.mechanisms if m not in MECHANISMS]
        if bad:
            raise ConfigError(f"unknown mechanism(s): {', '.join(bad)}")
        if self.judge not in ("scripted", "remote"):
            raise ConfigError(f"unknown judge backend {self.judge!r}")
        try:
            PresenceMode(self.presence_mode)
        except ValueError:
            raise ConfigError(f"unknown presence mode {self.presence_mode!r}") from None

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**dict(doc))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["mechanisms"] = list(self.mechanisms)
        return out


def build_gateway(config: RunConfig, tape: ScriptedJudgeTape | None = None) -> JudgeGateway:
    if config.judge == "scripted":
        if tape is None:
            if not config.tape:
                raise ConfigError("the scripted judge needs a tape")
            try:
                tape = ScriptedJudgeTape.load(config.tape)
            except OSError as exc:
                raise ConfigError(f"cannot read tape: {exc}") from None
        backend = ScriptedBackend(tape)
    else:
        if not config.base_url or not config.model:
            raise ConfigError("the remote judge needs base_url and model")
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise ConfigError(f"{API_KEY_ENV} is not set")
        backend = RemoteBackend(
            base_url=config.base_url,
            model=config.model,
            api_key=key,
            temperature=config.temperature,
            requests_per_minute=config.requests_per_minute,
            max_in_flight=config.max_in_flight,
            timeout=config.timeout,
        )
    return JudgeGateway(backend, retries=config.retries, strict=config.strict_parsing, workers=config.judge_workers)


def _viewpoint(case: InteractionCase) -> dict[str, Any]:
    traj = opinion_trajectory(case)
    pattern = classify_case(case, traj)
    shares = attribution_breakdown(traj)
    changed = [r for recs in traj.values() for r in recs if r.viewpoint_changed]
    counts = {"evidence_based": 0, "consensus_based": 0, "unreported": 0}
    for r in changed:
        counts[r.justification_type.wire or "unreported"] += 1
    return {
        "pattern": pattern.to_dict(),
        "attribution": {
            "shares": dict(zip(("evidence_based", "consensus_based", "unreported"), shares)),
            "counts": counts,
        },
        "trajectories": {
            aid: [[r.stage.label, r.answer, r.viewpoint_changed, r.justification_type.value] for r in recs]
            for aid, recs in sorted(traj.items())
        },
    }


def audit_case(case: InteractionCase, gateway: JudgeGateway | None, config: RunConfig | None = None) -> dict[str, Any]:
    """Run the configured mechanisms on one case.

    A data problem inside one mechanism (no proposals, no initial opinions,
    judge output that never parses) leaves that section ``None`` and is
    listed under ``errors``; backend outages propagate.
    """
    config = config or RunConfig()
    record: dict[str, Any] = {
        "case_id": case.case_id,
        "framework": case.framework,
        "dataset": case.dataset,
        "accuracy": 1.0 if case.final == case.gold else 0.0,
        "violations": [v._asdict() for v in validate_case(case)],
    }
    errors: dict[str, dict[str, str]] = {}
    runners = {
        "keu": lambda: audit_keu(case, gateway, config.presence_mode, config.presence_scope).to_dict(),
        "viewpoint": lambda: _viewpoint(case),
        "quality": lambda: audit_quality(
            case, gateway, config.quality_stages, config.urgency_scope, config.mismatch_domain_only
        ).to_dict(),
        "conflict": lambda: audit_conflict(case, gateway, config.detect_per_round).to_dict(),
    }
    for name in MECHANISMS:
        if name not in config.mechanisms:
            continue
        try:
            record[name] = runners[name]()
        except BackendUnavailable:
            raise
        except _CASE_ERRORS as exc:
            record[name] = None
            errors[name] = {"code": type(exc).__name__, "message": str(exc)}
    record["errors"] = errors
    return record


def audit_corpus(
    cases: Sequence[InteractionCase], gateway: JudgeGateway | None, config: RunConfig | None = None
) -> list[dict[str, Any]]:
    """Audit every case; ``config.workers`` cases run concurrently, results
    keep input order."""
    config = config or RunConfig()
    if config.workers <= 1 or len(cases) < 2:
        return [audit_case(c, gateway, config) for c in cases]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda c: audit_case(c, gateway, config), cases))
