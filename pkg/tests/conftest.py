from __future__ import annotations

import json
from typing import Any

import pytest

from collab_audit.judge import JudgeGateway, ScriptedBackend, ScriptedJudgeTape
from collab_audit.trail import parse_case


def turn(tid, rnd, stage, agent, archetype="Domain", response="", structured=None, role=None):
    return {
        "turn_id": tid,
        "round": rnd,
        "stage": stage,
        "agent_id": agent,
        "archetype": archetype,
        "role": role or ("Cardiologist" if archetype == "Domain" else "Moderator"),
        "prompt": {"system": "s", "user": "u"},
        "response": response,
        "structured": structured,
    }


def case_doc(turns: list[dict], gold="A", final="A", options=("A", "B", "C", "D"), **extra) -> dict[str, Any]:
    doc = {
        "case_id": extra.pop("case_id", "c1"),
        "framework": extra.pop("framework", "FW"),
        "dataset": extra.pop("dataset", "DS"),
        "question": "Which option?",
        "options": list(options) if options is not None else None,
        "gold_answer": gold,
        "final_answer": final,
        "turns": turns,
    }
    doc.update(extra)
    return doc


def voting_case(initial: list[str], gold: str, final: str, options=None):
    """One Propose turn per domain agent plus a meta Conclude."""
    turns = [
        turn(i + 1, 1, "Propose", f"ag{i}", structured={"current_viewpoint": a}) for i, a in enumerate(initial)
    ]
    turns.append(turn(len(turns) + 1, 1, "Conclude", "meta", "Meta", structured={"answer": final}))
    opts = options if options is not None else sorted(set(initial) | {gold, final})
    return parse_case(case_doc(turns, gold=gold, final=final, options=opts))


def two_round_doc() -> dict[str, Any]:
    t = []
    n = 0
    for r in (1, 2):
        for stage in ("Propose", "Review") if r == 1 else ("Review",):
            for a, ans in (("d1", "A"), ("d2", "B")):
                n += 1
                t.append(turn(n, r, stage, a, response=f"I think {ans}.", structured={"current_viewpoint": ans}))
        n += 1
        t.append(turn(n, r, "Synthesize", "m1", "Meta", response="Summary."))
        n += 1
        t.append(turn(n, r, "Conclude", "m1", "Meta", response="Answer: A", structured={"answer": "A"}))
    return case_doc(t)


class ListBackend:
    """Returns canned raw strings in order, whatever the prompt."""

    name = "list"

    def __init__(self, replies):
        self.replies = list(replies)
        self.seen = []

    def complete(self, template_id, context, messages):
        self.seen.append(messages)
        return self.replies.pop(0)

    def config(self):
        return {"backend": self.name}


@pytest.fixture
def tape():
    return ScriptedJudgeTape()


@pytest.fixture
def gateway_for():
    def make(tape):
        return JudgeGateway(ScriptedBackend(tape))

    return make


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True)


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or report.failed:
        _CRITERIA[n] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
