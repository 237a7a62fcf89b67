"""Plant a small two-round case, audit it with the scripted judge and print
what each mechanism found next to what was planted.

    python3 demos/single_case_walkthrough.py
"""

import json

from collab_audit.judge import JudgeGateway, ScriptedBackend
from collab_audit.pipeline import audit_case
from collab_audit.synth import ConflictPlant, KeuPlant, ScenarioSpec, closure_mismatches, generate_case
from collab_audit.trail import stage_slices

spec = ScenarioSpec(
    case_id="walkthrough",
    rounds=2,
    gold="B",
    final="A",
    # D2 starts alone on the right answer and gets talked out of it
    opinions={"D0": "A", "D1": "A", "D2": ["B", "B", "A"]},
    justifications={"D2": {"R2.Propose": "consensus_based"}},
    keus=(KeuPlant("D0"), KeuPlant("D2", drop_at="R1.Synthesize"), KeuPlant("D1", key=False)),
    conflicts=(ConflictPlant(("D0", "D2")), ConflictPlant(("D0", "D1"), resolved_at="R1.Synthesize")),
    labels={"R1.Propose": {"D2": {"insight": "High", "relevance": "Core", "urgency": "Immediate"}}},
    bypass={"R1.Propose": True},
)


def main() -> None:
    g = generate_case(spec)
    print("stages:", " ".join(tag.label for tag in stage_slices(g.case)))
    record = audit_case(g.case, JudgeGateway(ScriptedBackend(g.tape)))

    keu = record["keu"]
    print("\nKEU presence after the proposal stage")
    print("  ", keu["presence"]["columns"])
    for unit, row in keu["presence"]["rows"].items():
        print(f"  {unit}: {['x' if v else '.' for v in row]}")
    print("  missing at final conclusion:", keu["missing_rate"])

    vp = record["viewpoint"]["pattern"]
    print("\nviewpoint pattern:", vp["pattern"], "| attribution:", record["viewpoint"]["attribution"]["shares"])

    q = record["quality"]
    print("vote bypass by stage:", q["vote_bypass_by_stage"], "| activation:", round(q["activation_rate"], 3),
          "| priority mismatch:", q["priority_mismatch_rate"])

    print("\nconflicts")
    for tr in record["conflict"]["traces"]:
        print(f"  {tr['ccp_id']}: final {tr['final_status']}")
    print("  dropout:", record["conflict"]["dropout"]["overall"])

    bad = closure_mismatches(record, g.truth)
    print("\nplanted vs audited:", "identical" if not bad else json.dumps(bad, indent=2))


if __name__ == "__main__":
    main()
