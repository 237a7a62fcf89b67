"""Command-line entry point.

Exit codes: 0 success, 1 data violations under ``--strict``, 2 usage,
configuration or judge-backend errors. Errors go to stderr as one JSON
object with a machine-readable ``error`` code and a human ``message``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from . import __version__
from .judge import BackendUnavailable
from .pipeline import MECHANISMS, ConfigError, RunConfig, audit_case, build_gateway
from .report import FORMATS, UnknownMetric, aggregate, emit, parse_json
from .synth import InfeasibleTarget, InvalidSpec, generate_corpus
from .taxonomy import CaseSetMismatch, DegenerateMarginals, UnknownLabel, cohen_kappa, load_vocabulary, read_annotations
from .trail import TrailError, parse_case, serialize_case, validate_case

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("collab_audit")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _fail(err: CliError) -> int:
    print(json.dumps({"error": err.code, "message": str(err)}), file=sys.stderr)
    return err.exit_code


# ---------------------------------------------------------------- io helpers


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if line.strip():
                    yield n, line
    except OSError as exc:
        raise CliError("input-unreadable", f"{path}: {exc.strerror}") from None


def read_audits(paths: Iterable[str | Path], headers: list | None = None) -> list[dict[str, Any]]:
    """Audit records from one or more JSONL files. Provenance header lines
    are skipped, or collected into ``headers`` when given."""
    out = []
    for path in paths:
        for n, line in _read_lines(path):
            try:
                doc = json.loads(line)
            except json.JSONDecodeError:
                raise CliError("bad-audit-file", f"{path}:{n}: not JSON", EXIT_DATA) from None
            if "case_id" in doc:
                out.append(doc)
            elif headers is not None and "provenance" in doc:
                headers.append(doc["provenance"])
    return out


def _load_doc(path: str | Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("input-unreadable", f"{path}: {exc.strerror}") from None
    try:
        if str(path).endswith(".toml"):
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise CliError("bad-config", f"{path}: {exc}") from None


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- config


_FLAG_TO_FIELD = {
    "judge": "judge",
    "tape": "tape",
    "base_url": "base_url",
    "model": "model",
    "rpm": "requests_per_minute",
    "retries": "retries",
    "strict_parsing": "strict_parsing",
    "presence_mode": "presence_mode",
    "presence_scope": "presence_scope",
    "quality_stages": "quality_stages",
    "urgency_scope": "urgency_scope",
    "detect_per_round": "detect_per_round",
    "workers": "workers",
    "judge_workers": "judge_workers",
    "seed": "seed",
    "out": "output",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, overridden by any flag given on the command line."""
    doc: dict[str, Any] = {}
    if getattr(args, "config", None):
        loaded = _load_doc(args.config)
        doc.update(loaded.get("audit", loaded) if isinstance(loaded, dict) else {})
    if getattr(args, "stage_map", None):
        doc["stage_map"] = _load_doc(args.stage_map)
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            doc[name] = value
    mechanisms = getattr(args, "mechanism", None)
    if getattr(args, "all", False):
        doc["mechanisms"] = list(MECHANISMS)
    elif mechanisms:
        doc["mechanisms"] = mechanisms
    try:
        return RunConfig.from_mapping(doc)
    except (ConfigError, TypeError) as exc:
        raise CliError("bad-config", str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_ingest(args: argparse.Namespace) -> int:
    stage_map = _load_doc(args.stage_map) if args.stage_map else None
    lines, problems = [], 0
    for n, line in _read_lines(args.input):
        try:
            case = parse_case(line, stage_map)
        except TrailError as exc:
            problems += 1
            print(json.dumps({"line": n, "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            continue
        for v in validate_case(case):
            problems += 1
            print(json.dumps({"case_id": case.case_id, **v._asdict()}), file=sys.stderr)
        lines.append(serialize_case(case))
    atomic_write(args.out, "".join(line + "\n" for line in lines))
    log.info("ingested %d cases, %d problems", len(lines), problems)
    return EXIT_DATA if args.strict and problems else EXIT_OK


def _manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.jsonl")


def _load_manifest(path: Path) -> dict[str, dict[str, Any]]:
    done: dict[str, dict[str, Any]] = {}
    if not path.exists():
        return done
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # torn tail from an interrupted run
            done[rec["case_id"]] = rec
    return done


def cmd_audit(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    try:
        gateway = build_gateway(config)
    except ConfigError as exc:
        raise CliError("bad-config", str(exc)) from None
    cases, problems = [], 0
    for n, line in _read_lines(args.input):
        try:
            cases.append(parse_case(line, config.stage_map))
        except TrailError as exc:
            problems += 1
            print(json.dumps({"line": n, "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)

    manifest = _manifest_path(args.out)
    done = _load_manifest(manifest) if args.resume else {}
    todo = [c for c in cases if c.case_id not in done]
    log.info("auditing %d cases (%d already done)", len(todo), len(cases) - len(todo))
    mode = "a" if args.resume else "w"
    manifest.parent.mkdir(parents=True, exist_ok=True)

    def run(case):
        return audit_case(case, gateway, config)

    try:
        with open(manifest, mode, encoding="utf-8") as fh:
            if config.workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = pool.map(run, todo)
                    for rec in results:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                        fh.flush()
                        done[rec["case_id"]] = rec
            else:
                for case in todo:
                    rec = run(case)
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()
                    done[rec["case_id"]] = rec
    except BackendUnavailable as exc:
        raise CliError("judge-unavailable", f"{exc} (progress kept; rerun with --resume)") from None

    settings = config.to_dict()
    settings.pop("output", None)
    header = {"provenance": {"generated_at": _timestamp(), "version": __version__, "config": settings,
                             "judge": gateway.config()}}
    body = [json.dumps(header, sort_keys=True)] + [json.dumps(done[c.case_id], sort_keys=True) for c in cases]
    atomic_write(args.out, "\n".join(body) + "\n")
    manifest.unlink()
    problems += sum(len(done[c.case_id]["violations"]) for c in cases)
    return EXIT_DATA if args.strict and problems else EXIT_OK


def _where(pairs: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError("bad-filter", f"--where expects key=value, got {item!r}")
        out[key] = value
    return out


def _aggregate(args: argparse.Namespace):
    headers: list[dict[str, Any]] = []
    records = read_audits(args.input, headers)
    judge = headers[0].get("judge") if headers else None
    try:
        return aggregate(records, args.metric, args.group_by, args.weighting, judge=judge, where=_where(args.where))
    except UnknownMetric as exc:
        raise CliError("unknown-metric", f"unknown metric {exc.args[0]!r} for grouping {args.group_by}") from None
    except ValueError as exc:
        raise CliError("bad-grouping", str(exc)) from None


def cmd_aggregate(args: argparse.Namespace) -> int:
    result = _aggregate(args)
    text = emit(result, "json")
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    first = args.input[0]
    result = None
    if len(args.input) == 1 and str(first).endswith(".json"):
        try:
            result = parse_json(Path(first).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError):
            result = None
    if result is None:
        if not args.metric:
            raise CliError("missing-metric", "--metric is required when reading audit records")
        result = _aggregate(args)
    text = emit(result, args.format, compat_zero=args.compat_zero)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    doc = _load_doc(args.spec)
    seed = args.seed
    if isinstance(doc, list):
        plan = {"specs": doc}
    elif isinstance(doc, dict) and ({"specs", "targets", "mixed"} & set(doc)):
        plan = doc
    else:
        plan = {"specs": [doc]}
    if seed is None:
        seed = int(plan.get("seed", 0))
    try:
        corpus = generate_corpus(plan.get("targets", ()), plan.get("specs", ()), seed, int(plan.get("mixed", 0)))
    except (InvalidSpec, InfeasibleTarget, KeyError, TypeError) as exc:
        raise CliError("bad-spec", str(exc)) from None
    out = Path(args.out)
    atomic_write(out / "cases.jsonl", "".join(serialize_case(g.case) + "\n" for g in corpus.cases))
    atomic_write(
        out / "tape.jsonl",
        "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in corpus.tape.records()),
    )
    atomic_write(out / "truth.jsonl", "".join(json.dumps(t, sort_keys=True) + "\n" for t in corpus.truths))
    atomic_write(out / "achieved.json", json.dumps(corpus.achieved, indent=2, sort_keys=True) + "\n")
    for a in corpus.achieved:
        log.info("%s %s/%s: count %s of %s (delta %s)", a["metric"], a["framework"], a["dataset"], a["count"], a["total"], a["delta"])
    return EXIT_OK


def cmd_kappa(args: argparse.Namespace) -> int:
    try:
        vocab = load_vocabulary(args.vocabulary)
        a = read_annotations(args.a, vocab)
        b = read_annotations(args.b, vocab)
    except UnknownLabel as exc:
        raise CliError("unknown-label", f"label {exc.code!r} is not in the vocabulary", EXIT_DATA) from None
    except (ValueError, KeyError) as exc:
        raise CliError("bad-annotations", str(exc), EXIT_DATA) from None
    try:
        result = cohen_kappa(a, b, args.mode)
    except CaseSetMismatch as exc:
        raise CliError("case-set-mismatch", str(exc), EXIT_DATA) from None
    except DegenerateMarginals:
        out: dict[str, Any] = {"mode": args.mode, "kappa": None}
    else:
        if args.mode == "primary-label":
            out = {"mode": args.mode, "kappa": result}
        else:
            out = {"mode": args.mode, "kappa": result.macro, "per_label": result.per_label}
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collab-audit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="{ingest,audit,aggregate,report,synth,kappa}")

    s = sub.add_parser("ingest", help="parse and validate raw interaction logs")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stage-map", help="JSON/TOML: framework -> {source stage: canonical stage}")
    s.add_argument("--strict", action="store_true", help="exit 1 when any case has violations")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("audit", help="run audit mechanisms over a case file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="TOML or JSON run configuration")
    s.add_argument("--mechanism", action="append", choices=MECHANISMS)
    s.add_argument("--all", action="store_true", help="run every mechanism (the default)")
    s.add_argument("--judge", choices=("scripted", "remote"))
    s.add_argument("--tape")
    s.add_argument("--base-url")
    s.add_argument("--model")
    s.add_argument("--rpm", type=int)
    s.add_argument("--retries", type=int)
    s.add_argument("--strict-parsing", action="store_true")
    s.add_argument("--presence-mode", choices=("JudgeChecked", "LexicalFallback"))
    s.add_argument("--presence-scope", choices=("all", "meta"))
    s.add_argument("--quality-stages", choices=("default", "all"))
    s.add_argument("--urgency-scope", choices=("all", "domain"))
    s.add_argument("--detect-per-round", action="store_true")
    s.add_argument("--stage-map")
    s.add_argument("--workers", type=int)
    s.add_argument("--judge-workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", action="store_true", help="skip cases finished by an interrupted run")
    s.add_argument("--strict", action="store_true", help="exit 1 when input cases have violations")
    s.set_defaults(func=cmd_audit)

    for name, func, help_ in (
        ("aggregate", cmd_aggregate, "aggregate audit records into a JSON table or series"),
        ("report", cmd_report, "render a table or series as csv, json or markdown"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--in", dest="input", required=True, nargs="+")
        s.add_argument("--metric", required=name == "aggregate")
        s.add_argument(
            "--group-by",
            default="framework",
            type=lambda v: {"fw": "framework", "ds": "dataset"}.get(v, v),
            choices=("framework", "dataset", "stage", "round"),
        )
        s.add_argument("--weighting", choices=("case", "dataset"), default="case")
        s.add_argument("--where", action="append", help="keep records with key=value")
        s.add_argument("--out")
        if name == "report":
            s.add_argument("--format", choices=FORMATS, default="markdown")
            s.add_argument("--compat-zero", action="store_true", help="print nulls as 0.00")
        s.set_defaults(func=func)

    s = sub.add_parser("synth", help="generate synthetic cases, a scripted tape and ground truth")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("kappa", help="Cohen's kappa between two annotators")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--mode", choices=("per-label-binary", "primary-label"), default="per-label-binary")
    s.add_argument("--vocabulary")
    s.set_defaults(func=cmd_kappa)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        return _fail(err)
    except BackendUnavailable as exc:
        return _fail(CliError("judge-unavailable", str(exc)))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
