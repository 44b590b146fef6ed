"""Command-line entry point: extract, test, and score workflows.

Every command writes only inside its ``--out`` directory and drops a
``manifest.json`` recording the configuration snapshot and inputs. Trace and
report files carry no wall-clock data, so a replayed or seeded run is
byte-reproducible; timings live in a separate ``timings.json``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
import uuid
from dataclasses import asdict
from pathlib import Path

from . import dsl
from .cases import load_cases
from .evaluate import (
    EvaluationError,
    OracleRecord,
    aggregate_report,
    check_reproduction,
    format_report_table,
    score_extraction,
)
from .gateway import BackendConfig, Cassette, GatewayError, LlmClient
from .knowledge import default_kb_dir, load_knowledge_base
from .microsim import SimConfig, emit_trace_plot, run_all_egos, trace_to_text
from .pipeline import CaseFailure, PipelineConfig, run_batch
from .scene import GeometryParams, compile_scenario, coordinate_config, scene_to_dict


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json(path: Path, data: dict) -> None:
    _atomic_write(path, json.dumps(data, indent=1, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, config: dict, inputs: list[str],
                    extra: dict | None = None) -> None:
    manifest = {
        "run_id": str(uuid.uuid4()),
        "command": command,
        "config": config,
        "inputs": inputs,
        "created_unix": time.time(),
    }
    manifest.update(extra or {})
    _write_json(out / "manifest.json", manifest)


def _case_id_from(path: Path) -> str:
    return path.stem.removeprefix("case_")


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args) -> int:
    out = Path(args.out)
    reports = load_cases(Path(args.cases))
    if not reports:
        print(f"no cases found under {args.cases}", file=sys.stderr)
        return 2

    pipeline_cfg = PipelineConfig(
        enable_prompt_generation=not args.no_prompt_generation,
        enable_self_validation=not args.no_self_validation,
        max_validation_retries=args.max_validation_retries,
    )
    backend_cfg = BackendConfig(
        mode=args.llm_mode,
        model=args.model,
        endpoint=args.endpoint,
        temperature=args.temperature,
        cassette_path=Path(args.cassette) if args.cassette else None,
        requests_per_minute=args.requests_per_minute,
    )
    try:
        client = LlmClient(backend_cfg)
    except GatewayError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    kb = None
    if pipeline_cfg.enable_prompt_generation:
        kb = load_knowledge_base(Path(args.kb) if args.kb else default_kb_dir())
        missing = kb.missing_road_types()
        if missing:
            print("knowledge base is missing road types: "
                  + ", ".join(rt.value for rt in missing), file=sys.stderr)

    outcomes = run_batch(client, reports, kb, pipeline_cfg, jobs=args.jobs)
    successes = 0
    for outcome in outcomes:
        if isinstance(outcome, CaseFailure):
            print(f"case {outcome.case_id}: FAILED: {outcome.error}", file=sys.stderr)
            _write_json(out / f"case_{outcome.case_id}.audit",
                        {"case_id": outcome.case_id, "failed": True,
                         "error": outcome.error})
            continue
        successes += 1
        _atomic_write(out / f"case_{outcome.case_id}.scenario",
                      dsl.serialize_scenario(outcome.scenario))
        _write_json(out / f"case_{outcome.case_id}.audit", outcome.to_audit_dict())
        print(f"case {outcome.case_id}: ok "
              f"(meta tries {outcome.attempts.meta_tries}, "
              f"scenario tries {outcome.attempts.scenario_tries})")

    extra = {}
    if backend_cfg.mode == "replay":
        extra["cassette_digest"] = Cassette(backend_cfg.cassette_path).digest()
    _write_manifest(
        out, "extract",
        {
            "pipeline": asdict(pipeline_cfg),
            "backend": {"mode": backend_cfg.mode, "model": backend_cfg.model,
                        "endpoint": backend_cfg.endpoint,
                        "temperature": backend_cfg.temperature,
                        "max_retries": backend_cfg.max_retries,
                        "cassette": str(backend_cfg.cassette_path or "")},
            "jobs": args.jobs,
        },
        [r.case_id for r in reports],
        extra,
    )
    print(f"{successes}/{len(reports)} cases extracted -> {out}")
    return 0 if successes > 0 else 1


# ---------------------------------------------------------------------------
# test


def _simulate_one(path: Path, gp: GeometryParams, sim_cfg: SimConfig):
    case_id = _case_id_from(path)
    started = time.perf_counter()
    scenario = dsl.parse_scenario(path.read_text())
    scene = compile_scenario(scenario, gp, case_id=case_id)
    traces = run_all_egos(scene, sim_cfg)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return case_id, scenario, scene, traces, elapsed_ms


def cmd_test(args) -> int:
    out = Path(args.out)
    paths = [Path(p) for p in args.scenarios]
    expanded: list[Path] = []
    for p in paths:
        if p.is_dir():
            expanded.extend(sorted(p.glob("*.scenario")))
        else:
            expanded.append(p)
    if not expanded:
        print("no scenario files given", file=sys.stderr)
        return 2

    gp = GeometryParams(lane_width=args.lane_width)
    sim_cfg = SimConfig(seed=args.seed)
    oracle_dir = Path(args.oracles) if args.oracles else None

    def work(path: Path):
        try:
            return _simulate_one(path, gp, sim_cfg)
        except Exception as exc:
            return (path, exc)

    if args.jobs > 1 and len(expanded) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, expanded))
    else:
        results = [work(p) for p in expanded]

    all_traces = []
    timings = []
    reproductions = []
    trace_rows = []
    failures = 0
    for result in results:
        if len(result) == 2:
            path, exc = result
            failures += 1
            print(f"{path}: FAILED: {exc}", file=sys.stderr)
            continue
        case_id, scenario, scene, traces, elapsed_ms = result
        timings.append({"case_id": case_id, "ms": elapsed_ms})
        if args.emit_scenes:
            _write_json(out / "scenes" / f"case_{case_id}.scene", scene_to_dict(scene))
            _write_json(out / "scenes" / f"case_{case_id}.coords",
                        coordinate_config(scene, gp))
        oracle = None
        if oracle_dir is not None:
            oracle_path = oracle_dir / f"case_{case_id}.scenario"
            if oracle_path.is_file():
                oracle = dsl.parse_scenario(oracle_path.read_text())
        case_reproduced = False
        for trace in traces:
            name = f"case_{case_id}_ego{trace.ego_index}"
            _atomic_write(out / "traces" / f"{name}.trace", trace_to_text(trace))
            if args.emit_plots:
                (out / "plots").mkdir(parents=True, exist_ok=True)
                emit_trace_plot(scene, trace, out / "plots" / f"{name}.png")
            reproduced = False
            if args.check_reproduction:
                reproduced = check_reproduction(trace, scenario, oracle=oracle)
                case_reproduced = case_reproduced or reproduced
            trace_rows.append({
                "case_id": case_id,
                "ego": trace.ego_index,
                "termination": trace.termination,
                "steps": trace.n_steps,
                "violation_pair": list(trace.violations[0].pair) if trace.violations else None,
                "reproduced": reproduced if args.check_reproduction else None,
            })
            all_traces.append(trace)
        if args.check_reproduction:
            reproductions.append((case_id, case_reproduced))

    if not all_traces:
        print("no scenario could be simulated", file=sys.stderr)
        return 2

    report = aggregate_report(all_traces,
                              timings_ms=[t["ms"] for t in timings],
                              reproductions=reproductions or None)
    report_data = report.to_dict()
    report_data["traces"] = trace_rows
    _write_json(out / "report.json", report_data)
    _write_json(out / "timings.json",
                {"per_scenario": timings,
                 "per_trace_ms": [t.wall_ms for t in all_traces]})
    _write_manifest(
        out, "test",
        {"geometry": asdict(gp), "sim": {"dt": sim_cfg.dt,
                                         "max_steps": sim_cfg.max_steps,
                                         "seed": sim_cfg.seed,
                                         "idm": asdict(sim_cfg.idm)},
         "jobs": args.jobs,
         "check_reproduction": bool(args.check_reproduction)},
        [p.name for p in expanded],
    )
    print(format_report_table(report))
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# score


def _load_scenario_dir(directory: Path) -> dict[str, dsl.Scenario]:
    out = {}
    for path in sorted(directory.glob("*.scenario")):
        out[_case_id_from(path)] = dsl.parse_scenario(path.read_text())
    return out


def cmd_score(args) -> int:
    out = Path(args.out)
    predictions = _load_scenario_dir(Path(args.predictions))
    oracle_scenarios = _load_scenario_dir(Path(args.oracles))
    if not predictions:
        print(f"no predictions found under {args.predictions}", file=sys.stderr)
        return 2
    unmatched = sorted(set(predictions) - set(oracle_scenarios))
    if unmatched:
        for case_id in unmatched:
            print(f"no oracle for case {case_id}", file=sys.stderr)
        return 2

    try:
        report = score_extraction(
            [(case_id, s) for case_id, s in sorted(predictions.items())],
            [OracleRecord(case_id, s) for case_id, s in oracle_scenarios.items()])
    except EvaluationError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    _write_json(out / "accuracy.json", report.to_dict())
    _write_manifest(out, "score", {}, sorted(predictions))
    print(f"{'Metric':<26} {'Value':>8}")
    print("-" * 35)
    for label, value in (("Road Network Accuracy", report.road_network_accuracy),
                         ("Actors Accuracy", report.actors_accuracy),
                         ("Env Accuracy", report.env_accuracy),
                         ("Overall Accuracy", report.overall_accuracy)):
        print(f"{label:<26} {value * 100:>7.1f}%")
    return 0


# ---------------------------------------------------------------------------


def _load_config_file(path: Path) -> dict:
    """Key = value defaults; keys use flag destination names (llm_mode, jobs, ...)."""
    overrides = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        value = value.strip().strip("'\"")
        if value.lower() in ("true", "false"):
            parsed: object = value.lower() == "true"
        else:
            try:
                parsed = int(value)
            except ValueError:
                try:
                    parsed = float(value)
                except ValueError:
                    parsed = value
        overrides[key.strip().replace("-", "_")] = parsed
    return overrides


def build_parser(defaults: dict | None = None) -> argparse.ArgumentParser:
    d = defaults or {}

    def dv(key, fallback):
        return d.get(key, fallback)

    parser = argparse.ArgumentParser(
        prog="crashsim",
        description="Extract driving scenarios from crash reports, compile them "
                    "into 2D scenes, and test a driving controller against them.")
    parser.add_argument("--config", default=None,
                        help="key = value file supplying flag defaults; "
                             "explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="run the extraction pipeline over a case directory")
    p_extract.add_argument("cases", help="directory of case_<id>/ subdirectories")
    p_extract.add_argument("kb", nargs="?", default=None,
                           help="knowledge base directory (default: bundled)")
    p_extract.add_argument("--out", required=True)
    p_extract.add_argument("--llm-mode", choices=("live", "record", "replay"),
                           default=dv("llm_mode", "replay"))
    p_extract.add_argument("--cassette", default=dv("cassette", None))
    p_extract.add_argument("--model", default=dv("model", "gpt-4o"))
    p_extract.add_argument("--endpoint",
                           default=dv("endpoint",
                                      "https://api.openai.com/v1/chat/completions"))
    p_extract.add_argument("--temperature", type=float, default=dv("temperature", 0.0))
    p_extract.add_argument("--requests-per-minute", type=float,
                           default=dv("requests_per_minute", None))
    p_extract.add_argument("--no-prompt-generation", action="store_true",
                           default=dv("no_prompt_generation", False))
    p_extract.add_argument("--no-self-validation", action="store_true",
                           default=dv("no_self_validation", False))
    p_extract.add_argument("--max-validation-retries", type=int,
                           default=dv("max_validation_retries", 2))
    p_extract.add_argument("--jobs", type=int, default=dv("jobs", os.cpu_count() or 1))
    p_extract.set_defaults(func=cmd_extract)

    p_test = sub.add_parser("test", help="compile and simulate scenario files")
    p_test.add_argument("scenarios", nargs="+",
                        help="scenario files or directories of *.scenario")
    p_test.add_argument("--out", required=True)
    p_test.add_argument("--seed", type=int, default=dv("seed", 0))
    p_test.add_argument("--jobs", type=int, default=dv("jobs", os.cpu_count() or 1))
    p_test.add_argument("--lane-width", type=float, default=dv("lane_width", 3.5))
    p_test.add_argument("--emit-plots", action="store_true")
    p_test.add_argument("--emit-scenes", action="store_true",
                        help="also write compiled scene and coordinate-list files")
    p_test.add_argument("--check-reproduction", action="store_true")
    p_test.add_argument("--oracles", default=None,
                        help="oracle scenario directory for road-type agreement")
    p_test.set_defaults(func=cmd_test)

    p_score = sub.add_parser("score", help="score predictions against oracles")
    p_score.add_argument("predictions", help="directory of predicted *.scenario files")
    p_score.add_argument("oracles", help="directory of oracle *.scenario files")
    p_score.add_argument("--out", required=True)
    p_score.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    defaults = None
    if "--config" in argv:
        config_path = Path(argv[argv.index("--config") + 1])
        defaults = _load_config_file(config_path)
    args = build_parser(defaults).parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
