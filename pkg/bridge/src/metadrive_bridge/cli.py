"""Console entry point for the bridge: emit configs, optionally run them live."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from crashsim.dsl import parse_scenario
from crashsim.scene import GeometryParams

from .config import BridgeError, config_to_text, emit_config
from .runner import STATUS_SKIPPED, run_live


def cmd_emit(args) -> int:
    path = Path(args.scenario)
    scenario = parse_scenario(path.read_text())
    case_id = path.stem.removeprefix("case_")
    try:
        config = emit_config(scenario, GeometryParams(lane_width=args.lane_width),
                             case_id=case_id)
    except BridgeError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    text = config_to_text(config)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_run(args) -> int:
    summary = run_live(Path(args.config), args.ego, args.seed,
                       out_path=Path(args.out) if args.out else None)
    print(f"status: {summary['status']}")
    if summary["status"] == STATUS_SKIPPED:
        return 0
    print(f"termination: {summary['termination']} after {summary['steps']} steps "
          f"(collision: {summary['collision']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crashsim-metadrive",
        description="Translate .scenario files into MetaDrive parameter-map "
                    "configs and optionally execute them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_emit = sub.add_parser("emit", help="emit a parameter-map config for a scenario")
    p_emit.add_argument("scenario", help="a .scenario file")
    p_emit.add_argument("--out", default=None)
    p_emit.add_argument("--lane-width", type=float, default=3.5)
    p_emit.set_defaults(func=cmd_emit)

    p_run = sub.add_parser("run", help="execute an emitted config in MetaDrive")
    p_run.add_argument("config", help="config file from 'emit'")
    p_run.add_argument("--ego", type=int, default=0)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
