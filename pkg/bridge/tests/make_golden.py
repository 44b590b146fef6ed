"""Regenerate the golden config files from the fixture scenarios.

Run from the bridge directory:

    python3 tests/make_golden.py
"""

from pathlib import Path

from crashsim.dsl import parse_scenario

from metadrive_bridge.config import config_to_text, emit_config

HERE = Path(__file__).resolve().parent


def main() -> None:
    golden = HERE / "golden"
    golden.mkdir(exist_ok=True)
    for path in sorted((HERE / "fixtures").glob("*.scenario")):
        scenario = parse_scenario(path.read_text())
        case_id = path.stem.removeprefix("case_")
        config = emit_config(scenario, case_id=case_id)
        out = golden / f"{path.stem}.json"
        out.write_text(config_to_text(config))
        print(f"wrote {out}")


if __name__ == "__main__":
    main()
