"""Record the bundled replay cassette from the scripted fixture replies.

Runs the real pipeline in record mode with the transport replaced by the
scripted responder, so every fingerprint in the cassette is produced by the
same code paths replay uses. Run from the repository root:

    python3 tests/fixtures/make_cassette.py
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent
sys.path.insert(0, str(FIXTURES.parents[1] / "tests"))

os.environ.setdefault("OPENAI_API_KEY", "fixture-recording")

from crashsim.cases import load_cases
from crashsim.gateway import BackendConfig, LlmClient
from crashsim.knowledge import default_kb_dir, load_knowledge_base
from crashsim.pipeline import CaseFailure, PipelineConfig, run_batch

from responses import scripted_responder  # noqa: E402


class ScriptedRecorder(LlmClient):
    def __init__(self, cfg: BackendConfig):
        super().__init__(cfg)
        self._responder = scripted_responder()

    def _live_call(self, bundle):
        return self._responder(bundle), {"total_tokens": 0}, 1.0


def main() -> None:
    cassette = FIXTURES / "cassette" / "fixtures.ndrec"
    cassette.parent.mkdir(parents=True, exist_ok=True)
    if cassette.exists():
        cassette.unlink()

    client = ScriptedRecorder(BackendConfig(mode="record", cassette_path=cassette))
    reports = load_cases(FIXTURES / "cases")
    kb = load_knowledge_base(default_kb_dir())

    configs = [
        PipelineConfig(),  # full pipeline
        PipelineConfig(enable_prompt_generation=False),  # untargeted prompt ablation
    ]
    for cfg in configs:
        outcomes = run_batch(client, reports, kb if cfg.enable_prompt_generation else None, cfg)
        for outcome in outcomes:
            if isinstance(outcome, CaseFailure):
                raise SystemExit(f"recording failed for {outcome.case_id}: {outcome.error}")
    print(f"wrote {cassette} ({len(client._cassette)} entries, "
          f"{client.live_requests} scripted calls)")


if __name__ == "__main__":
    main()
