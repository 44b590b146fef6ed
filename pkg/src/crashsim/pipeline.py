"""Two-stage extraction pipeline with self-validation and ablation toggles.

Stage one asks the model for a meta message (road type, car count, driving
directions). Stage two retrieves the matching analysis template and asks for
the full scenario, which the regex encoder maps onto the DSL. Each stage can
be gated by a self-validation round: the model re-reads the report, the
original query, and its own output, and anything other than a reply starting
with "Pass" triggers a re-execution, bounded by ``max_validation_retries``.
"""

from __future__ import annotations

import concurrent.futures
import re
from dataclasses import dataclass, field

from . import dsl
from .cases import CrashReport
from .gateway import LlmClient, fingerprint_bundle
from .knowledge import (
    ChatMessage,
    EXTRACTION_SYSTEM_PERSONA,
    KnowledgeBase,
    MetaMessage,
    OUTPUT_SKELETON,
    PromptBundle,
    build_extraction_prompts,
    build_meta_prompts,
    image_part,
    index_lookup,
    text_part,
)

VALIDATOR_SYSTEM_PERSONA = (
    "Role: A meticulous reviewer who checks extracted traffic crash data "
    "against the source report.")

_PASS_RE = re.compile(r"^\W*pass\b", re.IGNORECASE)


class ExtractionError(Exception):
    pass


class MetaParseError(ExtractionError):
    pass


@dataclass(frozen=True)
class ValidationVerdict:
    passed: bool
    rationale: str = ""

    def __post_init__(self):
        if not self.passed and not self.rationale:
            raise ValueError("a failed verdict needs a rationale")


@dataclass(frozen=True)
class PipelineConfig:
    enable_prompt_generation: bool = True
    enable_self_validation: bool = True
    max_validation_retries: int = 2

    def __post_init__(self):
        if self.max_validation_retries < 1:
            raise ValueError("max_validation_retries must be >= 1")


@dataclass
class Attempts:
    meta_tries: int = 0
    scenario_tries: int = 0


@dataclass
class ExtractionResult:
    case_id: str
    meta: MetaMessage
    scenario: dsl.Scenario
    attempts: Attempts
    transcripts: list[dict] = field(default_factory=list)
    kb_lookups: int = 0
    validation_calls: int = 0
    meta_validation_exhausted: bool = False
    scenario_validation_exhausted: bool = False
    degraded_missing_sketch: bool = False
    warnings: tuple[str, ...] = ()

    def to_audit_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "meta": {
                "road_type": self.meta.road_type.value,
                "num_cars": self.meta.num_cars,
                "driving_directions": list(self.meta.driving_directions),
            },
            "scenario": dsl.scenario_to_tree(self.scenario),
            "attempts": {"meta_tries": self.attempts.meta_tries,
                         "scenario_tries": self.attempts.scenario_tries},
            "kb_lookups": self.kb_lookups,
            "validation_calls": self.validation_calls,
            "meta_validation_exhausted": self.meta_validation_exhausted,
            "scenario_validation_exhausted": self.scenario_validation_exhausted,
            "degraded_missing_sketch": self.degraded_missing_sketch,
            "warnings": list(self.warnings),
            "transcripts": self.transcripts,
        }


@dataclass(frozen=True)
class CaseFailure:
    case_id: str
    error: str


# ---------------------------------------------------------------------------
# meta message parsing


_META_ROAD_RE = re.compile(r"['\"]Road type['\"]\s*:\s*['\"]([^'\"]+)['\"]", re.IGNORECASE)
_META_CARS_RE = re.compile(r"['\"]Number of cars['\"]\s*:\s*['\"]?(\d+)", re.IGNORECASE)
_META_DIRS_RE = re.compile(
    r"['\"]Driving directions?['\"]\s*:\s*(\[[^\]]*\]|['\"][^'\"]+['\"])", re.IGNORECASE)


def parse_meta_response(text: str) -> MetaMessage:
    """Parse the meta output format; the last stated value for each key wins."""
    roads = _META_ROAD_RE.findall(text)
    cars = _META_CARS_RE.findall(text)
    dirs_raw = _META_DIRS_RE.findall(text)
    missing = [label for label, found in (("Road type", roads), ("Number of cars", cars),
                                          ("Driving direction", dirs_raw)) if not found]
    if missing:
        raise MetaParseError("meta reply is missing " + ", ".join(missing))
    try:
        road_type = dsl.RoadType.parse(roads[-1])
    except ValueError as exc:
        raise MetaParseError(str(exc)) from None
    num_cars = int(cars[-1])

    blob = dirs_raw[-1]
    if blob.startswith("["):
        directions = re.findall(r"['\"]([^'\"]+)['\"]", blob)
        if not directions:
            directions = [p.strip() for p in blob.strip("[]").split(",") if p.strip()]
    else:
        directions = re.split(r"\s*(?:,|;|\band\b|&)\s*", blob.strip("'\""))
        directions = [d.strip() for d in directions if d.strip()]
    if len(directions) != num_cars:
        raise MetaParseError(
            f"meta reply states {num_cars} cars but {len(directions)} driving "
            f"directions: {directions}")
    return MetaMessage(road_type=road_type, num_cars=num_cars,
                       driving_directions=tuple(directions))


# ---------------------------------------------------------------------------
# self-validation


def build_validation_bundle(report: CrashReport, query: str, artifact: str) -> PromptBundle:
    parts = []
    if report.sketch is not None:
        parts.append(image_part(report.sketch, report.sketch_media_type))
    parts.append(text_part(
        f"Original query:\n{query}\n\n"
        f"Extracted output:\n{artifact}\n\n"
        f"Crash summary:\n{report.summary}\n\n"
        "Check the extracted output against the sketch and the summary. "
        "Reply with the single word Pass if every field is consistent with the "
        "source; otherwise reply Fail followed by the reason."))
    bundle = PromptBundle(messages=(
        ChatMessage("system", (text_part(VALIDATOR_SYSTEM_PERSONA),)),
        ChatMessage("user", tuple(parts)),
    ))
    bundle.check()
    return bundle


def self_validate(client: LlmClient, report: CrashReport, query: str,
                  artifact: str) -> tuple[ValidationVerdict, dict]:
    """One validation round; the reply's leading token decides the verdict."""
    if not artifact.strip():
        raise ValueError("artifact text must be non-empty")
    bundle = build_validation_bundle(report, query, artifact)
    response = client.complete(bundle)
    passed = bool(_PASS_RE.match(response.text))
    verdict = ValidationVerdict(passed=passed,
                                rationale="" if passed else response.text.strip())
    transcript = {"phase": "validation", "fingerprint": fingerprint_bundle(bundle),
                  "response": response.text, "passed": passed}
    return verdict, transcript


def _first_user_text(bundle: PromptBundle) -> str:
    return "\n".join(p.text for p in bundle.messages[1].parts if p.kind == "text")


# ---------------------------------------------------------------------------
# stage one: meta message


def extract_meta(client: LlmClient, report: CrashReport,
                 cfg: PipelineConfig) -> tuple[MetaMessage, Attempts, list[dict], bool, int]:
    """Run meta extraction with its validation loop.

    Returns (meta, attempts, transcripts, validation_exhausted, validation_calls).
    Parse failures consume retries like validation failures do; if no try ever
    parses, the last parse error propagates.
    """
    bundle = build_meta_prompts(report)
    query = _first_user_text(bundle)
    attempts = Attempts()
    transcripts: list[dict] = []
    validation_calls = 0
    meta: MetaMessage | None = None
    validated = False
    last_error: Exception | None = None

    for attempt in range(cfg.max_validation_retries):
        attempts.meta_tries = attempt + 1
        response = client.complete(bundle)
        transcripts.append({"phase": "meta", "fingerprint": fingerprint_bundle(bundle),
                            "response": response.text})
        try:
            meta = parse_meta_response(response.text)
        except MetaParseError as exc:
            last_error = exc
            meta = None
            continue
        if not cfg.enable_self_validation:
            validated = True
            break
        verdict, transcript = self_validate(client, report, query, response.text)
        validation_calls += 1
        transcripts.append(transcript)
        if verdict.passed:
            validated = True
            break

    if meta is None:
        raise MetaParseError(
            f"meta output unparseable after {attempts.meta_tries} tries: {last_error}")
    exhausted = cfg.enable_self_validation and not validated
    return meta, attempts, transcripts, exhausted, validation_calls


# ---------------------------------------------------------------------------
# stage two: scenario extraction


def build_generic_extraction_prompts(report: CrashReport) -> PromptBundle:
    """Single untargeted prompt used when prompt generation is disabled.

    Embeds the full DSL grammar with no retrieved template and no worked
    example, mirroring the ablated configuration.
    """
    parts = []
    if report.sketch is not None:
        parts.append(image_part(report.sketch, report.sketch_media_type))
    parts.append(text_part(
        "Extract the scenario representation from the crash report below, "
        "following this DSL:\n\n"
        f"{dsl.dsl_grammar_text()}\n"
        f"Output format:\n{OUTPUT_SKELETON}\n\n"
        f"Crash summary:\n{report.summary}"))
    bundle = PromptBundle(
        messages=(
            ChatMessage("system", (text_part(EXTRACTION_SYSTEM_PERSONA),)),
            ChatMessage("user", tuple(parts)),
        ),
        degraded_missing_sketch=report.sketch is None,
    )
    bundle.check()
    return bundle


def extract_scenario(client: LlmClient, report: CrashReport,
                     kb: KnowledgeBase | None, cfg: PipelineConfig) -> ExtractionResult:
    """Full pipeline for one case: meta, retrieval, extraction, encoding."""
    meta, attempts, transcripts, meta_exhausted, validation_calls = extract_meta(
        client, report, cfg)

    kb_lookups = 0
    warnings: tuple[str, ...] = ()
    if cfg.enable_prompt_generation:
        if kb is None:
            raise ExtractionError("prompt generation requires a loaded knowledge base")
        entry = index_lookup(kb, meta)
        kb_lookups += 1
        bundle = build_extraction_prompts(report, entry, expected_road_type=meta.road_type)
        warnings = bundle.warnings
    else:
        bundle = build_generic_extraction_prompts(report)

    query = _first_user_text(bundle)
    scenario: dsl.Scenario | None = None
    validated = False
    last_error: Exception | None = None

    for attempt in range(cfg.max_validation_retries):
        attempts.scenario_tries = attempt + 1
        response = client.complete(bundle)
        transcripts.append({"phase": "scenario", "fingerprint": fingerprint_bundle(bundle),
                            "response": response.text})
        verdict_ok = True
        if cfg.enable_self_validation:
            verdict, transcript = self_validate(client, report, query, response.text)
            validation_calls += 1
            transcripts.append(transcript)
            verdict_ok = verdict.passed
        if verdict_ok:
            try:
                scenario = dsl.encode_raw_response(response.text)
                validated = verdict_ok
                break
            except dsl.EncodingError as exc:
                last_error = exc
                continue
        if attempt + 1 == cfg.max_validation_retries:
            # validation never passed; keep the last artifact if it encodes
            try:
                scenario = dsl.encode_raw_response(response.text)
            except dsl.EncodingError as exc:
                last_error = exc

    if scenario is None:
        raise ExtractionError(
            f"case {report.case_id}: encoder failed after "
            f"{attempts.scenario_tries} tries: {last_error}")

    return ExtractionResult(
        case_id=report.case_id,
        meta=meta,
        scenario=scenario,
        attempts=attempts,
        transcripts=transcripts,
        kb_lookups=kb_lookups,
        validation_calls=validation_calls,
        meta_validation_exhausted=meta_exhausted,
        scenario_validation_exhausted=cfg.enable_self_validation and not validated,
        degraded_missing_sketch=report.sketch is None,
        warnings=warnings,
    )


def run_batch(client: LlmClient, reports: list[CrashReport],
              kb: KnowledgeBase | None, cfg: PipelineConfig,
              jobs: int = 1) -> list[ExtractionResult | CaseFailure]:
    """Run every case, isolating failures; outcomes keep the input order."""
    seen = set()
    for report in reports:
        if report.case_id in seen:
            raise ExtractionError(f"duplicate case_id {report.case_id}")
        seen.add(report.case_id)

    def one(report: CrashReport) -> ExtractionResult | CaseFailure:
        try:
            return extract_scenario(client, report, kb, cfg)
        except Exception as exc:
            return CaseFailure(case_id=report.case_id, error=str(exc))

    if jobs <= 1 or len(reports) <= 1:
        return [one(r) for r in reports]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, reports))
