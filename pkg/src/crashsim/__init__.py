"""Crash-report-driven scenario extraction, compilation, simulation, and scoring."""

from .cases import CrashReport, load_case_dir, load_cases
from .dsl import (
    Actor,
    ActionType,
    CardinalDirection,
    Environment,
    InitialPosition,
    RoadNetwork,
    RoadType,
    Scenario,
    TimeOfDay,
    ValidationIssue,
    VehicleModel,
    Weather,
    encode_raw_response,
    parse_scenario,
    serialize_scenario,
    validate,
)
from .evaluate import (
    AccuracyReport,
    OracleRecord,
    TestReport,
    UTestResult,
    aggregate_report,
    check_reproduction,
    mann_whitney_u,
    score_extraction,
)
from .gateway import BackendConfig, Cassette, LlmClient, LlmResponse
from .knowledge import (
    KnowledgeBase,
    KnowledgeEntry,
    MetaMessage,
    PromptBundle,
    build_extraction_prompts,
    build_meta_prompts,
    default_kb_dir,
    index_lookup,
    load_knowledge_base,
)
from .microsim import IdmParams, SimConfig, Trace, detect_collision, idm_accel, run, run_all_egos
from .pipeline import ExtractionResult, PipelineConfig, extract_scenario, run_batch
from .scene import CompiledScene, GeometryParams, build_road, compile_scenario, place_actor

__version__ = "0.1.0"
