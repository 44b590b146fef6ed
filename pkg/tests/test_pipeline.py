import pytest

from crashsim import dsl
from crashsim.cases import load_case_dir, load_cases
from crashsim.gateway import LlmResponse
from crashsim.knowledge import default_kb_dir, load_knowledge_base
from crashsim.pipeline import (
    CaseFailure,
    ExtractionError,
    MetaParseError,
    PipelineConfig,
    ValidationVerdict,
    build_generic_extraction_prompts,
    extract_meta,
    extract_scenario,
    parse_meta_response,
    run_batch,
    self_validate,
)

from .fixtures import responses


class FakeClient:
    """In-memory stand-in for the gateway; routes on bundle content."""

    def __init__(self, responder):
        self.responder = responder
        self.bundles = []

    def complete(self, bundle):
        bundle.check()
        self.bundles.append(bundle)
        return LlmResponse(text=self.responder(bundle))


@pytest.fixture(scope="module")
def kb():
    return load_knowledge_base(default_kb_dir())


@pytest.fixture()
def report_117021(fixtures_dir):
    return load_case_dir(fixtures_dir / "cases" / "case_117021")


@pytest.fixture()
def scripted_client():
    return FakeClient(responses.scripted_responder())


class TestParseMetaResponse:
    def test_list_form(self):
        meta = parse_meta_response(
            "{'Road type': 'Intersection', 'Number of cars': 2, "
            "'Driving direction': ['S2N', 'E2W']}")
        assert meta.road_type is dsl.RoadType.INTERSECTION
        assert meta.num_cars == 2
        assert meta.driving_directions == ("S2N", "E2W")

    def test_prose_and_string_form(self):
        meta = parse_meta_response(
            "Here is my answer:\n"
            "{'Road type': 'Merging', 'Number of cars': 2, "
            "'Driving direction': 'On-ramp and Main road'}")
        assert meta.driving_directions == ("On-ramp", "Main road")

    def test_last_statement_wins(self):
        text = (
            "{'Road type': 'Straight', 'Number of cars': 1, 'Driving direction': ['W2E']}\n"
            "Wait, correcting myself:\n"
            "{'Road type': 'Curve', 'Number of cars': 1, 'Driving direction': ['E2W']}")
        meta = parse_meta_response(text)
        assert meta.road_type is dsl.RoadType.CURVE
        assert meta.driving_directions == ("E2W",)

    def test_missing_key_named(self):
        with pytest.raises(MetaParseError, match="Number of cars"):
            parse_meta_response("{'Road type': 'Straight', 'Driving direction': ['W2E']}")

    def test_direction_count_mismatch(self):
        with pytest.raises(MetaParseError, match="2 cars"):
            parse_meta_response(
                "{'Road type': 'Straight', 'Number of cars': 2, "
                "'Driving direction': ['W2E']}")


class TestSelfValidate:
    def test_pass_leading_token(self, report_117021):
        client = FakeClient(lambda b: "Pass - all fields consistent with sketch.")
        verdict, transcript = self_validate(client, report_117021, "query", "artifact")
        assert verdict.passed
        assert transcript["passed"]

    def test_fail_keeps_rationale(self, report_117021):
        client = FakeClient(lambda b: "Fail: vehicle 1 direction contradicts sketch")
        verdict, _ = self_validate(client, report_117021, "query", "artifact")
        assert not verdict.passed
        assert "contradicts" in verdict.rationale

    def test_failed_verdict_requires_rationale(self):
        with pytest.raises(ValueError):
            ValidationVerdict(passed=False, rationale="")


class TestExtractMeta:
    def test_fixture_case(self, scripted_client, report_117021):
        meta, attempts, transcripts, exhausted, calls = extract_meta(
            scripted_client, report_117021, PipelineConfig())
        assert meta.road_type is dsl.RoadType.INTERSECTION
        assert meta.num_cars == 2
        assert meta.driving_directions == ("S2N", "E2W")
        assert attempts.meta_tries == 1
        assert not exhausted
        assert calls == 1

    def test_unparseable_reply_consumes_retries(self, report_117021):
        client = FakeClient(lambda b: "{'Road type': 'Intersection'}")
        with pytest.raises(MetaParseError, match="after 2 tries"):
            extract_meta(client, report_117021, PipelineConfig())
        # two meta executions, no validation rounds (nothing parsed)
        assert len(client.bundles) == 2

    def test_failed_validation_triggers_one_reexecution(self, report_117021):
        state = {"validations": 0}

        def responder(bundle):
            if bundle.messages[0].parts[0].text.startswith("Role: A meticulous"):
                state["validations"] += 1
                return ("Fail: directions look swapped"
                        if state["validations"] == 1 else "Pass - consistent now.")
            return responses.META_REPLIES["117021"]

        client = FakeClient(responder)
        meta, attempts, _, exhausted, calls = extract_meta(
            client, report_117021, PipelineConfig())
        assert attempts.meta_tries == 2
        assert not exhausted
        assert calls == 2

    def test_validation_exhaustion_keeps_last_meta(self, report_117021):
        def responder(bundle):
            if bundle.messages[0].parts[0].text.startswith("Role: A meticulous"):
                return "Fail: still inconsistent"
            return responses.META_REPLIES["117021"]

        client = FakeClient(responder)
        meta, attempts, _, exhausted, _ = extract_meta(
            client, report_117021, PipelineConfig(max_validation_retries=3))
        assert meta.road_type is dsl.RoadType.INTERSECTION
        assert attempts.meta_tries == 3
        assert exhausted


class TestExtractScenario:
    def test_full_config_reproduces_listing(self, scripted_client, kb,
                                            report_117021, listing2_scenario):
        result = extract_scenario(scripted_client, report_117021, kb, PipelineConfig())
        assert result.scenario == listing2_scenario
        assert result.kb_lookups == 1
        assert result.validation_calls == 2
        assert result.attempts.meta_tries == 1
        assert result.attempts.scenario_tries == 1
        assert not result.scenario_validation_exhausted

    def test_prompt_generation_disabled_skips_kb(self, scripted_client, kb, report_117021):
        before = kb.access_count
        cfg = PipelineConfig(enable_prompt_generation=False)
        result = extract_scenario(scripted_client, report_117021, None, cfg)
        assert result.kb_lookups == 0
        assert kb.access_count == before
        # degraded output shape: the untargeted prompt swaps vehicle positions
        assert result.scenario.actors[0].initial_position is dsl.InitialPosition.W2E

    def test_self_validation_disabled_sends_no_validation(self, scripted_client, kb,
                                                          report_117021):
        cfg = PipelineConfig(enable_self_validation=False)
        result = extract_scenario(scripted_client, report_117021, kb, cfg)
        assert result.validation_calls == 0
        personas = {b.messages[0].parts[0].text for b in scripted_client.bundles}
        assert not any(p.startswith("Role: A meticulous") for p in personas)

    def test_retry_bounds_hold(self, kb, report_117021):
        def responder(bundle):
            if bundle.messages[0].parts[0].text.startswith("Role: A meticulous"):
                return "Fail: no"
            persona = bundle.messages[0].parts[0].text
            if "identifying road types" in persona:
                return responses.META_REPLIES["117021"]
            return responses.SCENARIO_REPLIES["117021"]

        cfg = PipelineConfig(max_validation_retries=2)
        result = extract_scenario(FakeClient(responder), report_117021, kb, cfg)
        assert result.attempts.meta_tries <= cfg.max_validation_retries
        assert result.attempts.scenario_tries <= cfg.max_validation_retries
        assert result.meta_validation_exhausted
        assert result.scenario_validation_exhausted
        assert result.scenario is not None

    def test_encoder_failure_after_retries_raises(self, kb, report_117021):
        def responder(bundle):
            persona = bundle.messages[0].parts[0].text
            if persona.startswith("Role: A meticulous"):
                return "Pass - fine."
            if "identifying road types" in persona:
                return responses.META_REPLIES["117021"]
            return "I could not determine anything useful from this report."

        with pytest.raises(ExtractionError, match="encoder failed"):
            extract_scenario(FakeClient(responder), report_117021, kb, PipelineConfig())

    def test_audit_dict_shape(self, scripted_client, kb, report_117021):
        result = extract_scenario(scripted_client, report_117021, kb, PipelineConfig())
        audit = result.to_audit_dict()
        assert audit["case_id"] == "117021"
        assert audit["kb_lookups"] == 1
        assert audit["validation_calls"] == 2
        assert audit["scenario"]["Scenario"]["Road_network"]["Road_type"] == "Intersection"
        phases = [t["phase"] for t in audit["transcripts"]]
        assert phases == ["meta", "validation", "scenario", "validation"]


class TestRunBatch:
    def test_order_preserved_and_all_succeed(self, scripted_client, kb, fixtures_dir):
        reports = load_cases(fixtures_dir / "cases")
        outcomes = run_batch(scripted_client, reports, kb, PipelineConfig())
        assert [o.case_id for o in outcomes] == [r.case_id for r in reports]
        assert all(not isinstance(o, CaseFailure) for o in outcomes)

    def test_parallel_matches_serial(self, kb, fixtures_dir):
        reports = load_cases(fixtures_dir / "cases")
        serial = run_batch(FakeClient(responses.scripted_responder()), reports, kb,
                           PipelineConfig(), jobs=1)
        parallel = run_batch(FakeClient(responses.scripted_responder()), reports, kb,
                             PipelineConfig(), jobs=8)
        assert [o.to_audit_dict() for o in serial] == [o.to_audit_dict() for o in parallel]

    def test_one_failure_does_not_abort(self, kb, fixtures_dir):
        base = responses.scripted_responder()

        def responder(bundle):
            text = bundle.text_content()
            if "Kenworth" in text and not bundle.messages[0].parts[0].text.startswith(
                    "Role: A meticulous"):
                raise RuntimeError("transport exploded")
            return base(bundle)

        reports = load_cases(fixtures_dir / "cases")
        outcomes = run_batch(FakeClient(responder), reports, kb, PipelineConfig())
        failures = [o for o in outcomes if isinstance(o, CaseFailure)]
        assert len(failures) == 1
        assert failures[0].case_id == "124806"

    def test_empty_batch(self, scripted_client, kb):
        assert run_batch(scripted_client, [], kb, PipelineConfig()) == []

    def test_duplicate_case_ids_rejected(self, scripted_client, kb, report_117021):
        with pytest.raises(ExtractionError, match="duplicate"):
            run_batch(scripted_client, [report_117021, report_117021], kb, PipelineConfig())


class TestGenericPrompt:
    def test_embeds_full_grammar(self, report_117021):
        bundle = build_generic_extraction_prompts(report_117021)
        text = bundle.text_content()
        assert "<Road type>" in text and "T-intersection" in text
        assert "Main road | On-ramp" in text or "Main road" in text
        assert len(bundle.messages) == 2
