import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crashsim import dsl

from .conftest import random_scenario


def valid_scenarios() -> st.SearchStrategy[dsl.Scenario]:
    def build(road_type, num_lanes, stem, actor_specs, time, weather):
        if road_type is dsl.RoadType.MERGING:
            legal = sorted(dsl.MERGING_POSITIONS, key=lambda p: p.value)
        else:
            legal = sorted(dsl.DIRECTIONAL_POSITIONS, key=lambda p: p.value)
        actors = tuple(
            dsl.Actor(model=m, initial_position=legal[p % len(legal)],
                      actions=tuple(a), speed_limit=s)
            for (m, p, a, s) in actor_specs)
        return dsl.Scenario(
            road_network=dsl.RoadNetwork(
                road_type=road_type, num_lanes=num_lanes,
                stem_direction=stem if road_type is dsl.RoadType.T_INTERSECTION else None),
            actors=actors,
            env=dsl.Environment(time=time, weather=weather))

    actor_spec = st.tuples(
        st.sampled_from(list(dsl.VehicleModel)),
        st.integers(min_value=0, max_value=5),
        st.lists(st.sampled_from(list(dsl.ActionType)), min_size=1, max_size=3),
        st.one_of(st.integers(min_value=1, max_value=100).map(float),
                  st.floats(min_value=0.001, max_value=100.0,
                            allow_nan=False, allow_infinity=False)),
    )
    return st.builds(
        build,
        st.sampled_from(list(dsl.RoadType)),
        st.integers(min_value=1, max_value=dsl.MAX_LANES),
        st.sampled_from(list(dsl.CardinalDirection)),
        st.lists(actor_spec, min_size=1, max_size=dsl.MAX_ACTORS),
        st.sampled_from(list(dsl.TimeOfDay)),
        st.sampled_from(list(dsl.Weather)),
    )


class TestParseListing2:
    def test_fields(self, listing2_scenario):
        s = listing2_scenario
        assert s.road_network.road_type is dsl.RoadType.INTERSECTION
        assert s.road_network.num_lanes == 3
        assert s.road_network.stem_direction is None
        assert len(s.actors) == 2
        v1, v2 = s.actors
        assert v1.model is dsl.VehicleModel.SEDAN
        assert v1.initial_position is dsl.InitialPosition.S2N
        assert v1.actions == (dsl.ActionType.MOVE_FORWARD,)
        assert v1.speed_limit == 45.0
        assert v2.model is dsl.VehicleModel.SUV
        assert v2.initial_position is dsl.InitialPosition.E2W
        assert v2.speed_limit == 45.0
        assert s.env.time is dsl.TimeOfDay.NIGHTTIME
        assert s.env.weather is dsl.Weather.CLEAR

    def test_serialization_is_canonical_byte_identical(self, listing2_text, listing2_scenario):
        assert dsl.serialize_scenario(listing2_scenario) == listing2_text

    def test_stem_line_uses_not_applicable(self, listing2_scenario):
        text = dsl.serialize_scenario(listing2_scenario)
        assert "<Stem direction>: Not applicable" in text

    def test_validates_clean(self, listing2_scenario):
        assert dsl.validate(listing2_scenario) == []


class TestParseErrors:
    def test_unknown_weather_enum(self, listing2_text):
        bad = listing2_text.replace("<Weather>: Clear", "<Weather>: Hail")
        with pytest.raises(dsl.DslParseError) as err:
            dsl.parse_scenario(bad)
        assert err.value.path == "Env.Weather"
        assert "Hail" in str(err.value)

    def test_unknown_key_reports_line(self, listing2_text):
        bad = listing2_text.replace("<Weather>: Clear", "<Humidity>: High")
        with pytest.raises(dsl.DslParseError) as err:
            dsl.parse_scenario(bad)
        assert err.value.line is not None
        assert "Humidity" in str(err.value)

    def test_missing_mandatory_field(self, listing2_text):
        bad = "\n".join(l for l in listing2_text.splitlines() if "Weather" not in l) + "\n"
        with pytest.raises(dsl.DslParseError, match="Weather"):
            dsl.parse_scenario(bad)

    def test_garbage_line_has_position(self):
        with pytest.raises(dsl.DslParseError) as err:
            dsl.parse_scenario("<Scenario>:\n  what even is this\n")
        assert err.value.line == 2

    def test_cross_field_rule_rejected_at_parse(self, listing2_text):
        bad = listing2_text.replace("<Initial_position>: S2N", "<Initial_position>: On-ramp")
        with pytest.raises(dsl.DslValidationError) as err:
            dsl.parse_scenario(bad)
        assert any("Initial_position" in i.path for i in err.value.issues)


class TestValidate:
    def test_onramp_on_straight_road(self, listing2_scenario):
        actor = dsl.Actor(model=dsl.VehicleModel.SEDAN,
                          initial_position=dsl.InitialPosition.ON_RAMP,
                          actions=(dsl.ActionType.MOVE_FORWARD,), speed_limit=40.0)
        s = dsl.Scenario(
            road_network=dsl.RoadNetwork(dsl.RoadType.STRAIGHT, 2),
            actors=(actor,), env=listing2_scenario.env)
        issues = dsl.validate(s)
        assert [i.path for i in issues] == ["Actors[1].Initial_position"]

    def test_t_intersection_without_stem(self, listing2_scenario):
        s = dsl.Scenario(
            road_network=dsl.RoadNetwork(dsl.RoadType.T_INTERSECTION, 2),
            actors=listing2_scenario.actors, env=listing2_scenario.env)
        issues = dsl.validate(s)
        assert any(i.path == "RoadNetwork.StemDirection" for i in issues)

    def test_stem_on_plain_intersection(self, listing2_scenario):
        s = dsl.Scenario(
            road_network=dsl.RoadNetwork(dsl.RoadType.INTERSECTION, 2,
                                         dsl.CardinalDirection.NORTH),
            actors=listing2_scenario.actors, env=listing2_scenario.env)
        assert any(i.path == "RoadNetwork.StemDirection" for i in dsl.validate(s))

    def test_speed_limit_range(self, listing2_scenario):
        actor = dsl.Actor(dsl.VehicleModel.SEDAN, dsl.InitialPosition.W2E,
                          (dsl.ActionType.MOVE_FORWARD,), 140.0)
        s = dsl.Scenario(dsl.RoadNetwork(dsl.RoadType.STRAIGHT, 2), (actor,),
                         listing2_scenario.env)
        assert any(i.path == "Actors[1].Speed_limit" for i in dsl.validate(s))


class TestRoundTripProperties:
    @settings(max_examples=300, deadline=None)
    @given(valid_scenarios())
    def test_parse_serialize_identity(self, scenario):
        assert dsl.validate(scenario) == []
        text = dsl.serialize_scenario(scenario)
        assert dsl.parse_scenario(text) == scenario
        # determinism: re-serialization is byte-identical
        assert dsl.serialize_scenario(dsl.parse_scenario(text)) == text

    @settings(max_examples=300, deadline=None)
    @given(valid_scenarios())
    def test_encoder_subsumes_canonical_form(self, scenario):
        assert dsl.encode_raw_response(dsl.serialize_scenario(scenario)) == scenario

    def test_seeded_generator_round_trips(self):
        rng = random.Random(1234)
        for _ in range(500):
            s = random_scenario(rng)
            assert dsl.validate(s) == []
            assert dsl.parse_scenario(dsl.serialize_scenario(s)) == s


class TestEncoder:
    def test_final_output_block_wins(self, listing2_text, listing2_scenario):
        response = (
            "Let me analyze the case step by step.\n"
            "## Step 1: Extract Actors Information\n"
            "- Vehicle 1 (V1):\n"
            "    - Model: Pickup\n"          # restated below; final block wins
            "    - Initial position: N2S\n"
            "## Final Output\n" + listing2_text)
        assert dsl.encode_raw_response(response) == listing2_scenario

    def test_markdown_bullet_ablation_style(self):
        response = (
            "### Explanation:\n"
            "- **Actors**:\n"
            "  - **Vehicle 1 (V1)**:\n"
            "    - Model: Sedan\n"
            "    - Initial position: W2E (waiting to turn left)\n"
            "    - Actions: Attempting to turn left\n"
            "    - Speed: 25 mph\n"
            "  - **Vehicle 2 (V2)**:\n"
            "    - Model: Sedan\n"
            "    - Initial position: N2S (moving north in the northbound lane)\n"
            "    - Actions: Moving forward\n"
            "    - Speed: 45 mph (based on posted speed limit)\n"
            "- **Road Network**:\n"
            "  - Road type: a two-lane, two-way straight residential roadway\n"
            "  - Number of Lanes: 2\n"
            "- **Env**:\n"
            "  - Time: Daytime\n"
            "  - Weather: Snowy, with icy road conditions.\n")
        s = dsl.encode_raw_response(response)
        assert s.actors[0].model is dsl.VehicleModel.SEDAN
        assert s.actors[0].initial_position is dsl.InitialPosition.W2E
        assert s.actors[0].actions == (dsl.ActionType.TURN_LEFT,)
        assert s.actors[1].initial_position is dsl.InitialPosition.N2S
        assert s.actors[1].speed_limit == 45.0
        assert s.road_network.road_type is dsl.RoadType.STRAIGHT
        assert s.road_network.num_lanes == 2
        assert s.env.time is dsl.TimeOfDay.DAYTIME
        assert s.env.weather is dsl.Weather.SNOWY

    def test_missing_road_type_named(self):
        response = (
            "Vehicle 1:\n- Model: Sedan\n- Initial position: W2E\n"
            "- Actions: Move forward\n- Speed limit: 45\n"
            "Time: Daytime\nWeather: Clear\nNumber of lanes: 2\n")
        with pytest.raises(dsl.EncodingError, match="Road type"):
            dsl.encode_raw_response(response)

    def test_unmappable_value_lists_candidates(self):
        response = (
            "Road type: Roundabout\nNumber of lanes: 2\n"
            "Vehicle 1:\n- Model: Sedan\n- Initial position: W2E\n"
            "- Actions: Move forward\n- Speed limit: 45\n"
            "Time: Daytime\nWeather: Clear\n")
        with pytest.raises(dsl.EncodingError, match="Roundabout"):
            dsl.encode_raw_response(response)

    def test_last_occurrence_wins_for_restated_field(self):
        response = (
            "Road type: Straight\nNumber of lanes: 2\n"
            "Vehicle 1:\n- Model: Sedan\n- Initial position: W2E\n"
            "- Actions: Move forward\n- Speed limit: 45\n"
            "Time: Daytime\nWeather: Clear\n"
            "Correction: on reflection the road is as follows.\n"
            "Road type: Curve\n")
        s = dsl.encode_raw_response(response)
        assert s.road_network.road_type is dsl.RoadType.CURVE


class TestMirrorTree:
    def test_round_trip(self, listing2_scenario):
        tree = dsl.scenario_to_tree(listing2_scenario)
        assert tree["Scenario"]["Road_network"]["No._lanes"] == 3
        assert tree["Scenario"]["Road_network"]["Stem_direction"] is None
        assert dsl.scenario_from_tree(tree) == listing2_scenario

    @settings(max_examples=100, deadline=None)
    @given(valid_scenarios())
    def test_tree_round_trip_property(self, scenario):
        assert dsl.scenario_from_tree(dsl.scenario_to_tree(scenario)) == scenario


class TestGrammarText:
    def test_merging_vocabulary_is_isolated(self):
        text = dsl.dsl_grammar_text(dsl.RoadType.MERGING)
        assert "Main road" in text and "On-ramp" in text
        for token in ("W2E", "E2W", "S2N", "N2S"):
            assert token not in text

    def test_directional_vocabulary_excludes_merging_labels(self):
        text = dsl.dsl_grammar_text(dsl.RoadType.INTERSECTION)
        assert "W2E" in text
        assert "Main road" not in text and "On-ramp" not in text

    def test_full_grammar_lists_everything(self):
        text = dsl.dsl_grammar_text()
        for token in ("Straight", "Curve", "Intersection", "T-intersection", "Merging",
                      "W2E", "Main road", "Semi Truck", "Move forward"):
            assert token in text
