"""Scenario to MetaDrive parameter-map translation.

The emitted config describes the procedural map as a block sequence plus one
spawn descriptor per vehicle. Lane index 0 is the lane closest to the road
centerline of its carriageway. Lanes driven in the forward (eastbound-style)
direction carry the ``>``, ``>>``, ``>>>`` marker triple for the beginning,
middle, and end of the lane; opposing lanes carry the ``<`` family.
"""

from __future__ import annotations

import json
from pathlib import Path

from crashsim.dsl import (
    ActionType,
    InitialPosition,
    RoadType,
    Scenario,
    validate,
)
from crashsim.scene import GeometryParams

CONFIG_FORMAT = "metadrive-param-map v1"
SPAWN_STAGGER_M = 15.0

# road type -> procedural block (kind, MetaDrive block id)
BLOCK_OF_ROAD = {
    RoadType.STRAIGHT: ("straight", "S"),
    RoadType.CURVE: ("curve", "C"),
    RoadType.INTERSECTION: ("cross", "X"),
    RoadType.T_INTERSECTION: ("t_junction", "T"),
    RoadType.MERGING: ("in_ramp", "r"),
}

FORWARD_MARKERS = (">", ">>", ">>>")
REVERSE_MARKERS = ("<", "<<", "<<<")

# positions whose travel reads left-to-right on their own axis use the
# forward marker family
_FORWARD_POSITIONS = {InitialPosition.W2E, InitialPosition.S2N,
                      InitialPosition.MAIN_ROAD, InitialPosition.ON_RAMP}

_ARM_OF_APPROACH = {"W2E": "W", "E2W": "E", "S2N": "S", "N2S": "N"}
_ARM_OF_EXIT = {"W2E": "E", "E2W": "W", "S2N": "N", "N2S": "S"}
_LEFT_OF = {"W2E": "S2N", "S2N": "E2W", "E2W": "N2S", "N2S": "W2E"}
_RIGHT_OF = {"W2E": "N2S", "N2S": "E2W", "E2W": "S2N", "S2N": "W2E"}


class BridgeError(Exception):
    pass


def marker_family(position: InitialPosition) -> tuple[str, str, str]:
    return FORWARD_MARKERS if position in _FORWARD_POSITIONS else REVERSE_MARKERS


def _junction_arms(scenario: Scenario) -> set[str]:
    road = scenario.road_network
    if road.road_type is RoadType.INTERSECTION:
        return {"W", "E", "S", "N"}
    stem_arm = road.stem_direction.value[0]
    through = {"N", "S"} if stem_arm in ("E", "W") else {"W", "E"}
    return through | {stem_arm}


def _check_junction_support(scenario: Scenario) -> None:
    """Reject approach/maneuver combinations the junction topology lacks."""
    arms = _junction_arms(scenario)
    for i, actor in enumerate(scenario.actors, start=1):
        direction = actor.initial_position.value
        if _ARM_OF_APPROACH[direction] not in arms:
            raise BridgeError(
                f"vehicle {i}: no {direction} approach at this "
                f"{scenario.road_network.road_type.value}")
        action = actor.actions[0]
        if action is ActionType.TURN_LEFT:
            exit_dir = _LEFT_OF[direction]
        elif action is ActionType.TURN_RIGHT:
            exit_dir = _RIGHT_OF[direction]
        else:
            exit_dir = direction
        if _ARM_OF_EXIT[exit_dir] not in arms:
            raise BridgeError(
                f"vehicle {i}: {action.value} from {direction} has no exit arm "
                f"at this {scenario.road_network.road_type.value}")


def _spawn_lane_index(scenario: Scenario, position: InitialPosition) -> int:
    # merging traffic interacts in the outermost through lane, next to the ramp
    if position is InitialPosition.MAIN_ROAD:
        return scenario.road_network.num_lanes - 1
    return 0


def emit_config(scenario: Scenario, gp: GeometryParams | None = None,
                case_id: str | None = None) -> dict:
    """Translate a validated scenario into a parameter-map config mapping."""
    gp = gp or GeometryParams()
    issues = validate(scenario)
    if issues:
        raise BridgeError("invalid scenario: "
                          + "; ".join(f"{i.path}: {i.message}" for i in issues))
    road = scenario.road_network
    if road.road_type in (RoadType.INTERSECTION, RoadType.T_INTERSECTION):
        _check_junction_support(scenario)
    elif road.road_type in (RoadType.STRAIGHT, RoadType.CURVE, RoadType.MERGING):
        for i, actor in enumerate(scenario.actors, start=1):
            if actor.actions[0] is not ActionType.MOVE_FORWARD:
                raise BridgeError(
                    f"vehicle {i}: {actor.actions[0].value} is unsupported on a "
                    f"{road.road_type.value} road (no junction to turn at)")

    kind, block_id = BLOCK_OF_ROAD[road.road_type]
    block = {
        "kind": kind,
        "block_id": block_id,
        "total_lanes": road.num_lanes,
        "lane_width_m": gp.lane_width,
        "segment_length_m": gp.segment_length,
    }
    if road.road_type is RoadType.T_INTERSECTION:
        block["stem_direction"] = road.stem_direction.value
    if road.road_type is RoadType.CURVE:
        block["radius_m"] = gp.curve_radius
    if road.road_type is RoadType.MERGING:
        block["ramp_angle_deg"] = gp.ramp_angle_deg

    spawns = []
    slot_counts: dict[str, int] = {}
    for i, actor in enumerate(scenario.actors, start=1):
        approach = actor.initial_position.value
        slot = slot_counts.get(approach, 0)
        slot_counts[approach] = slot + 1
        spawns.append({
            "vehicle": i,
            "model": actor.model.value,
            "approach": approach,
            "lane_index": _spawn_lane_index(scenario, actor.initial_position),
            "longitudinal_offset_m": SPAWN_STAGGER_M * slot,
            "markers": list(marker_family(actor.initial_position)),
            "actions": [a.value for a in actor.actions],
            "speed_limit_mph": actor.speed_limit,
        })

    return {
        "format": CONFIG_FORMAT,
        "case_id": case_id,
        "road_type": road.road_type.value,
        "map_sequence": block_id,
        "blocks": [block],
        "spawns": spawns,
        "environment": {"time": scenario.env.time.value,
                        "weather": scenario.env.weather.value},
    }


def config_to_text(config: dict) -> str:
    return json.dumps(config, indent=1, sort_keys=True) + "\n"


def write_config(config: dict, path: Path) -> None:
    Path(path).write_text(config_to_text(config))


def load_config(path: Path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("format") != CONFIG_FORMAT:
        raise BridgeError(f"{path}: unknown config format {data.get('format')!r}")
    return data
