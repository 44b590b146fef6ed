from __future__ import annotations

import random
from pathlib import Path

import pytest

from crashsim import dsl

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def listing2_text() -> str:
    return (FIXTURES / "scenarios" / "listing2.scenario").read_text()


@pytest.fixture(scope="session")
def listing2_scenario(listing2_text) -> dsl.Scenario:
    return dsl.parse_scenario(listing2_text)


_ARM_OF_APPROACH = {"W2E": "W", "E2W": "E", "S2N": "S", "N2S": "N"}
_ARM_OF_EXIT = {"W2E": "E", "E2W": "W", "S2N": "N", "N2S": "S"}
_LEFT = {"W2E": "S2N", "S2N": "E2W", "E2W": "N2S", "N2S": "W2E"}
_RIGHT = {"W2E": "N2S", "N2S": "E2W", "E2W": "S2N", "S2N": "W2E"}


def routable_scenario(rng: random.Random) -> dsl.Scenario:
    """Valid scenario whose actor placements are all geometrically realizable."""
    road_type = rng.choice(list(dsl.RoadType))
    stem = rng.choice(list(dsl.CardinalDirection)) if road_type is dsl.RoadType.T_INTERSECTION else None

    def legal_moves():
        if road_type is dsl.RoadType.MERGING:
            return [(p, dsl.ActionType.MOVE_FORWARD) for p in
                    (dsl.InitialPosition.MAIN_ROAD, dsl.InitialPosition.ON_RAMP)]
        directions = [dsl.InitialPosition.W2E, dsl.InitialPosition.E2W,
                      dsl.InitialPosition.S2N, dsl.InitialPosition.N2S]
        if road_type in (dsl.RoadType.STRAIGHT, dsl.RoadType.CURVE):
            return [(p, dsl.ActionType.MOVE_FORWARD) for p in directions]
        if road_type is dsl.RoadType.INTERSECTION:
            arms = {"W", "E", "S", "N"}
        else:
            stem_arm = stem.value[0]
            arms = ({"N", "S"} if stem_arm in ("E", "W") else {"W", "E"}) | {stem_arm}
        moves = []
        for p in directions:
            if _ARM_OF_APPROACH[p.value] not in arms:
                continue
            for action, exit_dir in ((dsl.ActionType.MOVE_FORWARD, p.value),
                                     (dsl.ActionType.TURN_LEFT, _LEFT[p.value]),
                                     (dsl.ActionType.TURN_RIGHT, _RIGHT[p.value])):
                if _ARM_OF_EXIT[exit_dir] in arms:
                    moves.append((p, action))
        return moves

    moves = legal_moves()
    # lane counts >= 2 keep both travel directions present on two-way roads
    min_lanes = 2 if road_type is not dsl.RoadType.MERGING else 1
    actors = []
    for _ in range(rng.randint(1, 4)):
        position, action = rng.choice(moves)
        actors.append(dsl.Actor(
            model=rng.choice(list(dsl.VehicleModel)),
            initial_position=position,
            actions=(action,),
            speed_limit=float(rng.randint(20, 70)),
        ))
    return dsl.Scenario(
        road_network=dsl.RoadNetwork(road_type=road_type,
                                     num_lanes=rng.randint(min_lanes, dsl.MAX_LANES),
                                     stem_direction=stem),
        actors=tuple(actors),
        env=dsl.Environment(time=rng.choice(list(dsl.TimeOfDay)),
                            weather=rng.choice(list(dsl.Weather))),
    )


def random_scenario(rng: random.Random) -> dsl.Scenario:
    """Draw a uniformly-messy valid scenario (shared by property suites)."""
    road_type = rng.choice(list(dsl.RoadType))
    stem = rng.choice(list(dsl.CardinalDirection)) if road_type is dsl.RoadType.T_INTERSECTION else None
    if road_type is dsl.RoadType.MERGING:
        positions = sorted(dsl.MERGING_POSITIONS, key=lambda p: p.value)
    else:
        positions = sorted(dsl.DIRECTIONAL_POSITIONS, key=lambda p: p.value)
    actors = []
    for _ in range(rng.randint(1, dsl.MAX_ACTORS)):
        speed = rng.choice([
            float(rng.randint(1, 100)),
            round(rng.uniform(0.5, 100.0), 1),
            rng.uniform(0.001, 100.0),
        ])
        actors.append(dsl.Actor(
            model=rng.choice(list(dsl.VehicleModel)),
            initial_position=rng.choice(positions),
            actions=tuple(rng.choice(list(dsl.ActionType))
                          for _ in range(rng.randint(1, 3))),
            speed_limit=speed,
        ))
    return dsl.Scenario(
        road_network=dsl.RoadNetwork(road_type=road_type,
                                     num_lanes=rng.randint(1, dsl.MAX_LANES),
                                     stem_direction=stem),
        actors=tuple(actors),
        env=dsl.Environment(time=rng.choice(list(dsl.TimeOfDay)),
                            weather=rng.choice(list(dsl.Weather))),
    )
