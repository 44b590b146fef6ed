"""Compile a scenario into lane geometry, actor poses, and waypoint routes.

Road frames are built around the origin: junctions sit at (0, 0), straight
and curved roads are centered on it. Right-hand traffic throughout. Lane
index 0 is the lane closest to the road centerline of its carriageway; on
the one-way carriageway of a merging road it is the leftmost (inside) lane
and merging traffic joins the outermost one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom
from .dsl import (
    Actor,
    ActionType,
    InitialPosition,
    RoadNetwork,
    RoadType,
    Scenario,
    ValidationIssue,
    validate,
)

MPH_TO_MS = 0.44704
SLOT_STAGGER_M = 15.0
INITIAL_SPEED_FACTOR = 0.8
SAMPLE_SPACING_M = 4.0  # lane polyline sampling, must stay <= 5 m

# length x width in meters per vehicle model
FOOTPRINTS: dict[str, tuple[float, float]] = {
    "Sedan": (4.6, 1.8),
    "SUV": (4.8, 1.9),
    "Minivan": (5.1, 1.9),
    "Pickup": (5.3, 2.0),
    "Semi Truck": (16.0, 2.5),
}


class SceneError(Exception):
    pass


@dataclass(frozen=True)
class GeometryParams:
    lane_width: float = 3.5
    segment_length: float = 200.0
    intersection_box: float = 20.0
    curve_radius: float = 60.0
    ramp_angle_deg: float = 15.0

    def __post_init__(self):
        for name in ("lane_width", "segment_length", "intersection_box",
                     "curve_radius", "ramp_angle_deg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 2.5 <= self.lane_width <= 5.0:
            raise ValueError("lane_width must be within [2.5, 5.0] m")


@dataclass
class Lane:
    direction: str        # travel direction tag: W2E/E2W/S2N/N2S/MAIN/RAMP or turn tag
    index: int            # 0 = closest to the carriageway centerline
    section: str          # "road" | "approach" | "exit" | "ramp" | "connector"
    centerline: np.ndarray
    width: float

    @property
    def lane_id(self) -> str:
        return f"{self.direction}.{self.section}.{self.index}"

    def lengths(self) -> np.ndarray:
        return geom.polyline_lengths(self.centerline)


@dataclass
class Route:
    waypoints: np.ndarray  # (N, 2)
    speeds: np.ndarray     # (N,) target speeds, m/s

    def __post_init__(self):
        if len(self.waypoints) < 3:
            raise SceneError("route needs at least beginning, middle, and end points")
        deltas = np.diff(self.waypoints, axis=0)
        if np.any(np.hypot(deltas[:, 0], deltas[:, 1]) <= 1e-9):
            raise SceneError("route waypoints must be pairwise distinct")

    def lengths(self) -> np.ndarray:
        return geom.polyline_lengths(self.waypoints)


@dataclass
class ActorInit:
    model: str
    length: float
    width: float
    pose: tuple[float, float, float]  # x, y, heading
    initial_speed: float              # m/s
    route: Route


@dataclass
class CompiledScene:
    road_type: str
    lanes: list[Lane]
    actor_inits: list[ActorInit]
    env_time: str
    env_weather: str
    case_id: str | None = None

    def footprint_corners(self, i: int) -> np.ndarray:
        a = self.actor_inits[i]
        x, y, h = a.pose
        return geom.obb_corners(x, y, h, a.length, a.width)


def _sample_line(p0, p1) -> np.ndarray:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    dist = float(np.hypot(*(p1 - p0)))
    n = max(2, int(math.ceil(dist / SAMPLE_SPACING_M)) + 1)
    t = np.linspace(0.0, 1.0, n)
    return p0[None, :] + t[:, None] * (p1 - p0)[None, :]


def _sample_arc(center, radius, phi0, phi1) -> np.ndarray:
    arc = abs(phi1 - phi0) * radius
    n = max(3, int(math.ceil(arc / SAMPLE_SPACING_M)) + 1)
    phi = np.linspace(phi0, phi1, n)
    return np.stack([center[0] + radius * np.cos(phi),
                     center[1] + radius * np.sin(phi)], axis=1)


# Compass direction of travel per position tag, and turn mappings in the
# heading convention (E=W2E, N=S2N, ...).
_LEFT_OF = {"W2E": "S2N", "S2N": "E2W", "E2W": "N2S", "N2S": "W2E"}
_RIGHT_OF = {"W2E": "N2S", "N2S": "E2W", "E2W": "S2N", "S2N": "W2E"}

# arm of the junction each direction approaches from / exits to
_APPROACH_ARM = {"W2E": "W", "E2W": "E", "S2N": "S", "N2S": "N"}
_EXIT_ARM = {"W2E": "E", "E2W": "W", "S2N": "N", "N2S": "S"}


def _split_lanes(total: int) -> tuple[int, int]:
    """(favored, other): eastbound/northbound carries the extra odd lane."""
    return (total + 1) // 2, total // 2


def build_road(rn: RoadNetwork, gp: GeometryParams) -> list[Lane]:
    """Construct the lane set for a road network. See module docstring for frames."""
    issues = _check_network(rn)
    if issues:
        raise SceneError("; ".join(f"{i.path}: {i.message}" for i in issues))
    w = gp.lane_width
    half_len = gp.segment_length / 2.0
    lanes: list[Lane] = []

    if rn.road_type is RoadType.STRAIGHT:
        east_ct, west_ct = _split_lanes(rn.num_lanes)
        for i in range(east_ct):
            y = -(w / 2 + i * w)
            lanes.append(Lane("W2E", i, "road", _sample_line((-half_len, y), (half_len, y)), w))
        for i in range(west_ct):
            y = +(w / 2 + i * w)
            lanes.append(Lane("E2W", i, "road", _sample_line((half_len, y), (-half_len, y)), w))

    elif rn.road_type is RoadType.CURVE:
        r0 = gp.curve_radius
        center = (0.0, r0)
        fwd_ct, rev_ct = _split_lanes(rn.num_lanes)
        for i in range(fwd_ct):
            r = r0 + (w / 2 + i * w)
            lanes.append(Lane("W2E", i, "road",
                              _sample_arc(center, r, -math.pi / 2, 0.0), w))
        for i in range(rev_ct):
            r = r0 - (w / 2 + i * w)
            if r <= 0:
                raise SceneError("curve radius too small for the lane count")
            lanes.append(Lane("E2W", i, "road",
                              _sample_arc(center, r, 0.0, -math.pi / 2), w))

    elif rn.road_type in (RoadType.INTERSECTION, RoadType.T_INTERSECTION):
        h = gp.intersection_box / 2.0
        if rn.road_type is RoadType.INTERSECTION:
            arms = {"W", "E", "S", "N"}
        else:
            stem_arm = rn.stem_direction.value[0]  # N/S/E/W
            through = {"N", "S"} if stem_arm in ("E", "W") else {"W", "E"}
            arms = through | {stem_arm}

        east_ct, west_ct = _split_lanes(rn.num_lanes)   # E-W road
        north_ct, south_ct = _split_lanes(rn.num_lanes)  # N-S road

        specs = (
            # direction, per-direction count, offset sign builder
            ("W2E", east_ct, lambda off: (("W", (-half_len, -off), (-h, -off)),
                                          ("E", (h, -off), (half_len, -off)))),
            ("E2W", west_ct, lambda off: (("E", (half_len, off), (h, off)),
                                          ("W", (-h, off), (-half_len, off)))),
            ("S2N", north_ct, lambda off: (("S", (off, -half_len), (off, -h)),
                                           ("N", (off, h), (off, half_len)))),
            ("N2S", south_ct, lambda off: (("N", (-off, half_len), (-off, h)),
                                           ("S", (-off, -h), (-off, -half_len)))),
        )
        for direction, count, builder in specs:
            for i in range(count):
                off = w / 2 + i * w
                (arm_in, a0, a1), (arm_out, b0, b1) = builder(off)
                if arm_in in arms:
                    lanes.append(Lane(direction, i, "approach", _sample_line(a0, a1), w))
                if arm_out in arms:
                    lanes.append(Lane(direction, i, "exit", _sample_line(b0, b1), w))

    elif rn.road_type is RoadType.MERGING:
        for i in range(rn.num_lanes):
            y = -(w / 2 + i * w)
            lanes.append(Lane("MAIN", i, "road", _sample_line((-half_len, y), (half_len, y)), w))
        outer_y = -(w / 2 + (rn.num_lanes - 1) * w)
        angle = math.radians(gp.ramp_angle_deg)
        ramp_len = 60.0
        start = (-ramp_len * math.cos(angle), outer_y - ramp_len * math.sin(angle))
        lanes.append(Lane("RAMP", 0, "ramp", _sample_line(start, (0.0, outer_y)), w))

    return lanes


def _check_network(rn: RoadNetwork) -> list[ValidationIssue]:
    issues = []
    if not 1 <= rn.num_lanes <= 8:
        issues.append(ValidationIssue("RoadNetwork.NoLanes", "lane count out of range"))
    if rn.road_type is RoadType.T_INTERSECTION and rn.stem_direction is None:
        issues.append(ValidationIssue("RoadNetwork.StemDirection", "stem required"))
    return issues


def _find_lane(lanes: list[Lane], direction: str, section: str,
               index: int = 0) -> Lane | None:
    for lane in lanes:
        if lane.direction == direction and lane.section == section and lane.index == index:
            return lane
    return None


def _turn_connector(p1: np.ndarray, h1: float, p2: np.ndarray, h2: float,
                    left: bool) -> np.ndarray:
    """Circular-arc fillet tangent to heading h1 at p1 and heading h2 at p2."""
    n1 = np.array([-math.sin(h1), math.cos(h1)]) * (1.0 if left else -1.0)
    n2 = np.array([-math.sin(h2), math.cos(h2)]) * (1.0 if left else -1.0)
    # solve p1 + r1*n1 = p2 + r2*n2
    a = np.array([[n1[0], -n2[0]], [n1[1], -n2[1]]])
    b = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    try:
        r1, r2 = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise SceneError("turn connector is degenerate (parallel tangents)") from None
    if r1 <= 0 or r2 <= 0 or abs(r1 - r2) > 0.05 * max(r1, r2):
        raise SceneError(
            f"no circular fillet fits this turn (radii {r1:.2f} / {r2:.2f})")
    center = np.asarray(p1) + r1 * n1
    phi0 = math.atan2(p1[1] - center[1], p1[0] - center[0])
    phi1 = math.atan2(p2[1] - center[1], p2[0] - center[0])
    if left:   # counterclockwise sweep
        while phi1 <= phi0:
            phi1 += 2 * math.pi
    else:      # clockwise sweep
        while phi1 >= phi0:
            phi1 -= 2 * math.pi
    return _sample_arc(center, r1, phi0, phi1)


def _end_heading(points: np.ndarray) -> float:
    d = points[-1] - points[-2]
    return math.atan2(d[1], d[0])


def _start_heading(points: np.ndarray) -> float:
    d = points[1] - points[0]
    return math.atan2(d[1], d[0])


def _concat(*pieces: np.ndarray) -> np.ndarray:
    out = [np.asarray(pieces[0], dtype=float)]
    for piece in pieces[1:]:
        piece = np.asarray(piece, dtype=float)
        if np.allclose(out[-1][-1], piece[0], atol=1e-9):
            piece = piece[1:]
        out.append(piece)
    return np.concatenate(out, axis=0)


# straight and curved roads run along the x axis, so north-south position
# labels alias onto the forward/reverse carriageways
_AXIS_ALIAS = {"W2E": "W2E", "S2N": "W2E", "E2W": "E2W", "N2S": "E2W"}


def slot_group(road_type: RoadType, position: InitialPosition) -> str:
    """Actors sharing a start lane stagger together under one group key."""
    if road_type in (RoadType.STRAIGHT, RoadType.CURVE):
        return _AXIS_ALIAS[position.value]
    return position.value


def place_actor(road_type: RoadType, lanes: list[Lane], actor: Actor,
                slot: int, gp: GeometryParams,
                extra_offset: float = 0.0) -> tuple[ActorInit, list[Lane]]:
    """Pose one actor on its approach lane and realize its route.

    Returns the actor placement plus any junction connector lanes the route
    introduced (so scenes keep a complete lane graph under every waypoint).
    The first listed action drives the junction maneuver.
    """
    position = actor.initial_position
    action = actor.actions[0]
    speed_ms = INITIAL_SPEED_FACTOR * actor.speed_limit * MPH_TO_MS
    start_s = slot * SLOT_STAGGER_M + extra_offset
    connectors: list[Lane] = []

    if road_type is RoadType.MERGING:
        if position is InitialPosition.ON_RAMP:
            if action is not ActionType.MOVE_FORWARD:
                raise SceneError(f"{action.value} is not available from the on-ramp")
            ramp = _find_lane(lanes, "RAMP", "ramp")
            outer = max((l for l in lanes if l.direction == "MAIN"), key=lambda l: l.index)
            merge_s, _ = geom.project_to_polyline(outer.centerline, outer.lengths(),
                                                  ramp.centerline[-1])
            tail = _route_points_from(outer, merge_s)
            points = _concat(ramp.centerline, tail)
        else:
            if action is not ActionType.MOVE_FORWARD:
                raise SceneError(f"{action.value} is not available on the main carriageway")
            # merging conflicts happen in the outermost lane, next to the ramp
            lane = max((l for l in lanes if l.direction == "MAIN"), key=lambda l: l.index)
            points = lane.centerline.copy()
        points = _trim_start(points, start_s)

    elif road_type in (RoadType.STRAIGHT, RoadType.CURVE):
        direction = _AXIS_ALIAS[position.value]
        if action is not ActionType.MOVE_FORWARD:
            raise SceneError(
                f"no junction on a {road_type.value} road to {action.value.lower()} at")
        lane = _find_lane(lanes, direction, "road")
        if lane is None:
            raise SceneError(f"no {direction} lane on this road")
        points = _trim_start(lane.centerline.copy(), start_s)

    else:  # junction road types
        direction = position.value
        approach = _find_lane(lanes, direction, "approach")
        if approach is None:
            raise SceneError(
                f"no {direction} approach exists at this {road_type.value}")
        if action is ActionType.MOVE_FORWARD:
            exit_dir = direction
        elif action is ActionType.TURN_LEFT:
            exit_dir = _LEFT_OF[direction]
        else:
            exit_dir = _RIGHT_OF[direction]
        exit_lane = _find_lane(lanes, exit_dir, "exit")
        if exit_lane is None:
            raise SceneError(
                f"no exit approach exists for {action.value} from {direction} "
                f"at this {road_type.value}")
        p1 = approach.centerline[-1]
        p2 = exit_lane.centerline[0]
        if action is ActionType.MOVE_FORWARD:
            connector_points = _sample_line(p1, p2)
        else:
            connector_points = _turn_connector(
                p1, _end_heading(approach.centerline),
                p2, _start_heading(exit_lane.centerline),
                left=action is ActionType.TURN_LEFT)
        connectors.append(Lane(f"{direction}->{exit_dir}", 0, "connector",
                               connector_points, gp.lane_width))
        points = _concat(_trim_start(approach.centerline.copy(), start_s),
                         connector_points, exit_lane.centerline)

    route = Route(waypoints=points, speeds=np.full(len(points), speed_ms))
    x, y = points[0]
    heading = _start_heading(points)
    length, width = FOOTPRINTS[actor.model.value]
    init = ActorInit(model=actor.model.value, length=length, width=width,
                     pose=(float(x), float(y), heading),
                     initial_speed=speed_ms, route=route)
    return init, connectors


def _route_points_from(lane: Lane, s: float) -> np.ndarray:
    return _trim_start(lane.centerline.copy(), s)


def _trim_start(points: np.ndarray, s: float) -> np.ndarray:
    if s <= 0:
        return points
    lengths = geom.polyline_lengths(points)
    if s >= lengths[-1] - SAMPLE_SPACING_M:
        raise SceneError("start offset exceeds the lane length")
    pos, _ = geom.point_at_arclength(points, lengths, s)
    keep = points[lengths > s + 1e-9]
    return np.concatenate([pos[None, :], keep], axis=0)


def compile_scenario(s: Scenario, gp: GeometryParams | None = None,
                     case_id: str | None = None) -> CompiledScene:
    """Compile a validated scenario into a concrete scene. Deterministic."""
    gp = gp or GeometryParams()
    issues = validate(s)
    if issues:
        raise SceneError("invalid scenario: "
                         + "; ".join(f"{i.path}: {i.message}" for i in issues))
    lanes = build_road(s.road_network, gp)
    scene_lanes = list(lanes)
    seen_connectors: set[str] = set()
    inits: list[ActorInit] = []
    slot_counts: dict[str, int] = {}
    road_type = s.road_network.road_type

    def pose_corners(init: ActorInit) -> np.ndarray:
        x, y, h = init.pose
        return geom.obb_corners(x, y, h, init.length, init.width)

    for k, actor in enumerate(s.actors, start=1):
        group = slot_group(road_type, actor.initial_position)
        slot = slot_counts.get(group, 0)
        slot_counts[group] = slot + 1
        # long vehicles may not clear the default stagger; push back in
        # deterministic 5 m steps before declaring the placement unresolvable
        init = connectors = None
        for extra in np.arange(0.0, 61.0, 5.0):
            candidate, candidate_connectors = place_actor(
                road_type, lanes, actor, slot, gp, extra_offset=float(extra))
            corners = pose_corners(candidate)
            if not any(geom.obb_overlap(corners, pose_corners(prev)) for prev in inits):
                init, connectors = candidate, candidate_connectors
                break
        if init is None:
            raise SceneError(
                f"actor {k} overlaps earlier actors at every start offset; "
                "slot staggering could not resolve the initial placement")
        inits.append(init)
        for lane in connectors:
            if lane.lane_id not in seen_connectors:
                seen_connectors.add(lane.lane_id)
                scene_lanes.append(lane)

    return CompiledScene(
        road_type=road_type.value,
        lanes=scene_lanes,
        actor_inits=inits,
        env_time=s.env.time.value,
        env_weather=s.env.weather.value,
        case_id=case_id,
    )


# ---------------------------------------------------------------------------
# serialization


def scene_to_dict(scene: CompiledScene) -> dict:
    return {
        "case_id": scene.case_id,
        "road_type": scene.road_type,
        "env": {"time": scene.env_time, "weather": scene.env_weather},
        "lanes": [
            {"id": lane.lane_id, "direction": lane.direction, "section": lane.section,
             "index": lane.index, "width": lane.width,
             "centerline": [[float(x), float(y)] for x, y in lane.centerline]}
            for lane in scene.lanes
        ],
        "actors": [
            {"model": a.model, "length": a.length, "width": a.width,
             "pose": [a.pose[0], a.pose[1], a.pose[2]],
             "initial_speed": float(a.initial_speed),
             "route": {
                 "waypoints": [[float(x), float(y)] for x, y in a.route.waypoints],
                 "speeds": [float(v) for v in a.route.speeds],
             }}
            for a in scene.actor_inits
        ],
    }


def scene_from_dict(data: dict) -> CompiledScene:
    lanes = [Lane(direction=l["direction"], index=l["index"], section=l["section"],
                  centerline=np.array(l["centerline"], dtype=float), width=l["width"])
             for l in data["lanes"]]
    actors = [ActorInit(model=a["model"], length=a["length"], width=a["width"],
                        pose=tuple(a["pose"]), initial_speed=a["initial_speed"],
                        route=Route(waypoints=np.array(a["route"]["waypoints"], dtype=float),
                                    speeds=np.array(a["route"]["speeds"], dtype=float)))
              for a in data["actors"]]
    return CompiledScene(road_type=data["road_type"], lanes=lanes, actor_inits=actors,
                         env_time=data["env"]["time"], env_weather=data["env"]["weather"],
                         case_id=data.get("case_id"))


def coordinate_config(scene: CompiledScene, gp: GeometryParams | None = None) -> dict:
    """Flat coordinate-list export: lanes as point lists, each vehicle reduced
    to the beginning, middle, and end points of its route."""
    gp = gp or GeometryParams()
    vehicles = []
    for a in scene.actor_inits:
        lengths = a.route.lengths()
        mid, _ = geom.point_at_arclength(a.route.waypoints, lengths, lengths[-1] / 2.0)
        vehicles.append({
            "model": a.model,
            "points": [[float(a.route.waypoints[0][0]), float(a.route.waypoints[0][1])],
                       [float(mid[0]), float(mid[1])],
                       [float(a.route.waypoints[-1][0]), float(a.route.waypoints[-1][1])]],
            "speed_ms": float(a.initial_speed),
        })
    return {
        "lane_width": gp.lane_width,
        "road_type": scene.road_type,
        "lanes": [{"id": lane.lane_id,
                   "points": [[float(x), float(y)] for x, y in lane.centerline]}
                  for lane in scene.lanes],
        "vehicles": vehicles,
    }
