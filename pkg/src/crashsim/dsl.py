"""Scenario DSL: types, canonical text format, validation, and a tolerant encoder.

A scenario describes one crash scene as a road network, an ordered list of
traffic actors, and the environment. The canonical on-disk form is the
indented angle-bracket layout (see ``serialize_scenario``); ``parse_scenario``
reads that form strictly, while ``encode_raw_response`` recovers a scenario
from free-form LLM output (markdown bullets, restated fields, trailing prose).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

MAX_LANES = 8
MAX_ACTORS = 6
MAX_SPEED_LIMIT_MPH = 100.0


class DslError(Exception):
    """Base error for scenario parsing/serialization."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 path: str | None = None):
        self.line = line
        self.column = column
        self.path = path
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        at = f" at {path}" if path else ""
        super().__init__(f"{message}{at}{loc}")


class DslParseError(DslError):
    """Raised by the strict canonical-format parser."""


class DslValidationError(DslError):
    """Raised when an operation requires a valid scenario and gets issues instead."""

    def __init__(self, issues: list["ValidationIssue"]):
        self.issues = issues
        detail = "; ".join(f"{i.path}: {i.message}" for i in issues)
        super().__init__(f"invalid scenario: {detail}")


class EncodingError(DslError):
    """Raised by ``encode_raw_response`` when the text cannot be mapped to a scenario."""


class _CanonicalEnum(enum.Enum):
    """Enum whose value is the canonical serialized spelling."""

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "_CanonicalEnum":
        key = _squash(text)
        for member in cls:
            if _squash(member.value) == key or _squash(member.name) == key:
                return member
        raise ValueError(f"{text!r} is not one of " + ", ".join(m.value for m in cls))


def _squash(text: str) -> str:
    """Lowercase and drop everything but letters and digits."""
    return re.sub(r"[^a-z0-9]", "", text.lower())


class RoadType(_CanonicalEnum):
    STRAIGHT = "Straight"
    CURVE = "Curve"
    INTERSECTION = "Intersection"
    T_INTERSECTION = "T-intersection"
    MERGING = "Merging"


class CardinalDirection(_CanonicalEnum):
    NORTH = "North"
    SOUTH = "South"
    EAST = "East"
    WEST = "West"


class VehicleModel(_CanonicalEnum):
    SEDAN = "Sedan"
    SUV = "SUV"
    MINIVAN = "Minivan"
    PICKUP = "Pickup"
    SEMI_TRUCK = "Semi Truck"


class InitialPosition(_CanonicalEnum):
    W2E = "W2E"
    E2W = "E2W"
    S2N = "S2N"
    N2S = "N2S"
    MAIN_ROAD = "Main road"
    ON_RAMP = "On-ramp"


# Positions legal on a merging road vs everywhere else (cross-field rule).
MERGING_POSITIONS = frozenset({InitialPosition.MAIN_ROAD, InitialPosition.ON_RAMP})
DIRECTIONAL_POSITIONS = frozenset({
    InitialPosition.W2E, InitialPosition.E2W, InitialPosition.S2N, InitialPosition.N2S,
})


class ActionType(_CanonicalEnum):
    MOVE_FORWARD = "Move forward"
    TURN_LEFT = "Turn left"
    TURN_RIGHT = "Turn right"


class TimeOfDay(_CanonicalEnum):
    DAYTIME = "Daytime"
    NIGHTTIME = "Nighttime"


class Weather(_CanonicalEnum):
    SUNNY = "Sunny"
    CLOUDY = "Cloudy"
    OVERCAST = "Overcast"
    RAINY = "Rainy"
    SNOWY = "Snowy"
    FOGGY = "Foggy"
    WINDY = "Windy"
    CLEAR = "Clear"


@dataclass(frozen=True)
class RoadNetwork:
    road_type: RoadType
    num_lanes: int
    stem_direction: CardinalDirection | None = None


@dataclass(frozen=True)
class Actor:
    model: VehicleModel
    initial_position: InitialPosition
    actions: tuple[ActionType, ...]
    speed_limit: float  # mph; converted to m/s only in the scene compiler


@dataclass(frozen=True)
class Environment:
    time: TimeOfDay
    weather: Weather


@dataclass(frozen=True)
class Scenario:
    road_network: RoadNetwork
    actors: tuple[Actor, ...]
    env: Environment


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str


def validate(s: Scenario) -> list[ValidationIssue]:
    """Check every structural invariant; an empty list means the scenario is valid."""
    issues: list[ValidationIssue] = []
    rn = s.road_network

    if not isinstance(rn.road_type, RoadType):
        issues.append(ValidationIssue("RoadNetwork.RoadType", "not a known road type"))
        return issues

    if not isinstance(rn.num_lanes, int) or isinstance(rn.num_lanes, bool):
        issues.append(ValidationIssue("RoadNetwork.NoLanes", "lane count must be an integer"))
    elif not 1 <= rn.num_lanes <= MAX_LANES:
        issues.append(ValidationIssue(
            "RoadNetwork.NoLanes", f"lane count must be between 1 and {MAX_LANES}"))

    if rn.road_type is RoadType.T_INTERSECTION:
        if rn.stem_direction is None:
            issues.append(ValidationIssue(
                "RoadNetwork.StemDirection", "T-intersection requires a stem direction"))
        elif not isinstance(rn.stem_direction, CardinalDirection):
            issues.append(ValidationIssue("RoadNetwork.StemDirection", "unknown direction"))
    elif rn.stem_direction is not None:
        issues.append(ValidationIssue(
            "RoadNetwork.StemDirection",
            f"stem direction only applies to T-intersections, not {rn.road_type}"))

    if not 1 <= len(s.actors) <= MAX_ACTORS:
        issues.append(ValidationIssue(
            "Actors", f"actor count must be between 1 and {MAX_ACTORS}, got {len(s.actors)}"))

    for i, actor in enumerate(s.actors, start=1):
        prefix = f"Actors[{i}]"
        if not isinstance(actor.model, VehicleModel):
            issues.append(ValidationIssue(f"{prefix}.Model", "unknown vehicle model"))
        if not isinstance(actor.initial_position, InitialPosition):
            issues.append(ValidationIssue(f"{prefix}.Initial_position", "unknown position"))
        else:
            merging = rn.road_type is RoadType.MERGING
            if merging and actor.initial_position not in MERGING_POSITIONS:
                issues.append(ValidationIssue(
                    f"{prefix}.Initial_position",
                    f"{actor.initial_position} is not legal on a merging road"))
            if not merging and actor.initial_position in MERGING_POSITIONS:
                issues.append(ValidationIssue(
                    f"{prefix}.Initial_position",
                    f"{actor.initial_position} is only legal on a merging road"))
        if not actor.actions:
            issues.append(ValidationIssue(f"{prefix}.Actions", "at least one action required"))
        elif not all(isinstance(a, ActionType) for a in actor.actions):
            issues.append(ValidationIssue(f"{prefix}.Actions", "unknown action"))
        if not isinstance(actor.speed_limit, (int, float)) or isinstance(actor.speed_limit, bool):
            issues.append(ValidationIssue(f"{prefix}.Speed_limit", "speed limit must be a number"))
        elif not 0 < float(actor.speed_limit) <= MAX_SPEED_LIMIT_MPH:
            issues.append(ValidationIssue(
                f"{prefix}.Speed_limit",
                f"speed limit must be in (0, {MAX_SPEED_LIMIT_MPH:g}] mph"))

    if not isinstance(s.env.time, TimeOfDay):
        issues.append(ValidationIssue("Env.Time", "unknown time of day"))
    if not isinstance(s.env.weather, Weather):
        issues.append(ValidationIssue("Env.Weather", "unknown weather"))

    return issues


# ---------------------------------------------------------------------------
# canonical text form


NOT_APPLICABLE = "Not applicable"
_INDENT = "    "


def _format_number(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def serialize_scenario(s: Scenario) -> str:
    """Emit the canonical indented layout. Deterministic; raises on invalid input."""
    issues = validate(s)
    if issues:
        raise DslValidationError(issues)

    rn = s.road_network
    stem = rn.stem_direction.value if rn.stem_direction is not None else NOT_APPLICABLE
    lines = [
        "<Scenario>:",
        f"{_INDENT}<Road network>:",
        f"{_INDENT * 2}<Road type>: {rn.road_type.value}",
        f"{_INDENT * 2}<No. lanes>: {rn.num_lanes}",
        f"{_INDENT * 2}<Stem direction>: {stem}",
        f"{_INDENT}<Actors>:",
    ]
    for i, actor in enumerate(s.actors, start=1):
        actions = ", ".join(a.value for a in actor.actions)
        lines += [
            f"{_INDENT * 2}<Vehicle_{i}>:",
            f"{_INDENT * 3}<Model>: {actor.model.value}",
            f"{_INDENT * 3}<Initial_position>: {actor.initial_position.value}",
            f"{_INDENT * 3}<Actions>: {actions}",
            f"{_INDENT * 3}<Speed_limit>: {_format_number(actor.speed_limit)}",
        ]
    lines += [
        f"{_INDENT}<Env>:",
        f"{_INDENT * 2}<Time>: {s.env.time.value}",
        f"{_INDENT * 2}<Weather>: {s.env.weather.value}",
    ]
    return "\n".join(lines) + "\n"


_LINE_RE = re.compile(r"^(\s*)<([^<>]+)>\s*:\s*(.*?)\s*$")
_VEHICLE_KEY_RE = re.compile(r"^vehicle[\s_]*(\d+)$", re.IGNORECASE)

# squashed key -> field name
_SCALAR_KEYS = {
    "roadtype": "road_type",
    "nolanes": "num_lanes",
    "stemdirection": "stem_direction",
    "model": "model",
    "initialposition": "initial_position",
    "actions": "actions",
    "speedlimit": "speed_limit",
    "time": "time",
    "weather": "weather",
}
_SECTION_KEYS = {"scenario", "roadnetwork", "actors", "env"}


def parse_scenario(text: str) -> Scenario:
    """Parse a canonical scenario document.

    Keys are matched case-insensitively, but the structure must follow the
    canonical layout: one ``<Key>: value`` pair per line, sections for the
    road network, actors, and environment. The returned scenario always
    passes ``validate``.
    """
    fields: dict[str, tuple[str, int, int]] = {}
    vehicles: dict[int, dict[str, tuple[str, int, int]]] = {}
    current_vehicle: int | None = None
    saw_scenario = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        m = _LINE_RE.match(raw)
        if m is None:
            raise DslParseError(
                f"expected '<Key>: value', got {raw.strip()!r}", line=lineno, column=1)
        indent, key, value = m.groups()
        column = len(indent) + 1
        squashed = _squash(key)
        vm = _VEHICLE_KEY_RE.match(key.strip())

        if vm:
            current_vehicle = int(vm.group(1))
            vehicles.setdefault(current_vehicle, {})
            continue
        if squashed in _SECTION_KEYS:
            if squashed == "scenario":
                saw_scenario = True
            current_vehicle = None
            continue
        if squashed not in _SCALAR_KEYS:
            raise DslParseError(f"unknown key <{key}>", line=lineno, column=column)

        name = _SCALAR_KEYS[squashed]
        if name in ("model", "initial_position", "actions", "speed_limit"):
            if current_vehicle is None:
                raise DslParseError(
                    f"<{key}> outside of a <Vehicle_n> section", line=lineno, column=column)
            vehicles[current_vehicle][name] = (value, lineno, column)
        else:
            fields[name] = (value, lineno, column)

    if not saw_scenario and not fields and not vehicles:
        raise DslParseError("document contains no <Scenario> content", line=1, column=1)

    def need(name: str, label: str) -> tuple[str, int, int]:
        if name not in fields:
            raise DslParseError(f"missing mandatory field <{label}>")
        return fields[name]

    def parse_enum(cls, name: str, label: str, path: str):
        value, lineno, column = need(name, label)
        try:
            return cls.parse(value)
        except ValueError as exc:
            raise DslParseError(str(exc), line=lineno, column=column, path=path) from None

    road_type = parse_enum(RoadType, "road_type", "Road type", "RoadNetwork.RoadType")
    lanes_raw, lanes_line, lanes_col = need("num_lanes", "No. lanes")
    try:
        num_lanes = int(lanes_raw)
    except ValueError:
        raise DslParseError(f"lane count must be an integer, got {lanes_raw!r}",
                            line=lanes_line, column=lanes_col,
                            path="RoadNetwork.NoLanes") from None

    stem_direction: CardinalDirection | None = None
    if "stem_direction" in fields:
        value, lineno, column = fields["stem_direction"]
        if _squash(value) not in ("notapplicable", "na", "none", ""):
            try:
                stem_direction = CardinalDirection.parse(value)
            except ValueError as exc:
                raise DslParseError(str(exc), line=lineno, column=column,
                                    path="RoadNetwork.StemDirection") from None

    actors = []
    for index in sorted(vehicles):
        v = vehicles[index]
        path = f"Actors[{index}]"

        def vneed(name: str, label: str) -> tuple[str, int, int]:
            if name not in v:
                raise DslParseError(
                    f"missing mandatory field <{label}> for Vehicle_{index}")
            return v[name]

        model_raw, mline, mcol = vneed("model", "Model")
        pos_raw, pline, pcol = vneed("initial_position", "Initial_position")
        act_raw, aline, acol = vneed("actions", "Actions")
        spd_raw, sline, scol = vneed("speed_limit", "Speed_limit")
        try:
            model = VehicleModel.parse(model_raw)
        except ValueError as exc:
            raise DslParseError(str(exc), line=mline, column=mcol, path=f"{path}.Model") from None
        try:
            position = InitialPosition.parse(pos_raw)
        except ValueError as exc:
            raise DslParseError(str(exc), line=pline, column=pcol,
                                path=f"{path}.Initial_position") from None
        try:
            actions = tuple(ActionType.parse(part) for part in re.split(r"[,;]", act_raw) if part.strip())
        except ValueError as exc:
            raise DslParseError(str(exc), line=aline, column=acol,
                                path=f"{path}.Actions") from None
        if not actions:
            raise DslParseError("at least one action required", line=aline, column=acol,
                                path=f"{path}.Actions")
        try:
            speed_limit = float(spd_raw)
        except ValueError:
            raise DslParseError(f"speed limit must be a number, got {spd_raw!r}",
                                line=sline, column=scol, path=f"{path}.Speed_limit") from None
        actors.append(Actor(model=model, initial_position=position,
                            actions=actions, speed_limit=speed_limit))

    if not actors:
        raise DslParseError("missing mandatory section <Actors> (no vehicles found)")

    env_time = parse_enum(TimeOfDay, "time", "Time", "Env.Time")
    env_weather = parse_enum(Weather, "weather", "Weather", "Env.Weather")

    scenario = Scenario(
        road_network=RoadNetwork(road_type=road_type, num_lanes=num_lanes,
                                 stem_direction=stem_direction),
        actors=tuple(actors),
        env=Environment(time=env_time, weather=env_weather),
    )
    issues = validate(scenario)
    if issues:
        raise DslValidationError(issues)
    return scenario


def canonicalize(text: str) -> str:
    """Parse and re-serialize a document: the canonical form of its content."""
    return serialize_scenario(parse_scenario(text))


# ---------------------------------------------------------------------------
# tolerant encoder for free-form LLM responses


_MD_DECOR_RE = re.compile(r"[*_`>#]+")
_BULLET_RE = re.compile(r"^[\s\-*+>#]*(?:\d+\.\s+)?")
_KV_RE = re.compile(r"^\s*<?([^:<>]{1,40})>?\s*:\s*(.*)$")
_VEHICLE_HEADER_RE = re.compile(
    r"^vehicle[\s_]*\(?v?(\d+)\)?(?:\s*\(v\d+\))?\s*:?\s*$", re.IGNORECASE)
_CLEAR_CONTEXT_KEYS = {
    "scenario", "roadnetwork", "road", "actors", "env", "environment",
    "finaloutput", "output", "explanation",
}
_LANE_PHRASE_RE = re.compile(
    r"\b(\d+|one|two|three|four|five|six|seven|eight)\s*-?\s*lanes?\b", re.IGNORECASE)
_WORD_NUMBERS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
                 "seven": 7, "eight": 8}
_ACTION_PHRASE_RE = re.compile(
    r"(mov\w*\s+forward|turn\w*\s+(?:to\s+the\s+)?left|left\s+turn|"
    r"turn\w*\s+(?:to\s+the\s+)?right|right\s+turn)", re.IGNORECASE)

# encoder key aliases (squashed) -> canonical field
_ENCODER_KEYS = {
    "roadtype": "road_type",
    "typeofroad": "road_type",
    "nolanes": "num_lanes",
    "numberoflanes": "num_lanes",
    "numlanes": "num_lanes",
    "lanes": "num_lanes",
    "stemdirection": "stem_direction",
    "stemroaddirection": "stem_direction",
    "model": "model",
    "vehiclemodel": "model",
    "initialposition": "initial_position",
    "position": "initial_position",
    "actions": "actions",
    "action": "actions",
    "speedlimit": "speed_limit",
    "speed": "speed_limit",
    "time": "time",
    "weather": "weather",
}
_ROAD_CONTEXT_KEYS = {"roadnetwork", "road", "roaddescription"}


def _strip_decor(line: str) -> str:
    return _MD_DECOR_RE.sub("", _BULLET_RE.sub("", line)).strip()


def _find_road_type(value: str) -> RoadType | None:
    sq = _squash(value)
    if "tintersection" in sq:
        return RoadType.T_INTERSECTION
    if "intersection" in sq:
        return RoadType.INTERSECTION
    if "merg" in sq:
        return RoadType.MERGING
    if "curve" in sq or "curved" in sq:
        return RoadType.CURVE
    if "straight" in sq:
        return RoadType.STRAIGHT
    return None


def _find_lanes(value: str) -> int | None:
    m = _LANE_PHRASE_RE.search(value)
    if m:
        token = m.group(1).lower()
        return _WORD_NUMBERS.get(token) or int(token)
    m = re.search(r"\d+", value)
    if m:
        return int(m.group(0))
    return None


def _find_position(value: str) -> InitialPosition | None:
    sq = _squash(value)
    for pos in (InitialPosition.W2E, InitialPosition.E2W,
                InitialPosition.S2N, InitialPosition.N2S):
        if pos.value.lower() in sq:
            return pos
    if "onramp" in sq:
        return InitialPosition.ON_RAMP
    if "mainroad" in sq:
        return InitialPosition.MAIN_ROAD
    return None


def _find_model(value: str) -> VehicleModel | None:
    sq = _squash(value)
    for token, model in (("semitruck", VehicleModel.SEMI_TRUCK),
                         ("minivan", VehicleModel.MINIVAN),
                         ("pickup", VehicleModel.PICKUP),
                         ("sedan", VehicleModel.SEDAN),
                         ("suv", VehicleModel.SUV)):
        if token in sq:
            return model
    return None


def _find_actions(value: str) -> tuple[ActionType, ...]:
    actions = []
    for m in _ACTION_PHRASE_RE.finditer(value):
        phrase = _squash(m.group(0))
        if "forward" in phrase:
            actions.append(ActionType.MOVE_FORWARD)
        elif "left" in phrase:
            actions.append(ActionType.TURN_LEFT)
        else:
            actions.append(ActionType.TURN_RIGHT)
    return tuple(actions)


def _find_speed(value: str) -> float | None:
    m = re.search(r"\d+(?:\.\d+)?", value)
    return float(m.group(0)) if m else None


def _find_time(value: str) -> TimeOfDay | None:
    sq = _squash(value)
    if "night" in sq:
        return TimeOfDay.NIGHTTIME
    if "day" in sq:
        return TimeOfDay.DAYTIME
    return None


def _find_weather(value: str) -> Weather | None:
    sq = _squash(value)
    for token, weather in (("sunny", Weather.SUNNY), ("cloudy", Weather.CLOUDY),
                           ("overcast", Weather.OVERCAST), ("rain", Weather.RAINY),
                           ("snow", Weather.SNOWY), ("fog", Weather.FOGGY),
                           ("wind", Weather.WINDY), ("clear", Weather.CLEAR)):
        if token in sq:
            return weather
    return None


def _find_stem(value: str) -> CardinalDirection | None:
    sq = _squash(value)
    if sq in ("notapplicable", "na", "none", ""):
        return None
    for d in CardinalDirection:
        if d.value.lower() in sq:
            return d
    return None


def encode_raw_response(text: str) -> Scenario:
    """Map a free-form LLM response onto a validated scenario.

    Matching is tolerant to markdown emphasis, bullets, angle brackets, and
    case. When a field is stated more than once (analysis followed by a
    final output block, or a restated correction), the last occurrence wins.
    """
    road: dict[str, object] = {}
    stem_seen = False
    env: dict[str, object] = {}
    vehicles: dict[int, dict[str, object]] = {}
    candidates: dict[str, list[str]] = {}
    current_vehicle: int | None = None

    def note_candidate(label: str, value: str) -> None:
        candidates.setdefault(label, []).append(value.strip())

    for raw in text.splitlines():
        line = _strip_decor(raw)
        if not line:
            continue
        vm = _VEHICLE_HEADER_RE.match(line)
        if vm:
            current_vehicle = int(vm.group(1))
            vehicles.setdefault(current_vehicle, {})
            continue
        kv = _KV_RE.match(line)
        if kv is None:
            continue
        key_sq = _squash(kv.group(1))
        value = kv.group(2).strip()

        hv = _VEHICLE_HEADER_RE.match(kv.group(1).strip())
        if hv and not value:
            current_vehicle = int(hv.group(1))
            vehicles.setdefault(current_vehicle, {})
            continue
        if key_sq in _CLEAR_CONTEXT_KEYS:
            current_vehicle = None
            # a road-section header may carry an inline description
            if key_sq in _ROAD_CONTEXT_KEYS and value:
                rt = _find_road_type(value)
                if rt is not None and "road_type" not in road:
                    road["road_type_fallback"] = rt
                lanes = _LANE_PHRASE_RE.search(value)
                if lanes is not None and "num_lanes" not in road:
                    token = lanes.group(1).lower()
                    road["num_lanes_fallback"] = _WORD_NUMBERS.get(token) or int(token)
            continue
        if key_sq not in _ENCODER_KEYS:
            continue

        name = _ENCODER_KEYS[key_sq]
        if name == "road_type":
            rt = _find_road_type(value)
            if rt is None:
                note_candidate("Road type", value)
            else:
                road["road_type"] = rt
        elif name == "num_lanes":
            lanes = _find_lanes(value)
            if lanes is None:
                note_candidate("No. lanes", value)
            else:
                road["num_lanes"] = lanes
        elif name == "stem_direction":
            road["stem_direction"] = _find_stem(value)
            stem_seen = True
        elif name == "time":
            t = _find_time(value)
            if t is None:
                note_candidate("Time", value)
            else:
                env["time"] = t
        elif name == "weather":
            w = _find_weather(value)
            if w is None:
                note_candidate("Weather", value)
            else:
                env["weather"] = w
        else:
            if current_vehicle is None:
                continue
            v = vehicles[current_vehicle]
            label = f"Vehicle_{current_vehicle}"
            if name == "model":
                model = _find_model(value)
                if model is None:
                    note_candidate(f"{label}.Model", value)
                else:
                    v["model"] = model
            elif name == "initial_position":
                pos = _find_position(value)
                if pos is None:
                    note_candidate(f"{label}.Initial_position", value)
                else:
                    v["initial_position"] = pos
            elif name == "actions":
                actions = _find_actions(value)
                if not actions:
                    note_candidate(f"{label}.Actions", value)
                else:
                    v["actions"] = actions
            elif name == "speed_limit":
                speed = _find_speed(value)
                if speed is None:
                    note_candidate(f"{label}.Speed_limit", value)
                else:
                    v["speed_limit"] = speed

    missing: list[str] = []

    def fail_missing(label: str) -> None:
        found = candidates.get(label)
        if found:
            raise EncodingError(
                f"could not map any value for {label}; candidates found: "
                + ", ".join(repr(c) for c in found))
        missing.append(label)

    road_type = road.get("road_type") or road.get("road_type_fallback")
    if road_type is None:
        fail_missing("Road type")
    num_lanes = road.get("num_lanes") or road.get("num_lanes_fallback")
    if num_lanes is None:
        fail_missing("No. lanes")
    if "time" not in env:
        fail_missing("Time")
    if "weather" not in env:
        fail_missing("Weather")
    if not vehicles:
        missing.append("Actors (no vehicle sections found)")

    actors = []
    for index in sorted(vehicles):
        v = vehicles[index]
        label = f"Vehicle_{index}"
        for field_name, field_label in (("model", "Model"),
                                        ("initial_position", "Initial_position"),
                                        ("actions", "Actions"),
                                        ("speed_limit", "Speed_limit")):
            if field_name not in v:
                fail_missing(f"{label}.{field_label}")
        if all(k in v for k in ("model", "initial_position", "actions", "speed_limit")):
            actors.append(Actor(model=v["model"], initial_position=v["initial_position"],
                                actions=v["actions"], speed_limit=v["speed_limit"]))

    if missing:
        raise EncodingError("missing mandatory field(s): " + ", ".join(missing))

    stem = road.get("stem_direction") if stem_seen else None
    if road_type is RoadType.T_INTERSECTION and stem is None:
        fail_missing("Stem direction")
        raise EncodingError("missing mandatory field(s): Stem direction")
    if road_type is not RoadType.T_INTERSECTION:
        stem = None

    scenario = Scenario(
        road_network=RoadNetwork(road_type=road_type, num_lanes=int(num_lanes),
                                 stem_direction=stem),
        actors=tuple(actors),
        env=Environment(time=env["time"], weather=env["weather"]),
    )
    issues = validate(scenario)
    if issues:
        raise EncodingError(
            "response mapped to an invalid scenario: "
            + "; ".join(f"{i.path}: {i.message}" for i in issues))
    return scenario


# ---------------------------------------------------------------------------
# machine-readable mirror (DSL keys with spaces replaced by underscores)


def scenario_to_tree(s: Scenario) -> dict:
    rn = s.road_network
    return {
        "Scenario": {
            "Road_network": {
                "Road_type": rn.road_type.value,
                "No._lanes": rn.num_lanes,
                "Stem_direction": rn.stem_direction.value if rn.stem_direction else None,
            },
            "Actors": {
                f"Vehicle_{i}": {
                    "Model": a.model.value,
                    "Initial_position": a.initial_position.value,
                    "Actions": [act.value for act in a.actions],
                    "Speed_limit": a.speed_limit,
                }
                for i, a in enumerate(s.actors, start=1)
            },
            "Env": {"Time": s.env.time.value, "Weather": s.env.weather.value},
        }
    }


def scenario_from_tree(tree: dict) -> Scenario:
    body = tree["Scenario"]
    rn = body["Road_network"]
    stem = rn.get("Stem_direction")
    actors = []
    for key in sorted(body["Actors"], key=lambda k: int(k.split("_")[1])):
        a = body["Actors"][key]
        actors.append(Actor(
            model=VehicleModel.parse(a["Model"]),
            initial_position=InitialPosition.parse(a["Initial_position"]),
            actions=tuple(ActionType.parse(act) for act in a["Actions"]),
            speed_limit=float(a["Speed_limit"]),
        ))
    scenario = Scenario(
        road_network=RoadNetwork(
            road_type=RoadType.parse(rn["Road_type"]),
            num_lanes=int(rn["No._lanes"]),
            stem_direction=CardinalDirection.parse(stem) if stem else None,
        ),
        actors=tuple(actors),
        env=Environment(time=TimeOfDay.parse(body["Env"]["Time"]),
                        weather=Weather.parse(body["Env"]["Weather"])),
    )
    issues = validate(scenario)
    if issues:
        raise DslValidationError(issues)
    return scenario


# The abstract grammar, kept as reference text for prompt assembly. Position
# vocabulary can be narrowed per road type (merging roads use absolute labels,
# every other road type uses travel directions).
DSL_GRAMMAR = """\
<Scenario>          ::= <Road network>;<Actors>;<Env>
<Road network>      ::= <Road type>;<No. lanes>;<Stem direction>
<Road type>         ::= {road_types}
<No. lanes>         ::= Total number of lanes on the road
<Stem direction>    ::= North | South | East | West
<Actors>            ::= <Vehicle_1>;...;<Vehicle_n>
<Vehicle_n>         ::= <Model>;<Initial_position>;<Actions>;<Speed_limit>
<Model>             ::= Sedan | SUV | Minivan | Pickup | Semi Truck
<Initial_position>  ::= {positions}
<Actions>           ::= Move forward | Turn left | Turn right
<Speed_limit>       ::= speed limit in mph
<Env>               ::= <Time>;<Weather>
<Time>              ::= Daytime | Nighttime
<Weather>           ::= Sunny | Cloudy | Overcast | Rainy | Snowy | Foggy | Windy | Clear
"""


def dsl_grammar_text(road_type: RoadType | None = None) -> str:
    """Grammar reference text, optionally narrowed to one road type's vocabulary."""
    if road_type is None:
        road_types = " | ".join(rt.value for rt in RoadType)
        positions = " | ".join(p.value for p in InitialPosition)
    else:
        road_types = road_type.value
        if road_type is RoadType.MERGING:
            positions = " | ".join(p.value for p in sorted(MERGING_POSITIONS, key=lambda p: p.value))
        else:
            positions = " | ".join(p.value for p in (InitialPosition.W2E, InitialPosition.E2W,
                                                     InitialPosition.S2N, InitialPosition.N2S))
    return DSL_GRAMMAR.format(road_types=road_types, positions=positions)
