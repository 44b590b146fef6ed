"""Deterministic fixed-timestep 2D simulation of a compiled scene.

One actor (the ego) is driven by the controller under test: intelligent
driver model longitudinal control plus pure-pursuit steering along its route.
Every other actor replays its route kinematically at its compiled speed. The
run ends at the first collision between any pair, when every route is
complete, or at the step limit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geom
from .scene import CompiledScene

MAX_DECEL = 8.0              # m/s^2, braking clamp
LEADER_CORRIDOR_M = 3.0      # lateral half-width for leader selection
MIN_GAP = 0.1                # m, numeric floor for the interaction term
PURSUIT_MIN_LOOKAHEAD = 5.0  # m
PURSUIT_TIME_GAIN = 1.0      # s of travel added to the lookahead
MAX_CURVATURE = 0.5          # 1/m, steering clamp


class SimError(Exception):
    pass


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 1.5      # m/s^2
    b_comf: float = 2.0     # m/s^2
    s0: float = 2.0         # m
    t_headway: float = 1.5  # s
    delta: float = 4.0

    def __post_init__(self):
        for name in ("a_max", "b_comf", "s0", "t_headway", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    max_steps: int = 1200
    seed: int = 0
    idm: IdmParams = field(default_factory=IdmParams)

    def __post_init__(self):
        if not 0 < self.dt <= 0.1:
            raise ValueError("dt must be in (0, 0.1]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class ViolationRecord:
    kind: str
    step: int
    pair: tuple[int, int]
    poses: tuple[tuple[float, float, float], tuple[float, float, float]]


@dataclass
class Trace:
    ego_index: int
    termination: str  # "collision" | "route_complete" | "timeout"
    states: np.ndarray  # (steps+1, actors, 4): x, y, heading, speed
    violations: list[ViolationRecord]
    dt: float
    case_id: str | None = None
    wall_ms: float = 0.0

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1

    def has_violation(self) -> bool:
        return bool(self.violations)


def idm_accel(speed: float, desired_speed: float, gap: float | None,
              lead_speed: float, p: IdmParams) -> float:
    """Intelligent-driver-model acceleration.

    ``gap`` is the bumper-to-bumper distance to the leader (None when the
    road ahead is free, which drops the interaction term). The result is
    clamped to [-MAX_DECEL, a_max].
    """
    for name, v in (("speed", speed), ("desired_speed", desired_speed),
                    ("lead_speed", lead_speed)):
        if not math.isfinite(v):
            raise SimError(f"non-finite {name}: {v}")
    if gap is not None and not math.isfinite(gap):
        raise SimError(f"non-finite gap: {gap}")
    if desired_speed <= 0:
        return -MAX_DECEL if speed > 0 else 0.0
    a = 1.0 - (speed / desired_speed) ** p.delta
    if gap is not None:
        gap = max(gap, MIN_GAP)
        s_star = p.s0 + speed * p.t_headway + (
            speed * (speed - lead_speed) / (2.0 * math.sqrt(p.a_max * p.b_comf)))
        a -= (s_star / gap) ** 2
    return float(np.clip(p.a_max * a, -MAX_DECEL, p.a_max))


def detect_collision(states: list[tuple[float, float, float]],
                     footprints: list[tuple[float, float]]) -> list[tuple[int, int]]:
    """All overlapping pairs among oriented rectangles (separating-axis test)."""
    corners = []
    for (x, y, h), (length, width) in zip(states, footprints):
        if not all(math.isfinite(v) for v in (x, y, h)):
            raise SimError(f"non-finite pose: {(x, y, h)}")
        corners.append(geom.obb_corners(x, y, h, length, width))
    hits = []
    for i in range(len(corners)):
        for j in range(i + 1, len(corners)):
            if geom.obb_overlap(corners[i], corners[j]):
                hits.append((i, j))
    return hits


class _RouteFollower:
    """Shared arc-length bookkeeping over a compiled route."""

    def __init__(self, route):
        self.points = route.waypoints
        self.speeds = route.speeds
        self.lengths = route.lengths()
        self.total = float(self.lengths[-1])

    def state_at(self, s: float) -> tuple[float, float, float, float]:
        pos, heading = geom.point_at_arclength(self.points, self.lengths, s)
        return float(pos[0]), float(pos[1]), heading, self.target_speed(s)

    def target_speed(self, s: float) -> float:
        i = int(np.searchsorted(self.lengths, min(s, self.total), side="right")) - 1
        return float(self.speeds[min(max(i, 0), len(self.speeds) - 1)])


def run(scene: CompiledScene, ego_index: int, cfg: SimConfig | None = None) -> Trace:
    """Simulate one ego assignment. Deterministic for identical inputs."""
    cfg = cfg or SimConfig()
    n = len(scene.actor_inits)
    if not 0 <= ego_index < n:
        raise SimError(f"ego index {ego_index} out of range for {n} actors")
    started = time.perf_counter()

    followers = [_RouteFollower(a.route) for a in scene.actor_inits]
    footprints = [(a.length, a.width) for a in scene.actor_inits]
    x = np.array([a.pose[0] for a in scene.actor_inits])
    y = np.array([a.pose[1] for a in scene.actor_inits])
    heading = np.array([a.pose[2] for a in scene.actor_inits])
    speed = np.array([a.initial_speed for a in scene.actor_inits])
    progress = np.zeros(n)
    done = np.zeros(n, dtype=bool)

    ego = followers[ego_index]
    history = np.empty((cfg.max_steps + 1, n, 4))
    history[0] = np.stack([x, y, heading, speed], axis=1)
    violations: list[ViolationRecord] = []
    termination = "timeout"
    steps_taken = 0

    for step in range(1, cfg.max_steps + 1):
        # ego control from the current state; actors whose routes are complete
        # have left the scene: pose and speed freeze, interactions stop
        if not done[ego_index]:
            s_ego, _ = geom.project_to_polyline(ego.points, ego.lengths,
                                                np.array([x[ego_index], y[ego_index]]))
            progress[ego_index] = s_ego
            gap = None
            lead_speed = 0.0
            for j in range(n):
                if j == ego_index or done[j]:
                    continue
                s_j, lateral = geom.project_to_polyline(
                    ego.points, ego.lengths, np.array([x[j], y[j]]))
                if lateral > LEADER_CORRIDOR_M or s_j <= s_ego:
                    continue
                candidate = s_j - s_ego - (footprints[j][0] + footprints[ego_index][0]) / 2.0
                if gap is None or candidate < gap:
                    gap = candidate
                    lead_speed = float(speed[j])
            if gap is not None:
                gap = max(gap, MIN_GAP)
            accel = idm_accel(float(speed[ego_index]), ego.target_speed(s_ego),
                              gap, lead_speed, cfg.idm)
            v = max(0.0, float(speed[ego_index]) + accel * cfg.dt)

            lookahead = max(PURSUIT_MIN_LOOKAHEAD, PURSUIT_TIME_GAIN * v)
            target, _ = geom.point_at_arclength(ego.points, ego.lengths, s_ego + lookahead)
            alpha = math.atan2(target[1] - y[ego_index], target[0] - x[ego_index]) \
                - heading[ego_index]
            alpha = (alpha + math.pi) % (2 * math.pi) - math.pi
            kappa = float(np.clip(2.0 * math.sin(alpha) / lookahead,
                                  -MAX_CURVATURE, MAX_CURVATURE))
            heading[ego_index] += kappa * v * cfg.dt
            x[ego_index] += v * math.cos(heading[ego_index]) * cfg.dt
            y[ego_index] += v * math.sin(heading[ego_index]) * cfg.dt
            speed[ego_index] = v
            if s_ego >= ego.total - 0.5:
                done[ego_index] = True

        # scripted actors replay their routes at the compiled speeds
        for j in range(n):
            if j == ego_index or done[j]:
                continue
            progress[j] += followers[j].target_speed(progress[j]) * cfg.dt
            if progress[j] >= followers[j].total:
                progress[j] = followers[j].total
                done[j] = True
            xj, yj, hj, vj = followers[j].state_at(progress[j])
            x[j], y[j], heading[j] = xj, yj, hj
            speed[j] = vj

        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise SimError("non-finite position; dynamics diverged")

        history[step] = np.stack([x, y, heading, speed], axis=1)
        steps_taken = step

        active = [i for i in range(n) if not done[i]]
        hits = detect_collision(
            [(float(x[i]), float(y[i]), float(heading[i])) for i in active],
            [footprints[i] for i in active])
        if hits:
            i, j = active[hits[0][0]], active[hits[0][1]]
            violations.append(ViolationRecord(
                kind="collision", step=step, pair=(i, j),
                poses=((float(x[i]), float(y[i]), float(heading[i])),
                       (float(x[j]), float(y[j]), float(heading[j])))))
            termination = "collision"
            break
        if bool(np.all(done)):
            termination = "route_complete"
            break

    trace = Trace(ego_index=ego_index, termination=termination,
                  states=history[:steps_taken + 1].copy(), violations=violations,
                  dt=cfg.dt, case_id=scene.case_id,
                  wall_ms=(time.perf_counter() - started) * 1000.0)
    return trace


def run_all_egos(scene: CompiledScene, cfg: SimConfig | None = None) -> list[Trace]:
    """One independent trace per actor, each taking its turn as the ego."""
    if not scene.actor_inits:
        raise SimError("scene has no actors")
    return [run(scene, i, cfg) for i in range(len(scene.actor_inits))]


# ---------------------------------------------------------------------------
# trace files


def trace_to_text(trace: Trace) -> str:
    """Step-table serialization plus a violations summary block.

    Deliberately excludes wall-clock time so identical runs produce
    byte-identical files.
    """
    n = trace.states.shape[1]
    lines = [
        "# crashsim trace v1",
        f"# case: {trace.case_id or '-'}",
        f"# ego: {trace.ego_index}",
        f"# actors: {n}",
        f"# dt: {trace.dt!r}",
        f"# steps: {trace.n_steps}",
        f"# termination: {trace.termination}",
        "# columns: step actor x y heading speed",
    ]
    for step in range(trace.states.shape[0]):
        for actor in range(n):
            x, y, h, v = trace.states[step, actor]
            lines.append(f"{step} {actor} {x!r} {y!r} {h!r} {v!r}")
    lines.append(f"# violations: {len(trace.violations)}")
    for violation in trace.violations:
        (x0, y0, h0), (x1, y1, h1) = violation.poses
        lines.append(
            f"# violation kind={violation.kind} step={violation.step} "
            f"pair={violation.pair[0]},{violation.pair[1]} "
            f"pose0={x0!r},{y0!r},{h0!r} pose1={x1!r},{y1!r},{h1!r}")
    return "\n".join(lines) + "\n"


def write_trace(trace: Trace, path) -> None:
    Path(path).write_text(trace_to_text(trace))


def emit_trace_plot(scene: CompiledScene, trace: Trace, path) -> None:
    """Top-down snapshot: lane polylines plus every actor's trajectory."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 7))
    for lane in scene.lanes:
        style = "-" if lane.section != "connector" else ":"
        ax.plot(lane.centerline[:, 0], lane.centerline[:, 1], style,
                color="0.75", linewidth=1)
    n = trace.states.shape[1]
    for i in range(n):
        xs = trace.states[:, i, 0]
        ys = trace.states[:, i, 1]
        label = f"actor {i + 1}" + (" (ego)" if i == trace.ego_index else "")
        ax.plot(xs, ys, linewidth=2, label=label)
        ax.plot(xs[0], ys[0], "o", markersize=4, color="black")
    for violation in trace.violations:
        (x0, y0, _), _ = violation.poses
        ax.plot(x0, y0, "x", markersize=12, color="red")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(f"case {trace.case_id or '-'} ego={trace.ego_index} "
                 f"{trace.termination}")
    fig.savefig(path, dpi=110)
    plt.close(fig)
