"""Optional live execution of an emitted config inside MetaDrive.

When the simulator is not installed the runner reports
``skipped: simulator unavailable`` instead of failing, so downstream
tooling can treat live execution as strictly optional.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .config import load_config

STATUS_SKIPPED = "skipped: simulator unavailable"
MAX_LIVE_STEPS = 1200


def simulator_available() -> bool:
    try:
        import metadrive  # noqa: F401
    except Exception:
        return False
    return True


def _summary(config: dict, ego_index: int, seed: int, *, status: str,
             termination: str | None = None, steps: int = 0,
             collision: bool | None = None, wall_ms: float = 0.0) -> dict:
    """Summary in the same row schema the micro-sim report uses per trace."""
    return {
        "case_id": config.get("case_id"),
        "ego": ego_index,
        "seed": seed,
        "status": status,
        "termination": termination,
        "steps": steps,
        "collision": collision,
        "wall_ms": wall_ms,
    }


def run_live(config_path: Path, ego_index: int, seed: int,
             out_path: Path | None = None) -> dict:
    """Execute the config with the simulator's car-following policy as ego.

    Returns (and optionally writes) a per-trace summary. A missing simulator
    yields a skipped summary, never an exception.
    """
    config = load_config(config_path)
    if not 0 <= ego_index < len(config["spawns"]):
        raise ValueError(f"ego index {ego_index} out of range")

    if not simulator_available():
        summary = _summary(config, ego_index, seed, status=STATUS_SKIPPED)
    else:
        summary = _execute(config, ego_index, seed)

    if out_path is not None:
        Path(out_path).write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def _execute(config: dict, ego_index: int, seed: int) -> dict:
    from metadrive.envs import MetaDriveEnv
    from metadrive.policy.idm_policy import IDMPolicy

    started = time.perf_counter()
    env = MetaDriveEnv({
        "use_render": False,
        "map": config["map_sequence"],
        "map_config": {"lane_num": max(1, config["blocks"][0]["total_lanes"] // 2),
                       "lane_width": config["blocks"][0]["lane_width_m"]},
        "traffic_density": 0.0,
        "agent_policy": IDMPolicy,
        "start_seed": seed,
        "num_scenarios": 1,
        "horizon": MAX_LIVE_STEPS,
    })
    collision = False
    steps = 0
    termination = "timeout"
    try:
        env.reset(seed=seed)
        for steps in range(1, MAX_LIVE_STEPS + 1):
            _, _, terminated, truncated, info = env.step([0.0, 0.0])
            if info.get("crash_vehicle") or info.get("crash"):
                collision = True
                termination = "collision"
                break
            if terminated:
                termination = "route_complete"
                break
            if truncated:
                break
    finally:
        env.close()
    return _summary(config, ego_index, seed, status="ok", termination=termination,
                    steps=steps, collision=collision,
                    wall_ms=(time.perf_counter() - started) * 1000.0)
