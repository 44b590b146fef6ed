"""Scoring: extraction accuracy, test-report aggregation, crash reproduction,
and rank-based significance testing.

A sample counts as correct for a category only when every field in that
category matches the human oracle, so the overall accuracy can never exceed
any per-category accuracy.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .dsl import Scenario, validate
from .microsim import Trace

EXACT_ENUMERATION_LIMIT = 20  # exact permutation p-values while n*m stays here


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class OracleRecord:
    case_id: str
    scenario: Scenario

    def __post_init__(self):
        issues = validate(self.scenario)
        if issues:
            raise EvaluationError(
                f"oracle {self.case_id} is invalid: "
                + "; ".join(f"{i.path}: {i.message}" for i in issues))


@dataclass
class AccuracyReport:
    n: int
    n_road: int
    n_actor: int
    n_env: int
    n_all: int

    @property
    def road_network_accuracy(self) -> float:
        return self.n_road / self.n

    @property
    def actors_accuracy(self) -> float:
        return self.n_actor / self.n

    @property
    def env_accuracy(self) -> float:
        return self.n_env / self.n

    @property
    def overall_accuracy(self) -> float:
        return self.n_all / self.n

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "counts": {"road": self.n_road, "actors": self.n_actor,
                       "env": self.n_env, "overall": self.n_all},
            "road_network_accuracy": self.road_network_accuracy,
            "actors_accuracy": self.actors_accuracy,
            "env_accuracy": self.env_accuracy,
            "overall_accuracy": self.overall_accuracy,
        }


def _road_matches(a: Scenario, b: Scenario) -> bool:
    return (a.road_network.road_type is b.road_network.road_type
            and a.road_network.num_lanes == b.road_network.num_lanes
            and a.road_network.stem_direction is b.road_network.stem_direction)


def _actors_match(a: Scenario, b: Scenario) -> bool:
    """Count-equal, order-insensitive by initial position, all fields equal.

    Actors pair up by initial position; within a shared position they pair in
    declaration order.
    """
    if len(a.actors) != len(b.actors):
        return False

    def grouped(actors):
        groups: dict = {}
        for actor in actors:
            groups.setdefault(actor.initial_position, []).append(actor)
        return groups

    ga, gb = grouped(a.actors), grouped(b.actors)
    if set(ga) != set(gb):
        return False
    for position, left in ga.items():
        right = gb[position]
        if len(left) != len(right):
            return False
        for la, ra in zip(left, right):
            if (la.model is not ra.model or la.actions != ra.actions
                    or float(la.speed_limit) != float(ra.speed_limit)):
                return False
    return True


def _env_matches(a: Scenario, b: Scenario) -> bool:
    return a.env.time is b.env.time and a.env.weather is b.env.weather


def score_extraction(predictions: list[tuple[str, Scenario]],
                     oracles: list[OracleRecord]) -> AccuracyReport:
    """Field-by-field comparison of predictions against human oracles."""
    if not predictions:
        raise EvaluationError("no predictions to score")
    oracle_by_id = {o.case_id: o.scenario for o in oracles}
    missing = [case_id for case_id, _ in predictions if case_id not in oracle_by_id]
    if missing:
        raise EvaluationError("no oracle for case(s): " + ", ".join(sorted(missing)))

    n_road = n_actor = n_env = n_all = 0
    for case_id, predicted in predictions:
        oracle = oracle_by_id[case_id]
        road = _road_matches(predicted, oracle)
        actor = _actors_match(predicted, oracle)
        env = _env_matches(predicted, oracle)
        n_road += road
        n_actor += actor
        n_env += env
        n_all += road and actor and env
    return AccuracyReport(n=len(predictions), n_road=n_road, n_actor=n_actor,
                          n_env=n_env, n_all=n_all)


# ---------------------------------------------------------------------------
# crash reproduction and report aggregation


def check_reproduction(trace: Trace, scenario: Scenario,
                       oracle: Scenario | None = None) -> bool:
    """Did the run reproduce the reported crash?

    Requires a collision ending the trace; for two-actor scenarios the
    colliding pair must be exactly the two report vehicles, for larger scenes
    the pair must include the ego. When an oracle exists, the scenario's road
    type must agree with it.
    """
    if trace.termination != "collision" or not trace.violations:
        return False
    pair = trace.violations[0].pair
    if len(scenario.actors) == 2:
        if set(pair) != {0, 1}:
            return False
    elif trace.ego_index not in pair:
        return False
    if oracle is not None and (
            scenario.road_network.road_type is not oracle.road_network.road_type):
        return False
    return True


@dataclass
class TestReport:
    num_scenarios: int
    num_violations: int
    top_k: dict[int, int]
    detection_ratio: float
    per_scenario_ms: list[float] = field(default_factory=list)
    reproduced_count: int = 0
    reproduced_cases: list[str] = field(default_factory=list)

    def to_dict(self, include_timings: bool = False) -> dict:
        data = {
            "num_scenarios": self.num_scenarios,
            "num_violations": self.num_violations,
            "top_k": {str(k): v for k, v in sorted(self.top_k.items())},
            "detection_ratio": self.detection_ratio,
            "reproduced_count": self.reproduced_count,
            "reproduced_cases": list(self.reproduced_cases),
        }
        if include_timings:
            data["per_scenario_ms"] = list(self.per_scenario_ms)
        return data


def top_k_counts(flags: list[bool], ks=(1, 2, 3)) -> dict[int, int]:
    """Scenarios executed up to and including the k-th violation, per k.

    Keys are present only for violation counts actually reached.
    """
    out: dict[int, int] = {}
    seen = 0
    for position, flag in enumerate(flags, start=1):
        if flag:
            seen += 1
            if seen in ks:
                out[seen] = position
    return out


def aggregate_report(traces: list[Trace],
                     timings_ms: list[float] | None = None,
                     reproductions: list[tuple[str, bool]] | None = None) -> TestReport:
    """Fold per-trace outcomes into one report, in input order."""
    if not traces:
        raise EvaluationError("no traces to aggregate")
    flags = [t.has_violation() for t in traces]
    top_k = top_k_counts(flags)
    for k in (2, 3):
        if k in top_k and k - 1 in top_k:
            assert top_k[k - 1] <= top_k[k]
    reproduced = [case for case, ok in (reproductions or []) if ok]
    return TestReport(
        num_scenarios=len(traces),
        num_violations=sum(flags),
        top_k=top_k,
        detection_ratio=sum(flags) / len(traces),
        per_scenario_ms=list(timings_ms or []),
        reproduced_count=len(reproduced),
        reproduced_cases=reproduced,
    )


def format_report_table(report: TestReport, label: str = "micro-sim - IDM") -> str:
    """Human-readable summary in the violations-by-level row layout."""
    lines = [
        f"{'Configuration':<28} {'Level':<18} {'Count':>6}",
        "-" * 54,
        f"{label:<28} {'# scenarios':<18} {report.num_scenarios:>6}",
        f"{'':<28} {'# violations':<18} {report.num_violations:>6}",
    ]
    for k in (1, 2, 3):
        value = report.top_k.get(k)
        lines.append(f"{'':<28} {f'Top {k} - violation':<18} "
                     f"{value if value is not None else '-':>6}")
    lines.append(f"{'':<28} {'detection ratio':<18} "
                 f"{report.detection_ratio * 100:>5.1f}%")
    if report.reproduced_cases or report.reproduced_count:
        lines.append(f"{'':<28} {'# reproduced':<18} {report.reproduced_count:>6}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# rank statistics


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float  # U of the first sample
    p_value: float
    n_a: int
    n_b: int
    method: str  # "exact" | "normal"
    degenerate: bool = False


def _midranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


def _norm_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def mann_whitney_u(sample_a: list[float], sample_b: list[float]) -> UTestResult:
    """Two-sided rank-sum test with midranks for ties.

    Small problems (n*m <= 20) get an exact permutation p-value by
    enumerating every split of the pooled sample; larger ones use the normal
    approximation with tie-corrected variance and continuity correction.
    """
    if not sample_a or not sample_b:
        raise EvaluationError("both samples must be non-empty")
    n, m = len(sample_a), len(sample_b)
    pooled = list(sample_a) + list(sample_b)
    ranks = _midranks(pooled)
    r_a = sum(ranks[:n])
    u_a = r_a - n * (n + 1) / 2.0
    total = n + m

    if len(set(pooled)) == 1:
        return UTestResult(u_statistic=u_a, p_value=1.0, n_a=n, n_b=m,
                           method="degenerate", degenerate=True)

    if n * m <= EXACT_ENUMERATION_LIMIT:
        center = n * m / 2.0
        observed_dev = abs(u_a - center)
        hits = draws = 0
        for combo in itertools.combinations(range(total), n):
            draws += 1
            u = sum(ranks[i] for i in combo) - n * (n + 1) / 2.0
            if abs(u - center) >= observed_dev - 1e-12:
                hits += 1
        return UTestResult(u_statistic=u_a, p_value=hits / draws, n_a=n, n_b=m,
                           method="exact")

    tie_sum = 0.0
    counts: dict[float, int] = {}
    for v in pooled:
        counts[v] = counts.get(v, 0) + 1
    for t in counts.values():
        tie_sum += t ** 3 - t
    variance = n * m / 12.0 * ((total + 1) - tie_sum / (total * (total - 1)))
    if variance <= 0:
        return UTestResult(u_statistic=u_a, p_value=1.0, n_a=n, n_b=m,
                           method="degenerate", degenerate=True)
    deviation = abs(u_a - n * m / 2.0)
    z = max(deviation - 0.5, 0.0) / math.sqrt(variance)  # continuity correction
    p = min(1.0, 2.0 * _norm_sf(z))
    return UTestResult(u_statistic=u_a, p_value=p, n_a=n, n_b=m, method="normal")
