"""Training-time, test-time and capacity metrics, plus repeated-run aggregation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

NOT_APPLICABLE = None


@dataclass
class TrainingRecord:
    returns: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    successes: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if len(self.returns) != len(self.steps):
            raise ValueError("returns and steps must have equal length")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainingRecord":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class ConvergenceCriterion:
    window: int = 50
    epsilon: float = 0.05
    min_episodes: int = 100

    def __post_init__(self):
        if self.window < 2 or not self.epsilon > 0 or self.min_episodes < 0:
            raise ValueError("need window >= 2, epsilon > 0, min_episodes >= 0")


def _plateau(prev: float, cur: float, eps: float) -> bool:
    return abs(cur - prev) < eps * abs(prev) or cur == prev


def episodes_to_convergence(record: TrainingRecord | Sequence[float],
                            crit: ConvergenceCriterion = ConvergenceCriterion()) -> int | None:
    """First episode index at which the windowed mean return has plateaued.

    The mean over episodes ``[e - w, e)`` must differ from the mean over
    ``[e - 2w, e - w)`` by less than ``epsilon`` (relative), and the mean over
    ``[e, e + w)`` must stay within ``epsilon`` of it. Returns ``None`` when no
    such ``e >= min_episodes`` exists.
    """
    r = np.asarray(record.returns if isinstance(record, TrainingRecord) else record, dtype=float)
    w = crit.window
    n = len(r)
    if n == 0:
        raise ValueError("empty training record")
    if 3 * w > n:
        return None
    c = np.concatenate([[0.0], np.cumsum(r)])
    for e in range(max(crit.min_episodes, 2 * w), n - w + 1):
        m_prev = (c[e - w] - c[e - 2 * w]) / w
        m_cur = (c[e] - c[e - w]) / w
        m_next = (c[e + w] - c[e]) / w
        if _plateau(m_prev, m_cur, crit.epsilon) and _plateau(m_cur, m_next, crit.epsilon):
            return e
    return None


def optimal_return(record: TrainingRecord, converged_at: int | None,
                   crit: ConvergenceCriterion = ConvergenceCriterion()) -> float | None:
    """Mean return over the window that triggered convergence."""
    if converged_at is None:
        return None
    return float(np.mean(record.returns[converged_at - crit.window:converged_at]))


def _events(rec: dict) -> list[dict]:
    return rec.get("collisions", [])


def time_to_collision(trace: Sequence[dict], target: str, adversary: str | None = None,
                      predicate: Callable[[dict], bool] | None = None) -> float | None:
    """Simulated time of the first matching collision event in a trace, or None.

    By default a match is a target-adversary contact (direct-collision success).
    """
    if predicate is None:
        def predicate(ev):
            return {ev["a"], ev["b"]} == {target, adversary}
    for rec in trace:
        if any(predicate(ev) for ev in _events(rec)):
            return float(rec["time"])
    return None


def restricted_mean_ttc(times: Sequence[float | None], end_times: Sequence[float]) -> float:
    """Mean time to collision with collision-free episodes counted at their end time.

    A plain mean over colliding episodes only rewards subjects that are hit
    rarely but early; censoring at the episode end keeps every episode in.
    """
    if len(times) != len(end_times) or not times:
        raise ValueError("need one end time per episode")
    return math.fsum(e if t is None else t for t, e in zip(times, end_times)) / len(times)


def damage_totals(trace: Sequence[dict], target: str, adversary: str) -> tuple[float, float]:
    if not trace:
        return 0.0, 0.0
    final = {v["id"]: v["damage"] for v in trace[-1]["vehicles"]}
    return float(final.get(target, 0.0)), float(final.get(adversary, 0.0))


def capacity_threshold(run_trial: Callable[[int, int], bool], n_range: Iterable[int],
                       trials: int, required_rate: float = 0.95) -> int | None:
    """Largest traffic count ``n`` at which the subject stays collision-free often enough.

    ``run_trial(n, trial)`` runs one seeded episode with ``n`` traffic vehicles
    and returns True if the subject finished without any collision. Every ``n``
    in the range is evaluated; safety is not assumed monotone in ``n``.
    """
    ns = list(n_range)
    if not ns or ns != sorted(ns):
        raise ValueError("n_range must be non-empty and ascending")
    best = None
    for n in ns:
        ok = sum(bool(run_trial(n, t)) for t in range(trials))
        if ok >= required_rate * trials:
            best = n
    return best


@dataclass
class BenchmarkResult:
    seed: int
    episodes_to_convergence: int | None
    optimal_return: float | None
    time_to_collision: float | None
    damage_target: float
    damage_adversary: float
    episodes_trained: int = 0
    eval_success_rate: float = 0.0
    status: str = "ok"
    time_to_collision_hits: float | None = None

    @property
    def converged(self) -> bool:
        return self.episodes_to_convergence is not None


METRICS = ("episodes_to_convergence", "optimal_return", "time_to_collision",
           "damage_target", "damage_adversary", "eval_success_rate", "time_to_collision_hits")


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float
    min: float
    max: float
    count: int


@dataclass
class AggregateResult:
    stats: dict[str, MetricStats | None]
    runs: int
    non_converged: int
    failed: int = 0
    subject: str = ""
    objective: str = ""

    def mean(self, metric: str) -> float | None:
        s = self.stats.get(metric)
        return None if s is None else s.mean


def _stats(values: list[float]) -> MetricStats | None:
    if not values:
        return None
    a = np.asarray(values, dtype=float)
    return MetricStats(float(a.mean()), float(a.std()), float(a.min()), float(a.max()), len(a))


def aggregate(results: Sequence[BenchmarkResult], subject: str = "", objective: str = "") -> AggregateResult:
    """Population mean/std/min/max per metric over the runs where it applies.

    Convergence metrics and time to collision only count converged runs; the
    number of non-converged runs is reported separately.
    """
    if not results:
        raise ValueError("aggregate needs at least one result")
    ok = [r for r in results if r.status == "ok"]
    conv = [r for r in ok if r.converged]
    stats = {
        "episodes_to_convergence": _stats([r.episodes_to_convergence for r in conv]),
        "optimal_return": _stats([r.optimal_return for r in conv]),
        "time_to_collision": _stats([r.time_to_collision for r in conv
                                     if r.time_to_collision is not None]),
        "damage_target": _stats([r.damage_target for r in ok]),
        "damage_adversary": _stats([r.damage_adversary for r in ok]),
        "eval_success_rate": _stats([r.eval_success_rate for r in ok]),
        "time_to_collision_hits": _stats([r.time_to_collision_hits for r in conv
                                          if r.time_to_collision_hits is not None]),
    }
    return AggregateResult(stats, len(ok), len(ok) - len(conv), len(results) - len(ok),
                           subject, objective)
