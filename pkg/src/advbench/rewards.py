"""Reward functions for track driving and the three adversarial objectives.

All rewards are per-step: a collision indicator is 1 only if a matching
:class:`~advbench.sim.CollisionEvent` occurred during the current step.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from advbench import sim
from advbench.sim import ConfigurationError, TrackFrame, WorldState


class ObjectiveKind(str, enum.Enum):
    TRACK_DRIVING = "track_driving"
    TRACK_DRIVING_WITH_COLLISION = "track_driving_with_collision"
    DIRECT_COLLISION = "direct_collision"
    INDUCED_COLLISION = "induced_collision"
    TRAJECTORY_MANIPULATION = "trajectory_manipulation"

    @property
    def label(self) -> str:
        return {
            ObjectiveKind.DIRECT_COLLISION: "direct collisions",
            ObjectiveKind.INDUCED_COLLISION: "induced collisions",
            ObjectiveKind.TRAJECTORY_MANIPULATION: "trajectory manipulation",
        }.get(self, "collisions")


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Time-indexed positions; lookup takes the nearest sample, clamped at the ends."""

    times: np.ndarray
    points: np.ndarray

    @classmethod
    def from_points(cls, points, period: float) -> "ReferenceTrajectory":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(np.arange(len(pts)) * period, pts)

    @classmethod
    def load(cls, path, period: float) -> "ReferenceTrajectory":
        return cls.from_points(sim.load_waypoints(path), period)

    def at(self, t: float) -> tuple[np.ndarray, bool]:
        """Position at time ``t`` and whether the lookup fell outside the sampled span."""
        clamped = t < self.times[0] or t > self.times[-1]
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times):
            i = len(self.times) - 1
        elif i > 0 and t - self.times[i - 1] <= self.times[i] - t:
            i -= 1
        return self.points[i], clamped


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: ObjectiveKind = ObjectiveKind.DIRECT_COLLISION
    C: float = 200.0
    C_prime: float = 200.0
    C_T: float = 200.0
    C_adv: float = 100.0
    reference_trajectory: ReferenceTrajectory | None = None
    target_id: str = "subject"
    adversary_id: str = "adversary"
    abs_sin: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        used = {
            ObjectiveKind.TRACK_DRIVING_WITH_COLLISION: ("C",),
            ObjectiveKind.DIRECT_COLLISION: ("C_prime",),
            ObjectiveKind.INDUCED_COLLISION: ("C_T", "C_adv"),
        }.get(self.kind, ())
        for name in used:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0 for {self.kind.value}")
        has_ref = self.reference_trajectory is not None
        if has_ref != (self.kind is ObjectiveKind.TRAJECTORY_MANIPULATION):
            raise ConfigurationError("reference_trajectory is required for, and only for, "
                                     "trajectory_manipulation")

    @property
    def c_max(self) -> float:
        return max(self.C, self.C_prime, self.C_T, self.C_adv)


@dataclass
class RewardRecord:
    step_index: int
    value: float
    components: dict[str, float]
    flags: dict[str, bool] = field(default_factory=dict)


def _record(step_index: int, components: dict[str, float], **flags) -> RewardRecord:
    return RewardRecord(step_index, math.fsum(components.values()), components, flags)


def track_terms(frame: TrackFrame, speed: float, abs_sin: bool = False) -> dict[str, float]:
    s = math.sin(frame.angle_to_axis)
    return {
        "progress": speed * math.cos(frame.angle_to_axis),
        "heading": -speed * (abs(s) if abs_sin else s),
        "offset": -speed * abs(frame.lateral_offset),
    }


def reward_track(frame: TrackFrame, speed: float, abs_sin: bool = False) -> float:
    """V cos(theta) - V sin(theta) - V |d|, with signed sin unless ``abs_sin``."""
    t = track_terms(frame, speed, abs_sin)
    return t["progress"] + t["heading"] + t["offset"]


def reward_track_collision(frame: TrackFrame, speed: float, collided: bool, C: float,
                           abs_sin: bool = False) -> float:
    if not C > 0:
        raise ConfigurationError("C must be > 0")
    return reward_track(frame, speed, abs_sin) - (C if collided else 0.0)


def _pair_hit(world: WorldState, a: str, b: str) -> bool:
    return any(e.between(a, b) for e in world.collisions_this_step)


def target_hit_other(world: WorldState, target: str, adversary: str) -> bool:
    return any(e.involves(target) and not e.involves(adversary) for e in world.collisions_this_step)


def any_hit(world: WorldState, vid: str) -> bool:
    return any(e.involves(vid) for e in world.collisions_this_step)


def _check(spec: ObjectiveSpec, kind: ObjectiveKind):
    if spec.kind is not kind:
        raise ConfigurationError(f"objective is {spec.kind.value}, expected {kind.value}")


def direct_collision_record(world: WorldState, spec: ObjectiveSpec) -> RewardRecord:
    _check(spec, ObjectiveKind.DIRECT_COLLISION)
    d = sim.distance(spec.target_id, spec.adversary_id, world)
    eta = _pair_hit(world, spec.target_id, spec.adversary_id)
    return _record(world.step_index, {"collision": spec.C_prime if eta else 0.0, "distance": -d},
                   eta=eta)


def induced_collision_record(world: WorldState, spec: ObjectiveSpec) -> RewardRecord:
    _check(spec, ObjectiveKind.INDUCED_COLLISION)
    d = sim.distance(spec.target_id, spec.adversary_id, world)
    eta_t = target_hit_other(world, spec.target_id, spec.adversary_id)
    eta_adv = any_hit(world, spec.adversary_id)
    return _record(world.step_index, {
        "target_collision": spec.C_T if eta_t else 0.0,
        "distance": -d,
        "adversary_collision": -spec.C_adv if eta_adv else 0.0,
    }, eta_T=eta_t, eta_adv=eta_adv)


def trajectory_manipulation_record(world: WorldState, spec: ObjectiveSpec,
                                   t: float | None = None) -> RewardRecord:
    _check(spec, ObjectiveKind.TRAJECTORY_MANIPULATION)
    t = world.sim_time if t is None else t
    d = sim.distance(spec.target_id, spec.adversary_id, world)
    ref, clamped = spec.reference_trajectory.at(t)
    p = world.state(spec.target_id).position
    dev = math.hypot(p.x - ref[0], p.y - ref[1])
    return _record(world.step_index, {"distance": -d, "deviation": -dev}, clamped=clamped)


def track_record(world: WorldState, spec: ObjectiveSpec, vid: str | None = None) -> RewardRecord:
    vid = vid or spec.target_id
    st = world.state(vid)
    frame = world.track.frame((st.position.x, st.position.y), st.heading)
    comps = track_terms(frame, st.speed, spec.abs_sin)
    flags = {}
    if spec.kind is ObjectiveKind.TRACK_DRIVING_WITH_COLLISION:
        eta = any_hit(world, vid)
        comps["collision"] = -spec.C if eta else 0.0
        flags["eta"] = eta
    return _record(world.step_index, comps, **flags)


def reward_direct_collision(world: WorldState, spec: ObjectiveSpec) -> float:
    return direct_collision_record(world, spec).value


def reward_induced_collision(world: WorldState, spec: ObjectiveSpec) -> float:
    return induced_collision_record(world, spec).value


def reward_trajectory_manipulation(world: WorldState, spec: ObjectiveSpec,
                                   t: float | None = None) -> float:
    return trajectory_manipulation_record(world, spec, t).value


def evaluate(world: WorldState, spec: ObjectiveSpec) -> RewardRecord:
    """Reward record for the current step under ``spec``."""
    k = spec.kind
    if k is ObjectiveKind.DIRECT_COLLISION:
        return direct_collision_record(world, spec)
    if k is ObjectiveKind.INDUCED_COLLISION:
        return induced_collision_record(world, spec)
    if k is ObjectiveKind.TRAJECTORY_MANIPULATION:
        return trajectory_manipulation_record(world, spec)
    return track_record(world, spec)


def success(world: WorldState, spec: ObjectiveSpec) -> bool:
    """Whether this step contains the objective's success event."""
    k = spec.kind
    if k is ObjectiveKind.DIRECT_COLLISION:
        return _pair_hit(world, spec.target_id, spec.adversary_id)
    if k is ObjectiveKind.INDUCED_COLLISION:
        return target_hit_other(world, spec.target_id, spec.adversary_id)
    return False


@dataclass(frozen=True)
class EpisodeStatus:
    terminal: bool
    reason: str = ""

    def __bool__(self):
        return self.terminal


RUNNING = EpisodeStatus(False)


def episode_status(world: WorldState, spec: ObjectiveSpec, step_limit: int,
                   wreck_threshold: float = math.inf) -> EpisodeStatus:
    if success(world, spec):
        return EpisodeStatus(True, "success")
    if any(v.state.damage > wreck_threshold for v in world.vehicles.values()):
        return EpisodeStatus(True, "wrecked")
    if world.step_index >= step_limit:
        return EpisodeStatus(True, "timeout")
    return RUNNING
