"""Deterministic fixed-timestep 2D multi-vehicle simulator.

Vehicles follow a kinematic bicycle model on a closed-loop track. The world
only advances when :func:`step` is called, and every field of
:class:`WorldState` is readable from outside, so a learning agent can drive
the clock at whatever pace training allows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

BOUNDARY_ID = "boundary"


class ConfigurationError(ValueError):
    """Raised for an inconsistent simulator or policy configuration."""


class RejectedInputError(ValueError):
    """Raised when an action or state contains non-finite values."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True, slots=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise RejectedInputError(f"non-finite Vec2 ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class VehicleSpec:
    half_length: float = 2.0
    half_width: float = 1.0
    max_speed: float = 15.0
    max_accel: float = 4.0
    max_brake_decel: float = 8.0
    max_steering: float = 0.5
    max_steering_rate: float = 2.0

    def __post_init__(self):
        for name in ("half_length", "half_width", "max_speed", "max_accel",
                     "max_brake_decel", "max_steering", "max_steering_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"VehicleSpec.{name} must be > 0")
        if self.max_brake_decel < self.max_accel:
            raise ConfigurationError("max_brake_decel must be >= max_accel")

    @property
    def wheelbase(self) -> float:
        return 2.0 * self.half_length


@dataclass(frozen=True, slots=True)
class VehicleState:
    position: Vec2
    heading: float = 0.0
    speed: float = 0.0
    steering_angle: float = 0.0
    damage: float = 0.0


@dataclass(frozen=True, slots=True)
class Action:
    """Actuation triple; components are clamped to their ranges on construction."""

    throttle: float = 0.0
    brake: float = 0.0
    steering_command: float = 0.0

    def __post_init__(self):
        vals = (self.throttle, self.brake, self.steering_command)
        if any(math.isnan(v) for v in vals):
            raise RejectedInputError(f"NaN in action {vals}")
        object.__setattr__(self, "throttle", min(max(float(self.throttle), 0.0), 1.0))
        object.__setattr__(self, "brake", min(max(float(self.brake), 0.0), 1.0))
        object.__setattr__(self, "steering_command",
                           min(max(float(self.steering_command), -1.0), 1.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.brake, self.steering_command])


@dataclass(frozen=True, slots=True)
class TrackFrame:
    angle_to_axis: float
    lateral_offset: float
    arc_progress: float
    segment: int = 0


@dataclass(frozen=True, slots=True)
class CollisionEvent:
    step_index: int
    vehicle_a: str
    vehicle_b: str
    relative_speed: float

    def to_dict(self) -> dict:
        return {"step": self.step_index, "a": self.vehicle_a, "b": self.vehicle_b,
                "relative_speed": self.relative_speed}

    def involves(self, vid: str) -> bool:
        return vid == self.vehicle_a or vid == self.vehicle_b

    def between(self, u: str, v: str) -> bool:
        return {self.vehicle_a, self.vehicle_b} == {u, v}


class Track:
    """Closed-loop polyline centerline with a constant half width."""

    def __init__(self, centerline, half_width: float):
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ConfigurationError("track needs >= 3 two-dimensional waypoints")
        if not np.all(np.isfinite(pts)):
            raise RejectedInputError("non-finite waypoint")
        if not half_width > 0:
            raise ConfigurationError("track half_width must be > 0")
        seg = np.roll(pts, -1, axis=0) - pts
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0):
            raise ConfigurationError("consecutive waypoints must be distinct")
        self.centerline = pts
        self.half_width = float(half_width)
        self._seg = seg
        self._len = lengths
        self._len2 = lengths ** 2
        self._angle = np.arctan2(seg[:, 1], seg[:, 0])
        self._cum = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        self.length = float(lengths.sum())

    def __eq__(self, other):
        return (isinstance(other, Track) and self.half_width == other.half_width
                and np.array_equal(self.centerline, other.centerline))

    def __repr__(self):
        return f"Track({len(self.centerline)} waypoints, half_width={self.half_width})"

    def _nearest(self, x: float, y: float):
        dx = x - self.centerline[:, 0]
        dy = y - self.centerline[:, 1]
        t = (dx * self._seg[:, 0] + dy * self._seg[:, 1]) / self._len2
        np.clip(t, 0.0, 1.0, out=t)
        ex = dx - t * self._seg[:, 0]
        ey = dy - t * self._seg[:, 1]
        d2 = ex * ex + ey * ey
        i = int(np.argmin(d2))  # first index wins on ties
        return i, float(t[i]), math.sqrt(d2[i]), float(dx[i]), float(dy[i])

    def centerline_distances(self, points) -> np.ndarray:
        """Distance from each point to the nearest centerline segment (= |lateral offset|)."""
        p = np.asarray(points, dtype=float)
        dx = p[:, None, 0] - self.centerline[None, :, 0]
        dy = p[:, None, 1] - self.centerline[None, :, 1]
        t = np.clip((dx * self._seg[:, 0] + dy * self._seg[:, 1]) / self._len2, 0.0, 1.0)
        ex = dx - t * self._seg[:, 0]
        ey = dy - t * self._seg[:, 1]
        return np.sqrt((ex * ex + ey * ey).min(axis=1))

    def frame(self, position, heading: float) -> TrackFrame:
        x, y = position
        i, t, dist, dx, dy = self._nearest(x, y)
        cross = self._seg[i, 0] * dy - self._seg[i, 1] * dx
        lateral = dist if cross >= 0 else -dist
        arc = (self._cum[i] + t * self._len[i]) % self.length
        return TrackFrame(wrap_angle(heading - self._angle[i]), lateral, arc, i)

    def point_at(self, arc: float) -> tuple[float, float, float]:
        """Centerline point and tangent angle at an arc-length position."""
        s = arc % self.length
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        t = (s - self._cum[i]) / self._len[i]
        p = self.centerline[i] + t * self._seg[i]
        return float(p[0]), float(p[1]), float(self._angle[i])

    def progress_delta(self, arc_from: float, arc_to: float) -> float:
        """Signed forward arc distance, taking the short way around the loop."""
        d = (arc_to - arc_from) % self.length
        return d - self.length if d > 0.5 * self.length else d

    @property
    def diameter(self) -> float:
        """Upper bound on the distance between any two drivable points."""
        span = self.centerline.max(axis=0) - self.centerline.min(axis=0)
        return float(math.hypot(*span) + 2.0 * self.half_width)


def track_frame(track: Track, position, heading: float) -> TrackFrame:
    return track.frame(position, heading)


def circle_track(radius: float = 60.0, half_width: float = 20.0, n: int = 72) -> Track:
    a = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return Track(np.column_stack([radius * np.cos(a), radius * np.sin(a)]), half_width)


def load_waypoints(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            x, y = line.split()
            rows.append((float(x), float(y)))
    return np.array(rows, dtype=float).reshape(-1, 2)


def load_track(path) -> Track:
    text = Path(path).read_text()
    if not text.endswith("\n"):
        raise ConfigurationError(f"{path}: track file must end with a newline")
    lines = text.splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != "halfwidth":
        raise ConfigurationError(f"{path}: first line must be 'halfwidth W'")
    pts = [tuple(map(float, ln.split())) for ln in lines[1:] if ln.strip()]
    return Track(pts, float(head[1]))


def save_track(track: Track, path) -> None:
    lines = [f"halfwidth {track.half_width!r}"]
    lines += [f"{x!r} {y!r}" for x, y in track.centerline.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    damage_coefficient: float = 1.0
    boundary_damage: float = 1.0
    distance_metric: str = "euclidean"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.distance_metric not in DISTANCE_METRICS:
            raise ConfigurationError(f"unknown distance metric {self.distance_metric!r}")


@dataclass(frozen=True, slots=True)
class Vehicle:
    state: VehicleState
    spec: VehicleSpec


@dataclass(frozen=True)
class WorldState:
    track: Track
    vehicles: Mapping[str, Vehicle]
    config: SimConfig = field(default_factory=SimConfig)
    step_index: int = 0
    collisions_this_step: tuple[CollisionEvent, ...] = ()
    rng_seed: int = 0

    @property
    def sim_time(self) -> float:
        return self.step_index * self.config.dt

    def state(self, vid: str) -> VehicleState:
        try:
            return self.vehicles[vid].state
        except KeyError:
            raise KeyError(f"unknown vehicle id {vid!r}") from None

    def to_record(self) -> dict:
        """JSON-serializable trace record for this step."""
        return {
            "step": self.step_index,
            "time": self.sim_time,
            "vehicles": [
                {"id": vid, "x": v.state.position.x, "y": v.state.position.y,
                 "heading": v.state.heading, "speed": v.state.speed,
                 "damage": v.state.damage}
                for vid, v in self.vehicles.items()
            ],
            "collisions": [c.to_dict() for c in self.collisions_this_step],
        }


def make_world(track: Track, vehicles: Mapping[str, Vehicle | tuple],
               config: SimConfig | None = None, seed: int = 0) -> WorldState:
    vs = {vid: v if isinstance(v, Vehicle) else Vehicle(*v) for vid, v in vehicles.items()}
    if BOUNDARY_ID in vs:
        raise ConfigurationError(f"{BOUNDARY_ID!r} is reserved for the track boundary")
    return WorldState(track, vs, config or SimConfig(), rng_seed=seed)


def integrate_vehicle(s: VehicleState, spec: VehicleSpec, a: Action, dt: float) -> VehicleState:
    """One kinematic bicycle step with exact constant-curvature integration."""
    target = a.steering_command * spec.max_steering
    max_delta = spec.max_steering_rate * dt
    delta = s.steering_angle + min(max(target - s.steering_angle, -max_delta), max_delta)
    delta = min(max(delta, -spec.max_steering), spec.max_steering)

    accel = a.throttle * spec.max_accel - a.brake * spec.max_brake_decel
    v_new = min(max(s.speed + accel * dt, 0.0), spec.max_speed)
    v_avg = 0.5 * (s.speed + v_new)
    dist = v_avg * dt
    dh = dist * math.tan(delta) / spec.wheelbase
    half = 0.5 * dh
    chord = dist * (math.sin(half) / half if half != 0.0 else 1.0)
    mid = s.heading + half
    pos = Vec2(s.position.x + chord * math.cos(mid), s.position.y + chord * math.sin(mid))
    return VehicleState(pos, wrap_angle(s.heading + dh), v_new, delta, s.damage)


def corners(x: float, y: float, heading: float, spec: VehicleSpec) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = spec.half_length, spec.half_width
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([(x + c * u - s * v, y + s * u + c * v) for u, v in local])


def rectangles_overlap(pa, ha: float, sa: VehicleSpec, pb, hb: float, sb: VehicleSpec) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts as overlap)."""
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    reach = math.hypot(sa.half_length, sa.half_width) + math.hypot(sb.half_length, sb.half_width)
    if dx * dx + dy * dy > reach * reach:
        return False
    ca, sna, cb, snb = math.cos(ha), math.sin(ha), math.cos(hb), math.sin(hb)
    axes = ((ca, sna), (-sna, ca), (cb, snb), (-snb, cb))
    ua, va, ub, vb = axes
    for ax, ay in axes:
        ra = (sa.half_length * abs(ua[0] * ax + ua[1] * ay)
              + sa.half_width * abs(va[0] * ax + va[1] * ay))
        rb = (sb.half_length * abs(ub[0] * ax + ub[1] * ay)
              + sb.half_width * abs(vb[0] * ax + vb[1] * ay))
        if abs(dx * ax + dy * ay) > ra + rb:
            return False
    return True


def _velocity(s: VehicleState) -> tuple[float, float]:
    return s.speed * math.cos(s.heading), s.speed * math.sin(s.heading)


def outside_track(track: Track, s: VehicleState, spec: VehicleSpec) -> bool:
    pts = corners(s.position.x, s.position.y, s.heading, spec)
    return bool(np.any(track.centerline_distances(pts) > track.half_width))


def detect_collisions(world: WorldState) -> list[CollisionEvent]:
    """Pairwise footprint overlaps plus vehicles with a corner off the drivable band."""
    events = []
    items = list(world.vehicles.items())
    k = world.step_index
    for i, (ida, va) in enumerate(items):
        sa = va.state
        for idb, vb in items[i + 1:]:
            sb = vb.state
            if rectangles_overlap((sa.position.x, sa.position.y), sa.heading, va.spec,
                                  (sb.position.x, sb.position.y), sb.heading, vb.spec):
                (ax, ay), (bx, by) = _velocity(sa), _velocity(sb)
                a, b = sorted((ida, idb))
                events.append(CollisionEvent(k, a, b, math.hypot(ax - bx, ay - by)))
        if outside_track(world.track, sa, va.spec):
            events.append(CollisionEvent(k, ida, BOUNDARY_ID, sa.speed))
    return events


def step(world: WorldState, actions: Mapping[str, Action], dt: float | None = None) -> WorldState:
    """Advance every vehicle one timestep, then detect collisions and apply damage."""
    cfg = world.config
    if dt is not None and dt != cfg.dt:
        raise ConfigurationError(f"dt {dt} differs from configured timestep {cfg.dt}")
    missing = [vid for vid in world.vehicles if vid not in actions]
    if missing:
        raise ConfigurationError(f"missing actions for vehicles {missing}")
    moved = {}
    for vid, v in world.vehicles.items():
        a = actions[vid]
        if not isinstance(a, Action):
            a = Action(*a)
        moved[vid] = Vehicle(integrate_vehicle(v.state, v.spec, a, cfg.dt), v.spec)
    nxt = replace(world, vehicles=moved, step_index=world.step_index + 1, collisions_this_step=())
    events = detect_collisions(nxt)
    if events:
        extra = dict.fromkeys(moved, 0.0)
        for e in events:
            if e.vehicle_b == BOUNDARY_ID:
                extra[e.vehicle_a] += cfg.boundary_damage
            else:
                extra[e.vehicle_a] += e.relative_speed * cfg.damage_coefficient
                extra[e.vehicle_b] += e.relative_speed * cfg.damage_coefficient
        moved = {vid: Vehicle(replace(v.state, damage=v.state.damage + extra[vid]), v.spec)
                 if extra[vid] else v for vid, v in moved.items()}
    return replace(nxt, vehicles=moved, collisions_this_step=tuple(events))


def euclidean(a: VehicleState, b: VehicleState) -> float:
    return math.hypot(a.position.x - b.position.x, a.position.y - b.position.y)


DISTANCE_METRICS: dict[str, Callable[[VehicleState, VehicleState], float]] = {
    "euclidean": euclidean,
}


def distance(a: str, b: str, world: WorldState) -> float:
    return DISTANCE_METRICS[world.config.distance_metric](world.state(a), world.state(b))


def write_trace(records: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
