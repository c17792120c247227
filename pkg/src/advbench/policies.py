"""Collision-avoidance policies under test and scripted traffic.

Every policy sees the world only through :class:`Observation`, built from the
current :class:`~advbench.sim.WorldState` before any next state exists. Own
pose and speed come from odometry; other vehicles are reported per bearing
sector (range, bearing, closing speed, relative velocity) within a sensing
radius.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from advbench import sim
from advbench.sim import Action, ConfigurationError, Track, TrackFrame, VehicleSpec

DEFAULT_SECTORS = 8
DEFAULT_SENSING_RADIUS = 50.0


@dataclass(frozen=True)
class Observation:
    frame: TrackFrame
    speed: float
    ranges: np.ndarray
    closing_speeds: np.ndarray
    bearings: np.ndarray
    rel_velocity: np.ndarray  # (sectors, 2) in the own body frame
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    steering_angle: float = 0.0
    sensing_radius: float = DEFAULT_SENSING_RADIUS

    def occupied(self) -> np.ndarray:
        return self.ranges < self.sensing_radius

    def key(self) -> tuple:
        return (self.frame, self.speed, self.x, self.y, self.heading, self.steering_angle,
                self.ranges.tobytes(), self.closing_speeds.tobytes(),
                self.bearings.tobytes(), self.rel_velocity.tobytes())


def observe(world: sim.WorldState, own_id: str, sectors: int = DEFAULT_SECTORS,
            sensing_radius: float = DEFAULT_SENSING_RADIUS) -> Observation:
    """Sector sensor readout for ``own_id``; sector 0 is centred dead ahead, counter-clockwise."""
    own = world.state(own_id)
    ox, oy, h = own.position.x, own.position.y, own.heading
    c, s = math.cos(h), math.sin(h)
    ovx, ovy = own.speed * c, own.speed * s
    width = 2.0 * math.pi / sectors
    ranges = np.full(sectors, float(sensing_radius))
    closing = np.zeros(sectors)
    bearings = np.arange(sectors) * width
    bearings = np.where(bearings >= math.pi, bearings - 2 * math.pi, bearings)
    relv = np.zeros((sectors, 2))
    for vid, v in world.vehicles.items():
        if vid == own_id:
            continue
        dx, dy = v.state.position.x - ox, v.state.position.y - oy
        r = math.hypot(dx, dy)
        if r >= sensing_radius:
            continue
        beta = sim.wrap_angle(math.atan2(dy, dx) - h)
        k = int(((beta + 0.5 * width) % (2 * math.pi)) // width) % sectors
        if r < ranges[k]:
            vx = v.state.speed * math.cos(v.state.heading) - ovx
            vy = v.state.speed * math.sin(v.state.heading) - ovy
            ranges[k] = r
            bearings[k] = beta
            closing[k] = -(dx * vx + dy * vy) / r if r > 0 else 0.0
            relv[k] = (c * vx + s * vy, -s * vx + c * vy)
    return Observation(world.track.frame((ox, oy), h), own.speed, ranges, closing, bearings,
                       relv, ox, oy, h, own.steering_angle, float(sensing_radius))


class PolicyUnderTest:
    """Uniform interface: ``observe`` then ``act``; ``reset`` between episodes."""

    sectors = DEFAULT_SECTORS
    sensing_radius = DEFAULT_SENSING_RADIUS

    def observe(self, world: sim.WorldState, own_id: str) -> Observation:
        return observe(world, own_id, self.sectors, self.sensing_radius)

    def act(self, obs: Observation) -> Action:
        raise NotImplementedError

    def reset(self) -> None:
        pass

    def __call__(self, world: sim.WorldState, own_id: str) -> Action:
        return self.act(self.observe(world, own_id))


def _to_body(obs: Observation, px: float, py: float) -> tuple[float, float]:
    dx, dy = px - obs.x, py - obs.y
    c, s = math.cos(obs.heading), math.sin(obs.heading)
    return c * dx + s * dy, -s * dx + c * dy


def _speed_control(speed: float, target: float, gain: float) -> tuple[float, float]:
    u = gain * (target - speed)
    return (min(u, 1.0), 0.0) if u >= 0 else (0.0, min(-u, 1.0))


class NullPolicy(PolicyUnderTest):
    """Pure-pursuit centerline follower at a target speed; ignores other vehicles.

    Also serves as the scripted traffic bot via ``lane_offset``.
    """

    def __init__(self, track: Track, spec: VehicleSpec | None = None, target_speed: float = 8.0,
                 lookahead: float = 8.0, speed_gain: float = 0.5, lane_offset: float = 0.0):
        if lookahead <= 0 or speed_gain <= 0 or target_speed < 0:
            raise ConfigurationError("lookahead and speed_gain must be > 0, target_speed >= 0")
        self.track = track
        self.spec = spec or VehicleSpec()
        self.target_speed = target_speed
        self.lookahead = lookahead
        self.speed_gain = speed_gain
        self.lane_offset = lane_offset

    def lookahead_point(self, obs: Observation) -> tuple[float, float]:
        """Target point in the body frame."""
        px, py, ang = self.track.point_at(obs.frame.arc_progress + self.lookahead)
        px -= math.sin(ang) * self.lane_offset
        py += math.cos(ang) * self.lane_offset
        return _to_body(obs, px, py)

    def pursuit_steering(self, tx: float, ty: float) -> float:
        ld2 = tx * tx + ty * ty
        if ld2 == 0.0:
            return 0.0
        # pure pursuit: curvature 2*y/Ld^2
        delta = math.atan(2.0 * self.spec.wheelbase * ty / ld2)
        return delta / self.spec.max_steering

    def act(self, obs: Observation) -> Action:
        tx, ty = self.lookahead_point(obs)
        throttle, brake = _speed_control(obs.speed, self.target_speed, self.speed_gain)
        return Action(throttle, brake, self.pursuit_steering(tx, ty))


def null_policy(track: Track, **kw) -> NullPolicy:
    return NullPolicy(track, **kw)


class PotentialFieldPolicy(NullPolicy):
    """Attraction to the pursuit point plus inverse-square repulsion from sensed opponents.

    Opponents ahead also add a sideways swerve of the same magnitude, pushing
    away from the side they are on; an opponent exactly dead ahead is passed
    on the left. Speed drops near opponents ahead and rises to ``flee_speed``
    while something closes in from behind or abeam within ``flee_radius``.
    """

    def __init__(self, track: Track, spec: VehicleSpec | None = None, k_att: float = 1.0,
                 k_rep: float = 60.0, target_speed: float = 8.0, slow_radius: float = 15.0,
                 stop_radius: float = 5.0, min_speed_fraction: float = 0.4,
                 flee_radius: float = 20.0, flee_speed: float = 12.0, **kw):
        if k_att <= 0 or k_rep <= 0:
            raise ConfigurationError("potential-field gains must be positive")
        super().__init__(track, spec, target_speed=target_speed, **kw)
        self.k_att = k_att
        self.k_rep = k_rep
        self.slow_radius = slow_radius
        self.stop_radius = stop_radius
        self.min_speed_fraction = min_speed_fraction
        self.flee_radius = flee_radius
        self.flee_speed = min(flee_speed, self.spec.max_speed)

    def repulsive_forces(self, obs: Observation) -> np.ndarray:
        """Per-sector radial repulsion k_rep / r**2 pointing away from each opponent."""
        out = np.zeros((len(obs.ranges), 2))
        for k in np.flatnonzero(obs.occupied()):
            r = max(obs.ranges[k], 1e-6)
            m = self.k_rep / (r * r)
            out[k] = (-m * math.cos(obs.bearings[k]), -m * math.sin(obs.bearings[k]))
        return out

    def total_force(self, obs: Observation) -> tuple[float, float]:
        tx, ty = self.lookahead_point(obs)
        n = math.hypot(tx, ty) or 1.0
        fx, fy = self.k_att * tx / n, self.k_att * ty / n
        rep = self.repulsive_forces(obs)
        for k in np.flatnonzero(obs.occupied()):
            b = obs.bearings[k]
            ahead = math.cos(b)
            m = math.hypot(*rep[k])
            fx += rep[k, 0]
            fy += rep[k, 1]
            if ahead > 0:
                fy += m * ahead * (-1.0 if b > 0 else 1.0)
        return fx, fy

    def act(self, obs: Observation) -> Action:
        fx, fy = self.total_force(obs)
        alpha = math.atan2(fy, fx)
        if abs(alpha) > 0.5 * math.pi:
            steer = math.copysign(1.0, alpha)
        else:
            # steer toward the force direction as if it were a pursuit point
            steer = self.pursuit_steering(self.lookahead * math.cos(alpha),
                                          self.lookahead * math.sin(alpha))
        target = self.target_speed
        occ = obs.occupied()
        ahead = occ & (np.cos(obs.bearings) > 0)
        chasing = (occ & ~ahead & (obs.closing_speeds > 0)
                   & (obs.ranges < self.flee_radius))
        if chasing.any():
            target = self.flee_speed
        elif ahead.any():
            r = float(obs.ranges[ahead].min())
            frac = (r - self.stop_radius) / (self.slow_radius - self.stop_radius)
            target *= min(max(frac, self.min_speed_fraction), 1.0)
        throttle, brake = _speed_control(obs.speed, target, self.speed_gain)
        return Action(throttle, brake, steer)


def potential_field_policy(track: Track, **gains) -> PotentialFieldPolicy:
    return PotentialFieldPolicy(track, **gains)


def default_candidates(steer_levels: int = 5) -> list[Action]:
    """Full throttle straight first, then throttle/coast/brake across steering levels."""
    steers = [0.0] + [s for s in np.linspace(-1, 1, steer_levels).tolist() if s != 0.0]
    cands = []
    for thr, brk in ((1.0, 0.0), (0.0, 0.0), (0.0, 1.0)):
        cands += [Action(thr, brk, s) for s in steers]
    return cands


@dataclass
class Rollout:
    score: float
    progress: float
    collided: bool
    off_track: bool
    states: list = field(default_factory=list)


class RecedingHorizonPolicy(PolicyUnderTest):
    """Samples constant-action candidates over a short horizon and applies the best one.

    Opponents are predicted at constant velocity and treated as discs with the
    circumradius of the own footprint. The collision penalty exceeds the
    largest achievable progress, so a collision-free candidate always beats a
    colliding one.
    """

    def __init__(self, track: Track, spec: VehicleSpec | None = None, horizon: int = 10,
                 candidates: int | list[Action] = 15, dt: float = 0.05):
        self.track = track
        self.spec = spec or VehicleSpec()
        if isinstance(candidates, int):
            if candidates < 2:
                raise ConfigurationError("need at least 2 candidates")
            pool = default_candidates()
            while len(pool) < candidates:
                pool = default_candidates(len(pool) // 3 + 2)
            candidates = pool[:candidates]
        if horizon < 1 or len(candidates) < 2:
            raise ConfigurationError("horizon >= 1 and >= 2 candidates required")
        self.horizon = horizon
        self.candidates = list(candidates)
        self.dt = dt
        max_progress = self.spec.max_speed * horizon * dt
        self.collision_penalty = 10.0 * (max_progress + 1.0)
        self.offtrack_penalty = 2.0 * (max_progress + 1.0)
        self.opponent_radius = math.hypot(self.spec.half_length, self.spec.half_width)
        self.last_rollouts: list[Rollout] = []
        self.last_choice = -1

    def predict_opponents(self, obs: Observation) -> list[tuple[float, float, float, float]]:
        """(x, y, vx, vy) in the world frame for each sensed opponent."""
        c, s = math.cos(obs.heading), math.sin(obs.heading)
        ovx, ovy = obs.speed * c, obs.speed * s
        out = []
        for k in np.flatnonzero(obs.occupied()):
            r, b = obs.ranges[k], obs.bearings[k]
            bx, by = r * math.cos(b), r * math.sin(b)
            rvx, rvy = obs.rel_velocity[k]
            out.append((obs.x + c * bx - s * by, obs.y + s * bx + c * by,
                        ovx + c * rvx - s * rvy, ovy + s * rvx + c * rvy))
        return out

    def _hits(self, st: sim.VehicleState, ox: float, oy: float) -> bool:
        c, s = math.cos(st.heading), math.sin(st.heading)
        dx, dy = ox - st.position.x, oy - st.position.y
        u, v = c * dx + s * dy, -s * dx + c * dy
        qu = u - min(max(u, -self.spec.half_length), self.spec.half_length)
        qv = v - min(max(v, -self.spec.half_width), self.spec.half_width)
        return qu * qu + qv * qv <= self.opponent_radius ** 2

    def rollout(self, obs: Observation, action: Action, opponents=None) -> Rollout:
        if opponents is None:
            opponents = self.predict_opponents(obs)
        st = sim.VehicleState(sim.Vec2(obs.x, obs.y), obs.heading, obs.speed, obs.steering_angle)
        arc = obs.frame.arc_progress
        progress, collided, off = 0.0, False, False
        states = []
        for k in range(1, self.horizon + 1):
            st = sim.integrate_vehicle(st, self.spec, action, self.dt)
            states.append(st)
            new_arc = self.track.frame((st.position.x, st.position.y), st.heading).arc_progress
            progress += self.track.progress_delta(arc, new_arc)
            arc = new_arc
            t = k * self.dt
            if not collided:
                collided = any(self._hits(st, x + vx * t, y + vy * t) for x, y, vx, vy in opponents)
            if not off:
                off = sim.outside_track(self.track, st, self.spec)
        score = progress - self.collision_penalty * collided - self.offtrack_penalty * off
        return Rollout(score, progress, collided, off, states)

    def act(self, obs: Observation) -> Action:
        opp = self.predict_opponents(obs)
        self.last_rollouts = [self.rollout(obs, a, opp) for a in self.candidates]
        scores = [r.score for r in self.last_rollouts]
        self.last_choice = int(np.argmax(scores))  # lowest index on ties
        return self.candidates[self.last_choice]


def receding_horizon_policy(track: Track, horizon: int = 10, candidates: int = 15,
                            **kw) -> RecedingHorizonPolicy:
    return RecedingHorizonPolicy(track, horizon=horizon, candidates=candidates, **kw)


class LearnedPolicy(PolicyUnderTest):
    """Wraps a trained actor network; ``features`` maps an Observation to its input vector."""

    def __init__(self, actor, features):
        self.actor = actor
        self.features = features

    def act(self, obs: Observation) -> Action:
        return Action(*self.actor.forward(self.features(obs)).tolist())


POLICIES = {
    "null": null_policy,
    "potential_field": potential_field_policy,
    "receding_horizon": receding_horizon_policy,
}


def make_policy(name: str, track: Track, **params) -> PolicyUnderTest:
    try:
        factory = POLICIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return factory(track, **params)
