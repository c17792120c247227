"""Episode environments: an adversary (or a learning subject) in a multi-vehicle arena."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from advbench import policies, rewards, sim
from advbench.policies import Observation, PolicyUnderTest
from advbench.rewards import ObjectiveKind, ObjectiveSpec, RewardRecord
from advbench.sim import Action, SimConfig, Track, Vec2, Vehicle, VehicleSpec, VehicleState

ACTION_LOW = np.array([0.0, 0.0, -1.0])
ACTION_HIGH = np.array([1.0, 1.0, 1.0])

POS_SCALE = 30.0
SPEED_SCALE = 15.0


@dataclass(frozen=True)
class ArenaConfig:
    max_steps: int = 200
    traffic: int = 0
    traffic_speed: tuple[float, float] = (4.0, 7.0)
    start_distance: tuple[float, float] = (15.0, 25.0)
    start_lateral: float = 6.0
    adversary_speed: tuple[float, float] = (6.0, 10.0)
    wreck_threshold: float = math.inf
    sectors: int = policies.DEFAULT_SECTORS
    sensing_radius: float = policies.DEFAULT_SENSING_RADIUS


def _body(c: float, s: float, dx: float, dy: float) -> tuple[float, float]:
    return c * dx + s * dy, -s * dx + c * dy


def own_features(obs: Observation, spec: VehicleSpec, track: Track) -> list[float]:
    f = obs.frame
    return [obs.speed / SPEED_SCALE, obs.steering_angle / spec.max_steering,
            math.sin(f.angle_to_axis), math.cos(f.angle_to_axis),
            f.lateral_offset / track.half_width]


def sector_features(obs: Observation) -> list[float]:
    return ((obs.ranges / obs.sensing_radius).tolist()
            + np.clip(obs.closing_speeds / SPEED_SCALE, -2, 2).tolist())


def adversary_features(world: sim.WorldState, adv_id: str, target_id: str,
                       spec: VehicleSpec, cfg: ArenaConfig) -> np.ndarray:
    """Adversary state vector: own kinematics, the target's relative state, sector ranges."""
    obs = policies.observe(world, adv_id, cfg.sectors, cfg.sensing_radius)
    me, tgt = world.state(adv_id), world.state(target_id)
    c, s = math.cos(me.heading), math.sin(me.heading)
    dx, dy = _body(c, s, tgt.position.x - me.position.x, tgt.position.y - me.position.y)
    dist = math.hypot(dx, dy)
    rvx, rvy = _body(c, s, tgt.speed * math.cos(tgt.heading) - me.speed * c,
                     tgt.speed * math.sin(tgt.heading) - me.speed * s)
    dh = tgt.heading - me.heading
    rel = [math.tanh(dx / POS_SCALE), math.tanh(dy / POS_SCALE), dist / POS_SCALE,
           dx / (dist + 1.0), dy / (dist + 1.0), rvx / SPEED_SCALE, rvy / SPEED_SCALE,
           math.sin(dh), math.cos(dh)]
    return np.array(own_features(obs, spec, world.track) + rel + sector_features(obs))


def _place(track: Track, arc: float, lateral: float, dheading: float, speed: float) -> VehicleState:
    x, y, ang = track.point_at(arc)
    return VehicleState(Vec2(x - math.sin(ang) * lateral, y + math.cos(ang) * lateral),
                        sim.wrap_angle(ang + dheading), speed)


def traffic_world(track: Track, n: int, seed: int, subject_speed: float = 8.0,
                  sim_config: SimConfig = SimConfig(),
                  traffic_speed: tuple[float, float] = (2.0, 5.0), lane_spread: float = 0.2,
                  subject_id: str = "subject") -> tuple[sim.WorldState, dict[str, PolicyUnderTest]]:
    """Subject on the centerline plus ``n`` lane-keeping bots spread evenly around the loop.

    Bot lanes are uniform within ``lane_spread`` times the half width of the centerline.
    """
    rng = np.random.default_rng(seed)
    arc0 = rng.uniform(0, track.length)
    vehicles = {subject_id: Vehicle(_place(track, arc0, 0.0, 0.0, subject_speed), VehicleSpec())}
    bots = {}
    for i in range(n):
        lane = rng.uniform(-lane_spread, lane_spread) * track.half_width
        bot = policies.NullPolicy(track, target_speed=rng.uniform(*traffic_speed), lane_offset=lane)
        arc = arc0 + track.length * (i + 1) / (n + 1)
        vehicles[f"traffic{i}"] = Vehicle(_place(track, arc, lane, 0.0, bot.target_speed), VehicleSpec())
        bots[f"traffic{i}"] = bot
    return sim.make_world(track, vehicles, sim_config, seed), bots


class AdversarialEnv:
    """Adversary versus a subject policy, with optional scripted traffic.

    The subject observes the world before anything moves in a step; the
    adversary's action comes from the learner. ``step`` returns
    ``(features, RewardRecord, done, info)``.
    """

    act_low = ACTION_LOW
    act_high = ACTION_HIGH

    def __init__(self, track: Track, subject: PolicyUnderTest, objective: ObjectiveSpec,
                 arena: ArenaConfig = ArenaConfig(), sim_config: SimConfig = SimConfig(),
                 subject_spec: VehicleSpec = VehicleSpec(),
                 adversary_spec: VehicleSpec = VehicleSpec(),
                 traffic_factory: Callable[[int, np.random.Generator], PolicyUnderTest] | None = None):
        self.track = track
        self.subject = subject
        self.objective = objective
        self.arena = arena
        self.sim_config = sim_config
        self.subject_spec = subject_spec
        self.adversary_spec = adversary_spec
        self.traffic_factory = traffic_factory or self._default_traffic
        self.target_id = objective.target_id
        self.adv_id = objective.adversary_id
        self.traffic: dict[str, PolicyUnderTest] = {}
        self.world: sim.WorldState | None = None
        self.trace: list[dict] | None = None
        self.obs_dim = 5 + 9 + 2 * arena.sectors

    def _default_traffic(self, i: int, rng: np.random.Generator) -> PolicyUnderTest:
        lane = rng.uniform(-0.5, 0.5) * self.track.half_width
        return policies.NullPolicy(self.track, target_speed=rng.uniform(*self.arena.traffic_speed),
                                   lane_offset=lane)

    def initial_world(self, seed: int) -> sim.WorldState:
        rng = np.random.default_rng(seed)
        a = self.arena
        arc0 = rng.uniform(0, self.track.length)
        subject_speed = getattr(self.subject, "target_speed", 8.0)
        vehicles = {self.target_id: Vehicle(_place(self.track, arc0, 0.0, 0.0, subject_speed),
                                            self.subject_spec)}
        gap = rng.uniform(*a.start_distance) * rng.choice([-1.0, 1.0])
        vehicles[self.adv_id] = Vehicle(
            _place(self.track, arc0 + gap, rng.uniform(-a.start_lateral, a.start_lateral),
                   rng.uniform(-0.3, 0.3), rng.uniform(*a.adversary_speed)),
            self.adversary_spec)
        self.traffic = {}
        for i in range(a.traffic):
            vid = f"traffic{i}"
            bot = self.traffic_factory(i, rng)
            # spread bots around the loop, keeping them clear of the start positions
            arc = arc0 + self.track.length * (i + 1) / (a.traffic + 1) + rng.uniform(-3, 3)
            vehicles[vid] = Vehicle(_place(self.track, arc, getattr(bot, "lane_offset", 0.0), 0.0,
                                           getattr(bot, "target_speed", 5.0)), VehicleSpec())
            self.traffic[vid] = bot
        return sim.make_world(self.track, vehicles, self.sim_config, seed)

    def reset(self, seed: int, record_trace: bool = False) -> np.ndarray:
        self.subject.reset()
        self.world = self.initial_world(seed)
        for bot in self.traffic.values():
            bot.reset()
        self.trace = [self.world.to_record()] if record_trace else None
        return self.features()

    def features(self) -> np.ndarray:
        return adversary_features(self.world, self.adv_id, self.target_id,
                                  self.adversary_spec, self.arena)

    def step(self, action) -> tuple[np.ndarray, RewardRecord, bool, dict]:
        w = self.world
        actions = {self.target_id: self.subject(w, self.target_id),
                   self.adv_id: action if isinstance(action, Action) else Action(*action)}
        for vid, bot in self.traffic.items():
            actions[vid] = bot(w, vid)
        self.world = sim.step(w, actions)
        if self.trace is not None:
            self.trace.append(self.world.to_record())
        rec = rewards.evaluate(self.world, self.objective)
        status = rewards.episode_status(self.world, self.objective, self.arena.max_steps,
                                        self.arena.wreck_threshold)
        info = {"success": status.reason == "success", "reason": status.reason,
                "truncated": status.reason == "timeout"}
        return self.features(), rec, status.terminal, info


class SubjectTrainingEnv:
    """A learning subject drives the track among scripted traffic (track-driving rewards)."""

    act_low = ACTION_LOW
    act_high = ACTION_HIGH

    def __init__(self, track: Track, objective: ObjectiveSpec | None = None,
                 arena: ArenaConfig = ArenaConfig(traffic=3), sim_config: SimConfig = SimConfig(),
                 spec: VehicleSpec = VehicleSpec()):
        self.objective = objective or ObjectiveSpec(ObjectiveKind.TRACK_DRIVING_WITH_COLLISION)
        if self.objective.kind not in (ObjectiveKind.TRACK_DRIVING,
                                       ObjectiveKind.TRACK_DRIVING_WITH_COLLISION):
            raise sim.ConfigurationError("subject training uses a track-driving objective")
        self.track, self.arena, self.sim_config, self.spec = track, arena, sim_config, spec
        self.me = self.objective.target_id
        self.traffic: dict[str, PolicyUnderTest] = {}
        self.world = None
        self.obs_dim = 5 + 2 * arena.sectors

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        arc0 = rng.uniform(0, self.track.length)
        vehicles = {self.me: Vehicle(_place(self.track, arc0, 0.0, 0.0, 0.0), self.spec)}
        self.traffic = {}
        n = self.arena.traffic
        for i in range(n):
            lane = rng.uniform(-0.5, 0.5) * self.track.half_width
            bot = policies.NullPolicy(self.track, target_speed=rng.uniform(*self.arena.traffic_speed),
                                      lane_offset=lane)
            arc = arc0 + self.track.length * (i + 1) / (n + 1)
            vehicles[f"traffic{i}"] = Vehicle(_place(self.track, arc, lane, 0.0, bot.target_speed),
                                              VehicleSpec())
            self.traffic[f"traffic{i}"] = bot
        self.world = sim.make_world(self.track, vehicles, self.sim_config, seed)
        return self.features()

    def observation(self) -> Observation:
        return policies.observe(self.world, self.me, self.arena.sectors, self.arena.sensing_radius)

    def features(self) -> np.ndarray:
        obs = self.observation()
        return np.array(own_features(obs, self.spec, self.track) + sector_features(obs))

    def step(self, action):
        w = self.world
        actions = {self.me: Action(*action)}
        for vid, bot in self.traffic.items():
            actions[vid] = bot(w, vid)
        self.world = sim.step(w, actions)
        rec = rewards.evaluate(self.world, self.objective)
        status = rewards.episode_status(self.world, self.objective, self.arena.max_steps,
                                        self.arena.wreck_threshold)
        return self.features(), rec, status.terminal, {"reason": status.reason,
                                                       "truncated": status.reason == "timeout"}

    def learned_policy(self, actor) -> policies.LearnedPolicy:
        """Wrap a trained actor as a policy under test."""
        def feats(obs):
            return np.array(own_features(obs, self.spec, self.track) + sector_features(obs))
        return policies.LearnedPolicy(actor, feats)
