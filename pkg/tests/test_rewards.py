import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advbench import rewards, sim
from advbench.rewards import ObjectiveKind, ObjectiveSpec, ReferenceTrajectory
from advbench.sim import Action, CollisionEvent, ConfigurationError, TrackFrame, Vec2, Vehicle, VehicleSpec, VehicleState

TRACK = sim.circle_track()


def frame(theta=0.0, d=0.0):
    return TrackFrame(theta, d, 0.0)


def world(positions, events=(), step=3):
    vehicles = {vid: Vehicle(VehicleState(Vec2(*p)), VehicleSpec()) for vid, p in positions.items()}
    w = sim.make_world(TRACK, vehicles)
    return replace(w, step_index=step, collisions_this_step=tuple(
        CollisionEvent(step, a, b, 1.0) for a, b in events))


def test_reward_track_examples():
    assert rewards.reward_track(frame(), 10.0) == 10.0
    assert rewards.reward_track(frame(0.7, 3.0), 0.0) == 0.0
    # 10 cos(pi/4) - 10 sin(pi/4) - 10 * 0.5
    assert rewards.reward_track(frame(math.pi / 4, 0.5), 10.0) == pytest.approx(-5.0, abs=1e-9)


def test_reward_track_sign_convention_and_abs_variant():
    assert rewards.reward_track(frame(-0.3), 10.0) > rewards.reward_track(frame(0.3), 10.0)
    assert rewards.reward_track(frame(-0.3), 10.0, abs_sin=True) == pytest.approx(
        rewards.reward_track(frame(0.3), 10.0, abs_sin=True))


def test_reward_track_collision():
    f = frame(0.2, 1.5)
    assert rewards.reward_track_collision(f, 7.0, False, 200.0) == rewards.reward_track(f, 7.0)
    assert rewards.reward_track_collision(frame(), 10.0, True, 200.0) == -190.0
    diff = rewards.reward_track_collision(f, 7.0, True, 50.0) - rewards.reward_track_collision(f, 7.0, False, 50.0)
    assert diff == pytest.approx(-50.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        rewards.reward_track_collision(f, 7.0, True, 0.0)


DIRECT = ObjectiveSpec(ObjectiveKind.DIRECT_COLLISION)
INDUCED = ObjectiveSpec(ObjectiveKind.INDUCED_COLLISION, C_T=200.0, C_adv=100.0)


def test_direct_collision():
    w = world({"subject": (0, 0), "adversary": (30, 0)})
    assert rewards.reward_direct_collision(w, DIRECT) == -30.0
    w = world({"subject": (0, 0), "adversary": (1e-9, 0)}, [("adversary", "subject")])
    assert rewards.reward_direct_collision(w, DIRECT) == pytest.approx(200.0, abs=1e-6)


def test_direct_collision_closer_is_better():
    far = world({"subject": (0, 0), "adversary": (20, 0)})
    near = world({"subject": (0, 0), "adversary": (19, 0)})
    assert rewards.reward_direct_collision(near, DIRECT) > rewards.reward_direct_collision(far, DIRECT)


def test_direct_collision_unknown_id():
    with pytest.raises(KeyError):
        rewards.reward_direct_collision(world({"subject": (0, 0)}), DIRECT)


def test_induced_collision():
    w = world({"subject": (0, 0), "adversary": (5, 0), "bot": (0, 1)}, [("bot", "subject")])
    assert rewards.reward_induced_collision(w, INDUCED) == pytest.approx(195.0, abs=1e-9)
    w = world({"subject": (0, 0), "adversary": (0, 0)}, [("adversary", "subject")])
    assert rewards.reward_induced_collision(w, INDUCED) == -100.0
    w = world({"subject": (0, 0), "adversary": (12, 0)})
    assert rewards.reward_induced_collision(w, INDUCED) == -12.0


def traj_spec(points, period=0.05):
    return ObjectiveSpec(ObjectiveKind.TRAJECTORY_MANIPULATION,
                         reference_trajectory=ReferenceTrajectory.from_points(points, period))


def test_trajectory_manipulation():
    spec = traj_spec([(0, 0), (1, 0), (2, 0)], period=1.0)
    w = world({"subject": (1, 0), "adversary": (1, 7)})
    assert rewards.reward_trajectory_manipulation(w, spec, 1.0) == -7.0
    w = world({"subject": (2, 3), "adversary": (2, -1)})
    assert rewards.reward_trajectory_manipulation(w, spec, 2.0) == -7.0
    w = world({"subject": (2, 0), "adversary": (2, 0)})
    assert rewards.reward_trajectory_manipulation(w, spec, 2.0) == 0.0
    rec = rewards.trajectory_manipulation_record(w, spec, 10.0)
    assert rec.flags["clamped"] and rec.value == 0.0


def test_reference_trajectory_nearest_and_clamped():
    ref = ReferenceTrajectory.from_points([(0, 0), (1, 0), (2, 0)], 1.0)
    assert ref.at(0.4)[0].tolist() == [0, 0]
    assert ref.at(0.6)[0].tolist() == [1, 0]
    assert ref.at(-3.0) == (pytest.approx(np.array([0, 0])), True)
    assert ref.at(9.0)[0].tolist() == [2, 0] and ref.at(9.0)[1]


def test_objective_spec_validation():
    with pytest.raises(ConfigurationError):
        ObjectiveSpec(ObjectiveKind.DIRECT_COLLISION, C_prime=0.0)
    with pytest.raises(ConfigurationError):
        ObjectiveSpec(ObjectiveKind.TRAJECTORY_MANIPULATION)
    with pytest.raises(ConfigurationError):
        ObjectiveSpec(ObjectiveKind.DIRECT_COLLISION,
                      reference_trajectory=ReferenceTrajectory.from_points([(0, 0)], 1.0))
    with pytest.raises(ConfigurationError):
        rewards.reward_induced_collision(world({"subject": (0, 0), "adversary": (1, 0)}), DIRECT)


def test_episode_status():
    hit = world({"subject": (0, 0), "adversary": (1, 0)}, [("adversary", "subject")], step=5)
    assert rewards.episode_status(hit, DIRECT, 100) == rewards.EpisodeStatus(True, "success")
    clean = world({"subject": (0, 0), "adversary": (10, 0)}, step=100)
    assert rewards.episode_status(clean, DIRECT, 100).reason == "timeout"
    clean = world({"subject": (0, 0), "adversary": (10, 0)}, step=50)
    assert not rewards.episode_status(clean, DIRECT, 100)


def _random_legal_world(rng, n=3):
    ids = ["subject", "adversary"] + [f"bot{i}" for i in range(n - 2)]
    vehicles = {}
    for vid in ids:
        arc = rng.uniform(0, TRACK.length)
        x, y, a = TRACK.point_at(arc)
        off = rng.uniform(-TRACK.half_width, TRACK.half_width)
        vehicles[vid] = Vehicle(VehicleState(Vec2(x - math.sin(a) * off, y + math.cos(a) * off),
                                             rng.uniform(-math.pi, math.pi), rng.uniform(0, 15)),
                                VehicleSpec())
    w = sim.make_world(TRACK, vehicles)
    w = replace(w, step_index=int(rng.integers(0, 400)))
    return replace(w, collisions_this_step=tuple(sim.detect_collisions(w)))


def test_rationality_bounded_rewards():
    rng = np.random.default_rng(0)
    D = TRACK.diameter
    ref = ReferenceTrajectory.from_points([TRACK.point_at(s)[:2] for s in np.linspace(0, 300, 200)], 0.1)
    specs = [DIRECT, INDUCED, ObjectiveSpec(ObjectiveKind.TRAJECTORY_MANIPULATION, reference_trajectory=ref),
             ObjectiveSpec(ObjectiveKind.TRACK_DRIVING),
             ObjectiveSpec(ObjectiveKind.TRACK_DRIVING_WITH_COLLISION)]
    vmax = VehicleSpec().max_speed
    bounds = [DIRECT.c_max + D, INDUCED.c_max + D, 2 * D,
              vmax * (2 + D), vmax * (2 + D) + DIRECT.C]
    worst = [0.0] * len(specs)
    for _ in range(100_000 // len(specs)):
        w = _random_legal_world(rng)
        for i, spec in enumerate(specs):
            rec = rewards.evaluate(w, spec)
            assert abs(rec.value - sum(rec.components.values())) <= 1e-12
            worst[i] = max(worst[i], abs(rec.value))
    for got, bound in zip(worst, bounds):
        assert got <= bound


def test_indicators_match_collision_ledger():
    rng = np.random.default_rng(2)
    for episode in range(20):
        w = _random_legal_world(rng, 3)
        for _ in range(30):
            w = sim.step(w, {vid: Action(rng.uniform(), 0, rng.uniform(-1, 1)) for vid in w.vehicles})
            ev = w.collisions_this_step
            d = rewards.direct_collision_record(w, DIRECT)
            assert d.flags["eta"] == any({e.vehicle_a, e.vehicle_b} == {"subject", "adversary"} for e in ev)
            i = rewards.induced_collision_record(w, INDUCED)
            assert i.flags["eta_adv"] == any("adversary" in (e.vehicle_a, e.vehicle_b) for e in ev)
            assert i.flags["eta_T"] == any("subject" in (e.vehicle_a, e.vehicle_b)
                                           and "adversary" not in (e.vehicle_a, e.vehicle_b) for e in ev)


@settings(deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.booleans())
def test_direct_collision_translation_invariant(tx, ty, hit):
    ev = [("adversary", "subject")] if hit else []
    a = world({"subject": (3, 4), "adversary": (-2, 9)}, ev)
    b = world({"subject": (3 + tx, 4 + ty), "adversary": (-2 + tx, 9 + ty)}, ev)
    assert rewards.reward_direct_collision(a, DIRECT) == pytest.approx(
        rewards.reward_direct_collision(b, DIRECT), rel=1e-9, abs=1e-9)
