"""Two cars on a loop: a lane keeper and a swerving potential-field driver.

Run with ``python demos/01_drive_and_collide.py``.
"""
import math

import numpy as np

from advbench import metrics, policies, sim
from advbench.sim import Vec2, Vehicle, VehicleSpec, VehicleState

track = sim.circle_track(60, 20)          # radius 60 m, 20 m wide
print("track length", round(track.length, 1), "m")

# place two cars 25 m apart on the centerline, the rear one faster
def place(arc, speed):
    x, y, heading = track.point_at(arc)
    return Vehicle(VehicleState(Vec2(x, y), heading, speed), VehicleSpec())

world = sim.make_world(track, {"lead": place(25.0, 4.0), "chaser": place(0.0, 10.0)})
lead = policies.null_policy(track, target_speed=4.0)
chaser = policies.potential_field_policy(track)

trace = [world.to_record()]
for _ in range(400):
    world = sim.step(world, {"lead": lead(world, "lead"), "chaser": chaser(world, "chaser")})
    trace.append(world.to_record())

# the potential-field car swerves out and slows rather than ramming the lead car
ttc = metrics.time_to_collision(trace, "lead", "chaser")
print("collision time:", ttc)
print("damage (lead, chaser):", metrics.damage_totals(trace, "lead", "chaser"))

# where each car ended up, in track coordinates
for vid in ("lead", "chaser"):
    s = world.state(vid)
    f = track.frame((s.position.x, s.position.y), s.heading)
    print(f"{vid:6s} speed {s.speed:5.2f} m/s  lateral {f.lateral_offset:+.2f} m  "
          f"angle to axis {math.degrees(f.angle_to_axis):+.1f} deg  progress {f.arc_progress:.1f} m")

# frames for plotting: array of (time, x, y) per car
xy = np.array([[r["time"]] + [c for v in r["vehicles"] if v["id"] == "chaser" for c in (v["x"], v["y"])]
               for r in trace])
print(xy.shape)
