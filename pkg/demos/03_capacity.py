"""How much slow traffic can each subject policy weave through?

For every traffic density we run a handful of seeded episodes and count the
ones where the subject never touches anything. The capacity is the largest
density whose clean-run rate stays above the bar.
"""
from advbench import harness, metrics, sim

track = sim.circle_track(60, 20)
densities = [0, 2, 4, 6, 8, 10]
trials = 5

for name in ("null", "potential_field"):
    clean = {n: 0 for n in densities}

    def trial(n, k):
        ok = harness.capacity_trial(track, name, n, seed=1000 * n + k, steps=300)
        clean[n] += ok
        return ok
    cap = metrics.capacity_threshold(trial, densities, trials, required_rate=0.8)
    rates = {n: c / trials for n, c in clean.items()}
    print(f"{name:16s} clean-run rate by density {rates}  capacity {cap}")
