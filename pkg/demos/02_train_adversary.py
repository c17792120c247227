"""Train a small DDPG adversary against the lane-keeping subject and score it.

Short on purpose (150 episodes, a few minutes on one core). The full
benchmark lives behind ``advbench bench --config configs/direct_null.cfg``.
"""
import sys
from dataclasses import replace
from pathlib import Path

from advbench import ddpg, harness, metrics

cfg_path = Path(__file__).resolve().parents[1] / "configs" / "direct_null.cfg"
config = harness.load_config(cfg_path)
episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 150
ddpg_cfg = replace(config.ddpg, episodes_max=episodes, seed=0)

env = harness.make_env(config)
print("observation size", env.obs_dim)

def progress(episode, ret):
    if episode % 25 == 0:
        print(f"episode {episode:4d}  return {ret:9.1f}")

agent, record = ddpg.train(env, ddpg_cfg, config.criterion, stop_at_convergence=False, callback=progress)

etc = metrics.episodes_to_convergence(record, config.criterion)
print("episodes to convergence:", etc)
print("optimal return:", metrics.optimal_return(record, etc))

# greedy evaluation on held-out episode seeds
summary = harness.evaluate_actor(env, agent.actor, harness.eval_seeds(0, 10))
print("success rate", summary.success_rate)
print("time to collision (misses count as the horizon)", round(summary.time_to_collision, 2), "s")
print("per-episode:", [None if t is None else round(t, 2) for t in summary.per_episode_ttc])
