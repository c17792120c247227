import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from advbench import cli, ddpg, harness, metrics, sim
from advbench.metrics import AggregateResult, BenchmarkResult, MetricStats
from advbench.sim import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
track = {track}
subject.policy = {subject}
objective.kind = direct_collision
ddpg.episodes_max = 5
ddpg.warmup_steps = 40
ddpg.batch_size = 16
ddpg.hidden = 8, 8
arena.max_steps = 30
metrics.window = 2
metrics.min_episodes = 0
experiment.repetitions = 2
experiment.eval_episodes = 2
experiment.base_seed = 7
"""


@pytest.fixture
def small_cfg(tmp_path):
    def make(subject="null", extra=""):
        p = tmp_path / f"{subject}.cfg"
        p.write_text(SMALL.format(track=CONFIGS / "open_arena.track", subject=subject) + extra)
        return p
    return make


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.is_file()}


# --- config ----------------------------------------------------------------------------

def test_parse_comments_sections_and_tuples(small_cfg):
    cfg = harness.load_config(small_cfg(extra="# trailing comment\nddpg.gamma = 0.9  # inline\n"))
    assert cfg.ddpg.hidden == (8, 8) and cfg.ddpg.gamma == 0.9
    assert cfg.arena.max_steps == 30 and cfg.repetitions == 2
    assert cfg.run_seed(3) == 10


@pytest.mark.parametrize("line", ["ddpg.nonsense = 1", "bogus.key = 2", "ddpg.gamma = high",
                                  "experiment.repetitions = 0", "ddpg.gamma = 1.5", "not a pair"])
def test_invalid_config_rejected(small_cfg, line):
    with pytest.raises(ConfigurationError):
        harness.load_config(small_cfg(extra=line + "\n"))


def test_duplicate_key_rejected(small_cfg):
    with pytest.raises(ConfigurationError, match="duplicate"):
        harness.load_config(small_cfg(extra="subject.policy = null\n"))


def test_missing_track_rejected(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("track = nowhere.track\n")
    with pytest.raises(ConfigurationError, match="track file not found"):
        harness.load_config(p)


def test_hash_ignores_output_location(small_cfg, tmp_path):
    a = harness.load_config(small_cfg())
    b = dataclasses.replace(a, out=tmp_path / "elsewhere", workers=3)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != dataclasses.replace(a, base_seed=8).config_hash()


def test_shipped_preset_names_all_components(tmp_path):
    cfg = harness.load_config(CONFIGS / "direct_null.cfg")
    assert cfg.objective.kind.value == "direct_collision" and cfg.objective.C_prime == 200
    assert cfg.ddpg.ou_theta == 0.15 and cfg.repetitions == 10
    small = dataclasses.replace(cfg, repetitions=1, eval_episodes=1,
                                ddpg=dataclasses.replace(cfg.ddpg, episodes_max=1, warmup_steps=10),
                                arena=dataclasses.replace(cfg.arena, max_steps=5))
    manifest, _ = harness.run_experiment(small, tmp_path)
    assert set(manifest.components) == {"simulation_environment", "objective",
                                        "deep_rl_algorithm", "quantitative_metrics"}
    assert "Ornstein-Uhlenbeck" in manifest.components["deep_rl_algorithm"]


# --- experiments ---------------------------------------------------------------------------

def test_bench_is_byte_deterministic(small_cfg, tmp_path):
    cfg = harness.load_config(small_cfg())
    harness.run_experiment(cfg, tmp_path / "a")
    harness.run_experiment(cfg, tmp_path / "b")
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a.keys() == b.keys()
    assert {"manifest.json", "results.csv", "actor_0.ckpt", "actor_1.ckpt", "trace_0.jsonl"} <= a.keys()
    assert a == b


def test_results_independent_of_worker_count(small_cfg, tmp_path):
    cfg = harness.load_config(small_cfg())
    harness.run_experiment(cfg, tmp_path / "serial", workers=1)
    harness.run_experiment(cfg, tmp_path / "pool", workers=2)
    assert _files(tmp_path / "serial") == _files(tmp_path / "pool")


def test_resume_skips_completed_runs(small_cfg, tmp_path, monkeypatch):
    cfg = harness.load_config(small_cfg())
    out = tmp_path / "r"
    harness.run_experiment(cfg, out)
    before = _files(out)
    (out / "result_1.json").unlink()
    calls = []
    real = harness.run_one

    def spy(config, index, o=None):
        calls.append(index)
        return real(config, index, o)
    monkeypatch.setattr(harness, "run_one", spy)
    harness.run_experiment(cfg, out)
    assert calls == [1]
    assert _files(out) == before
    calls.clear()
    harness.run_experiment(cfg, out)
    assert calls == []


def test_resume_refuses_other_config(small_cfg, tmp_path):
    out = tmp_path / "r"
    harness.run_experiment(harness.load_config(small_cfg()), out)
    with pytest.raises(ConfigurationError, match="different config"):
        harness.run_experiment(harness.load_config(small_cfg("potential_field")), out)


def test_diverged_run_marked_failed(small_cfg, tmp_path, monkeypatch):
    cfg = harness.load_config(small_cfg())
    real = ddpg.train

    def flaky(env, config, *a, **kw):
        if config.seed == cfg.run_seed(1):
            raise ddpg.TrainingDiverged("non-finite parameters", {"updates": 3})
        return real(env, config, *a, **kw)
    monkeypatch.setattr(ddpg, "train", flaky)
    manifest, results = harness.run_experiment(cfg, tmp_path)
    assert [r["status"] for r in manifest.runs] == ["ok", "failed"]
    assert [r.status for r in results] == ["ok", "failed"]
    assert (tmp_path / "actor_0.ckpt").is_file() and not (tmp_path / "actor_1.ckpt").exists()
    assert metrics.aggregate(results).failed == 1


def test_results_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    rs = [BenchmarkResult(i, None if i % 3 == 0 else int(rng.integers(100, 999)),
                          None if i % 3 == 0 else float(rng.normal(-700, 300)),
                          float(rng.uniform(0, 10)), float(rng.normal()) * 1e-17, float(rng.uniform(0, 50)),
                          int(rng.integers(100, 1000)), float(rng.uniform()),
                          "ok" if i % 5 else "failed", None if i % 2 else float(rng.uniform()))
          for i in range(12)]
    harness.write_results_csv(rs, tmp_path / "results.csv")
    assert harness.read_results_csv(tmp_path / "results.csv") == rs


def test_aggregate_csv_round_trip(tmp_path):
    rs = [BenchmarkResult(i, 100 + i, -5.0 * i, 1.0 / (i + 1), 0.1 * i, 0.2, 300, 0.5, "ok", 1.0 / (i + 1))
          for i in range(7)]
    agg = metrics.aggregate(rs, "null", "direct_collision")
    harness.write_aggregate_csv([agg], tmp_path / "aggregate.csv")
    assert harness.read_aggregate_csv(tmp_path / "aggregate.csv") == [agg]


def test_trace_file_matches_eval_episodes(small_cfg, tmp_path):
    cfg = harness.load_config(small_cfg())
    harness.run_experiment(cfg, tmp_path)
    recs = sim.read_trace(tmp_path / "trace_0.jsonl")
    assert sorted({r["episode"] for r in recs}) == [0, 1]
    res = harness.read_results_csv(tmp_path / "results.csv")[0]
    assert 0 <= res.time_to_collision <= cfg.arena.max_steps * cfg.sim.dt


# --- comparison -------------------------------------------------------------------------------

def published(ettc, ret, ttc, runs=100, subject=""):
    stats = {m: None for m in metrics.METRICS}
    for key, v in (("episodes_to_convergence", ettc), ("optimal_return", ret), ("time_to_collision", ttc)):
        stats[key] = MetricStats(v, 0.0, v, v, runs)
    return AggregateResult(stats, runs, 0, 0, subject, "direct_collision")


TABLE_II = """\
Experiment Results - Averaged over 100 runs
+-----------------------------------+--------+--------+
| Metric                            | AV_M   | AV_D   |
+-----------------------------------+--------+--------+
| Number of episodes to convergence | 470    | 890    |
| Optimal return                    | 13900  | 15400  |
| Time to collision                 | 22.44s | 51.31s |
+-----------------------------------+--------+--------+
"""


def test_table_layout_fixture():
    rep = harness.compare(published(470, 13900, 22.44), published(890, 15400, 51.31), ("AV_M", "AV_D"))
    assert rep.render().startswith(TABLE_II)
    assert "AV_D is more resilient to direct collisions than AV_M" in rep.render()
    assert "AV_D is less robust than AV_M" in rep.render()


def test_identical_sets_have_zero_deltas():
    a = published(470, 13900, 22.44)
    rep = harness.compare(a, a)
    assert all(d == 0 for d in rep.deltas.values())
    assert "No differences" in rep.render()


@pytest.mark.parametrize("swap", [False, True])
def test_later_collision_gets_resilience_label(swap):
    early, late = published(300, -900, 3.0, subject="early"), published(300, -900, 7.5, subject="late")
    a, b = (late, early) if swap else (early, late)
    text = harness.compare(a, b).render()
    assert "late is more resilient to direct collisions than early" in text


def test_compare_rejects_mismatched_sets():
    a = published(1, 2, 3)
    b = dataclasses.replace(published(1, 2, 3), objective="induced_collision")
    with pytest.raises(ConfigurationError):
        harness.compare(a, b)
    c = published(1, 2, 3)
    del c.stats["damage_target"]
    with pytest.raises(ConfigurationError):
        harness.compare(a, c)


# --- report and CLI -------------------------------------------------------------------------------

def test_report_writes_deterministic_svgs(small_cfg, tmp_path):
    cfg = harness.load_config(small_cfg())
    harness.run_experiment(cfg, tmp_path / "x")
    _, written = harness.report(tmp_path / "x", plots=True)
    names = {p.name for p in written}
    assert {"aggregate.csv", "curve_0.svg", "curve_1.svg"} <= names
    first = (tmp_path / "x" / "curve_0.svg").read_bytes()
    assert first.lstrip().startswith(b"<?xml")
    harness.report(tmp_path / "x", plots=True)
    assert (tmp_path / "x" / "curve_0.svg").read_bytes() == first


def test_cli_unknown_command_and_flag(capsys):
    for argv in (["frobnicate"], ["bench", "--bogus"], []):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("track = missing.track\n")
    assert cli.main(["bench", "--config", str(p)]) == 2
    assert "track file not found" in capsys.readouterr().err


def test_cli_end_to_end(small_cfg, tmp_path, capsys):
    a, b = tmp_path / "A", tmp_path / "B"
    assert cli.main(["bench", "--config", str(small_cfg()), "--out", str(a)]) == 0
    assert cli.main(["bench", "--config", str(small_cfg("potential_field")), "--out", str(b),
                     "--seed", "3"]) == 0
    assert (a / "manifest.json").is_file() and (a / "results.csv").is_file()
    assert json.loads((b / "manifest.json").read_text())["runs"][0]["seed"] == 3
    capsys.readouterr()
    assert cli.main(["compare", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "| Metric" in out and "null" in out and "potential_field" in out
    assert cli.main(["report", str(a), "--plots"]) == 0
    assert (a / "curve_0.svg").is_file() and (a / "aggregate.csv").is_file()
    assert cli.main(["eval", str(a / "actor_0.ckpt"), "--config", str(small_cfg()), "--episodes", "1"]) == 0
    assert "success_rate" in capsys.readouterr().out
    assert cli.main(["train", "--config", str(small_cfg()), "--out", str(tmp_path / "T")]) == 0
    assert (tmp_path / "T" / "actor_0.ckpt").is_file()
    assert cli.main(["capacity", "--config", str(small_cfg()), "--max", "1", "--trials", "1",
                     "--steps", "5"]) == 0
    assert '"capacity_threshold": 1' in capsys.readouterr().out
