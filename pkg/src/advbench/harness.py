"""Experiment orchestration: configs, seeded repeated runs, persistence and reports.

A config is a flat ``key = value`` text file with dotted section prefixes::

    track = open_arena.track
    subject.policy = potential_field
    objective.kind = direct_collision
    ddpg.episodes_max = 1000
    experiment.repetitions = 10

Run ``i`` uses seed ``base_seed + i`` for everything random in it, so a run
is reproducible from the manifest alone and independent of how many workers
execute the experiment.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from advbench import __version__, ddpg, env as envs, metrics, policies, rewards, sim
from advbench.metrics import AggregateResult, BenchmarkResult, ConvergenceCriterion
from advbench.rewards import ObjectiveKind, ObjectiveSpec
from advbench.sim import ConfigurationError

COMPONENTS = {
    "simulation_environment": "advbench.sim (kinematic multi-vehicle track simulator)",
    "objective": "advbench.rewards",
    "deep_rl_algorithm": "advbench.ddpg (DDPG with Ornstein-Uhlenbeck exploration)",
    "quantitative_metrics": "advbench.metrics",
}

RESULT_COLUMNS = ("run", "seed", "status", "episodes_trained") + metrics.METRICS
MISSING = "NA"


# --- config -----------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment, blank lines are ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        if key in out:
            raise ConfigurationError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, default: Any, key: str):
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float) or default is None:
            if default is None and value.lower() in ("none", ""):
                return None
            return float(value)
        if isinstance(default, tuple):
            items = [v.strip() for v in value.split(",") if v.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r}") from None
    return value


def _scalar(value: str):
    """Best-effort typing for free-form policy parameters."""
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def _fill(cls, values: dict[str, str], prefix: str, fixed: dict | None = None):
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in dataclasses.fields(cls) if f.init}
    kw = dict(fixed or {})
    for name, raw in values.items():
        if name not in defaults:
            raise ConfigurationError(f"unknown key {prefix}.{name}")
        kw[name] = _coerce(raw, defaults[name], f"{prefix}.{name}")
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{prefix}: {exc}") from None


@dataclass
class ExperimentConfig:
    track: Path
    subject: str = "null"
    subject_params: dict = field(default_factory=dict)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    ddpg: ddpg.DdpgConfig = field(default_factory=ddpg.DdpgConfig)
    arena: envs.ArenaConfig = field(default_factory=envs.ArenaConfig)
    sim: sim.SimConfig = field(default_factory=sim.SimConfig)
    criterion: ConvergenceCriterion = field(default_factory=ConvergenceCriterion)
    repetitions: int = 100
    base_seed: int = 0
    eval_episodes: int = 20
    out: Path = Path("results")
    workers: int = 1
    reference: Path | None = None
    reference_period: float = 0.05

    def __post_init__(self):
        self.track = Path(self.track)
        self.out = Path(self.out)
        if self.repetitions < 1:
            raise ConfigurationError("experiment.repetitions must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigurationError("experiment.eval_episodes must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("experiment.workers must be >= 1")
        if not self.track.is_file():
            raise ConfigurationError(f"track file not found: {self.track}")
        if self.subject not in policies.POLICIES:
            raise ConfigurationError(f"unknown subject policy {self.subject!r}")

    @property
    def traffic(self) -> int:
        return self.arena.traffic

    def run_seed(self, index: int) -> int:
        return self.base_seed + index

    def canonical(self) -> dict:
        """Everything that determines results; output location and worker count are excluded."""
        obj = dataclasses.asdict(self.objective)
        obj["kind"] = self.objective.kind.value
        obj.pop("reference_trajectory")
        obj["reference_sha256"] = (None if self.reference is None
                                   else hashlib.sha256(Path(self.reference).read_bytes()).hexdigest())
        obj["reference_period"] = self.reference_period
        return {
            "track_sha256": hashlib.sha256(self.track.read_bytes()).hexdigest(),
            "subject": {"policy": self.subject, **self.subject_params},
            "objective": obj,
            "ddpg": {k: v for k, v in self.ddpg.to_dict().items() if k != "seed"},
            "arena": _plain(dataclasses.asdict(self.arena)),
            "sim": dataclasses.asdict(self.sim),
            "metrics": dataclasses.asdict(self.criterion),
            "experiment": {"repetitions": self.repetitions, "base_seed": self.base_seed,
                           "eval_episodes": self.eval_episodes},
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _plain(d: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else
                (repr(v) if isinstance(v, float) and not math.isfinite(v) else v))
            for k, v in d.items()}


def config_from_mapping(values: dict[str, str], base_dir: Path = Path(".")) -> ExperimentConfig:
    sections: dict[str, dict[str, str]] = {}
    top: dict[str, str] = {}
    for key, value in values.items():
        head, dot, rest = key.partition(".")
        if dot:
            sections.setdefault(head, {})[rest] = value
        else:
            top[key] = value
    known = {"subject", "objective", "ddpg", "arena", "sim", "metrics", "experiment"}
    for name in sections:
        if name not in known:
            raise ConfigurationError(f"unknown config section {name!r}")
    for name in top:
        if name != "track":
            raise ConfigurationError(f"unknown config key {name!r}")
    if "track" not in top:
        raise ConfigurationError("config must name a track file ('track = ...')")

    def path(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base_dir / q

    subj = dict(sections.get("subject", {}))
    subject = subj.pop("policy", "null")
    subject_params = {k: _scalar(v) for k, v in subj.items()}

    ex = dict(sections.get("experiment", {}))
    arena_values = dict(sections.get("arena", {}))
    if "traffic" in ex:
        arena_values["traffic"] = ex.pop("traffic")

    obj_values = dict(sections.get("objective", {}))
    reference = obj_values.pop("reference", None)
    period = float(obj_values.pop("reference_period", 0.05))
    fixed = {}
    if reference is not None:
        ref_path = path(reference)
        if not ref_path.is_file():
            raise ConfigurationError(f"reference trajectory not found: {ref_path}")
        fixed["reference_trajectory"] = rewards.ReferenceTrajectory.load(ref_path, period)
    objective = _fill(ObjectiveSpec, obj_values, "objective", fixed)

    kw: dict[str, Any] = {}
    for name, default in (("repetitions", 100), ("base_seed", 0),
                          ("eval_episodes", 20), ("workers", 1)):
        if name in ex:
            kw[name] = _coerce(ex.pop(name), default, f"experiment.{name}")
    if "out" in ex:
        kw["out"] = path(ex.pop("out"))
    if ex:
        raise ConfigurationError(f"unknown key experiment.{next(iter(ex))}")
    return ExperimentConfig(
        track=path(top["track"]),
        subject=subject,
        subject_params=subject_params,
        objective=objective,
        ddpg=_fill(ddpg.DdpgConfig, sections.get("ddpg", {}), "ddpg"),
        arena=_fill(envs.ArenaConfig, arena_values, "arena"),
        sim=_fill(sim.SimConfig, sections.get("sim", {}), "sim"),
        criterion=_fill(ConvergenceCriterion, sections.get("metrics", {}), "metrics"),
        reference=None if reference is None else path(reference),
        reference_period=period,
        **kw,
    )


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(), str(path))
    values.update(overrides or {})
    return config_from_mapping(values, path.parent)


# --- one run -------------------------------------------------------------------------

def make_env(config: ExperimentConfig) -> envs.AdversarialEnv:
    track = sim.load_track(config.track)
    subject = policies.make_policy(config.subject, track, **config.subject_params)
    return envs.AdversarialEnv(track, subject, config.objective, config.arena, config.sim)


def eval_seeds(seed: int, n: int) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return [int(s) for s in rng.integers(2**63, size=n)]


@dataclass
class EvalSummary:
    success_rate: float
    time_to_collision: float
    time_to_collision_hits: float | None
    damage_target: float
    damage_adversary: float
    per_episode_ttc: list[float | None]
    traces: list[list[dict]]


def evaluate_actor(env: envs.AdversarialEnv, actor: ddpg.Mlp, seeds: Sequence[int]) -> EvalSummary:
    """Greedy rollouts of a trained adversary.

    ``time_to_collision`` counts episodes without a success collision at their
    end time; ``time_to_collision_hits`` averages the colliding episodes only.
    """
    obj = env.objective
    ttcs, ends, traces, dmg_t, dmg_a, wins = [], [], [], [], [], 0
    for k, seed in enumerate(seeds):
        obs = env.reset(seed, record_trace=True)
        done, info = False, {}
        while not done:
            obs, _, done, info = env.step(actor.forward(obs))
        wins += bool(info.get("success"))
        trace = [dict(rec, episode=k) for rec in env.trace]
        traces.append(trace)
        if obj.kind is ObjectiveKind.DIRECT_COLLISION:
            t = metrics.time_to_collision(trace, obj.target_id, obj.adversary_id)
        else:
            t = float(env.world.sim_time) if info.get("success") else None
        ttcs.append(t)
        ends.append(float(env.world.sim_time))
        d_t, d_a = metrics.damage_totals(trace, obj.target_id, obj.adversary_id)
        dmg_t.append(d_t)
        dmg_a.append(d_a)
    hits = [t for t in ttcs if t is not None]
    return EvalSummary(wins / len(seeds), metrics.restricted_mean_ttc(ttcs, ends),
                       math.fsum(hits) / len(hits) if hits else None,
                       math.fsum(dmg_t) / len(seeds), math.fsum(dmg_a) / len(seeds), ttcs, traces)


def artifact_paths(out: Path, index: int) -> dict[str, Path]:
    return {"checkpoint": out / f"actor_{index}.ckpt", "trace": out / f"trace_{index}.jsonl",
            "record": out / f"record_{index}.json", "result": out / f"result_{index}.json"}


def _result_to_dict(r: BenchmarkResult) -> dict:
    return dataclasses.asdict(r)


def run_one(config: ExperimentConfig, index: int, out: Path | None = None) -> BenchmarkResult:
    """Train one adversary, evaluate it and persist its artifacts under ``out``."""
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.run_seed(index)
    paths = artifact_paths(out, index)
    env = make_env(config)
    cfg = dataclasses.replace(config.ddpg, seed=seed)
    try:
        agent, record = ddpg.train(env, cfg, config.criterion)
    except ddpg.TrainingDiverged as exc:
        paths["record"].write_text(json.dumps({"error": str(exc), "dump": exc.dump},
                                              sort_keys=True, default=str))
        result = BenchmarkResult(seed, None, None, None, 0.0, 0.0, status="failed")
        paths["result"].write_text(json.dumps(_result_to_dict(result), sort_keys=True))
        return result
    paths["record"].write_text(record.to_json())
    ddpg.save_checkpoint(agent.actor, paths["checkpoint"])
    summary = evaluate_actor(env, agent.actor, eval_seeds(seed, config.eval_episodes))
    sim.write_trace([rec for tr in summary.traces for rec in tr], paths["trace"])
    etc = metrics.episodes_to_convergence(record, config.criterion)
    result = BenchmarkResult(
        seed=seed,
        episodes_to_convergence=etc,
        optimal_return=metrics.optimal_return(record, etc, config.criterion),
        time_to_collision=summary.time_to_collision,
        time_to_collision_hits=summary.time_to_collision_hits,
        damage_target=summary.damage_target,
        damage_adversary=summary.damage_adversary,
        episodes_trained=len(record.returns),
        eval_success_rate=summary.success_rate,
    )
    paths["result"].write_text(json.dumps(_result_to_dict(result), sort_keys=True))
    return result


def _worker(args) -> tuple[int, BenchmarkResult]:
    config, index = args
    return index, run_one(config, index)


# --- manifest and experiment -----------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    version: str
    config: dict
    runs: list[dict] = field(default_factory=list)
    components: dict = field(default_factory=lambda: dict(COMPONENTS))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def run(self, index: int) -> dict | None:
        return next((r for r in self.runs if r["index"] == index), None)


def _manifest_entry(out: Path, index: int, seed: int, status: str) -> dict:
    kinds = ("checkpoint", "trace", "record", "result") if status == "ok" else ("record", "result")
    arts = {k: p.name for k, p in artifact_paths(out, index).items() if k in kinds}
    return {"index": index, "seed": seed, "status": status, "artifacts": arts}


def _completed(manifest: RunManifest | None, out: Path, index: int) -> BenchmarkResult | None:
    entry = manifest.run(index) if manifest else None
    if entry is None or entry["status"] not in ("ok", "failed"):
        return None
    if not all((out / name).is_file() for name in entry["artifacts"].values()):
        return None
    return BenchmarkResult(**json.loads((out / entry["artifacts"]["result"]).read_text()))


def run_experiment(config: ExperimentConfig, out: Path | None = None,
                   workers: int | None = None) -> tuple[RunManifest, list[BenchmarkResult]]:
    """Run every repetition (skipping ones already completed under ``out``) and write the outputs."""
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or config.workers
    h = config.config_hash()
    mpath = out / "manifest.json"
    previous = None
    if mpath.is_file():
        previous = RunManifest.load(mpath)
        if previous.config_hash != h:
            raise ConfigurationError(f"{out} holds results of a different config "
                                     f"({previous.config_hash[:12]} != {h[:12]})")
    manifest = RunManifest(h, __version__, config.canonical())
    results: dict[int, BenchmarkResult] = {}
    todo = []
    for i in range(config.repetitions):
        done = _completed(previous, out, i)
        if done is None:
            todo.append(i)
        else:
            results[i] = done

    def record(i: int, r: BenchmarkResult):
        # rewritten after every run so an interrupted experiment can resume
        results[i] = r
        manifest.runs = [_manifest_entry(out, j, config.run_seed(j), results[j].status)
                         for j in sorted(results)]
        mpath.write_text(manifest.to_json())

    record_cfg = dataclasses.replace(config, out=out)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, r in pool.map(_worker, [(record_cfg, i) for i in todo]):
                record(i, r)
    else:
        for i in todo:
            record(i, run_one(record_cfg, i, out))
    if not todo:
        record(0, results[0])  # refresh the manifest for a fully resumed experiment
    ordered = [results[i] for i in range(config.repetitions)]
    write_results_csv(ordered, out / "results.csv")
    agg = metrics.aggregate(ordered, config.subject, config.objective.kind.value)
    write_aggregate_csv([agg], out / "aggregate.csv")
    return manifest, ordered


# --- CSV persistence -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return MISSING
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv_text(results: Sequence[BenchmarkResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for i, r in enumerate(results):
        w.writerow([i, r.seed, r.status, r.episodes_trained]
                   + [_fmt(getattr(r, m)) for m in metrics.METRICS])
    return buf.getvalue()


def write_results_csv(results: Sequence[BenchmarkResult], path) -> None:
    Path(path).write_text(results_csv_text(results))


def read_results_csv(path) -> list[BenchmarkResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def val(name, kind):
                return None if row[name] == MISSING else kind(row[name])
            out.append(BenchmarkResult(
                seed=int(row["seed"]),
                episodes_to_convergence=val("episodes_to_convergence", int),
                optimal_return=val("optimal_return", float),
                time_to_collision=val("time_to_collision", float),
                damage_target=float(row["damage_target"]),
                damage_adversary=float(row["damage_adversary"]),
                episodes_trained=int(row["episodes_trained"]),
                eval_success_rate=float(row["eval_success_rate"]),
                status=row["status"],
                time_to_collision_hits=val("time_to_collision_hits", float)))
    return out


AGG_STATS = ("mean", "std", "min", "max", "count")


def write_aggregate_csv(aggs: Sequence[AggregateResult], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", "objective", "runs", "non_converged", "failed"]
               + [f"{m}_{s}" for m in metrics.METRICS for s in AGG_STATS])
    for a in aggs:
        row = [a.subject, a.objective, a.runs, a.non_converged, a.failed]
        for m in metrics.METRICS:
            st = a.stats.get(m)
            row += [MISSING] * len(AGG_STATS) if st is None else [_fmt(getattr(st, s)) for s in AGG_STATS]
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_aggregate_csv(path) -> list[AggregateResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stats = {}
            for m in metrics.METRICS:
                if row[f"{m}_mean"] == MISSING:
                    stats[m] = None
                else:
                    stats[m] = metrics.MetricStats(*(float(row[f"{m}_{s}"]) for s in AGG_STATS[:4]),
                                                   int(row[f"{m}_count"]))
            out.append(AggregateResult(stats, int(row["runs"]), int(row["non_converged"]),
                                       int(row["failed"]), row["subject"], row["objective"]))
    return out


def load_result_set(directory) -> AggregateResult:
    """Aggregate of a result directory (recomputed from results.csv when present)."""
    d = Path(directory)
    if (d / "results.csv").is_file():
        subject, objective = "", ""
        if (d / "manifest.json").is_file():
            cfg = RunManifest.load(d / "manifest.json").config
            subject, objective = cfg["subject"]["policy"], cfg["objective"]["kind"]
        return metrics.aggregate(read_results_csv(d / "results.csv"), subject, objective)
    if (d / "aggregate.csv").is_file():
        return read_aggregate_csv(d / "aggregate.csv")[0]
    raise ConfigurationError(f"{d}: no results.csv or aggregate.csv")


# --- comparison -----------------------------------------------------------------------

TABLE_ROWS = (
    ("episodes_to_convergence", "Number of episodes to convergence", "{:.0f}"),
    ("optimal_return", "Optimal return", "{:.0f}"),
    ("time_to_collision", "Time to collision", "{:.2f}s"),
)


@dataclass
class ComparisonReport:
    names: tuple[str, str]
    runs: tuple[int, int]
    rows: list[tuple[str, str, str]]
    deltas: dict[str, float | None]
    labels: list[str]

    def render(self) -> str:
        header = ("Metric",) + self.names
        body = [header] + self.rows
        widths = [max(len(r[c]) for r in body) for c in range(3)]
        rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

        def line(r):
            return "| " + " | ".join(s.ljust(w) for s, w in zip(r, widths)) + " |"
        runs = self.runs[0] if self.runs[0] == self.runs[1] else f"{self.runs[0]}/{self.runs[1]}"
        out = [f"Experiment Results - Averaged over {runs} runs", rule, line(header), rule]
        out += [line(r) for r in self.rows] + [rule, ""]
        out += self.labels
        return "\n".join(out) + "\n"


def _objective_label(objective: str) -> str:
    try:
        return ObjectiveKind(objective).label
    except ValueError:
        return objective or "the objective"


def compare(a: AggregateResult, b: AggregateResult, names: tuple[str, str] | None = None) -> ComparisonReport:
    """Three-column comparison of two aggregates with resilience/robustness labels.

    Later adversary convergence and later collisions mean a more resilient
    subject; a higher adversary return means a less robust one.
    """
    if a.objective and b.objective and a.objective != b.objective:
        raise ConfigurationError(f"cannot compare objectives {a.objective!r} and {b.objective!r}")
    if set(a.stats) != set(b.stats):
        raise ConfigurationError("result sets report different metrics")
    names = names or (a.subject or "A", b.subject or "B")
    rows, deltas = [], {}
    for key, title, fmt in TABLE_ROWS:
        ma, mb = a.mean(key), b.mean(key)
        rows.append((title, MISSING if ma is None else fmt.format(ma),
                     MISSING if mb is None else fmt.format(mb)))
        deltas[key] = None if ma is None or mb is None else mb - ma
    goal = _objective_label(a.objective or b.objective)
    labels = []

    def pick(key):
        d = deltas[key]
        if d is None or d == 0:
            return None
        return (names[1], names[0]) if d > 0 else (names[0], names[1])
    if (p := pick("episodes_to_convergence")) is not None:
        labels.append(f"Training time: {p[0]} is more resilient than {p[1]} "
                      f"(adversary needs more episodes to converge).")
    if (p := pick("optimal_return")) is not None:
        labels.append(f"Optimal return: {p[0]} is less robust than {p[1]} "
                      f"(adversary attains a higher return).")
    if (p := pick("time_to_collision")) is not None:
        labels.append(f"Test time: {p[0]} is more resilient to {goal} than {p[1]} "
                      f"(later time to collision).")
    if not labels:
        labels.append("No differences between the two result sets.")
    return ComparisonReport(names, (a.runs, b.runs), rows, deltas, labels)


# --- reports and plots ------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "advbench"
    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_training_curve(record: metrics.TrainingRecord, path, window: int = 50,
                        converged_at: int | None = None, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    r = np.asarray(record.returns, dtype=float)
    ax.plot(np.arange(len(r)), r, lw=0.6, alpha=0.5, label="episode return")
    if len(r) >= window:
        ma = np.convolve(r, np.ones(window) / window, mode="valid")
        ax.plot(np.arange(window - 1, len(r)), ma, lw=1.5, label=f"{window}-episode mean")
    if converged_at is not None:
        ax.axvline(converged_at, color="k", ls="--", lw=1, label="converged")
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_ttc_histogram(ttcs: Sequence[float], path, title: str = "") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ttcs, bins=min(20, max(len(ttcs), 1)))
    ax.set_xlabel("time to collision (s)")
    ax.set_ylabel("evaluation episodes")
    ax.set_title(title)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def report(directory, plots: bool = False) -> tuple[AggregateResult, list[Path]]:
    """Recompute aggregate.csv for a result directory and optionally write the SVG plots."""
    d = Path(directory)
    agg = load_result_set(d)
    write_aggregate_csv([agg], d / "aggregate.csv")
    written = [d / "aggregate.csv"]
    if not plots:
        return agg, written
    crit = ConvergenceCriterion()
    if (d / "manifest.json").is_file():
        crit = ConvergenceCriterion(**RunManifest.load(d / "manifest.json").config["metrics"])
    ttcs = []
    for i, r in enumerate(read_results_csv(d / "results.csv")):
        rec_path = d / f"record_{i}.json"
        if r.status == "ok" and rec_path.is_file():
            rec = metrics.TrainingRecord.from_json(rec_path.read_text())
            p = d / f"curve_{i}.svg"
            plot_training_curve(rec, p, crit.window, r.episodes_to_convergence,
                                f"{agg.subject} run {i}")
            written.append(p)
        tr = d / f"trace_{i}.jsonl"
        if tr.is_file():
            ttcs += per_episode_ttc(sim.read_trace(tr), agg)
    if ttcs:
        p = d / "ttc_histogram.svg"
        plot_ttc_histogram(ttcs, p, f"{agg.subject}: evaluation time to collision")
        written.append(p)
    return agg, written


def per_episode_ttc(records: Sequence[dict], agg: AggregateResult | None = None,
                    target: str = "subject", adversary: str = "adversary") -> list[float]:
    by_ep: dict[int, list[dict]] = {}
    for rec in records:
        by_ep.setdefault(rec.get("episode", 0), []).append(rec)
    out = []
    for ep in sorted(by_ep):
        t = metrics.time_to_collision(by_ep[ep], target, adversary)
        if t is not None:
            out.append(t)
    return out


# --- capacity ------------------------------------------------------------------------------

def capacity_trial(track: sim.Track, subject_name: str, n: int, seed: int,
                   steps: int = 400, subject_params: dict | None = None,
                   sim_config: sim.SimConfig = sim.SimConfig(),
                   traffic_speed: tuple[float, float] = (2.0, 5.0), lane_spread: float = 0.2) -> bool:
    """One seeded episode of the subject among ``n`` scripted bots; True if it never collides."""
    subject = policies.make_policy(subject_name, track, **(subject_params or {}))
    world, bots = envs.traffic_world(track, n, seed, getattr(subject, "target_speed", 8.0),
                                     sim_config, traffic_speed, lane_spread)
    for _ in range(steps):
        actions = {"subject": subject(world, "subject")}
        for vid, bot in bots.items():
            actions[vid] = bot(world, vid)
        world = sim.step(world, actions)
        if any(ev.involves("subject") for ev in world.collisions_this_step):
            return False
    return True


def capacity_scan(config: ExperimentConfig, n_range: Sequence[int], trials: int,
                  steps: int = 400, required_rate: float = 0.95) -> int | None:
    track = sim.load_track(config.track)

    def trial(n, t):
        seed = int(np.random.SeedSequence([config.base_seed, n, t]).generate_state(1)[0])
        return capacity_trial(track, config.subject, n, seed, steps, config.subject_params,
                              config.sim)
    return metrics.capacity_threshold(trial, n_range, trials, required_rate)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
