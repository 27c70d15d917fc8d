"""Experiment runner: presets, seeded comparisons, metrics files, FLOPs and timing.

Every run writes plot-ready files into one output directory:

``curve_<algo>_seed<s>.csv``
    Per-step learning curve. Baselines emit a constant line.
``rounds_dist_seed<s>.csv``
    Per-round assembled reward of the distributed scheme.
``summary.json``
    Final-window means (raw and normalized by the same block's MMSE
    sum-rate) per run plus mean/std across seeds.
``manifest.json``
    Full configuration, its hash, seeds, scenario parameters and the
    SHA-256 of every metrics file.
``timings.json``
    Wall-clock measurements. Kept apart so that the files above are
    byte-identical across reruns in determinism mode.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import baseline_matrix, gradient_ascent
from .channel import PRESETS, ScenarioConfig, generate_scenario
from .d4pg import D4pgHyper, d4pg_train
from .ddpg import DdpgHyper, ddpg_train, observe
from .distributed import dist_train
from .env import UplinkEnv, env_reset, evaluate
from .errors import ConfigurationError
from .nn import Mlp
from .pilots import make_pilot_config

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = "cellfree-summary/1"
MANIFEST_SCHEMA = "cellfree-manifest/1"
BASELINES = ("conjugate", "mmse", "mmse-sic", "grad-ascent")
LEARNERS = ("ddpg", "d4pg", "dist")
ALGOS = BASELINES + LEARNERS
#: run-length presets: desk-scale fixed-block runs and the long per-episode protocol
RUN_LENGTHS = {
    "desk": {"episodes": 10, "steps_per_episode": 1000, "csi_mode": "fixed-block"},
    "full": {"episodes": 50, "steps_per_episode": 1000, "csi_mode": "per-episode"},
}


@dataclass
class ExperimentConfig:
    scenario: str = "small"
    scenario_overrides: dict = field(default_factory=dict)
    algos: tuple = ("conjugate", "mmse", "ddpg", "d4pg", "dist")
    seeds: tuple = (0,)
    episodes: int = 10
    steps_per_episode: int = 1000
    hidden: tuple = (256, 128)
    csi_mode: str = "fixed-block"
    enforce_sic: bool = False
    penalty: float = 1.0
    batch: int = 64
    sigma: float = 0.1
    sigma_final: float = 0.01
    actors: int | None = None
    nstep: int = 5
    atoms: int = 51
    vmin: float = -20.0
    vmax: float = 100.0
    t_target: int = 100
    t_actors: int = 100
    deterministic: bool = True
    rounds: int | None = None
    transport: str = "inproc"
    workers: int = 1
    ga_lr: float = 0.1
    ga_iters: int = 100
    normalizer: str = "mmse"
    final_window: int = 100
    out_dir: str | None = None

    def __post_init__(self):
        self.algos = tuple(self.algos)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.hidden = tuple(int(h) for h in self.hidden)
        unknown = [a for a in self.algos if a not in ALGOS]
        if unknown:
            raise ConfigurationError(f"unknown algorithm(s) {unknown}; choose from {ALGOS}")
        if self.scenario != "custom" and self.scenario not in PRESETS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.csi_mode not in ("fixed-block", "per-episode"):
            raise ConfigurationError(f"unknown csi_mode {self.csi_mode!r}")
        if self.normalizer not in ("mmse", "mmse-sic"):
            raise ConfigurationError("normalizer must be an MMSE variant")
        if self.transport not in ("inproc", "socket"):
            raise ConfigurationError(f"unknown transport {self.transport!r}")
        if self.episodes < 0 or self.steps_per_episode < 1:
            raise ConfigurationError("need episodes >= 0 and steps_per_episode >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.steps_per_episode

    def scenario_config(self, seed: int) -> ScenarioConfig:
        if self.scenario == "custom":
            return ScenarioConfig.from_dict({**self.scenario_overrides, "seed": seed})
        return ScenarioConfig.preset(self.scenario, **{**self.scenario_overrides, "seed": seed})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["algos"] = list(self.algos)
        d["seeds"] = list(self.seeds)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {unknown}")
        return cls(**data)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")        # results do not depend on it
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- per-run plumbing -------------------------------------------------------------

def make_env_factory(cfg: ExperimentConfig, seed: int):
    scen = cfg.scenario_config(seed)

    def factory(i: int = 0) -> UplinkEnv:
        return UplinkEnv(scen, csi_mode=cfg.csi_mode, penalty=cfg.penalty,
                         enforce_sic=cfg.enforce_sic)
    return factory


def block_normalizers(cfg: ExperimentConfig, seed: int, n_blocks: int) -> list[float]:
    """Sum-rate of the MMSE baseline on each coherence block used by a run."""
    scen = cfg.scenario_config(seed)
    scenario = generate_scenario(scen)
    pilots = make_pilot_config(scen.K, scen.pilot_length, scen.pilot_snr)
    out = []
    for b in range(n_blocks):
        block = env_reset(scenario, pilots, seed, b).block
        out.append(evaluate(baseline_matrix(cfg.normalizer, block), block, enforce_sic=False).sum_rate)
    return out


def ddpg_hyper(cfg: ExperimentConfig, seed: int, reward_scale: float, cls=DdpgHyper, **extra):
    return cls(episodes=cfg.episodes, steps_per_episode=cfg.steps_per_episode, batch=cfg.batch,
               noise_sigma=cfg.sigma, noise_sigma_final=cfg.sigma_final, hidden=cfg.hidden,
               reward_scale=reward_scale, seed=seed, **extra)


@dataclass
class RunOutput:
    algo: str
    seed: int
    columns: list
    rows: list
    blocks: list                       # block index of every row
    extra_files: dict = field(default_factory=dict)   # name -> (columns, rows)
    actor: Mlp | None = None
    train_seconds: float = 0.0


def _baseline_run(cfg: ExperimentConfig, algo: str, seed: int) -> RunOutput:
    env = make_env_factory(cfg, seed)(0)
    n_blocks = cfg.episodes if cfg.csi_mode == "per-episode" else 1
    per_block = []
    t0 = time.perf_counter()
    for b in range(max(n_blocks, 1)):
        if cfg.csi_mode == "per-episode":
            env.reset()
        if algo == "grad-ascent":
            W = gradient_ascent(env.block, np.ones((env.M, env.K)), lr=cfg.ga_lr, iters=cfg.ga_iters,
                                penalty=cfg.penalty, enforce_sic=cfg.enforce_sic).W
        else:
            W = baseline_matrix(algo, env.block)
        per_block.append(env.evaluate(W))
    elapsed = time.perf_counter() - t0
    rows, blocks = [], []
    for step in range(cfg.total_steps):
        b = step // cfg.steps_per_episode if cfg.csi_mode == "per-episode" else 0
        res = per_block[b]
        rows.append({"step": step + 1, "reward": res.reward, "sum_rate": res.sum_rate,
                     "feasible": int(res.feasible)})
        blocks.append(b)
    return RunOutput(algo, seed, ["step", "reward", "sum_rate", "feasible"], rows, blocks,
                     train_seconds=elapsed)


def _learner_run(cfg: ExperimentConfig, algo: str, seed: int, scale: float) -> RunOutput:
    factory = make_env_factory(cfg, seed)
    spe = cfg.steps_per_episode
    per_episode = cfg.csi_mode == "per-episode"
    t0 = time.perf_counter()
    extra = {}
    if algo == "ddpg":
        hp = ddpg_hyper(cfg, seed, scale)
        res = ddpg_train(factory(0), hp)
        actor = res.actor
        columns = ["step", "reward", "sum_rate", "feasible", "loss_critic", "actor_objective"]
        rows = [{"step": i + 1, "reward": res.rewards[i], "sum_rate": res.sum_rates[i],
                 "feasible": int(res.feasible[i]), "loss_critic": res.losses[i],
                 "actor_objective": res.objectives[i]} for i in range(len(res.rewards))]
        blocks = [i // spe if per_episode else 0 for i in range(len(rows))]
    elif algo == "d4pg":
        hp = ddpg_hyper(cfg, seed, scale, cls=D4pgHyper, n_step=cfg.nstep, num_atoms=cfg.atoms,
                        v_min=cfg.vmin, v_max=cfg.vmax, t_target=cfg.t_target,
                        t_actors=cfg.t_actors, num_actors=cfg.actors,
                        deterministic=cfg.deterministic)
        res = d4pg_train(factory, hp, num_actors=cfg.actors)
        actor = res.actor
        n_act = cfg.actors or factory(0).M
        columns = ["step", "actor_steps", "reward", "sum_rate", "feasible", "loss_critic",
                   "dist_loss", "actor_objective"]
        rows = [{"step": i + 1, "actor_steps": res.actor_steps[i], "reward": res.rewards[i],
                 "sum_rate": res.sum_rates[i], "feasible": res.feasible[i],
                 "loss_critic": res.losses[i], "dist_loss": res.dist_losses[i],
                 "actor_objective": res.objectives[i]} for i in range(len(res.rewards))]
        # block of the most recent step of each worker
        blocks = [max(int(math.ceil(r["actor_steps"] / n_act)) - 1, 0) // spe if per_episode else 0
                  for r in rows]
    else:
        rounds = cfg.rounds if cfg.rounds is not None else cfg.episodes
        hp = ddpg_hyper(cfg, seed, scale)
        res = dist_train(factory, hp, horizon_rounds=rounds, transport=cfg.transport,
                         workers=cfg.workers)
        actor = None
        columns = ["step", "reward", "sum_rate", "feasible", "loss_critic", "actor_objective"]
        rows = [{"step": i + 1, "reward": res.rewards[i], "sum_rate": res.sum_rates[i],
                 "feasible": res.feasible[i], "loss_critic": res.losses[i],
                 "actor_objective": res.objectives[i]} for i in range(len(res.rewards))]
        blocks = [i // spe if per_episode else 0 for i in range(len(rows))]
        round_rows = list(res.round_rows())
        M = factory(0).M
        extra["rounds"] = (["round", "assembled_reward"] + [f"agent_{m + 1}_best" for m in range(M)],
                           round_rows)
    out = RunOutput(algo, seed, columns, rows, blocks, extra_files=extra, actor=actor)
    out.train_seconds = time.perf_counter() - t0
    return out


def run_single(cfg: ExperimentConfig, algo: str, seed: int) -> tuple[RunOutput, list[float]]:
    n_blocks = max(cfg.episodes, cfg.rounds or 0, 1) if cfg.csi_mode == "per-episode" else 1
    norms = block_normalizers(cfg, seed, n_blocks)
    if algo in BASELINES:
        out = _baseline_run(cfg, algo, seed)
    else:
        # learner-side reward scaling keeps returns inside the value support
        out = _learner_run(cfg, algo, seed, 1.0 / norms[0])
    for row, b in zip(out.rows, out.blocks):
        row["normalized_reward"] = row["reward"] / norms[b]
    if "normalized_reward" not in out.columns:
        out.columns.insert(out.columns.index("reward") + 1, "normalized_reward")
    for key, (cols, rows) in out.extra_files.items():
        if key == "rounds":
            for row in rows:
                row["assembled_normalized"] = row["assembled_reward"] / norms[0]
            cols.insert(2, "assembled_normalized")
    return out, norms


def final_window_mean(values, window: int) -> float:
    vals = np.asarray(values, dtype=float)[-window:]
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else float("nan")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows, extra: dict | None = None) -> None:
    cols = list(columns) + list(extra or {})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            full = {**row, **(extra or {})}
            w.writerow([_fmt(full.get(c, "")) for c in cols])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def inference_latency(actor: Mlp, s_dim: int, repeats: int = 50) -> float:
    s = np.zeros(s_dim)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        actor.forward(s, cache=False)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (algo, seed) pair and write metrics files; returns the summary."""
    out = Path(out_dir or cfg.out_dir or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from exc
    chash = cfg.config_hash()
    runs, timings, files = [], [], []
    for algo in cfg.algos:
        for seed in cfg.seeds:
            log.info("running %s seed %d", algo, seed)
            res, norms = run_single(cfg, algo, seed)
            tag = {"seed": seed, "config_hash": chash}
            name = f"curve_{algo}_seed{seed}.csv"
            write_csv(out / name, res.columns, res.rows, tag)
            files.append(name)
            for key, (cols, rows) in res.extra_files.items():
                ename = f"{key}_{algo}_seed{seed}.csv"
                write_csv(out / ename, cols, rows, tag)
                files.append(ename)
            if res.actor is not None:
                aname = f"actor_{algo}_seed{seed}.json"
                res.actor.save(out / aname)
                files.append(aname)
            rewards = [r["reward"] for r in res.rows]
            normed = [r["normalized_reward"] for r in res.rows]
            runs.append({
                "algo": algo, "seed": seed,
                "steps": len(res.rows),
                "final_mean_reward": final_window_mean(rewards, cfg.final_window),
                "final_mean_normalized": final_window_mean(normed, cfg.final_window),
                "best_reward": float(np.nanmax(rewards)) if rewards else float("nan"),
                "normalizer_sum_rate": norms,
            })
            if "rounds" in res.extra_files:
                last = res.extra_files["rounds"][1]
                runs[-1]["final_assembled_normalized"] = last[-1]["assembled_normalized"] if last else None
            t = {"algo": algo, "seed": seed, "train_seconds": res.train_seconds}
            if res.actor is not None:
                t["inference_seconds"] = inference_latency(res.actor, res.actor.sizes[0])
            timings.append(t)
    aggregate = {}
    for algo in cfg.algos:
        vals = np.array([r["final_mean_normalized"] for r in runs if r["algo"] == algo])
        raw = np.array([r["final_mean_reward"] for r in runs if r["algo"] == algo])
        aggregate[algo] = {"n": int(vals.size),
                           "normalized_mean": float(vals.mean()), "normalized_std": float(vals.std()),
                           "reward_mean": float(raw.mean()), "reward_std": float(raw.std())}
    scen = cfg.scenario_config(cfg.seeds[0])
    summary = {"schema_version": SUMMARY_SCHEMA, "config_hash": chash, "scenario": cfg.scenario,
               "M": scen.M, "K": scen.K, "normalizer": cfg.normalizer,
               "final_window": cfg.final_window, "runs": runs, "aggregate": aggregate,
               "flops": flops_report(scen.M, scen.K, cfg.hidden)}
    write_json(out / "summary.json", summary)
    files.append("summary.json")
    manifest = {"schema_version": MANIFEST_SCHEMA, "config_hash": chash, "config": cfg.to_dict(),
                "seeds": list(cfg.seeds), "package_version": __version__,
                "numpy_version": np.__version__,
                "scenarios": {str(s): cfg.scenario_config(s).to_dict() for s in cfg.seeds},
                "noise_power_mw": scen.noise_power_mw,
                "files": {name: sha256_file(out / name) for name in files}}
    manifest["config"].pop("out_dir")
    write_json(out / "manifest.json", manifest)
    write_json(out / "timings.json", {"config_hash": chash, "runs": timings})
    return summary


def rerun_from_manifest(manifest_path, out_dir) -> dict:
    """Repeat the run described by a manifest into ``out_dir``."""
    data = json.loads(Path(manifest_path).read_text())
    cfg = ExperimentConfig.from_dict(data["config"])
    return run_experiment(cfg, out_dir)


# -- complexity reports -------------------------------------------------------------

def flops_report(M: int, K: int, hidden=(256, 128)) -> dict:
    """Multiply-add FLOPs of one policy forward pass (``2 * inputs * outputs`` per layer).

    Centralized and D4PG actors map K SINRs to M*K weights; a distributed
    agent maps K SINRs to its own K-entry row. MMSE is reported as the
    order (M K)^2 of its matrix work.
    """
    H = [int(h) for h in hidden]
    if M < 1 or K < 1 or not H or min(H) < 1:
        raise ConfigurationError("sizes must be positive")
    inner = sum(a * b for a, b in zip(H[:-1], H[1:]))
    central = 2 * (H[0] * K + H[-1] * M * K + inner)
    distributed = 2 * (H[0] * K + H[-1] * K + inner)
    return {"M": M, "K": K, "hidden": H, "centralized": central, "d4pg": central,
            "distributed": distributed, "mmse_order": (M * K) ** 2}


def parse_sweep(text: str) -> list[int]:
    """``"15:150:15"`` -> [15, 30, ..., 150] (inclusive stop)."""
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts
    start, stop = parts[0], parts[1]
    step = parts[2] if len(parts) > 2 else 1
    if step < 1 or start < 1 or stop < start:
        raise ConfigurationError(f"bad sweep {text!r}")
    return list(range(start, stop + 1, step))


def timing_report(Ms, hidden=(256, 128), ga_iters: int = 100, ga_lr: float = 0.1, seed: int = 0,
                  repeats: int = 20, out=None) -> list[dict]:
    """Policy feed-forward latency vs gradient-ascent time with ``K = M // 3``.

    Inference timing is weight-agnostic, so freshly initialized actors are
    used. Rows: M, K, t_inference, t_gradascent (seconds).
    """
    rows = []
    for M in Ms:
        K = max(M // 3, 1)
        scen = ScenarioConfig(M=M, K=K, seed=seed)
        env = UplinkEnv(scen, enforce_sic=False)
        actor = Mlp([K] + list(hidden) + [M * K], "softmax-columns",
                    rng=np.random.default_rng([seed, M]), action_shape=(M, K))
        s = observe(env.state.gamma)
        actor.forward(s, cache=False)   # warm-up
        t_inf = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            actor.forward(s, cache=False)
            t_inf.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        gradient_ascent(env.block, np.ones((M, K)), lr=ga_lr, iters=ga_iters, enforce_sic=False)
        t_ga = time.perf_counter() - t0
        rows.append({"M": M, "K": K, "t_inference": float(np.median(t_inf)), "t_gradascent": t_ga})
    if out is not None:
        write_csv(Path(out), ["M", "K", "t_inference", "t_gradascent"], rows)
    return rows
