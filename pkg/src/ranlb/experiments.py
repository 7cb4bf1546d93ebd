"""Experiment orchestration: calibration, training, frozen evaluation,
sweeps, reward ablations and report tables.

Every CSV starts with a ``# config_hash=<hex>`` comment line followed by a
header row; :func:`read_csv` parses that layout back and merges refuse
files whose hashes disagree.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from .baselines import A3Controller, CDQLAgent, ReBuHaController, train_cdql
from .config import KPI_NAMES, ConfigError, ExperimentConfig, SimConfig, to_dict, with_axis
from .env import RanEnv
from .ppo import PPOAgent, episode_seed, train
from .reward import RewardRefs
from .telemetry import calibrate_percentiles

log = logging.getLogger(__name__)

METHODS = ("ppo", "cdql", "rebuha", "a3")
LEARNED = ("ppo", "cdql")
TRAIN_COLUMNS = ("episode", "reward", *KPI_NAMES, "approx_kl", "entropy", "clip_fraction",
                 "pingpong_rate", "hof_rate", "action_delta", "utilization")
EVAL_COLUMNS = ("method", "axis", "value", "seed", "reward", *KPI_NAMES, "pingpong_rate", "hof_rate",
                "action_delta", "utilization")
EVAL_SEED_BASE = 50_000  # evaluation episodes use seeds disjoint from training episodes


class ResultsError(RuntimeError):
    pass


# ---------------------------------------------------------------- csv io

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, columns, config_hash):
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _parse(v):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path):
    """Return ``(config_hash, rows)``; numeric fields come back as numbers."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise ResultsError(f"{path}: missing config hash header")
    h = lines[0].split("=", 1)[1].strip()
    reader = csv.DictReader(lines[1:])
    return h, [{k: _parse(v) for k, v in row.items()} for row in reader]


def merge_csvs(paths):
    """Concatenate result files; all must carry the same config hash."""
    hashes, rows = set(), []
    for p in sorted(paths, key=str):
        h, r = read_csv(p)
        hashes.add(h)
        rows.extend(r)
    if len(hashes) > 1:
        raise ResultsError(f"refusing to merge results from different configs: {sorted(hashes)}")
    return (hashes.pop() if hashes else None), rows


# ---------------------------------------------------------------- statistics

def mean_ci(values, level=0.95):
    """Mean and half-width of a Student-t confidence interval (NaN for n < 2)."""
    x = np.asarray(values, dtype=float)
    m = float(x.mean()) if x.size else math.nan
    if x.size < 2:
        return m, math.nan
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return m, half


def aggregate(rows, keys, metrics):
    """Group ``rows`` by ``keys``; mean and 95% CI of each metric over the group."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        g = groups[key]
        row = dict(zip(keys, key))
        row["n"] = len(g)
        for mtr in metrics:
            m, h = mean_ci([r[mtr] for r in g])
            row[mtr] = m
            row[f"{mtr}_ci"] = h
        out.append(row)
    return out


# ---------------------------------------------------------------- environment helpers

class Paths:
    def __init__(self, out):
        self.root = Path(out)

    @property
    def anchors(self):
        return self.root / "anchors.txt"

    @property
    def calibration_trace(self):
        return self.root / "calibration_trace.csv"

    def train_log(self, method, seed, tag=""):
        return self.root / "train" / f"{method}{tag}_seed{seed}.csv"

    def checkpoint(self, method, seed, tag=""):
        return self.root / "checkpoints" / f"{method}{tag}_seed{seed}.npz"

    def ho_log(self, method, seed, tag=""):
        return self.root / "events" / f"{method}{tag}_seed{seed}.jsonl"


def calibrate(cfg: ExperimentConfig, out=None):
    """A3 runs on held-out seeds; 5th/95th percentile anchors of each KPI."""
    env = RanEnv(cfg.sim, require_reward=False)
    traces = {k: [] for k in KPI_NAMES}
    rows = []
    for s in cfg.calibration_seeds:
        for e in range(cfg.calibration_episodes):
            env.reset(episode_seed(s, e))
            done = False
            zero = np.zeros(env.act_dim)
            while not done:
                res = env.step(zero)
                k = res.info["kpis"].as_dict()
                for name in KPI_NAMES:
                    traces[name].append(k[name])
                rows.append({"seed": s, "episode": e, "step": env.step_index, **k})
                done = res.done
    try:
        anchors = calibrate_percentiles(traces)
    except ValueError as exc:
        raise ConfigError(f"calibration failed: {exc}") from None
    refs = RewardRefs(anchors, cfg.sim.legacy)
    if out is not None:
        p = Paths(out)
        p.root.mkdir(parents=True, exist_ok=True)
        refs.save(p.anchors, header=f"config_hash={cfg.config_hash()}\n5th/95th percentiles of A3 runs")
        write_csv(p.calibration_trace, rows, ("seed", "episode", "step", *KPI_NAMES), cfg.config_hash())
    return refs


def load_or_calibrate(cfg: ExperimentConfig, out):
    p = Paths(out)
    if p.anchors.exists():
        return RewardRefs.load(p.anchors, cfg.sim.legacy)
    return calibrate(cfg, out)


def make_controller(method, env: RanEnv, cfg: ExperimentConfig, seed=0):
    if method == "a3":
        return A3Controller(env.act_dim)
    if method == "rebuha":
        return ReBuHaController(env.act_dim, cfg.rebuha, cfg.sim.cio_min, cfg.sim.cio_max)
    raise ConfigError(f"unknown rule-based method {method!r}")


def run_episode(env: RanEnv, controller, seed):
    """Run one episode with ``controller.act(obs, info)``; return the episode record."""
    obs = env.reset(seed)
    controller.reset()
    info = {}
    done = False
    while not done:
        res = env.step(controller.act(obs, info))
        obs, info, done = res.observation, res.info, res.done
    return dict(info["episode"])


class _Frozen:
    """Deterministic wrapper around a learned policy for evaluation."""

    def __init__(self, agent):
        self.agent = agent

    def reset(self):
        pass

    def act(self, obs, info=None):
        if isinstance(self.agent, PPOAgent):
            return self.agent.act(obs, deterministic=True)
        return self.agent.act(obs)


def _row(rec, cols):
    return {c: rec.get(c, "") for c in cols}


# ---------------------------------------------------------------- training

def train_method(cfg: ExperimentConfig, method, seed, out, refs=None, tag="", episodes=None):
    """Train (or, for rule-based methods, simply run) ``method`` for the budget.

    Writes the per-episode CSV, an HO-event JSONL log of the last episode and,
    for learned methods, a checkpoint. Returns the per-episode records.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    episodes = cfg.episodes if episodes is None else episodes
    refs = refs if refs is not None else load_or_calibrate(cfg, out)
    env = RanEnv(cfg.sim, refs)
    paths = Paths(out)
    if method == "ppo":
        agent, logs = train(env, episodes, cfg.ppo, seed)
    elif method == "cdql":
        agent, logs = train_cdql(env, episodes, cfg.cdql, seed)
    else:
        agent = None
        ctl = make_controller(method, env, cfg, seed)
        logs = []
        for ep in range(episodes):
            rec = run_episode(env, ctl, episode_seed(seed, ep))
            rec["episode"] = ep
            logs.append(rec)
    write_csv(paths.train_log(method, seed, tag), [_row(r, TRAIN_COLUMNS) for r in logs], TRAIN_COLUMNS,
              cfg.config_hash())
    if agent is not None:
        paths.checkpoint(method, seed, tag).parent.mkdir(parents=True, exist_ok=True)
        agent.save(paths.checkpoint(method, seed, tag))
    if episodes > 0:
        paths.ho_log(method, seed, tag).parent.mkdir(parents=True, exist_ok=True)
        with open(paths.ho_log(method, seed, tag), "w") as fh:
            for ev in env.ho_log.events:
                fh.write(json.dumps(ev.to_json()) + "\n")
    return logs


def load_agent(method, path, cfg: ExperimentConfig):
    if not Path(path).exists():
        raise ResultsError(f"missing checkpoint for {method}: {path} (run 'train' first)")
    if method == "ppo":
        return PPOAgent.load(path, cfg.ppo)
    return CDQLAgent.load(path, cfg.cdql, cfg.sim.cio_min, cfg.sim.cio_max)


def evaluate(cfg: ExperimentConfig, method, seed, out, sim: SimConfig | None = None, refs=None, tag=""):
    """Frozen-policy evaluation: mean episode record over ``eval_episodes``."""
    sim = sim or cfg.sim
    refs = refs if refs is not None else load_or_calibrate(cfg, out)
    env = RanEnv(sim, refs)
    if method in LEARNED:
        agent = load_agent(method, Paths(out).checkpoint(method, seed, tag), cfg)
        if agent.obs_norm is not None:
            env.load_normalizer(agent.obs_norm, freeze=True)
        ctl = _Frozen(agent)
    else:
        ctl = make_controller(method, env, cfg, seed)
    recs = [run_episode(env, ctl, episode_seed(EVAL_SEED_BASE + seed, e)) for e in range(cfg.eval_episodes)]
    keys = ("reward", *KPI_NAMES, "pingpong_rate", "hof_rate", "action_delta", "utilization")
    return {k: float(np.mean([r[k] for r in recs])) for k in keys}


# ---------------------------------------------------------------- sweeps and ablations

def sweep(cfg: ExperimentConfig, axis, methods, out, values=None, tag=""):
    if axis not in cfg.sweeps and values is None:
        raise ConfigError(f"no grid configured for sweep axis {axis!r}")
    values = list(cfg.sweeps[axis] if values is None else values)
    refs = load_or_calibrate(cfg, out)
    rows = []
    for method in methods:
        for v in values:
            sim = with_axis(cfg.sim, axis, v)
            for seed in cfg.seeds:
                rec = evaluate(cfg, method, seed, out, sim, refs, tag)
                rows.append({"method": method, "axis": axis, "value": v, "seed": seed, **rec})
    write_sweep(cfg, axis, rows, out, tag)
    return rows


def write_sweep(cfg, axis, rows, out, tag=""):
    root = Path(out) / "sweeps"
    write_csv(root / f"{axis}{tag}.csv", rows, EVAL_COLUMNS, cfg.config_hash())
    metrics = ("reward", *KPI_NAMES, "action_delta")
    agg = aggregate(rows, ("method", "axis", "value"), metrics)
    cols = ("method", "axis", "value", "n", *[c for m in metrics for c in (m, f"{m}_ci")])
    write_csv(root / f"{axis}{tag}_agg.csv", agg, cols, cfg.config_hash())


def robustness_points(levels=((1.0, 0.0, 0.0), (3.0, 0.2, 0.05), (5.0, 0.5, 0.10))):
    """Joint perturbation path (sigma_rsrp dB, lag s, p_miss) from clean to harsh."""
    return [tuple(p) for p in levels]


def robustness(cfg: ExperimentConfig, methods, out, points=None, tag=""):
    points = robustness_points() if points is None else points
    refs = load_or_calibrate(cfg, out)
    rows = []
    for method in methods:
        for i, (s_rsrp, lag, pm) in enumerate(points):
            sim = with_axis(with_axis(with_axis(cfg.sim, "sigma_rsrp", s_rsrp), "lag", lag), "p_miss", pm)
            for seed in cfg.seeds:
                rec = evaluate(cfg, method, seed, out, sim, refs, tag)
                rows.append({"method": method, "axis": "robustness", "value": i, "seed": seed, **rec})
    write_sweep(cfg, "robustness", rows, out, tag)
    return rows


ABLATION_BASE = "base"


def ablation_variants(cfg: ExperimentConfig, perturbations=True):
    """Named reward variants. Weights are re-normalized to sum to one."""
    w = cfg.sim.reward
    v = {
        ABLATION_BASE: w,
        "uniform": w.renormalized(**{k: 1.0 / 6 for k in KPI_NAMES}),
        "no_fairness": w.renormalized(fair=0.0),
        "ho_2x": w.renormalized(ho=2 * w.ho),
        "no_smoothness": dataclasses.replace(w, lambda_s=0.0),
    }
    if perturbations:
        for k in KPI_NAMES:
            for sign, f in (("plus50", 1.5), ("minus50", 0.5)):
                v[f"{k}_{sign}"] = w.renormalized(**{k: f * getattr(w, k)})
    return v


def ablate(cfg: ExperimentConfig, out, variants=None, perturbations=True):
    """Train PPO under each reward variant and evaluate the frozen policies.

    KPI profiles are min-max normalized across variants per KPI (1 = best)
    so the six-KPI shapes are comparable.
    """
    all_v = ablation_variants(cfg, perturbations)
    names = list(all_v) if variants is None else list(variants)
    unknown = [n for n in names if n not in all_v]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s): {unknown}; known: {sorted(all_v)}")
    refs = load_or_calibrate(cfg, out)
    rows = []
    for name in names:
        vcfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, reward=all_v[name]))
        tag = "" if name == ABLATION_BASE else f"_{name}"
        for seed in cfg.seeds:
            if not Paths(out).checkpoint("ppo", seed, tag).exists():
                train_method(vcfg, "ppo", seed, out, refs, tag)
            rec = evaluate(vcfg, "ppo", seed, out, None, refs, tag)
            rows.append({"method": "ppo", "axis": "ablation", "value": name, "seed": seed, **rec})
    root = Path(out) / "ablation"
    write_csv(root / "ablation.csv", rows, EVAL_COLUMNS, cfg.config_hash())
    metrics = ("reward", *KPI_NAMES, "action_delta")
    agg = aggregate(rows, ("method", "axis", "value"), metrics)
    cols = ("method", "axis", "value", "n", *[c for m in metrics for c in (m, f"{m}_ci")])
    write_csv(root / "ablation_agg.csv", agg, cols, cfg.config_hash())
    write_csv(root / "profile.csv", kpi_profile(agg), ("variant", *KPI_NAMES), cfg.config_hash())
    return rows


def kpi_profile(agg_rows):
    from .config import HIGHER_IS_BETTER

    out = [{"variant": r["value"]} for r in agg_rows]
    for k in KPI_NAMES:
        vals = np.array([r[k] for r in agg_rows], dtype=float)
        lo, hi = vals.min(), vals.max()
        span = hi - lo
        for o, v in zip(out, vals):
            score = 0.5 if span == 0 else (v - lo) / span
            o[k] = score if HIGHER_IS_BETTER[k] else 1.0 - score
    return out


# ---------------------------------------------------------------- report

def bucket_means(rows, metric, buckets, halfwidth):
    """Mean of ``metric`` over episodes within +-halfwidth of each 1-based bucket."""
    by_ep = {int(r["episode"]) + 1: r[metric] for r in rows}
    out = []
    for b in buckets:
        vals = [v for e, v in by_ep.items() if abs(e - b) <= halfwidth]
        out.append(float(np.mean(vals)) if vals else math.nan)
    return out


def report(out, cfg: ExperimentConfig | None = None):
    """Training-bucket tables, density tables and figure data under ``out/report``.

    Returns the list of written files (empty with a warning when there is
    nothing to report).
    """
    root = Path(out)
    buckets = cfg.buckets if cfg else (1, 20, 50, 100, 250, 500)
    hw = cfg.bucket_halfwidth if cfg else 5
    rep = root / "report"
    written = []
    train_files = sorted((root / "train").glob("*.csv")) if (root / "train").exists() else []
    train_files = [p for p in train_files if p.stem.rsplit("_seed", 1)[0] in METHODS]
    if train_files:
        h, _ = merge_csvs(train_files)
        per = {}
        for p in train_files:
            method, seed = p.stem.rsplit("_seed", 1)
            per.setdefault(method, {})[int(seed)] = read_csv(p)[1]
        for metric in ("reward", *KPI_NAMES):
            rows = []
            for method in sorted(per):
                seeds = per[method]
                cols = np.array([bucket_means(r, metric, buckets, hw) for r in seeds.values()])
                row = {"method": method}
                for b, c in zip(buckets, cols.T):
                    row[str(b)] = float(np.nanmean(c)) if np.isfinite(c).any() else math.nan
                rows.append(row)
            path = rep / f"table_training_{metric}.csv"
            write_csv(path, rows, ("method", *map(str, buckets)), h)
            written.append(path)
            # per-episode curve (mean over seeds) for external plotting
            curve = []
            n_ep = max(len(r) for s in per.values() for r in s.values())
            for e in range(n_ep):
                row = {"episode": e + 1}
                for method, seeds in sorted(per.items()):
                    vals = [r[e][metric] for r in seeds.values() if e < len(r)]
                    row[method] = float(np.mean(vals)) if vals else math.nan
                curve.append(row)
            path = rep / f"fig_training_{metric}.csv"
            write_csv(path, curve, ("episode", *sorted(per)), h)
            written.append(path)
    for agg_path in sorted((root / "sweeps").glob("*_agg.csv")) if (root / "sweeps").exists() else []:
        h, agg = read_csv(agg_path)
        axis = agg_path.stem[: -len("_agg")]
        values = sorted({r["value"] for r in agg})
        for metric in ("reward", *KPI_NAMES):
            rows = []
            for method in sorted({r["method"] for r in agg}):
                row = {"method": method}
                for r in agg:
                    if r["method"] == method:
                        row[str(r["value"])] = r[metric]
                rows.append(row)
            path = rep / f"table_{axis}_{metric}.csv"
            write_csv(path, rows, ("method", *map(str, values)), h)
            written.append(path)
    if not written:
        log.warning("no results found under %s; report is empty", root)
    return written


def load_results_config(out):
    """Config snapshot stored next to results by the CLI (``config.json``)."""
    p = Path(out) / "config.json"
    return json.loads(p.read_text()) if p.exists() else None


def save_results_config(cfg: ExperimentConfig, out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    (p / "config.json").write_text(json.dumps({"config_hash": cfg.config_hash(), "config": to_dict(cfg)},
                                              indent=1, sort_keys=True, default=str))


# ---------------------------------------------------------------- pipeline

def _train_job(job):
    cfg, out, method, seed = job
    p = Paths(out)
    if p.train_log(method, seed).exists() and (method not in LEARNED or p.checkpoint(method, seed).exists()):
        return method, seed, 0.0
    t = time.time()
    train_method(cfg, method, seed, out)
    return method, seed, time.time() - t


def run_pipeline(cfg: ExperimentConfig, out, jobs=1):
    """Calibrate, train every method on every seed, sweep UE count, robustness
    grid, smoothness ablation, report.

    Finished training runs in ``out`` are reused, so an interrupted pipeline
    resumes where it stopped; a directory holding another config is refused.
    """
    out = Path(out)
    prev = load_results_config(out)
    if prev is not None and prev["config_hash"] != cfg.config_hash():
        raise ResultsError(f"{out} holds results for config {prev['config_hash']}; choose another directory")
    save_results_config(cfg, out)
    t0 = time.time()
    load_or_calibrate(cfg, out)
    log.info("anchors ready (%.0fs)", time.time() - t0)
    todo = [(cfg, str(out), m, s) for m in METHODS for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_train_job, todo))
    else:
        done = map(_train_job, todo)
    for method, seed, dt in done:
        log.info("trained %s seed %d (%.0fs)", method, seed, dt)
    if "ue_count" in cfg.sweeps:
        sweep(cfg, "ue_count", METHODS, out)
        log.info("ue_count sweep done (%.0fs)", time.time() - t0)
    robustness(cfg, ["ppo"], out)
    log.info("robustness done (%.0fs)", time.time() - t0)
    ablate(cfg, out, [ABLATION_BASE, "no_smoothness"], perturbations=False)
    log.info("ablation done (%.0fs)", time.time() - t0)
    files = report(out, cfg)
    log.info("finished in %.0fs", time.time() - t0)
    return files
