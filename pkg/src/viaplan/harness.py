"""Evaluation harness: paired-seed episode batteries, sample-count
sweeps, inference timing, config files, and CSV output.

Every result row carries the master seed and a hash of the effective
configuration. Arms compared in one run share per-episode seed material,
so scenario layout and execution noise streams match across arms.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import time

import numpy as np

from . import world as W
from .planner import (CompositeScorer, PlannerConfig, VfScorer,
                      make_obstacle_guidance, plan_step, rollout_episode)
from .diffusion import sample_plans
from .scenarios import make_mixed_scenario, make_scenario

ARMS = ("procedural", "diffusion", "vf-offline", "vf-online", "guided")


def parse_config_text(text: str) -> dict:
    """key=value lines; blank lines and '#' comments ignored."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read())


def merge_config(defaults: dict, file_cfg: dict | None, overrides: dict | None) -> dict:
    """Later sources win: defaults < config file < explicit flags."""
    out = dict(defaults)
    for src in (file_cfg, overrides):
        if src:
            out.update({k: v for k, v in src.items() if v is not None})
    return out


def config_hash(cfg: dict) -> str:
    blob = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("VIAPLAN_THREADS", "1")))
    except ValueError:
        return 1


def coerce_config(defaults: dict, cfg: dict) -> dict:
    """Cast string config values to the type of each default."""
    out = dict(defaults)
    for k, v in cfg.items():
        if k not in defaults:
            raise ValueError(f"unknown config key {k!r}")
        d = defaults[k]
        if isinstance(v, str):
            if isinstance(d, bool):
                v = v.lower() in ("1", "true", "yes")
            elif isinstance(d, int):
                v = int(v)
            elif isinstance(d, float):
                v = float(v)
            elif isinstance(d, (tuple, list)):
                kind = type(d[0]) if len(d) else float
                v = type(d)(kind(t) for t in v.replace(",", " ").split())
        out[k] = v
    return out


def rows_to_csv_text(rows) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def write_rows(path, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(rows_to_csv_text(rows))


def read_rows(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _episode_seeds(master: int, setting_idx: int, trial: int, episode: int):
    ss = np.random.SeedSequence([master, setting_idx, trial, episode])
    scen, env, samp = ss.spawn(3)
    return scen, env, samp


def _arm_rollout(arm, model, scorers, task, difficulty, seeds, caps, n_samples):
    scen_ss, env_ss, samp_ss = seeds
    scenario = make_scenario(task, difficulty, np.random.default_rng(scen_ss))
    rng_env = np.random.default_rng(env_ss)
    rng_samp = np.random.default_rng(samp_ss)
    if arm == "procedural":
        return rollout_episode(model, scenario, PlannerConfig(), rng_env,
                               rng_samp, caps=caps, procedural=True)
    if arm == "diffusion":
        cfg = PlannerConfig(mode="first")
        return rollout_episode(model, scenario, cfg, rng_env, rng_samp, caps=caps)
    if arm == "guided":
        cfg = PlannerConfig(mode="guided")
        return rollout_episode(model, scenario, cfg, rng_env, rng_samp, caps=caps)
    if arm in ("vf-offline", "vf-online"):
        cfg = PlannerConfig(mode="argmax", n_samples=n_samples)
        return rollout_episode(model, scenario, cfg, rng_env, rng_samp,
                               scorer=scorers[arm], caps=caps)
    raise ValueError(f"unknown arm {arm!r}")


def _map_cells(fn, items):
    """Map over episode cells, forking workers when VIAPLAN_THREADS > 1.

    Results keep submission order, so output is identical to the serial
    path for any worker count.
    """
    workers = n_workers()
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers)))


class _EvalCell:
    """Picklable per-episode job for run_eval."""

    def __init__(self, model, scorers, task, caps, n_samples, seed, cfg_hash):
        self.model = model
        self.scorers = scorers
        self.task = task
        self.caps = caps
        self.n_samples = n_samples
        self.seed = seed
        self.cfg_hash = cfg_hash

    def __call__(self, cell):
        di, diff, trial, ep, arm = cell
        seeds = _episode_seeds(self.seed, di, trial, ep)
        res = _arm_rollout(arm, self.model, self.scorers, self.task, diff,
                           seeds, self.caps, self.n_samples)
        return {
            "task": self.task, "difficulty": diff, "arm": arm,
            "trial": trial, "episode": ep, "seed": self.seed,
            "config": self.cfg_hash,
            "success": int(res["status"] == "success"),
            "steps": res["steps"],
            "failure": res["failure"] or "",
        }


def run_eval(model, task: str, difficulties, arms, episodes: int, trials: int,
             seed: int, vf_offline=None, vf_online=None,
             caps: W.Capabilities | None = None, n_samples: int = 200,
             cfg_hash: str = "") -> list:
    """Success rows for every (difficulty, arm, trial, episode) cell.

    All arms of one (difficulty, trial, episode) cell share seed
    material: identical scenario draw and execution-noise stream.
    """
    caps = caps or W.Capabilities()
    scorers = {}
    if vf_offline is not None:
        scorers["vf-offline"] = VfScorer(vf_offline)
    if vf_online is not None:
        scorers["vf-online"] = VfScorer(vf_online)
    for arm in arms:
        if arm.startswith("vf-") and arm not in scorers:
            raise ValueError(f"arm {arm!r} requested but no filter was given")
    cells = [(di, diff, trial, ep, arm)
             for di, diff in enumerate(difficulties)
             for trial in range(trials)
             for ep in range(episodes)
             for arm in arms]
    job = _EvalCell(model, scorers, task, caps, n_samples, seed, cfg_hash)
    return _map_cells(job, cells)


def success_table(rows) -> dict:
    """(difficulty, arm) -> mean success over trials and episodes."""
    acc = {}
    for r in rows:
        key = (float(r["difficulty"]), r["arm"])
        acc.setdefault(key, []).append(int(r["success"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def summarize_success(rows, key_fields=("task", "difficulty", "arm")) -> list:
    """Per-setting mean and std of the per-trial success rates."""
    cells = {}
    for r in rows:
        key = tuple(r[k] for k in key_fields)
        cells.setdefault(key, {}).setdefault(int(r["trial"]), []).append(
            int(r["success"]))
    out = []
    for key in sorted(cells, key=str):
        trial_rates = [float(np.mean(v)) for _, v in sorted(cells[key].items())]
        row = dict(zip(key_fields, key))
        row["mean"] = round(float(np.mean(trial_rates)), 4)
        row["std"] = round(float(np.std(trial_rates)), 4)
        row["trials"] = len(trial_rates)
        out.append(row)
    return out


def sample_sweep(model, vf, task: str, difficulty: float, counts,
                 episodes: int, trials: int, seed: int,
                 caps: W.Capabilities | None = None, cfg_hash: str = "") -> list:
    """Success rows for the filtered planner at several candidate counts."""
    caps = caps or W.Capabilities()
    scorer = VfScorer(vf)
    rows = []
    for trial in range(trials):
        for ep in range(episodes):
            seeds = _episode_seeds(seed, 0, trial, ep)
            for n in counts:
                scen_ss, env_ss, samp_ss = seeds
                scenario = make_scenario(task, difficulty,
                                         np.random.default_rng(scen_ss))
                cfg = PlannerConfig(mode="argmax", n_samples=int(n))
                res = rollout_episode(model, scenario, cfg,
                                      np.random.default_rng(env_ss),
                                      np.random.default_rng(samp_ss),
                                      scorer=scorer, caps=caps)
                rows.append({
                    "task": task, "difficulty": difficulty, "arm": f"vf@{int(n)}",
                    "n_samples": int(n), "trial": trial, "episode": ep,
                    "seed": seed, "config": cfg_hash,
                    "success": int(res["status"] == "success"),
                    "steps": res["steps"], "failure": res["failure"] or "",
                })
    return rows


def sweep_table(rows) -> dict:
    acc = {}
    for r in rows:
        acc.setdefault(int(r["n_samples"]), []).append(int(r["success"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def benchmark_inference(model, vf, counts=(100, 200, 400), iters: int = 20,
                        seed: int = 0, caps: W.Capabilities | None = None,
                        guide_weight: float = 8.0) -> dict:
    """Wall-clock per planning decision: mean and std over ``iters``.

    "guided" draws one sample with gradient guidance active at every
    denoising step; "vf N" draws N candidates and scores them all with
    the filter. All timings share one fixed obstacle situation.
    """
    caps = caps or W.Capabilities()
    rng = np.random.default_rng(seed)
    terrain, state, _ = make_scenario("obstacle", 1.0, rng)
    state = W.advance_waypoints(state)
    cond = W.build_conditioning(state, terrain)
    guidance = make_obstacle_guidance(state, terrain)
    scorer = VfScorer(vf) if vf is not None else None

    def time_one(fn):
        fn(np.random.default_rng(seed))  # warm up
        ts = []
        for k in range(iters):
            r = np.random.default_rng(seed + 1 + k)
            t0 = time.perf_counter()
            fn(r)
            ts.append(time.perf_counter() - t0)
        return {"mean": float(np.mean(ts)), "std": float(np.std(ts))}

    timings = {"guided": time_one(
        lambda r: sample_plans(model, 1, r, cond=cond, guidance=guidance,
                               guide_weight=guide_weight))}

    def vf_decision(n):
        def fn(r):
            plans = sample_plans(model, n, r, cond=cond)
            if scorer is not None:
                int(np.argmax(scorer(state, terrain, plans)))
        return fn

    for n in counts:
        timings[f"vf {int(n)}"] = time_one(vf_decision(int(n)))
    return timings


def benchmark_rows(timings: dict, seed: int, cfg_hash: str = "") -> list:
    return [{"decision": name, "mean_s": round(t["mean"], 6),
             "std_s": round(t["std"], 6), "seed": seed, "config": cfg_hash}
            for name, t in timings.items()]


def run_mixed_eval(model, scorer_sets: dict, episodes: int, trials: int,
                   seed: int, caps: W.Capabilities | None = None,
                   n_samples: int = 200, cfg_hash: str = "",
                   difficulties=(0.50, 0.30, 1.00)) -> list:
    """Mixed-scenario rows for several composite scorers.

    ``scorer_sets`` maps an arm name to a list of filters (empty list =
    unfiltered proposal baseline). Scenario and noise seeds pair across
    arms as in run_eval.
    """
    caps = caps or W.Capabilities()
    ph, hh, orr = difficulties
    rows = []
    for trial in range(trials):
        for ep in range(episodes):
            scen_ss, env_ss, samp_ss = _episode_seeds(seed, 0, trial, ep)
            for arm, vfs in scorer_sets.items():
                scenario = make_mixed_scenario(np.random.default_rng(scen_ss),
                                               platform_h=ph, hurdle_h=hh,
                                               obstacle_r=orr)
                if vfs:
                    cfg = PlannerConfig(mode="argmax", n_samples=n_samples)
                    scorer = CompositeScorer(vfs)
                else:
                    cfg = PlannerConfig(mode="first")
                    scorer = None
                res = rollout_episode(model, scenario, cfg,
                                      np.random.default_rng(env_ss),
                                      np.random.default_rng(samp_ss),
                                      scorer=scorer, caps=caps)
                rows.append({
                    "task": "mixed", "difficulty": f"{ph}/{hh}/{orr}",
                    "arm": arm, "trial": trial, "episode": ep, "seed": seed,
                    "config": cfg_hash,
                    "success": int(res["status"] == "success"),
                    "steps": res["steps"], "failure": res["failure"] or "",
                })
    return rows
