"""End-to-end build of every trained artifact, cached on disk.

Stages: procedural datasets -> proposal model -> offline filters ->
online filters. Each stage writes a stamp holding a hash of its
effective configuration plus its upstream stamps, so a rerun loads
whatever is current and rebuilds exactly what a config change touches.

Run directly to build everything:  python -m viaplan.pipeline [--root DIR]
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import world as W
from .diffusion import (Denoiser, NoiseSchedule, dataset_stats, load_denoiser,
                        save_denoiser, train_step)
from .harness import coerce_config, config_hash
from .nn import Adam, Ema
from .planner import TaskEnv
from .procgen import (collect_dataset, load_dataset, record_columns,
                      save_dataset)
from .scenarios import training_scenario_fn
from .viability import (OnlineConfig, ViabilityFilter, load_filter,
                        save_filter, train_offline, train_online)

DESK = {
    "seed": 7,
    "platform_records": 50_000,
    "hurdle_records": 30_000,
    "diff_steps": 25_000,
    "diff_batch": 256,
    "diff_lr": 1e-4,
    "diff_ema": 0.999,
    "diff_hidden": (256, 256, 256),
    "time_dim": 32,
    "vf_hidden": (256, 256),
    "probe_frac": 0.20,
    "off_steps": 12_000,
    "off_batch": 512,
    "off_lr": 1e-4,
    "off_input_noise": 0.1,
    "onl_episodes": 5_000,
    "onl_candidates": 200,
    "onl_stored": 64,
    "onl_eps": 0.1,
    "onl_tau": 0.01,
    "onl_lr": 1e-4,
    "onl_batch": 256,
    "onl_input_noise": 0.1,
    "log_every": 0,
}

# fixed per-stage entropy offsets so stage seeds never collide
_STAGE_SEED = {
    "data_platform": 11, "data_hurdle": 12,
    "denoiser": 21,
    "off_platform": 31, "off_hurdle": 32,
    "onl_platform": 41, "onl_hurdle": 42, "onl_obstacle": 43,
}

ONLINE_TASKS = ("platform", "hurdle", "obstacle")
OFFLINE_TASKS = ("platform", "hurdle")


def _rng(cfg, stage: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(cfg["seed"]), _STAGE_SEED[stage]]))


def _stamp_path(root: Path, stage: str) -> Path:
    return root / f"{stage}.stamp.json"


def _stamp_current(root: Path, stage: str, h: str) -> bool:
    p = _stamp_path(root, stage)
    if not p.exists():
        return False
    try:
        return json.loads(p.read_text()).get("hash") == h
    except (json.JSONDecodeError, OSError):
        return False


def _write_stamp(root: Path, stage: str, h: str, extra: dict | None = None):
    payload = {"hash": h, "stage": stage, "written": time.strftime("%F %T")}
    payload.update(extra or {})
    _stamp_path(root, stage).write_text(json.dumps(payload, indent=1))


def _stage_hash(cfg: dict, keys, upstream="") -> str:
    sub = {k: str(cfg[k]) for k in keys}
    sub["_upstream"] = upstream
    return config_hash(sub)


def ensure_dataset(root: Path, task: str, cfg: dict, log=print):
    stage = f"data_{task}"
    h = _stage_hash(cfg, ["seed", f"{task}_records", "probe_frac"])
    path = root / f"{task}.vpds"
    if path.exists() and _stamp_current(root, stage, h):
        return path, h
    log(f"[pipeline] collecting {task} dataset "
        f"({cfg[f'{task}_records']} records)")
    t0 = time.perf_counter()
    recs = collect_dataset(task, int(cfg[f"{task}_records"]), _rng(cfg, stage),
                           probe_frac=float(cfg.get("probe_frac", 0.20)))
    save_dataset(path, recs, task)
    _write_stamp(root, stage, h, {"records": int(recs.shape[0]),
                                  "seconds": round(time.perf_counter() - t0, 1)})
    log(f"[pipeline] {task} dataset done in "
        f"{time.perf_counter() - t0:.0f} s ({recs.shape[0]} records)")
    return path, h


def train_denoiser_on(plans, conds, cfg: dict, rng: np.random.Generator,
                      log=print):
    model = Denoiser(W.PLAN_DIM, NoiseSchedule(),
                     hidden=tuple(cfg["diff_hidden"]),
                     time_dim=int(cfg["time_dim"]),
                     cond_dim=conds.shape[1], rng=rng)
    pm, ps = dataset_stats(plans)
    model.set_plan_stats(pm, ps, low=-W.PLAN_COORD_BOUND, high=W.PLAN_COORD_BOUND)
    cm, cs = dataset_stats(conds)
    model.set_cond_stats(cm, cs)
    plans_n = model.normalize_plan(plans)
    conds_n = model.normalize_cond(conds)
    lr = float(cfg["diff_lr"])
    opt = Adam(model.net, lr=lr)
    copt = Adam(model.cond_net, lr=lr)
    steps, batch = int(cfg["diff_steps"]), int(cfg["diff_batch"])
    log_every = int(cfg.get("log_every", 0))
    decay = float(cfg.get("diff_ema", 0.999))
    ema, cema = Ema(model.net, decay), Ema(model.cond_net, decay)
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(plans_n), size=batch)
        loss = train_step(model, opt, plans_n[idx], rng, conds_n[idx], copt)
        ema.update(model.net)
        cema.update(model.cond_net)
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            log(f"  denoiser step {step + 1}/{steps}: "
                f"loss {np.mean(losses[-log_every:]):.4f}")
    ema.write_to(model.net)
    cema.write_to(model.cond_net)
    return model, losses


def ensure_denoiser(root: Path, cfg: dict, log=print):
    data_path, data_h = ensure_dataset(root, "platform", cfg, log)
    stage = "denoiser"
    h = _stage_hash(cfg, ["seed", "diff_steps", "diff_batch", "diff_lr",
                          "diff_ema", "diff_hidden", "time_dim"],
                    upstream=data_h)
    base = root / "denoiser"
    if _stamp_current(root, stage, h):
        return load_denoiser(str(base)), h
    recs, schema = load_dataset(data_path)
    cols = record_columns(schema)
    # returns are stored for the filters; the proposal imitates only
    # real windows whose execution survived end to end, never probes
    keep = ((recs[:, cols["success"]] > 0.5)
            & (recs[:, cols["probe"]] < 0.5))
    plans = recs[keep][:, cols["plan"]].astype(np.float64)
    conds = recs[keep][:, cols["cond"]].astype(np.float64)
    log(f"[pipeline] training proposal model on {keep.sum()} successful "
        f"windows of {len(recs)} ({cfg['diff_steps']} steps)")
    t0 = time.perf_counter()
    model, losses = train_denoiser_on(plans, conds, cfg,
                                      _rng(cfg, stage), log)
    save_denoiser(str(base), model)
    _write_stamp(root, stage, h, {
        "final_loss": round(float(np.mean(losses[-200:])), 4),
        "seconds": round(time.perf_counter() - t0, 1)})
    log(f"[pipeline] proposal model done in {time.perf_counter() - t0:.0f} s "
        f"(final loss {np.mean(losses[-200:]):.4f})")
    return model, h


def fit_offline_vf(recs, schema: str, cfg: dict, rng: np.random.Generator,
                   log=print):
    cols = record_columns(schema)
    states = recs[:, cols["state"]].astype(np.float64)
    plans = recs[:, cols["plan"]].astype(np.float64)
    rets = recs[:, cols["ret"]].astype(np.float64)
    vf = ViabilityFilter(W.STATE_DIMS[schema], W.PLAN_DIM, schema,
                         hidden=tuple(cfg["vf_hidden"]), rng=rng)
    losses = train_offline(vf, states, plans, rets, int(cfg["off_steps"]),
                           rng, batch=int(cfg["off_batch"]),
                           lr=float(cfg["off_lr"]),
                           input_noise=float(cfg.get("off_input_noise", 0.0)),
                           log_every=int(cfg.get("log_every", 0)))
    return vf, losses


def ensure_offline_vf(root: Path, task: str, cfg: dict, log=print):
    data_path, data_h = ensure_dataset(root, task, cfg, log)
    stage = f"off_{task}"
    h = _stage_hash(cfg, ["seed", "off_steps", "off_batch", "off_lr",
                          "off_input_noise", "vf_hidden"], upstream=data_h)
    base = root / f"vf_offline_{task}"
    if _stamp_current(root, stage, h):
        return load_filter(str(base), expect_task=task), h
    recs, schema = load_dataset(data_path)
    log(f"[pipeline] offline filter for {task} ({cfg['off_steps']} steps)")
    t0 = time.perf_counter()
    vf, losses = fit_offline_vf(recs, schema, cfg, _rng(cfg, stage), log)
    save_filter(str(base), vf)
    _write_stamp(root, stage, h, {
        "final_loss": round(float(np.mean(losses[-200:])), 5),
        "seconds": round(time.perf_counter() - t0, 1)})
    log(f"[pipeline] offline {task} filter done in "
        f"{time.perf_counter() - t0:.0f} s")
    return vf, h


def calibrate_vf_stats(env, vf: ViabilityFilter, rng: np.random.Generator,
                       episodes: int = 40, floor: float = 1e-3) -> None:
    """Set input normalization from short randomly-acted episodes."""
    xs = []
    for _ in range(episodes):
        env.reset(rng)
        while env.running():
            s = env.state()
            cands = env.propose(16, rng)
            pick = int(rng.integers(0, len(cands)))
            for j in range(0, len(cands), 4):
                xs.append(np.concatenate([s, cands[j]]))
            _, failed = env.step(cands[pick], rng)
            if failed:
                break
    x = np.asarray(xs, dtype=np.float64)
    vf.set_input_stats(x.mean(axis=0), np.maximum(x.std(axis=0), floor))


def fit_online_vf(model, task: str, cfg: dict, rng: np.random.Generator,
                  init_vf: ViabilityFilter | None = None, log=print):
    if init_vf is not None:
        vf = init_vf.copy()
    else:
        vf = ViabilityFilter(W.STATE_DIMS[task], W.PLAN_DIM, task,
                             hidden=tuple(cfg["vf_hidden"]), rng=rng)
    env = TaskEnv(model, task, training_scenario_fn(task))
    if init_vf is None:
        calibrate_vf_stats(env, vf, rng)
    ocfg = OnlineConfig(
        episodes=int(cfg["onl_episodes"]),
        n_candidates=int(cfg["onl_candidates"]),
        n_stored=int(cfg["onl_stored"]),
        eps=float(cfg["onl_eps"]),
        tau=float(cfg["onl_tau"]),
        lr=float(cfg["onl_lr"]),
        batch=int(cfg["onl_batch"]),
        input_noise=float(cfg.get("onl_input_noise", 0.0)),
        log_every=int(cfg.get("log_every", 0)),
    )
    stats = train_online(env, vf, ocfg, rng)
    return vf, stats


def ensure_online_vf(root: Path, task: str, cfg: dict, log=print):
    model, model_h = ensure_denoiser(root, cfg, log)
    init_vf, init_h = (None, "scratch")
    # only the platform filter warm starts from the offline regression;
    # hurdle and obstacle online filters learn from scratch
    if task == "platform":
        init_vf, init_h = ensure_offline_vf(root, task, cfg, log)
    stage = f"onl_{task}"
    h = _stage_hash(cfg, ["seed", "onl_episodes", "onl_candidates",
                          "onl_stored", "onl_eps", "onl_tau", "onl_lr",
                          "onl_batch", "onl_input_noise", "vf_hidden"],
                    upstream=f"{model_h}/{init_h}")
    base = root / f"vf_online_{task}"
    if _stamp_current(root, stage, h):
        return load_filter(str(base), expect_task=task), h
    log(f"[pipeline] online filter for {task} "
        f"({cfg['onl_episodes']} episodes)")
    t0 = time.perf_counter()
    vf, stats = fit_online_vf(model, task, cfg, _rng(cfg, stage),
                              init_vf=init_vf, log=log)
    save_filter(str(base), vf)
    tail = stats["episode_rewards"][-500:]
    _write_stamp(root, stage, h, {
        "mean_steps_tail": round(float(np.mean(tail)), 2),
        "n_success": stats["n_success"], "n_failure": stats["n_failure"],
        "seconds": round(time.perf_counter() - t0, 1)})
    log(f"[pipeline] online {task} filter done in "
        f"{time.perf_counter() - t0:.0f} s "
        f"(tail mean steps {np.mean(tail):.2f})")
    return vf, h


def build_all(root="runs", cfg: dict | None = None, log=print) -> dict:
    """Build or load every artifact; returns them keyed by role."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = coerce_config(DESK, cfg or {})
    model, _ = ensure_denoiser(root, cfg, log)
    out = {"model": model, "root": root, "cfg": cfg,
           "vf_offline": {}, "vf_online": {}}
    for task in OFFLINE_TASKS:
        out["vf_offline"][task], _ = ensure_offline_vf(root, task, cfg, log)
    for task in ONLINE_TASKS:
        out["vf_online"][task], _ = ensure_online_vf(root, task, cfg, log)
    return out


def main(argv=None):
    import argparse

    from .harness import load_config
    ap = argparse.ArgumentParser(
        description="Build all datasets, the proposal model, and filters.")
    ap.add_argument("--root", default="runs")
    ap.add_argument("--config", help="key=value overrides file")
    ap.add_argument("--set", action="append", default=[],
                    help="single key=value override (repeatable)")
    args = ap.parse_args(argv)
    overrides = load_config(args.config) if args.config else {}
    for item in args.set:
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    arts = build_all(args.root, overrides)
    print(f"artifacts ready under {arts['root']}")


if __name__ == "__main__":
    main()
