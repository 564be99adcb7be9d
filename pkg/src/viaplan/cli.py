"""Command-line interface.

Subcommands: procgen, train-diffusion, train-vf-offline, train-vf-online,
eval, sweep, bench, toy, compose-eval. Every subcommand accepts --config
FILE with key=value lines; explicit flags override file values. Metrics
go to CSV on stdout, or to --out when given.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .diffusion import load_denoiser, save_denoiser
from .harness import (benchmark_inference, benchmark_rows, coerce_config,
                      config_hash, load_config, rows_to_csv_text, run_eval,
                      run_mixed_eval, sample_sweep, summarize_success,
                      write_rows)
from .pipeline import fit_offline_vf, fit_online_vf, train_denoiser_on
from .procgen import collect_dataset, load_dataset, record_columns, save_dataset
from .scenarios import EVAL_SETTINGS, HARDEST
from .toy import toy_experiment
from .viability import load_filter, save_filter


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        sys.exit(f"error: missing {what}: {path}")
    return path


def _require_net(base: str, what: str) -> str:
    _require(base + ".vpnn", what)
    _require(base + ".json", what + " sidecar")
    return base


def _emit(rows, out: str | None, summary=None) -> None:
    if out:
        write_rows(out, rows)
        print(f"wrote {len(rows)} rows to {out}")
        if summary:
            print(rows_to_csv_text(summary), end="")
    else:
        print(rows_to_csv_text(rows), end="")


def _floats(text: str):
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str):
    return [int(t) for t in text.replace(",", " ").split()]


def _cfg(defaults: dict, args) -> dict:
    """defaults < config file < explicit flags, with type coercion."""
    file_cfg = load_config(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in defaults
             if getattr(args, k, None) is not None}
    return coerce_config(defaults, {**file_cfg, **flags})


def _add_cfg_flags(p: argparse.ArgumentParser, defaults: dict) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    for k in defaults:
        p.add_argument(f"--{k.replace('_', '-')}", dest=k, default=None)


PROCGEN_DEFAULTS = {"count": 50_000, "probe_frac": 0.20, "seed": 0}


def cmd_procgen(args) -> None:
    cfg = _cfg(PROCGEN_DEFAULTS, args)
    rng = np.random.default_rng(cfg["seed"])
    recs = collect_dataset(args.task, cfg["count"], rng,
                           probe_frac=cfg["probe_frac"])
    save_dataset(args.out, recs, args.task)
    print(f"wrote {recs.shape[0]} records ({recs.shape[1]} floats each) "
          f"to {args.out}")


TRAIN_DIFF_DEFAULTS = {
    "diff_steps": 25_000, "diff_batch": 256, "diff_lr": 1e-4,
    "diff_ema": 0.999, "diff_hidden": (256, 256, 256), "time_dim": 32,
    "seed": 0, "log_every": 1000,
}


def cmd_train_diffusion(args) -> None:
    cfg = _cfg(TRAIN_DIFF_DEFAULTS, args)
    recs, schema = load_dataset(_require(args.data, "dataset"))
    cols = record_columns(schema)
    # imitate surviving real windows only, never corrupted probes
    keep = ((recs[:, cols["success"]] > 0.5)
            & (recs[:, cols["probe"]] < 0.5))
    plans = recs[keep][:, cols["plan"]].astype(np.float64)
    conds = recs[keep][:, cols["cond"]].astype(np.float64)
    model, losses = train_denoiser_on(
        plans, conds, cfg, np.random.default_rng(cfg["seed"]))
    save_denoiser(args.out, model)
    print(f"saved proposal model to {args.out}.vpnn "
          f"(final loss {np.mean(losses[-200:]):.4f})")


TRAIN_OFF_DEFAULTS = {
    "off_steps": 12_000, "off_batch": 512, "off_lr": 1e-4,
    "off_input_noise": 0.1, "vf_hidden": (256, 256), "seed": 0,
    "log_every": 1000,
}


def cmd_train_vf_offline(args) -> None:
    cfg = _cfg(TRAIN_OFF_DEFAULTS, args)
    recs, schema = load_dataset(_require(args.data, "dataset"))
    vf, losses = fit_offline_vf(recs, schema, cfg,
                                np.random.default_rng(cfg["seed"]))
    save_filter(args.out, vf)
    print(f"saved {schema} filter to {args.out}.vpnn "
          f"(final loss {np.mean(losses[-200:]):.5f})")


TRAIN_ONL_DEFAULTS = {
    "onl_episodes": 5_000, "onl_candidates": 200, "onl_stored": 64,
    "onl_eps": 0.1, "onl_tau": 0.01, "onl_lr": 1e-4, "onl_batch": 256,
    "onl_input_noise": 0.1, "vf_hidden": (256, 256), "seed": 0,
    "log_every": 200,
}


def cmd_train_vf_online(args) -> None:
    cfg = _cfg(TRAIN_ONL_DEFAULTS, args)
    model = load_denoiser(_require_net(args.model, "proposal model"))
    init_vf = None
    if args.init:
        init_vf = load_filter(_require_net(args.init, "initial filter"),
                              expect_task=args.task)
    vf, stats = fit_online_vf(model, args.task, cfg,
                              np.random.default_rng(cfg["seed"]),
                              init_vf=init_vf)
    save_filter(args.out, vf)
    tail = stats["episode_rewards"][-500:]
    print(f"saved {args.task} filter to {args.out}.vpnn "
          f"(tail mean steps {np.mean(tail):.2f}, "
          f"D_s {stats['n_success']}, D_f {stats['n_failure']})")


EVAL_DEFAULTS = {"episodes": 20, "trials": 5, "samples": 200, "seed": 0}


def cmd_eval(args) -> None:
    cfg = _cfg(EVAL_DEFAULTS, args)
    model = load_denoiser(_require_net(args.model, "proposal model"))
    vf_off = vf_on = None
    if args.vf_offline:
        vf_off = load_filter(_require_net(args.vf_offline, "offline filter"),
                             expect_task=args.task)
    if args.vf_online:
        vf_on = load_filter(_require_net(args.vf_online, "online filter"),
                            expect_task=args.task)
    arms = args.arms.split(",") if args.arms else (
        ["procedural", "diffusion"]
        + (["vf-offline"] if vf_off else [])
        + (["vf-online"] if vf_on else []))
    diffs = _floats(args.difficulties) if args.difficulties \
        else EVAL_SETTINGS[args.task]
    h = config_hash({**cfg, "task": args.task, "arms": ",".join(arms),
                     "difficulties": diffs})
    rows = run_eval(model, args.task, diffs, arms, cfg["episodes"],
                    cfg["trials"], cfg["seed"], vf_offline=vf_off,
                    vf_online=vf_on, n_samples=cfg["samples"], cfg_hash=h)
    _emit(rows, args.out, summarize_success(rows))


SWEEP_DEFAULTS = {"episodes": 20, "trials": 5, "seed": 0}


def cmd_sweep(args) -> None:
    cfg = _cfg(SWEEP_DEFAULTS, args)
    model = load_denoiser(_require_net(args.model, "proposal model"))
    vf = load_filter(_require_net(args.vf, "filter"), expect_task=args.task)
    counts = _ints(args.counts) if args.counts else [1, 5, 10, 25, 50, 100, 200]
    diff = float(args.difficulty) if args.difficulty is not None \
        else HARDEST[args.task]
    h = config_hash({**cfg, "task": args.task, "difficulty": diff,
                     "counts": counts})
    rows = sample_sweep(model, vf, args.task, diff, counts, cfg["episodes"],
                        cfg["trials"], cfg["seed"], cfg_hash=h)
    _emit(rows, args.out,
          summarize_success(rows, key_fields=("task", "n_samples")))


BENCH_DEFAULTS = {"iters": 20, "seed": 0}


def cmd_bench(args) -> None:
    cfg = _cfg(BENCH_DEFAULTS, args)
    model = load_denoiser(_require_net(args.model, "proposal model"))
    vf = load_filter(_require_net(args.vf, "filter"))
    counts = _ints(args.counts) if args.counts else [100, 200, 400]
    timings = benchmark_inference(model, vf, counts, iters=cfg["iters"],
                                  seed=cfg["seed"])
    h = config_hash({**cfg, "counts": counts})
    _emit(benchmark_rows(timings, cfg["seed"], h), args.out)


TOY_DEFAULTS = {"seed": 0, "train_steps": 3000, "samples": 4000}


def cmd_toy(args) -> None:
    cfg = _cfg(TOY_DEFAULTS, args)
    sigmas = _floats(args.sigmas) if args.sigmas else [0.0, 0.5]
    rows = []
    for sig in sigmas:
        res = toy_experiment(sig, cfg["seed"], train_steps=cfg["train_steps"],
                             n_samples=cfg["samples"])
        rows.append({"sigma": sig, "leakage": round(res.leakage, 4),
                     "accepted_out_frac": round(res.accepted_out_frac, 4),
                     "samples": cfg["samples"], "seed": cfg["seed"]})
    _emit(rows, args.out)


COMPOSE_DEFAULTS = {
    "episodes": 20, "trials": 5, "samples": 200, "seed": 0,
    "platform_h": 0.50, "hurdle_h": 0.30, "obstacle_r": 1.00,
}


def cmd_compose_eval(args) -> None:
    cfg = _cfg(COMPOSE_DEFAULTS, args)
    model = load_denoiser(_require_net(args.model, "proposal model"))
    vfs = {
        "platform": load_filter(_require_net(args.vf_platform,
                                             "platform filter"), "platform"),
        "hurdle": load_filter(_require_net(args.vf_hurdle, "hurdle filter"),
                              "hurdle"),
        "obstacle": load_filter(_require_net(args.vf_obstacle,
                                             "obstacle filter"), "obstacle"),
    }
    order = ("platform", "hurdle", "obstacle")
    scorer_sets = {"all": [vfs[t] for t in order], "unfiltered": []}
    for drop in order:
        scorer_sets[f"no-{drop}"] = [vfs[t] for t in order if t != drop]
    h = config_hash(cfg)
    rows = run_mixed_eval(model, scorer_sets, cfg["episodes"], cfg["trials"],
                          cfg["seed"], n_samples=cfg["samples"], cfg_hash=h,
                          difficulties=(cfg["platform_h"], cfg["hurdle_h"],
                                        cfg["obstacle_r"]))
    _emit(rows, args.out, summarize_success(rows, key_fields=("task", "arm")))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="viaplan",
        description="Footstep-plan generation with learned viability "
                    "filtering.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("procgen", help="collect a procedural dataset")
    p.add_argument("--task", required=True, choices=["platform", "hurdle"])
    p.add_argument("--out", required=True)
    _add_cfg_flags(p, PROCGEN_DEFAULTS)
    p.set_defaults(fn=cmd_procgen)

    p = sub.add_parser("train-diffusion", help="train the proposal model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint base path")
    _add_cfg_flags(p, TRAIN_DIFF_DEFAULTS)
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("train-vf-offline",
                       help="regress windowed returns from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_cfg_flags(p, TRAIN_OFF_DEFAULTS)
    p.set_defaults(fn=cmd_train_vf_offline)

    p = sub.add_parser("train-vf-online",
                       help="Bellman-train a filter against live episodes")
    p.add_argument("--task", required=True,
                   choices=["platform", "hurdle", "obstacle"])
    p.add_argument("--model", required=True, help="proposal checkpoint base")
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="offline filter base to start from")
    _add_cfg_flags(p, TRAIN_ONL_DEFAULTS)
    p.set_defaults(fn=cmd_train_vf_online)

    p = sub.add_parser("eval", help="success rates per setting per arm")
    p.add_argument("--task", required=True,
                   choices=["platform", "hurdle", "obstacle"])
    p.add_argument("--model", required=True)
    p.add_argument("--vf-offline")
    p.add_argument("--vf-online")
    p.add_argument("--arms", help="comma list: procedural,diffusion,"
                                  "vf-offline,vf-online,guided")
    p.add_argument("--difficulties", help="comma list of setting values")
    p.add_argument("--out")
    _add_cfg_flags(p, EVAL_DEFAULTS)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="success vs candidate count")
    p.add_argument("--task", required=True,
                   choices=["platform", "hurdle", "obstacle"])
    p.add_argument("--model", required=True)
    p.add_argument("--vf", required=True)
    p.add_argument("--difficulty")
    p.add_argument("--counts", help="comma list of candidate counts")
    p.add_argument("--out")
    _add_cfg_flags(p, SWEEP_DEFAULTS)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="per-decision inference timings")
    p.add_argument("--model", required=True)
    p.add_argument("--vf", required=True)
    p.add_argument("--counts", help="comma list of candidate counts")
    p.add_argument("--out")
    _add_cfg_flags(p, BENCH_DEFAULTS)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("toy", help="interval-constraint leakage study")
    p.add_argument("--sigmas", help="comma list of execution noise levels")
    p.add_argument("--out")
    _add_cfg_flags(p, TOY_DEFAULTS)
    p.set_defaults(fn=cmd_toy)

    p = sub.add_parser("compose-eval",
                       help="mixed scenario with composed filters")
    p.add_argument("--model", required=True)
    p.add_argument("--vf-platform", required=True)
    p.add_argument("--vf-hurdle", required=True)
    p.add_argument("--vf-obstacle", required=True)
    p.add_argument("--out")
    _add_cfg_flags(p, COMPOSE_DEFAULTS)
    p.set_defaults(fn=cmd_compose_eval)

    return ap


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
