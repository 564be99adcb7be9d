"""Viability filters: Q-networks scoring (situation, plan) pairs.

A filter predicts the discounted number of future surviving footsteps if
a plan is executed from a situation, clamped to [0, Q_MAX]. Offline
training regresses windowed returns from procedurally collected data;
online training runs the replay-buffer Bellman loop against a frozen
target copy. Several filters multiply into one composite score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, Mlp, load_mlp, load_sidecar, save_mlp, save_sidecar
from .world import GAMMA, Q_MAX


class ViabilityFilter:
    def __init__(self, state_dim: int, plan_dim: int, task: str,
                 hidden=(256, 256), rng: np.random.Generator | None = None,
                 net: Mlp | None = None, gamma: float = GAMMA):
        self.state_dim = state_dim
        self.plan_dim = plan_dim
        self.task = task
        self.gamma = gamma
        self.q_max = 1.0 / (1.0 - gamma)
        self.net = net if net is not None else Mlp(
            [state_dim + plan_dim, *hidden, 1], rng=rng)
        self.in_mean = np.zeros(state_dim + plan_dim)
        self.in_std = np.ones(state_dim + plan_dim)

    def set_input_stats(self, mean, std):
        self.in_mean = np.asarray(mean, dtype=np.float64)
        self.in_std = np.asarray(std, dtype=np.float64)

    def _inputs(self, states, plans):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        plans = np.atleast_2d(np.asarray(plans, dtype=np.float64))
        if states.shape[0] == 1 and plans.shape[0] > 1:
            states = np.broadcast_to(states, (plans.shape[0], states.shape[1]))
        x = np.concatenate([states, plans], axis=1)
        return (x - self.in_mean) / self.in_std

    def eval(self, states, plans) -> np.ndarray:
        """Clamped viability scores, one per plan row."""
        out = self.net.forward(self._inputs(states, plans))
        return np.clip(out[:, 0], 0.0, self.q_max)

    def copy(self) -> "ViabilityFilter":
        dup = ViabilityFilter(self.state_dim, self.plan_dim, self.task,
                              net=self.net.copy(), gamma=self.gamma)
        dup.set_input_stats(self.in_mean, self.in_std)
        return dup


def train_offline(vf: ViabilityFilter, states, plans, returns,
                  steps: int, rng: np.random.Generator,
                  batch: int = 512, lr: float = 1e-4,
                  stats_floor: float = 1e-3, input_noise: float = 0.0,
                  log_every: int = 0):
    """Regress windowed returns with half squared error. Returns losses.

    ``input_noise`` jitters the standardized inputs each step. The score
    is consumed through an argmax over sampled candidates, which hunts
    out sharp off-data peaks in the learned function; training under
    input noise flattens those peaks so the ranking stays calibrated a
    little outside the data.
    """
    states = np.asarray(states, dtype=np.float64)
    plans = np.asarray(plans, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    x_all = np.concatenate([states, plans], axis=1)
    vf.set_input_stats(x_all.mean(axis=0),
                       np.maximum(x_all.std(axis=0), stats_floor))
    x_all = (x_all - vf.in_mean) / vf.in_std
    opt = Adam(vf.net, lr=lr)
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(x_all), size=min(batch, len(x_all)))
        xb, yb = x_all[idx], returns[idx]
        if input_noise > 0.0:
            xb = xb + input_noise * rng.standard_normal(xb.shape)
        out, cache = vf.net.forward_full(xb)
        resid = out[:, 0] - yb
        loss = float(0.5 * np.mean(resid ** 2))
        losses.append(loss)
        grads, _ = vf.net.backward_from(cache, (resid / len(xb))[:, None])
        opt.step(vf.net, grads)
        if log_every and step % log_every == 0:
            print(f"  offline step {step}: loss {loss:.4f}")
    return losses


class Replay:
    """FIFO ring buffer of transitions with stored candidate sets."""

    def __init__(self, state_dim: int, plan_dim: int, n_cands: int,
                 cap: int = 100_000):
        self.cap = cap
        self.state_dim = state_dim
        self.plan_dim = plan_dim
        self.n_cands = n_cands
        self._n = 0
        self._next = 0
        self._alloc = 0
        self._arrays = None

    def _grow(self, need: int):
        new_alloc = max(4096, self._alloc)
        while new_alloc < need:
            new_alloc *= 2
        new_alloc = min(new_alloc, self.cap)
        fresh = {
            "state": np.zeros((new_alloc, self.state_dim), dtype=np.float32),
            "plan": np.zeros((new_alloc, self.plan_dim), dtype=np.float32),
            "reward": np.zeros(new_alloc, dtype=np.float32),
            "next_state": np.zeros((new_alloc, self.state_dim), dtype=np.float32),
            "next_cands": np.zeros((new_alloc, self.n_cands, self.plan_dim),
                                   dtype=np.float32),
            "terminal": np.zeros(new_alloc, dtype=bool),
        }
        if self._arrays is not None:
            for k, arr in self._arrays.items():
                fresh[k][:self._alloc] = arr
        self._arrays = fresh
        self._alloc = new_alloc

    def add(self, state, plan, reward, next_state=None, next_cands=None,
            terminal: bool = False):
        if self._alloc < self.cap and self._n + 1 > self._alloc:
            self._grow(self._n + 1)
        i = self._next
        a = self._arrays
        a["state"][i] = state
        a["plan"][i] = plan
        a["reward"][i] = reward
        a["next_state"][i] = 0.0 if next_state is None else next_state
        if next_cands is None:
            a["next_cands"][i] = 0.0
        else:
            a["next_cands"][i] = next_cands[:self.n_cands]
        a["terminal"][i] = terminal
        self._next = (i + 1) % self._alloc if self._alloc == self.cap else i + 1
        self._n = min(self._n + 1, self.cap)

    def __len__(self):
        return self._n

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        if self._n == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._n, size=n)
        return {k: arr[idx] for k, arr in self._arrays.items()}


def sample_balanced_batch(success_buf: Replay, failure_buf: Replay,
                          n: int, rng: np.random.Generator) -> dict:
    """Half successes, half failures, drawn with replacement."""
    half = n // 2
    a = success_buf.sample(half, rng)
    b = failure_buf.sample(n - half, rng)
    return {k: np.concatenate([a[k], b[k]], axis=0) for k in a}


def bellman_target(target_vf: ViabilityFilter, batch: dict,
                   gamma: float = GAMMA) -> np.ndarray:
    """r + gamma * max over stored candidates of the target filter's
    score at the next situation; terminal rows are just r."""
    r = batch["reward"].astype(np.float64)
    y = r.copy()
    live = ~batch["terminal"]
    if np.any(live):
        ns = batch["next_state"][live].astype(np.float64)
        nc = batch["next_cands"][live].astype(np.float64)
        b, k, p = nc.shape
        flat_states = np.repeat(ns, k, axis=0)
        scores = target_vf.eval(flat_states, nc.reshape(b * k, p)).reshape(b, k)
        y[live] = r[live] + gamma * scores.max(axis=1)
    return y


def soft_update(target_vf: ViabilityFilter, vf: ViabilityFilter,
                tau: float = 0.01) -> None:
    for pt, po in zip(target_vf.net.params(), vf.net.params()):
        pt *= 1.0 - tau
        pt += tau * po


@dataclass
class OnlineConfig:
    episodes: int = 5000
    n_candidates: int = 200
    # candidates kept per stored transition for the bootstrap max; sampled
    # plans are exchangeable, so keeping a prefix is an unbiased subset
    n_stored: int = 64
    eps: float = 0.1
    tau: float = 0.01
    lr: float = 1e-4
    batch: int = 256
    k_updates: int = 1
    buffer_cap: int = 100_000
    # noise on standardized regression inputs; smooths the fit so the
    # argmax over many candidates stops hunting sharp estimation errors
    input_noise: float = 0.0
    log_every: int = 0


def train_online(env, vf: ViabilityFilter, cfg: OnlineConfig,
                 rng: np.random.Generator):
    """Replay-buffer Bellman training against episodes from ``env``.

    ``env`` is duck-typed: reset(rng); state() -> vector; propose(n, rng)
    -> candidate plans; step(plan, rng) -> (reward, failed); running() ->
    bool. Every surviving step earns reward 1 and stores a non-terminal
    transition with the freshly proposed candidate set at the next
    situation; a failure stores a terminal transition and ends the
    episode. After each episode the filter takes ``k_updates`` gradient
    steps on balanced batches with targets from a soft-updated copy.
    """
    target = vf.copy()
    n_stored = min(cfg.n_stored, cfg.n_candidates)
    succ = Replay(vf.state_dim, vf.plan_dim, n_stored, cfg.buffer_cap)
    fail = Replay(vf.state_dim, vf.plan_dim, n_stored, cfg.buffer_cap)
    opt = Adam(vf.net, lr=cfg.lr)
    episode_rewards = []
    for ep in range(cfg.episodes):
        env.reset(rng)
        s = env.state()
        cands = env.propose(cfg.n_candidates, rng)
        total = 0.0
        while True:
            if rng.random() < cfg.eps:
                idx = int(rng.integers(0, len(cands)))
            else:
                idx = int(np.argmax(vf.eval(s, cands)))
            plan = cands[idx]
            reward, failed = env.step(plan, rng)
            total += reward
            if failed:
                fail.add(s, plan, 0.0, terminal=True)
                break
            s2 = env.state()
            cands2 = env.propose(cfg.n_candidates, rng)
            succ.add(s, plan, 1.0, s2, cands2, terminal=False)
            s, cands = s2, cands2
            if not env.running():
                break
        episode_rewards.append(total)
        if len(succ) and len(fail):
            for _ in range(cfg.k_updates):
                batch = sample_balanced_batch(succ, fail, cfg.batch, rng)
                y = bellman_target(target, batch, vf.gamma)
                x = vf._inputs(batch["state"], batch["plan"])
                if cfg.input_noise > 0.0:
                    x = x + cfg.input_noise * rng.standard_normal(x.shape)
                out, cache = vf.net.forward_full(x)
                resid = out[:, 0] - y
                grads, _ = vf.net.backward_from(cache, (resid / len(x))[:, None])
                opt.step(vf.net, grads)
                soft_update(target, vf, cfg.tau)
        if cfg.log_every and (ep + 1) % cfg.log_every == 0:
            recent = episode_rewards[-cfg.log_every:]
            print(f"  online ep {ep + 1}: mean steps {np.mean(recent):.2f} "
                  f"(D_s {len(succ)}, D_f {len(fail)})")
    return {"episode_rewards": episode_rewards,
            "n_success": len(succ), "n_failure": len(fail)}


def compose_scores(score_lists) -> np.ndarray:
    """Product of per-filter score vectors.

    Factors are multiplied in sorted order per candidate, so the result
    is exactly invariant to the order the filters are given in.
    """
    arr = np.sort(np.atleast_2d(np.asarray(score_lists, dtype=np.float64)), axis=0)
    out = arr[0].copy()
    for row in arr[1:]:
        out *= row
    return out


def save_filter(path_base: str, vf: ViabilityFilter) -> None:
    save_mlp(path_base + ".vpnn", vf.net)
    save_sidecar(path_base + ".json", {
        "kind": "viability_filter",
        "task_schema": vf.task,
        "state_dim": vf.state_dim,
        "plan_dim": vf.plan_dim,
        "gamma": vf.gamma,
        "in_mean": vf.in_mean,
        "in_std": vf.in_std,
    })


def load_filter(path_base: str, expect_task: str | None = None) -> ViabilityFilter:
    meta = load_sidecar(path_base + ".json")
    if meta.get("kind") != "viability_filter":
        raise ValueError(f"{path_base}.json: sidecar kind {meta.get('kind')!r}, "
                         "expected 'viability_filter'")
    if expect_task is not None and meta["task_schema"] != expect_task:
        raise ValueError(
            f"{path_base}: filter was trained for task schema "
            f"{meta['task_schema']!r}, refusing to use it for {expect_task!r}")
    net = load_mlp(path_base + ".vpnn")
    vf = ViabilityFilter(meta["state_dim"], meta["plan_dim"],
                         meta["task_schema"], net=net, gamma=meta["gamma"])
    if net.dims[0] != vf.state_dim + vf.plan_dim or net.dims[-1] != 1:
        raise ValueError(f"{path_base}: net dims {net.dims} inconsistent with sidecar")
    vf.set_input_stats(meta["in_mean"], meta["in_std"])
    return vf
