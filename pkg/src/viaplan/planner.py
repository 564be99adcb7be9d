"""Receding-horizon footstep planning over sampled candidate plans.

Each decision draws candidate plans from the proposal model conditioned
on the current situation, scores them (viability filters, composite
products, or nothing for the pure-proposal baseline), executes only the
first footstep of the chosen plan, and replans. Obstacle avoidance can
alternatively run as gradient guidance inside the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world as W
from .diffusion import Denoiser, GuidanceSpec, sample_plans
from .procgen import ProcgenParams, procedural_step
from .viability import ViabilityFilter, compose_scores


@dataclass
class PlannerConfig:
    n_samples: int = 200
    mode: str = "argmax"          # "first" | "argmax" | "threshold" | "guided"
    threshold_frac: float = 0.95
    guide_weight: float = 8.0
    guide_margin: float = 0.30    # obstacle radius inflation for guidance


def sdf_obstacle_score(plans: np.ndarray, centers, radii, margin: float = 0.30):
    """Clearance score and gradient for plans against planar obstacles.

    ``plans`` is (n, PLAN_DIM) in the character frame; ``centers`` is
    (m, 2) in the same frame. Per footstep and obstacle the score adds
    the planar distance saturated at the inflated radius, so plans whose
    feet sit outside every inflated obstacle score maximal. The gradient
    points radially outward from obstacle centers for feet inside the
    inflated radius and vanishes elsewhere (and exactly at a center).
    """
    plans = np.atleast_2d(np.asarray(plans, dtype=np.float64))
    n = plans.shape[0]
    pts = plans.reshape(n, W.PLAN_STEPS, 3)[:, :, :2]
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    radii = np.atleast_1d(np.asarray(radii, dtype=np.float64))
    score = np.zeros(n)
    grad = np.zeros((n, W.PLAN_STEPS, 3))
    for c, r in zip(centers, radii):
        rhat = r + margin
        d = pts - c
        dist = np.linalg.norm(d, axis=2)
        score += np.minimum(dist, rhat).sum(axis=1)
        inside = (dist < rhat) & (dist > 1e-9)
        unit = np.zeros_like(d)
        np.divide(d, dist[:, :, None], out=unit, where=inside[:, :, None])
        grad[:, :, :2] += unit
    return score, grad.reshape(n, W.PLAN_DIM)


def make_obstacle_guidance(state: W.WorldState, terrain: W.Terrain,
                           margin: float = 0.30) -> GuidanceSpec | None:
    if not terrain.obstacles:
        return None
    centers = W.to_char(state, np.array([o.center for o in terrain.obstacles],
                                        dtype=np.float64))
    radii = [o.radius for o in terrain.obstacles]

    def value(plans):
        return sdf_obstacle_score(plans, centers, radii, margin)[0]

    def grad(plans):
        return sdf_obstacle_score(plans, centers, radii, margin)[1]

    return GuidanceSpec(value, grad)


def threshold_select(scores: np.ndarray, frac: float, q_max: float):
    """First candidate clearing frac * q_max, else the argmax.

    Returns (index, cleared) where ``cleared`` says whether the threshold
    rule fired or the argmax fallback was used.
    """
    scores = np.asarray(scores)
    hits = np.nonzero(scores >= frac * q_max)[0]
    if hits.size:
        return int(hits[0]), True
    return int(np.argmax(scores)), False


class VfScorer:
    """Scores candidate plans with one viability filter."""

    def __init__(self, vf: ViabilityFilter):
        self.vf = vf
        self.q_max = vf.q_max

    def __call__(self, state, terrain, plans):
        s = W.vf_state(state, terrain, self.vf.task)
        return self.vf.eval(s, plans)


class CompositeScorer:
    """Product of several filters' scores, order-independent."""

    def __init__(self, vfs):
        self.vfs = list(vfs)
        self.q_max = float(np.prod([v.q_max for v in self.vfs]))

    def __call__(self, state, terrain, plans):
        per = [v.eval(W.vf_state(state, terrain, v.task), plans) for v in self.vfs]
        return compose_scores(per)


def plan_step(model: Denoiser, state: W.WorldState, terrain: W.Terrain,
              cfg: PlannerConfig, rng: np.random.Generator, scorer=None):
    """One planning decision. Returns (plan, diagnostics)."""
    cond = W.build_conditioning(state, terrain)
    if cfg.mode == "guided":
        guidance = make_obstacle_guidance(state, terrain, cfg.guide_margin)
        plans = sample_plans(model, 1, rng, cond=cond, guidance=guidance,
                             guide_weight=cfg.guide_weight if guidance else 0.0)
        return plans[0], {"index": 0, "count": 1}
    count = 1 if cfg.mode == "first" else cfg.n_samples
    plans = sample_plans(model, count, rng, cond=cond)
    if cfg.mode == "first":
        return plans[0], {"index": 0, "count": count}
    if scorer is None:
        raise ValueError(f"mode {cfg.mode!r} needs a scorer")
    scores = scorer(state, terrain, plans)
    if cfg.mode == "threshold":
        idx, cleared = threshold_select(scores, cfg.threshold_frac, scorer.q_max)
    elif cfg.mode == "argmax":
        idx, cleared = int(np.argmax(scores)), True
    else:
        raise ValueError(f"unknown planner mode {cfg.mode!r}")
    return plans[idx], {"index": idx, "count": count, "cleared": cleared,
                        "score": float(scores[idx]),
                        "score_mean": float(np.mean(scores))}


def rollout_episode(model, scenario, cfg: PlannerConfig,
                    rng_env: np.random.Generator,
                    rng_sample: np.random.Generator,
                    scorer=None, caps: W.Capabilities | None = None,
                    procedural: bool = False,
                    pg_params: ProcgenParams | None = None):
    """Play one episode to success, failure, or budget exhaustion.

    ``scenario`` is (terrain, start state, budget). The executed action
    each step is the first footstep of the planned sequence (or the
    steered generator's next target for the procedural baseline).
    """
    terrain, state, budget = scenario
    caps = caps or W.Capabilities()
    pg_params = pg_params or ProcgenParams()
    state = W.advance_waypoints(state)
    pg_heading = state.heading    # the generator integrates its own heading
    for k in range(budget):
        status = W.episode_status(state, budget - k)
        if status != "running":
            break
        if procedural:
            tgt, pg_heading = procedural_step(state, rng_sample, pg_params,
                                              pg_heading)
            z = float(terrain.height_at(tgt))
            target = W.to_char(state, np.array([tgt[0], tgt[1], z]))
        else:
            plan, _ = plan_step(model, state, terrain, cfg, rng_sample, scorer)
            target = plan[:3]
        state, _, _ = W.execute_step(state, target, terrain, caps, rng_env)
        state = W.advance_waypoints(state)
    status = W.episode_status(state, budget - state.steps_taken)
    return {"status": status, "steps": state.steps_taken,
            "failure": state.failure, "final": state}


@dataclass
class TaskEnv:
    """Adapter exposing scenario episodes to the online training loop."""

    model: Denoiser
    task: str
    scenario_fn: object         # rng -> (terrain, start state, budget)
    caps: W.Capabilities = field(default_factory=W.Capabilities)
    terrain: W.Terrain | None = None
    world: W.WorldState | None = None
    budget: int = 0

    def reset(self, rng):
        self.terrain, self.world, self.budget = self.scenario_fn(rng)
        self.world = W.advance_waypoints(self.world)

    def state(self):
        return W.vf_state(self.world, self.terrain, self.task)

    def propose(self, n, rng):
        cond = W.build_conditioning(self.world, self.terrain)
        return sample_plans(self.model, n, rng, cond=cond)

    def step(self, plan, rng):
        self.world, reward, _ = W.execute_step(self.world, plan[:3],
                                               self.terrain, self.caps, rng)
        self.world = W.advance_waypoints(self.world)
        return reward, not self.world.alive

    def running(self):
        return (self.world.alive and not self.world.done_waypoints()
                and self.world.steps_taken < self.budget)
