"""Footstep-plan generation with learned viability filtering.

A conditional diffusion model proposes short footstep plans; learned
viability filters score and select among sampled candidates at plan
time; a surrogate locomotion layer executes plans over procedurally
generated terrain tasks.
"""

from .diffusion import (Denoiser, GuidanceSpec, NoiseSchedule, cfg_combine,
                        forward_noise, load_denoiser, sample_plans,
                        save_denoiser)
from .nn import Adam, Mlp, load_mlp, save_mlp, time_embed
from .planner import (CompositeScorer, PlannerConfig, VfScorer, plan_step,
                      rollout_episode, sdf_obstacle_score)
from .procgen import (FULL_WINDOW_RETURN, ProcgenParams, collect_dataset,
                      gen_trajectory, load_dataset, plan_return, save_dataset)
from .scenarios import make_mixed_scenario, make_scenario
from .toy import accept_probability, toy_experiment
from .viability import (OnlineConfig, Replay, ViabilityFilter,
                        bellman_target, compose_scores, load_filter,
                        sample_balanced_batch, save_filter, soft_update,
                        train_offline, train_online)
from .world import (GAMMA, PLAN_DIM, PLAN_STEPS, Q_MAX, Capabilities,
                    Hurdle, Obstacle, Platform, Terrain, WorldState)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Capabilities", "CompositeScorer", "Denoiser",
    "FULL_WINDOW_RETURN", "GAMMA", "GuidanceSpec", "Hurdle", "Mlp",
    "NoiseSchedule", "Obstacle", "OnlineConfig", "PLAN_DIM", "PLAN_STEPS",
    "Platform", "PlannerConfig", "ProcgenParams", "Q_MAX", "Replay",
    "Terrain", "VfScorer", "ViabilityFilter", "WorldState",
    "accept_probability", "bellman_target", "cfg_combine",
    "collect_dataset", "compose_scores", "forward_noise", "gen_trajectory",
    "load_dataset", "load_denoiser", "load_filter", "load_mlp",
    "make_mixed_scenario", "make_scenario", "plan_return", "plan_step",
    "rollout_episode", "sample_balanced_batch", "sample_plans",
    "save_dataset", "save_denoiser", "save_filter", "save_mlp",
    "sdf_obstacle_score", "soft_update", "time_embed", "toy_experiment",
    "train_offline", "train_online",
]
