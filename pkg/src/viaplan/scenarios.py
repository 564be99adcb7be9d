"""Evaluation and training scenarios: one terrain feature (or a mixed
sequence of them) placed ahead of the character, with waypoints routed
through feature centers and a final goal beyond.

Episodes succeed when the final waypoint is reached within the step
budget. Waypoints sit at feature centers on purpose: the proposal model
steers toward them, so any avoidance or care has to come from the
filters or from guidance.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import world as W

TASK_RANGES = {
    "platform": (0.10, 0.65),
    "hurdle": (0.25, 0.35),
    "obstacle": (0.50, 1.50),
}
EVAL_SETTINGS = {
    "platform": [0.25, 0.35, 0.45, 0.55, 0.65],
    "hurdle": [0.25, 0.30, 0.35],
    "obstacle": [0.50, 1.00, 1.50],
}
HARDEST = {"platform": 0.65, "hurdle": 0.35, "obstacle": 1.50}


def _start(rng):
    heading = rng.uniform(-0.1, 0.1)
    leg = int(rng.choice([-1, 1]))
    return heading, leg


def make_scenario(task: str, difficulty: float, rng: np.random.Generator):
    """(terrain, start state, budget) for a single-feature episode."""
    heading, leg = _start(rng)
    jx = rng.uniform(-0.3, 0.3)
    d0 = rng.uniform(2.2, 3.2)
    terrain = W.Terrain()
    if task == "platform":
        terrain.platforms.append(W.Platform(center=(jx, d0), height=difficulty))
        wp1 = np.array([jx, d0, difficulty])
        far = d0 + rng.uniform(2.4, 3.0)
        budget = 18
    elif task == "hurdle":
        ang = -math.pi / 2 + rng.uniform(-0.17, 0.17)
        terrain.hurdles.append(W.Hurdle(center=(jx, d0), angle=ang,
                                        height=difficulty))
        wp1 = np.array([jx, d0, 0.0])
        far = d0 + rng.uniform(2.2, 2.8)
        budget = 16
    elif task == "obstacle":
        terrain.obstacles.append(W.Obstacle(center=(jx, d0), radius=difficulty))
        wp1 = np.array([jx, d0, 0.0])
        far = d0 + difficulty + rng.uniform(1.8, 2.4)
        budget = 22
    else:
        raise ValueError(f"unknown task {task!r}")
    wp2 = np.array([rng.uniform(-0.3, 0.3), far, 0.0])
    state = W.make_start_state((0.0, 0.0), heading, leg,
                               waypoints=[wp1, wp2], terrain=terrain)
    return terrain, state, budget


def make_mixed_scenario(rng: np.random.Generator,
                        platform_h: float = 0.50, hurdle_h: float = 0.30,
                        obstacle_r: float = 1.00):
    """Platform, then hurdle, then obstacle along one route."""
    heading, leg = _start(rng)
    y1 = rng.uniform(2.4, 3.0)
    y2 = y1 + rng.uniform(2.6, 3.2)
    y3 = y2 + rng.uniform(2.6, 3.2)
    xs = rng.uniform(-0.3, 0.3, size=4)
    terrain = W.Terrain(
        platforms=[W.Platform(center=(xs[0], y1), height=platform_h)],
        hurdles=[W.Hurdle(center=(xs[1], y2),
                          angle=-math.pi / 2 + rng.uniform(-0.17, 0.17),
                          height=hurdle_h)],
        obstacles=[W.Obstacle(center=(xs[2], y3), radius=obstacle_r)],
    )
    wps = [np.array([xs[0], y1, platform_h]),
           np.array([xs[1], y2, 0.0]),
           np.array([xs[2], y3, 0.0]),
           np.array([xs[3], y3 + obstacle_r + rng.uniform(1.8, 2.4), 0.0])]
    state = W.make_start_state((0.0, 0.0), heading, leg,
                               waypoints=wps, terrain=terrain)
    return terrain, state, 40


def make_training_scenario(task: str, difficulty: float,
                           rng: np.random.Generator):
    """Evaluation scenario with an inexhaustible waypoint tail.

    Training episodes must not end at the goal: the value target is
    discounted survival, so an episode that stops early would make
    finishing look worse than loitering. Extra waypoints keep the walk
    going until the budget runs out; evaluation keeps the finite list.
    """
    terrain, state, budget = make_scenario(task, difficulty, rng)
    wps = list(state.waypoints)
    y = float(wps[-1][1])
    for _ in range(6):
        y += rng.uniform(2.0, 2.8)
        wps.append(np.array([rng.uniform(-0.4, 0.4), y, 0.0]))
    state = replace(state, waypoints=wps)
    return terrain, state, budget


def training_scenario_fn(task: str, rng_range=None):
    """Scenario factory drawing the difficulty uniformly per episode."""
    lo, hi = rng_range or TASK_RANGES[task]

    def fn(rng):
        return make_training_scenario(task, rng.uniform(lo, hi), rng)

    return fn
