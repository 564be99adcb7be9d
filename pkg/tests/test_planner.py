"""Candidate scoring, selection rules, and episode rollouts."""

import numpy as np
import pytest

import viaplan.planner as PL
import viaplan.world as W
from viaplan.diffusion import Denoiser, NoiseSchedule, dataset_stats
from viaplan.viability import ViabilityFilter


def tiny_model(rng=None, cond_dim=W.COND_DIM):
    """Untrained conditional denoiser, just enough to sample from."""
    rng = rng or np.random.default_rng(0)
    model = Denoiser(W.PLAN_DIM, NoiseSchedule(), hidden=(32,), time_dim=8,
                     cond_dim=cond_dim, cond_embed_dim=8, cond_hidden=(16,),
                     rng=rng)
    plans = rng.normal(size=(64, W.PLAN_DIM))
    mean, std = dataset_stats(plans)
    model.set_plan_stats(mean, std, -W.PLAN_COORD_BOUND, W.PLAN_COORD_BOUND)
    if cond_dim:
        conds = rng.normal(size=(64, cond_dim))
        cmean, cstd = dataset_stats(conds)
        model.set_cond_stats(cmean, cstd)
    return model


def plan_with_feet(feet):
    """Plan vector from a list of four (forward, left, up) feet."""
    return np.asarray(feet, dtype=np.float64).reshape(W.PLAN_DIM)


def test_sdf_score_saturates_outside_inflated_radius():
    far = plan_with_feet([[5.0, 5.0, 0.0]] * 4)
    score, grad = PL.sdf_obstacle_score(far, centers=[[0.0, 0.0]],
                                        radii=[0.5], margin=0.3)
    assert np.isclose(score[0], 4 * 0.8)
    assert np.array_equal(grad, np.zeros((1, W.PLAN_DIM)))


def test_sdf_score_counts_each_foot_and_obstacle():
    # one foot 0.2 from the first obstacle, all else clear
    plan = plan_with_feet([[0.2, 0.0, 0.0], [3.0, 0.0, 0.0],
                           [3.5, 0.0, 0.0], [4.0, 0.0, 0.0]])
    score, _ = PL.sdf_obstacle_score(plan, centers=[[0.0, 0.0]],
                                     radii=[0.5], margin=0.3)
    assert np.isclose(score[0], 0.2 + 3 * 0.8)
    # second obstacle, inflated radius 0.5: feet at planar distances
    # 2.8, 0.0, 0.5, 1.0 from it add 0.5 + 0 + 0.5 + 0.5
    score2, _ = PL.sdf_obstacle_score(plan, centers=[[0.0, 0.0], [3.0, 0.0]],
                                      radii=[0.5, 0.2], margin=0.3)
    assert np.isclose(score2[0], (0.2 + 3 * 0.8) + 1.5)


def test_sdf_gradient_radial_inside_zero_outside_and_at_center():
    plan = plan_with_feet([[0.3, 0.4, 0.0], [0.0, 0.0, 0.0],
                           [5.0, 0.0, 0.0], [0.0, -0.6, 0.0]])
    _, grad = PL.sdf_obstacle_score(plan, centers=[[0.0, 0.0]],
                                    radii=[0.5], margin=0.3)
    g = grad.reshape(W.PLAN_STEPS, 3)
    assert np.allclose(g[0], [0.6, 0.8, 0.0])   # unit radial at dist 0.5
    assert np.array_equal(g[1], np.zeros(3))    # exactly at the center
    assert np.array_equal(g[2], np.zeros(3))    # far outside
    assert np.allclose(g[3], [0.0, -1.0, 0.0])
    assert np.all(grad[:, 2::3] == 0.0)         # height never enters


def test_sdf_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    plan = plan_with_feet([[0.3, 0.1, 0.0], [0.7, -0.2, 0.1],
                           [1.4, 0.3, 0.0], [2.2, -0.1, 0.0]])
    centers, radii = [[0.5, 0.0], [1.5, 0.2]], [0.4, 0.3]
    _, grad = PL.sdf_obstacle_score(plan, centers, radii, margin=0.3)
    eps = 1e-6
    for j in rng.choice(W.PLAN_DIM, size=6, replace=False):
        up, dn = plan.copy(), plan.copy()
        up[j] += eps
        dn[j] -= eps
        fd = (PL.sdf_obstacle_score(up, centers, radii, 0.3)[0]
              - PL.sdf_obstacle_score(dn, centers, radii, 0.3)[0]) / (2 * eps)
        assert np.isclose(grad[0, j], fd[0], atol=1e-5)


def test_make_obstacle_guidance_transforms_to_character_frame():
    terrain = W.Terrain()
    state = W.make_start_state(heading=0.0, waypoints=[(0.0, 6.0, 0.0)])
    assert PL.make_obstacle_guidance(state, terrain) is None
    terrain = W.Terrain(obstacles=[W.Obstacle(center=(0.5, 2.0), radius=0.5)])
    spec = PL.make_obstacle_guidance(state, terrain, margin=0.3)
    # heading 0 faces +y: world (0.5, 2.0) is forward 2.0, left -0.5
    on_center = plan_with_feet([[2.0, -0.5, 0.0], [5.0, 5.0, 0.0],
                                [5.0, 5.0, 0.0], [5.0, 5.0, 0.0]])
    assert np.isclose(spec.value(on_center)[0], 3 * 0.8)
    clear = plan_with_feet([[5.0, 5.0, 0.0]] * 4)
    assert np.isclose(spec.value(clear)[0], 4 * 0.8)
    assert spec.grad(clear).shape == (1, W.PLAN_DIM)


def test_threshold_select_first_clearing_else_argmax():
    scores = np.array([1.0, 3.9, 2.0, 3.95, 0.5])
    idx, cleared = PL.threshold_select(scores, frac=0.95, q_max=4.0)
    assert (idx, cleared) == (1, True)      # first above 3.8, not the max
    idx, cleared = PL.threshold_select(scores, frac=0.999, q_max=4.0)
    assert (idx, cleared) == (3, False)     # nothing clears, argmax fallback


class _RecordingScorer:
    """Scores plans by first coordinate and remembers what it saw."""

    def __init__(self, q_max=4.0):
        self.q_max = q_max
        self.seen = []

    def __call__(self, state, terrain, plans):
        self.seen.append(np.array(plans))
        return np.asarray(plans)[:, 0]


def test_plan_step_first_mode_ignores_scorer():
    model = tiny_model()
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    cfg = PL.PlannerConfig(n_samples=16, mode="first")
    plan, info = PL.plan_step(model, state, W.Terrain(), cfg,
                              np.random.default_rng(2))
    assert plan.shape == (W.PLAN_DIM,)
    assert info == {"index": 0, "count": 1}


def test_plan_step_argmax_picks_best_scored_candidate():
    model = tiny_model()
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    scorer = _RecordingScorer()
    cfg = PL.PlannerConfig(n_samples=16, mode="argmax")
    plan, info = PL.plan_step(model, state, W.Terrain(), cfg,
                              np.random.default_rng(3), scorer)
    cands = scorer.seen[0]
    assert cands.shape == (16, W.PLAN_DIM)
    best = int(np.argmax(cands[:, 0]))
    assert info["index"] == best and info["cleared"]
    assert np.array_equal(plan, cands[best])
    assert np.isclose(info["score"], cands[best, 0])


def test_plan_step_threshold_mode_reports_clearing():
    model = tiny_model()
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    scorer = _RecordingScorer(q_max=1e9)    # nothing can clear
    cfg = PL.PlannerConfig(n_samples=8, mode="threshold", threshold_frac=0.95)
    _, info = PL.plan_step(model, state, W.Terrain(), cfg,
                           np.random.default_rng(4), scorer)
    assert info["cleared"] is False
    assert info["index"] == int(np.argmax(scorer.seen[0][:, 0]))


def test_plan_step_scorer_required_and_mode_validated():
    model = tiny_model()
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    with pytest.raises(ValueError, match="needs a scorer"):
        PL.plan_step(model, state, W.Terrain(),
                     PL.PlannerConfig(mode="argmax"), np.random.default_rng(5))
    with pytest.raises(ValueError, match="unknown planner mode"):
        PL.plan_step(model, state, W.Terrain(),
                     PL.PlannerConfig(mode="bogus"), np.random.default_rng(6),
                     _RecordingScorer())


def test_plan_step_guided_mode_runs_with_and_without_obstacles():
    model = tiny_model()
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    cfg = PL.PlannerConfig(mode="guided", guide_weight=4.0)
    for terrain in (W.Terrain(),
                    W.Terrain(obstacles=[W.Obstacle((0.0, 2.0), 0.5)])):
        plan, info = PL.plan_step(model, state, terrain, cfg,
                                  np.random.default_rng(7))
        assert plan.shape == (W.PLAN_DIM,)
        assert info["count"] == 1


def test_vf_scorer_matches_direct_filter_eval():
    rng = np.random.default_rng(8)
    vf = ViabilityFilter(W.STATE_DIMS["platform"], W.PLAN_DIM, "platform",
                         hidden=(16,), rng=rng)
    scorer = PL.VfScorer(vf)
    assert scorer.q_max == vf.q_max
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    terrain = W.Terrain()
    plans = rng.normal(size=(5, W.PLAN_DIM))
    direct = vf.eval(W.vf_state(state, terrain, "platform"), plans)
    assert np.array_equal(scorer(state, terrain, plans), direct)


def test_composite_scorer_multiplies_filters_order_free():
    rng = np.random.default_rng(9)
    vfs = [ViabilityFilter(W.STATE_DIMS["platform"], W.PLAN_DIM, "platform",
                           hidden=(8,), rng=rng) for _ in range(3)]
    state = W.make_start_state(waypoints=[(0.0, 6.0, 0.0)])
    terrain = W.Terrain()
    plans = rng.normal(size=(4, W.PLAN_DIM))
    comp = PL.CompositeScorer(vfs)
    assert np.isclose(comp.q_max, np.prod([v.q_max for v in vfs]))
    out = comp(state, terrain, plans)
    per = [v.eval(W.vf_state(state, terrain, "platform"), plans) for v in vfs]
    assert np.allclose(out, per[0] * per[1] * per[2])
    flipped = PL.CompositeScorer(vfs[::-1])(state, terrain, plans)
    assert np.array_equal(out, flipped)


def test_rollout_procedural_reaches_near_waypoint_on_flat_ground():
    scenario = (W.Terrain(),
                W.make_start_state(waypoints=[(0.0, 2.0, 0.0)]), 10)
    out = PL.rollout_episode(None, scenario, PL.PlannerConfig(),
                             rng_env=np.random.default_rng(10),
                             rng_sample=np.random.default_rng(11),
                             procedural=True)
    assert out["status"] == "success"
    assert 0 < out["steps"] <= 10
    assert out["failure"] is None
    assert out["final"].done_waypoints()


def test_rollout_untrained_model_terminates_within_budget():
    model = tiny_model()
    scenario = (W.Terrain(),
                W.make_start_state(waypoints=[(0.0, 4.0, 0.0)]), 6)
    out = PL.rollout_episode(model, scenario, PL.PlannerConfig(mode="first"),
                             rng_env=np.random.default_rng(12),
                             rng_sample=np.random.default_rng(13))
    assert out["status"] in ("success", "failure")
    assert out["steps"] <= 6


def test_task_env_protocol_round_trip():
    model = tiny_model()

    def scenario_fn(rng):
        return (W.Terrain(),
                W.make_start_state(waypoints=[(0.0, 8.0, 0.0)]), 5)

    env = PL.TaskEnv(model=model, task="platform", scenario_fn=scenario_fn)
    rng = np.random.default_rng(14)
    env.reset(rng)
    s = env.state()
    assert s.shape == (W.STATE_DIMS["platform"],)
    assert np.array_equal(s, W.vf_state(env.world, env.terrain, "platform"))
    cands = env.propose(6, rng)
    assert cands.shape == (6, W.PLAN_DIM)
    assert env.running()
    # hand-built safe step: short stride forward on flat ground
    reward, failed = env.step(plan_with_feet([[0.7, 0.1, 0.0]] * 4), rng)
    assert (reward, failed) == (1.0, False)
    assert env.world.steps_taken == 1
    for _ in range(4):
        reward, failed = env.step(plan_with_feet([[0.7, 0.0, 0.0]] * 4), rng)
        assert not failed
    assert not env.running()    # budget exhausted
