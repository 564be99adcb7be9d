"""Trajectory generator, windowed records, dataset files."""

import math

import numpy as np
import pytest

import viaplan.procgen as P
import viaplan.world as W


def test_next_footstep_trig_form():
    # heading 30 deg, turn 10 deg, unit radial distance, no leg rotation:
    # dx = sin(turn - heading), dy = cos(turn + heading)
    params = P.ProcgenParams(leg_rot=0.0)
    pos, heading = P.next_footstep((0.0, 0.0), math.radians(30), 1, 1.0,
                                   math.radians(10), params)
    assert np.isclose(pos[0], math.sin(math.radians(-20)), atol=1e-12)
    assert np.isclose(pos[1], math.cos(math.radians(40)), atol=1e-12)
    assert np.isclose(heading, math.radians(40))


def test_next_footstep_leg_rotation_mirror():
    params = P.ProcgenParams()
    left, _ = P.next_footstep((0.0, 0.0), 0.0, 1, 0.8, 0.0, params)
    right, _ = P.next_footstep((0.0, 0.0), 0.0, -1, 0.8, 0.0, params)
    rot = params.leg_rot
    base = np.array([0.8 * math.sin(0.0), 0.8 * math.cos(0.0)])
    rl = np.array([[math.cos(rot), -math.sin(rot)],
                   [math.sin(rot), math.cos(rot)]])
    assert np.allclose(left, rl @ base, atol=1e-12)
    assert np.allclose(right, rl.T @ base, atol=1e-12)
    # mirrored across the heading axis
    assert np.isclose(left[0], -right[0]) and np.isclose(left[1], right[1])


def test_gen_trajectory_alternates_legs_and_accumulates_heading():
    params = P.ProcgenParams(n_steps=12)
    rng = np.random.default_rng(0)
    steps, info = P.gen_trajectory(params, rng, first_leg=1)
    assert steps.shape == (12, 2)
    assert np.array_equal(info["leg"], [(-1) ** t for t in range(12)])
    assert np.allclose(info["heading"], np.cumsum(info["dphi"]))
    assert np.all(np.abs(info["dphi"]) <= params.dphi_max)
    assert np.all((info["dr"] >= params.dr_min) & (info["dr"] <= params.dr_max))
    # step length is dr scaled by sqrt(1 - sin(2 dphi) sin(2 heading)),
    # so consecutive footsteps stay inside the trig envelope, not dr_max
    factor = math.sqrt(1.0 + math.sin(2.0 * params.dphi_max))
    d = np.linalg.norm(np.diff(np.vstack([[0, 0], steps]), axis=0), axis=1)
    assert np.all(d <= params.dr_max * factor + 1e-9)


def test_bearing_and_wrap():
    assert P.bearing((0.0, 0.0), (0.0, 2.0)) == 0.0
    assert np.isclose(P.bearing((0.0, 0.0), (-1.0, 0.0)), math.pi / 2)
    assert np.isclose(P.wrap_angle(3 * math.pi), -math.pi)
    assert np.isclose(P.wrap_angle(0.3), 0.3)


def test_procedural_step_geometry_at_zero_heading():
    # at heading 0 the trig form preserves length: |step| = dr exactly
    params = P.ProcgenParams()
    rng = np.random.default_rng(1)
    for leg, sign in [(1, 1.0), (-1, -1.0)]:
        state = W.make_start_state(heading=0.0, leg=leg,
                                   waypoints=[(0.0, 5.0, 0.0)])
        # waypoint dead ahead: turn is 0, direction is the leg rotation alone
        tgt, h2 = P.procedural_step(state, rng, params)
        assert h2 == 0.0
        d = tgt - state.stance[:2]
        dr = np.linalg.norm(d)
        assert params.dr_min <= dr <= params.dr_max
        assert np.isclose(math.atan2(-d[0], d[1]), sign * params.leg_rot)


def test_procedural_step_offset_stays_in_turn_envelope():
    # waypoint far to the right clamps the turn at -dphi_max; the foot
    # offset lands on the crossover side but within turn + leg rotation
    params = P.ProcgenParams()
    state = W.make_start_state(heading=0.0, leg=1,
                               waypoints=[(5.0, 0.0, 0.0)])
    rng = np.random.default_rng(1)
    tgt, h2 = P.procedural_step(state, rng, params)
    assert np.isclose(h2, -params.dphi_max)    # clamped turn toward it
    d = tgt - state.stance[:2]
    assert params.dr_min <= np.linalg.norm(d) <= params.dr_max
    ang = math.atan2(-d[0], d[1])
    assert abs(ang) <= params.dphi_max + params.leg_rot + 1e-9
    # an explicit heading overrides the world state's
    tgt2, h3 = P.procedural_step(state, rng, params, heading=-params.dphi_max)
    assert np.isclose(h3, -2 * params.dphi_max)


def test_plan_return_ladder():
    vals = [P.plan_return([1.0] * k + [0.0] * (4 - k)) for k in range(5)]
    assert vals == [0.0, 1.0, 1.75, 2.3125, 2.734375]
    assert P.FULL_WINDOW_RETURN == 2.734375


def test_collect_records_layout_and_labels():
    rng = np.random.default_rng(2)
    recs = P.collect_records("platform", 400, rng, height_range=(0.3, 0.6))
    cols = P.record_columns("platform")
    assert recs.shape == (400, cols["dim"])
    ret = recs[:, cols["ret"]]
    succ = recs[:, cols["success"]]
    probe = recs[:, cols["probe"]]
    ladder = {0.0, 1.0, 1.75, 2.3125, 2.734375}
    assert set(np.unique(ret.astype(np.float64))) <= ladder
    assert np.array_equal(succ == 1.0, ret == P.FULL_WINDOW_RETURN)
    assert 0.0 < succ.mean() < 1.0
    assert set(np.unique(probe)) == {0.0, 1.0}
    assert 0.05 < probe.mean() < 0.4
    # real windows stay inside the proposal's coordinate rails; probes
    # are allowed out there, that is what they are for
    plans = np.abs(recs[probe == 0.0][:, cols["plan"]].reshape(-1, W.PLAN_DIM))
    assert np.all(plans <= W.PLAN_COORD_BOUND + 1e-6)


def test_collect_records_probe_rows_cover_illegal_strides():
    rng = np.random.default_rng(21)
    recs = P.collect_records("platform", 600, rng, height_range=None,
                             probe_frac=0.5)
    cols = P.record_columns("platform")
    probes = recs[recs[:, cols["probe"]] == 1.0]
    assert len(probes) > 100
    pts = probes[:, cols["plan"]].reshape(-1, P.PLAN_STEPS, 3)[:, :, :2]
    seq = np.concatenate([np.zeros((len(pts), 1, 2)), pts], axis=1)
    strides = np.linalg.norm(np.diff(seq, axis=1), axis=2)
    # stretched and shrunk probes bracket the legal stride range
    assert np.any(strides.max(axis=1) > 1.3)
    assert np.any(strides.min(axis=1) < 0.15)
    # probes fail far more often than real windows on the same terrain
    real = recs[recs[:, cols["probe"]] == 0.0]
    assert probes[:, cols["success"]].mean() < real[:, cols["success"]].mean()


def test_collect_records_probe_frac_zero_disables_probes():
    rng = np.random.default_rng(22)
    recs = P.collect_records("platform", 120, rng, height_range=(0.2, 0.4),
                             probe_frac=0.0)
    cols = P.record_columns("platform")
    assert np.all(recs[:, cols["probe"]] == 0.0)


def test_collect_records_flat_mostly_succeeds():
    # flat ground removes falls and trips but not stride failures: the
    # trig length factor can push a large dr past the stride ceiling
    rng = np.random.default_rng(3)
    recs = P.collect_records("platform", 200, rng, height_range=None)
    cols = P.record_columns("platform")
    succ = recs[:, cols["success"]]
    assert succ.mean() > 0.5
    assert np.any(succ == 0.0)
    full = succ == 1.0
    assert np.all(recs[full, cols["ret"]] == P.FULL_WINDOW_RETURN)
    assert np.all(recs[~full, cols["ret"]] < P.FULL_WINDOW_RETURN)


def test_collect_dataset_validates_task():
    with pytest.raises(ValueError):
        P.collect_dataset("obstacle", 10, np.random.default_rng(0))


def test_hurdle_records_have_failures_and_schema():
    rng = np.random.default_rng(4)
    recs = P.collect_records("hurdle", 400, rng)
    cols = P.record_columns("hurdle")
    assert recs.shape[1] == cols["dim"]
    assert recs[:, cols["success"]].mean() < 1.0


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    recs = P.collect_records("platform", 50, rng, height_range=(0.2, 0.4))
    path = tmp_path / "data.vpds"
    P.save_dataset(path, recs, "platform")
    loaded, schema = P.load_dataset(path)
    assert schema == "platform"
    assert np.array_equal(loaded, recs)


def test_dataset_rejects_corruption(tmp_path):
    rng = np.random.default_rng(6)
    recs = P.collect_records("hurdle", 20, rng)
    path = tmp_path / "data.vpds"
    P.save_dataset(path, recs, "hurdle")
    raw = path.read_bytes()

    bad = tmp_path / "bad.vpds"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        P.load_dataset(bad)

    short = tmp_path / "short.vpds"
    short.write_bytes(raw[:-10])
    with pytest.raises(ValueError, match="payload"):
        P.load_dataset(short)

    ver = tmp_path / "ver.vpds"
    ver.write_bytes(raw[:4] + b"\x2a\x00\x00\x00" + raw[8:])
    with pytest.raises(ValueError, match="version"):
        P.load_dataset(ver)
