"""Procedural footstep trajectories and labeled plan datasets.

The generator random-walks a footstep sequence: each step draws a radial
distance and a turn, the planar offset comes from the turn/heading trig
form, and a fixed per-leg rotation spreads the feet. Executing those
trajectories in the footstep world and slicing the outcomes into 4-step
windows produces the records used to train the proposal model (successes
only) and the offline viability filters (successes and failures).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from . import world as W
from .world import GAMMA, PLAN_STEPS

DATASET_MAGIC = b"VPDS"
DATASET_VERSION = 3


@dataclass
class ProcgenParams:
    dr_min: float = 0.50
    dr_max: float = 1.15
    dphi_max: float = math.radians(20.0)
    leg_rot: float = math.radians(9.0)
    n_steps: int = 50


def next_footstep(pos, heading: float, leg: int, dr: float, dphi: float,
                  params: ProcgenParams):
    """One generator step: returns (new planar position, new heading).

    ``leg`` is the leg taking the step (+1 left, -1 right); the per-leg
    rotation is +leg_rot for the left foot and -leg_rot for the right.
    """
    dx = dr * math.sin(dphi - heading)
    dy = dr * math.cos(dphi + heading)
    rot = params.leg_rot * (1 if leg > 0 else -1)
    c, s = math.cos(rot), math.sin(rot)
    step = np.array([c * dx - s * dy, s * dx + c * dy])
    return np.asarray(pos, dtype=np.float64) + step, heading + dphi


def gen_trajectory(params: ProcgenParams, rng: np.random.Generator,
                   pos=(0.0, 0.0), heading: float = 0.0, first_leg: int = 1):
    """Generate ``params.n_steps`` footsteps.

    Returns (steps, info): planar targets of shape (n, 2) and per-step
    draws {dr, dphi, leg, heading} with alternating legs.
    """
    steps = np.zeros((params.n_steps, 2))
    drs = rng.uniform(params.dr_min, params.dr_max, size=params.n_steps)
    dphis = rng.uniform(-params.dphi_max, params.dphi_max, size=params.n_steps)
    legs = np.array([first_leg * (-1) ** t for t in range(params.n_steps)])
    headings = np.zeros(params.n_steps)
    p, h = np.asarray(pos, dtype=np.float64), heading
    for t in range(params.n_steps):
        p, h = next_footstep(p, h, int(legs[t]), drs[t], dphis[t], params)
        steps[t] = p
        headings[t] = h
    return steps, {"dr": drs, "dphi": dphis, "leg": legs, "heading": headings}


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def bearing(frm, to) -> float:
    """Heading value that faces from ``frm`` toward ``to``."""
    d = np.asarray(to, dtype=np.float64)[:2] - np.asarray(frm, dtype=np.float64)[:2]
    return math.atan2(-d[0], d[1])


def procedural_step(state: W.WorldState, rng: np.random.Generator,
                    params: ProcgenParams, heading: float | None = None):
    """Waypoint-steered generator step. Returns (planar target, heading).

    Used by the procedural-follow baseline: the turn draw is replaced by
    the clamped heading error toward the active waypoint. The generator
    integrates its own heading (dphi accumulates step over step); the
    world's displacement-derived heading weaves around it and sticks at
    large angles, so callers walking multiple steps must thread the
    returned heading back in rather than read it off the world state.
    """
    h = state.heading if heading is None else heading
    dphi = wrap_angle(bearing(state.stance, state.waypoint()) - h)
    dphi = float(np.clip(dphi, -params.dphi_max, params.dphi_max))
    dr = rng.uniform(params.dr_min, params.dr_max)
    tgt, h2 = next_footstep(state.stance[:2], h, state.leg, dr, dphi, params)
    return tgt, h2


def plan_return(rewards, gamma: float = GAMMA) -> float:
    """Discounted sum of a window's per-step rewards."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(rewards @ gamma ** np.arange(len(rewards)))


FULL_WINDOW_RETURN = plan_return([1.0] * PLAN_STEPS)

# record layout: plan | conditioning | filter state | success | return | probe
PLATFORM_BATCHES = [None, (0.10, 0.65), (0.30, 0.65), (0.40, 0.65), (0.50, 0.65)]


def record_columns(schema: str) -> dict:
    s = W.STATE_DIMS[schema]
    plan_end = W.PLAN_DIM
    cond_end = plan_end + W.COND_DIM
    state_end = cond_end + s
    return {
        "plan": slice(0, plan_end),
        "cond": slice(plan_end, cond_end),
        "state": slice(cond_end, state_end),
        "success": state_end,
        "ret": state_end + 1,
        "probe": state_end + 2,
        "dim": state_end + 3,
    }


def _spaced_indices(rng, lo, hi, count, min_gap):
    picks = []
    for _ in range(200):
        c = int(rng.integers(lo, hi))
        if all(abs(c - p) >= min_gap for p in picks):
            picks.append(c)
            if len(picks) == count:
                break
    return sorted(picks)


def _decorate(traj, kind, height_range, rng, caps):
    terrain = W.Terrain()
    if kind == "platform" and height_range is not None:
        for idx in _spaced_indices(rng, 8, len(traj) - 6, int(rng.integers(2, 4)), 10):
            h = rng.uniform(*height_range)
            terrain.platforms.append(W.Platform(center=tuple(traj[idx]), height=h))
    elif kind == "hurdle":
        for idx in _spaced_indices(rng, 6, len(traj) - 4, int(rng.integers(2, 4)), 8):
            mid = 0.5 * (traj[idx] + traj[idx + 1])
            d = traj[idx + 1] - traj[idx]
            bar = np.array([-d[1], d[0]])
            ang = math.atan2(-bar[0], bar[1]) + rng.uniform(-0.17, 0.17)
            h = rng.uniform(0.25, 0.35)
            terrain.hurdles.append(W.Hurdle(center=tuple(mid), angle=ang, height=h))
    return terrain


def _collection_waypoint(traj, terrain, t, rng):
    """Hindsight waypoint label for the window starting at step t.

    A platform center the trajectory is about to pass through wins;
    otherwise a future trajectory point at a randomized lookahead, with
    a little lateral jitter so close waypoints read as regions rather
    than exact footholds. Lookaheads stay near the window length: the
    plan has to visibly commit toward its waypoint, or the filters can
    exploit uncommitted candidates to stall forever.
    """
    for p in terrain.platforms:
        c = np.asarray(p.center)
        for k in range(t + 1, min(t + 9, len(traj))):
            if np.linalg.norm(traj[k] - c) < 1.2:
                return np.array([c[0], c[1], p.height])
    k = min(t + int(rng.integers(1, 7)), len(traj) - 1)
    xy = traj[k][:2] + 0.15 * rng.uniform(-1.0, 1.0, size=2)
    z = float(terrain.height_at(xy))
    return np.array([xy[0], xy[1], z])


def _probe_plan(pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Corrupted copy of a window plan, planar coordinates only.

    Stretches push strides past the legal ceiling, shrinks pull the first
    stride under the floor, rotations keep stride lengths but point the
    window somewhere the terrain context no longer supports.
    """
    pts = pts.copy()
    mode = rng.random()
    if mode < 0.4:
        pts[:, :2] *= rng.uniform(1.25, 2.2)
    elif mode < 0.7:
        pts[:, :2] *= rng.uniform(0.08, 0.6)
    else:
        a = rng.uniform(-math.pi / 2, math.pi / 2)
        c, s = math.cos(a), math.sin(a)
        pts[:, :2] = pts[:, :2] @ np.array([[c, s], [-s, c]])
    return pts


def _execute_probe(state: W.WorldState, pts: np.ndarray, terrain: W.Terrain,
                   caps: W.Capabilities, rng: np.random.Generator):
    """Open-loop execution of a char-frame window. Returns (success, ret).

    Footstep targets are world-fixed at probe time, matching how plan
    windows are labeled from executed trajectories.
    """
    world_pts = W.from_char(state, pts)
    rewards = []
    for k in range(PLAN_STEPS):
        tgt = W.to_char(state, world_pts[k])
        state, r, _ = W.execute_step(state, tgt, terrain, caps, rng)
        rewards.append(r)
        if not state.alive:
            break
    win = rewards + [0.0] * (PLAN_STEPS - len(rewards))
    return float(all(r > 0 for r in win)), plan_return(win)


def collect_records(kind: str, n_records: int, rng: np.random.Generator,
                    caps: W.Capabilities | None = None,
                    params: ProcgenParams | None = None,
                    height_range=None, probe_frac: float = 0.20):
    """Execute procgen trajectories and emit windowed records.

    ``kind`` picks the terrain decoration and the filter-state schema:
    "platform" (with ``height_range`` None meaning flat ground) or
    "hurdle". A failure at step t marks every window containing t as
    failed; rewards past the failure count as zero in the window return.

    A ``probe_frac`` share of records are corrupted-plan probes executed
    from snapshot states and labeled by their own outcome. Candidate
    selection at planning time takes an argmax over sampled plans, which
    lands on whatever off-data plans the filter happens to overrate;
    probes give the regression honest labels out there. Probe rows carry
    probe=1 and must be excluded from proposal imitation.
    """
    caps = caps or W.Capabilities()
    params = params or ProcgenParams()
    cols = record_columns(kind)
    out = np.zeros((n_records, cols["dim"]), dtype=np.float32)
    got = 0
    while got < n_records:
        traj, _ = gen_trajectory(params, rng, first_leg=int(rng.choice([-1, 1])))
        terrain = _decorate(traj, kind, height_range, rng, caps)
        state = W.make_start_state(waypoints=[np.zeros(3)])
        snaps, rewards = [], []
        for t in range(len(traj)):
            wp = _collection_waypoint(traj, terrain, t, rng)
            state = dc_replace(state, waypoints=[wp], wp_index=0)
            snaps.append((state, W.build_conditioning(state, terrain),
                          W.vf_state(state, terrain, kind)))
            tz = float(terrain.height_at(traj[t]))
            tgt = W.to_char(state, np.array([traj[t][0], traj[t][1], tz]))
            state, r, _ = W.execute_step(state, tgt, terrain, caps, rng)
            rewards.append(r)
            if not state.alive:
                break
        n_exec = len(rewards)
        for t in range(min(n_exec, len(traj) - PLAN_STEPS + 1)):
            snap_state, cond, vfst = snaps[t]
            win = [rewards[t + k] if t + k < n_exec else 0.0
                   for k in range(PLAN_STEPS)]
            tz = terrain.height_at(traj[t:t + PLAN_STEPS])
            pts = np.concatenate([traj[t:t + PLAN_STEPS], tz[:, None]], axis=1)
            plan = W.to_char(snap_state, pts)
            rec = out[got]
            rec[cols["plan"]] = plan.ravel()
            rec[cols["cond"]] = cond
            rec[cols["state"]] = vfst
            rec[cols["success"]] = float(all(r > 0 for r in win))
            rec[cols["ret"]] = plan_return(win)
            got += 1
            if got == n_records:
                break
            if probe_frac and rng.random() < probe_frac:
                ppts = _probe_plan(plan, rng)
                psucc, pret = _execute_probe(snap_state, ppts, terrain,
                                             caps, rng)
                rec = out[got]
                rec[cols["plan"]] = ppts.ravel()
                rec[cols["cond"]] = cond
                rec[cols["state"]] = vfst
                rec[cols["success"]] = psucc
                rec[cols["ret"]] = pret
                rec[cols["probe"]] = 1.0
                got += 1
                if got == n_records:
                    break
    return out


def collect_dataset(kind: str, n_records: int, rng: np.random.Generator,
                    caps: W.Capabilities | None = None,
                    params: ProcgenParams | None = None,
                    probe_frac: float = 0.20) -> np.ndarray:
    """Full dataset for one task.

    The platform dataset mixes one flat batch with four platform batches
    whose height ranges narrow toward the hard end, oversampling tall
    platforms. The hurdle dataset is a single decorated batch.
    """
    if kind == "platform":
        per = [n_records // len(PLATFORM_BATCHES)] * len(PLATFORM_BATCHES)
        per[-1] += n_records - sum(per)
        parts = [collect_records("platform", n, rng, caps, params,
                                 height_range=hr, probe_frac=probe_frac)
                 for hr, n in zip(PLATFORM_BATCHES, per)]
        return np.concatenate(parts, axis=0)
    if kind == "hurdle":
        return collect_records("hurdle", n_records, rng, caps, params,
                               probe_frac=probe_frac)
    raise ValueError(f"no offline collection for task {kind!r}")


def save_dataset(path, records: np.ndarray, schema: str) -> None:
    """Binary dataset: magic, version u32, count u64, dim u32, schema u32,
    then packed little-endian float64 records."""
    records = np.ascontiguousarray(records, dtype="<f8")
    if records.ndim != 2:
        raise ValueError("records must be a 2-d array")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IQII", DATASET_VERSION, records.shape[0],
                            records.shape[1], W.SCHEMA_IDS[schema]))
        f.write(records.tobytes())


def load_dataset(path):
    """Returns (records, schema). Rejects bad magic, version, or size."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 24:
        raise ValueError(f"{path}: truncated dataset header")
    if data[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, not a VPDS dataset")
    version, count, dim, schema_id = struct.unpack_from("<IQII", data, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    names = {v: k for k, v in W.SCHEMA_IDS.items()}
    if schema_id not in names:
        raise ValueError(f"{path}: unknown schema id {schema_id}")
    payload = len(data) - 24
    if payload != 4 * count * dim:
        raise ValueError(f"{path}: payload is {payload} bytes, expected {4 * count * dim}")
    records = np.frombuffer(data, dtype="<f4", offset=24).reshape(count, dim)
    return records, names[schema_id]
