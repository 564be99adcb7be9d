"""Footstep world: terrain features, a stochastic step executor, and the
observation builders used by the proposal model and the viability
filters.

The character is reduced to its footfall sequence. One step = teleport
the swing foot toward a planar target, perturbed by execution noise,
with the landing height snapped to the terrain. A capability model then
decides whether the step succeeded; all of its constants sit in one
``Capabilities`` block so difficulty is declared, not hidden.

Frames: world z is up; a heading ``h`` faces the unit vector
``(-sin h, cos h)`` (heading 0 walks along +y). The character frame is
(forward, left, up) anchored at the stance foot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GAMMA = 0.75            # per-step survival discount shared across the package
Q_MAX = 1.0 / (1.0 - GAMMA)
PLAN_STEPS = 4
PLAN_DIM = 3 * PLAN_STEPS

# one footstep target per row: forward, left, up in the character frame.
# Bounds cover the generator's reach (four strides of up to 1.15 m plus
# turning spread) with margin; they are divergence rails, not data limits.
PLAN_COORD_BOUND = np.tile([5.0, 3.5, 1.0], PLAN_STEPS)

HFIELD_ROWS = 16
HFIELD_COLS = 16
HFIELD_AHEAD = 4.5
HFIELD_BEHIND = 0.5
HFIELD_WIDTH = 6.0

CHAR_FEATURES = 7       # leg sign, previous displacement (3), swing foot (3)
COND_DIM = CHAR_FEATURES + HFIELD_ROWS * HFIELD_COLS + 3
WAYPOINT_REACH = 0.5    # advance / success radius, planar meters
WAYPOINT_CLAMP = 5.0    # conditioning presents at most this much lookahead

STATE_DIMS = {
    "platform": CHAR_FEATURES + HFIELD_ROWS * HFIELD_COLS,
    "hurdle": CHAR_FEATURES + 4,
    "obstacle": CHAR_FEATURES + 3 + 1 + 3,
}
SCHEMA_IDS = {"platform": 1, "hurdle": 2, "obstacle": 3}


@dataclass
class Capabilities:
    """Declared constants of the surrogate walker.

    Step-up risk ramps quadratically between ``up_lo`` and ``up_lo +
    ramp`` of height change, step-down risk likewise from ``down_lo``.
    Both are scaled by a stride-length factor: the risk of a height
    change shrinks for short, deliberate strides and saturates for
    lunges. Swing clearance over a hurdle is Gaussian; its mean grows
    from ``clear_base`` to ``clear_base + clear_bonus`` as the crossing
    point moves away from both footfalls (a centered crossing is the
    swing apex).
    """

    exec_noise: float = 0.03
    step_min: float = 0.15
    step_max: float = 1.30
    flat_eps: float = 0.02
    up_lo: float = 0.25
    down_lo: float = 0.35
    ramp: float = 0.40
    len_easy: float = 0.15
    len_hard: float = 0.85
    len_floor: float = 0.08
    clear_base: float = 0.30
    clear_bonus: float = 0.18
    clear_margin_lo: float = 0.10
    clear_margin_hi: float = 0.40
    clear_sigma: float = 0.05

    def length_factor(self, length: float) -> float:
        t = (length - self.len_easy) / (self.len_hard - self.len_easy)
        return float(np.clip(t, self.len_floor, 1.0))

    def p_fall(self, dz: float, length: float) -> float:
        """Probability that a step with height change dz fails."""
        if dz > self.flat_eps:
            base = np.clip((dz - self.up_lo) / self.ramp, 0.0, 1.0) ** 2
        elif dz < -self.flat_eps:
            base = np.clip((-dz - self.down_lo) / self.ramp, 0.0, 1.0) ** 2
        else:
            return 0.0
        return float(base) * self.length_factor(length)

    def clearance_mean(self, margin: float) -> float:
        t = (margin - self.clear_margin_lo) / (self.clear_margin_hi - self.clear_margin_lo)
        return self.clear_base + self.clear_bonus * float(np.clip(t, 0.0, 1.0))

    def p_trip(self, hurdle_height: float, margin: float) -> float:
        """Probability the swing clearance falls below the hurdle height."""
        mu = self.clearance_mean(margin)
        return _norm_cdf((hurdle_height - mu) / self.clear_sigma)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


@dataclass
class Platform:
    center: tuple[float, float]
    height: float
    size: float = 2.0


@dataclass
class Hurdle:
    center: tuple[float, float]
    angle: float            # direction of the bar in heading convention
    height: float
    half_width: float = 1.5

    def endpoints(self):
        d = np.array([-math.sin(self.angle), math.cos(self.angle)])
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.half_width * d, c + self.half_width * d


@dataclass
class Obstacle:
    center: tuple[float, float]
    radius: float


@dataclass
class Terrain:
    platforms: list[Platform] = field(default_factory=list)
    hurdles: list[Hurdle] = field(default_factory=list)
    obstacles: list[Obstacle] = field(default_factory=list)

    def height_at(self, xy):
        """Terrain height at planar points of shape (..., 2)."""
        xy = np.asarray(xy, dtype=np.float64)
        h = np.zeros(xy.shape[:-1])
        for p in self.platforms:
            half = p.size / 2.0
            inside = ((np.abs(xy[..., 0] - p.center[0]) <= half)
                      & (np.abs(xy[..., 1] - p.center[1]) <= half))
            h = np.where(inside & (p.height > h), p.height, h)
        return h


@dataclass
class WorldState:
    stance: np.ndarray            # (3,) world position of the planted foot
    swing: np.ndarray             # (3,) world position of the foot that moves next
    heading: float
    leg: int                      # +1 when the left leg swings next, else -1
    prev_disp: np.ndarray         # (3,) last achieved step in the character frame
    waypoints: list
    wp_index: int = 0
    steps_taken: int = 0
    alive: bool = True
    failure: str | None = None

    def waypoint(self):
        i = min(self.wp_index, len(self.waypoints) - 1)
        return np.asarray(self.waypoints[i], dtype=np.float64)

    def done_waypoints(self) -> bool:
        return self.wp_index >= len(self.waypoints)


def heading_vec(h: float) -> np.ndarray:
    return np.array([-math.sin(h), math.cos(h)])


def left_vec(h: float) -> np.ndarray:
    return np.array([-math.cos(h), -math.sin(h)])


def to_char(state: WorldState, pts):
    """World points (..., 2 or 3) -> character frame (forward, left[, up])."""
    pts = np.asarray(pts, dtype=np.float64)
    rel = pts[..., :2] - state.stance[:2]
    f = heading_vec(state.heading)
    l = left_vec(state.heading)
    out = np.stack([rel @ f, rel @ l], axis=-1)
    if pts.shape[-1] == 3:
        out = np.concatenate([out, (pts[..., 2:] - state.stance[2])], axis=-1)
    return out


def from_char(state: WorldState, pts):
    """Character-frame points (..., 2 or 3) -> world."""
    pts = np.asarray(pts, dtype=np.float64)
    f = heading_vec(state.heading)
    l = left_vec(state.heading)
    xy = (state.stance[:2] + pts[..., 0:1] * f + pts[..., 1:2] * l)
    if pts.shape[-1] == 3:
        return np.concatenate([xy, pts[..., 2:] + state.stance[2]], axis=-1)
    return xy


def char_features(state: WorldState) -> np.ndarray:
    return np.concatenate([[float(state.leg)], state.prev_disp,
                           to_char(state, state.swing)])


def make_start_state(pos=(0.0, 0.0), heading: float = 0.0, leg: int = 1,
                     waypoints=(), terrain: Terrain | None = None) -> WorldState:
    pos = np.asarray(pos, dtype=np.float64)
    z = float(terrain.height_at(pos)) if terrain is not None else 0.0
    stance = np.array([pos[0], pos[1], z])
    back = -0.35 * heading_vec(heading) + 0.18 * leg * left_vec(heading)
    swing = np.array([pos[0] + back[0], pos[1] + back[1], z])
    wps = [np.asarray(w, dtype=np.float64) for w in waypoints]
    return WorldState(stance=stance, swing=swing, heading=heading, leg=leg,
                      prev_disp=np.array([0.35, 0.0, 0.0]), waypoints=wps)


def _segment_crossing(a, b, h: Hurdle):
    """Fraction along a->b where the hurdle bar is crossed, else None."""
    p, q = h.endpoints()
    r = b - a
    s = q - p
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) < 1e-12:
        return None
    ap = p - a
    t = (ap[0] * s[1] - ap[1] * s[0]) / denom
    u = (ap[0] * r[1] - ap[1] * r[0]) / denom
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return float(t)
    return None


def detect_failure(stance, swing_from, achieved, terrain: Terrain,
                   caps: Capabilities, rng: np.random.Generator) -> str | None:
    """Failure tag for one executed step, or None.

    Checks, in order: stride length bounds, stepping inside an obstacle,
    the height-change fall draw, and one clearance draw per hurdle whose
    bar the swing segment crosses.
    """
    stride = float(np.hypot(achieved[0] - stance[0], achieved[1] - stance[1]))
    if stride < caps.step_min or stride > caps.step_max:
        return "stride"
    for o in terrain.obstacles:
        d = np.hypot(achieved[0] - o.center[0], achieved[1] - o.center[1])
        if d < o.radius:
            return "obstacle"
    dz = achieved[2] - stance[2]
    p = caps.p_fall(dz, stride)
    if p > 0.0 and rng.random() < p:
        return "fall"
    a = np.asarray(swing_from[:2], dtype=np.float64)
    b = np.asarray(achieved[:2], dtype=np.float64)
    seg_len = float(np.linalg.norm(b - a))
    for h in terrain.hurdles:
        t = _segment_crossing(a, b, h)
        if t is None:
            continue
        margin = min(t, 1.0 - t) * seg_len
        clearance = caps.clearance_mean(margin) + caps.clear_sigma * rng.standard_normal()
        if clearance < h.height:
            return "trip"
    return None


def execute_step(state: WorldState, target_char, terrain: Terrain,
                 caps: Capabilities, rng: np.random.Generator):
    """Execute one footstep toward a character-frame target.

    Returns (next_state, reward, info). Reward is 1 for a surviving step
    and 0 for a failed one; a failed step leaves the state dead with the
    failure tag set.
    """
    target_char = np.asarray(target_char, dtype=np.float64)
    tw = from_char(state, target_char[:2])
    axy = tw + caps.exec_noise * rng.standard_normal(2)
    az = float(terrain.height_at(axy))
    achieved = np.array([axy[0], axy[1], az])
    tag = detect_failure(state.stance, state.swing, achieved, terrain, caps, rng)
    if tag is not None:
        nxt = replace(state, swing=state.stance.copy(), stance=achieved,
                      steps_taken=state.steps_taken + 1, alive=False, failure=tag,
                      waypoints=state.waypoints)
        return nxt, 0.0, {"achieved": achieved, "failure": tag}
    step = achieved - state.stance
    length = float(np.hypot(step[0], step[1]))
    new_heading = math.atan2(-step[0], step[1]) if length > 1e-9 else state.heading
    nxt = WorldState(
        stance=achieved,
        swing=state.stance.copy(),
        heading=new_heading,
        leg=-state.leg,
        prev_disp=_disp_in_frame(step, new_heading),
        waypoints=state.waypoints,
        wp_index=state.wp_index,
        steps_taken=state.steps_taken + 1,
    )
    return nxt, 1.0, {"achieved": achieved, "failure": None}


def _disp_in_frame(step_world, heading: float) -> np.ndarray:
    f = heading_vec(heading)
    l = left_vec(heading)
    return np.array([step_world[:2] @ f, step_world[:2] @ l, step_world[2]])


def advance_waypoints(state: WorldState) -> WorldState:
    """Pop waypoints that are reached, or passed if not the final one."""
    while state.wp_index < len(state.waypoints):
        wp = np.asarray(state.waypoints[state.wp_index], dtype=np.float64)
        dist = float(np.hypot(wp[0] - state.stance[0], wp[1] - state.stance[1]))
        if dist <= WAYPOINT_REACH:
            state = replace(state, wp_index=state.wp_index + 1)
            continue
        last = state.wp_index == len(state.waypoints) - 1
        if not last and to_char(state, wp[:2])[0] < -0.25:
            state = replace(state, wp_index=state.wp_index + 1)
            continue
        break
    return state


def episode_status(state: WorldState, steps_left: int) -> str:
    if not state.alive:
        return "failure"
    if state.done_waypoints():
        return "success"
    if steps_left <= 0:
        return "failure"
    return "running"


def sample_heightfield(state: WorldState, terrain: Terrain) -> np.ndarray:
    """(16, 16) height samples relative to the stance foot, in [-1, 1].

    The grid covers ``HFIELD_BEHIND`` behind to ``HFIELD_AHEAD`` ahead of
    the character along the direction toward the active waypoint (falling
    back to the heading when standing on the waypoint) and
    ``HFIELD_WIDTH`` across, centered. Row index grows forward, column
    index grows leftward.
    """
    wp = state.waypoint()
    d = wp[:2] - state.stance[:2]
    n = np.linalg.norm(d)
    d = d / n if n > 1e-9 else heading_vec(state.heading)
    left = np.array([-d[1], d[0]])
    span = HFIELD_AHEAD + HFIELD_BEHIND
    fwd = -HFIELD_BEHIND + (np.arange(HFIELD_ROWS) + 0.5) * (span / HFIELD_ROWS)
    lat = -HFIELD_WIDTH / 2 + (np.arange(HFIELD_COLS) + 0.5) * (HFIELD_WIDTH / HFIELD_COLS)
    pts = (state.stance[:2]
           + fwd[:, None, None] * d
           + lat[None, :, None] * left)
    hs = terrain.height_at(pts) - state.stance[2]
    return np.clip(hs, -1.0, 1.0)


def build_conditioning(state: WorldState, terrain: Terrain) -> np.ndarray:
    """Proposal-model conditioning: character features, heightfield,
    waypoint (clamped to WAYPOINT_CLAMP meters of planar lookahead)."""
    wp = state.waypoint()
    rel = to_char(state, np.array([wp[0], wp[1], wp[2] if len(wp) == 3 else 0.0]))
    planar = np.hypot(rel[0], rel[1])
    if planar > WAYPOINT_CLAMP:
        rel = rel * (WAYPOINT_CLAMP / planar)
    hf = sample_heightfield(state, terrain)
    return np.concatenate([char_features(state), hf.ravel(), rel])


def _nearest(items, stance):
    return min(items, key=lambda it: np.hypot(it.center[0] - stance[0],
                                              it.center[1] - stance[1]))


def vf_state(state: WorldState, terrain: Terrain, task: str) -> np.ndarray:
    """Task-specific filter input; layouts are frozen in STATE_DIMS."""
    feats = char_features(state)
    if task == "platform":
        return np.concatenate([feats, sample_heightfield(state, terrain).ravel()])
    if task == "hurdle":
        if terrain.hurdles:
            h = _nearest(terrain.hurdles, state.stance)
            rel = to_char(state, np.asarray(h.center))
            a = h.angle - state.heading
            extra = np.array([rel[0], rel[1], math.sin(a), math.cos(a)])
        else:
            extra = np.array([WAYPOINT_CLAMP, 0.0, 0.0, 1.0])
        return np.concatenate([feats, extra])
    if task == "obstacle":
        if terrain.obstacles:
            o = _nearest(terrain.obstacles, state.stance)
            rel = to_char(state, np.asarray(o.center))
            obs = np.array([rel[0], rel[1], terrain.height_at(o.center) - state.stance[2],
                            o.radius])
        else:
            obs = np.array([WAYPOINT_CLAMP, 0.0, 0.0, 0.0])
        wp = state.waypoint()
        wrel = to_char(state, np.array([wp[0], wp[1], wp[2] if len(wp) == 3 else 0.0]))
        planar = np.hypot(wrel[0], wrel[1])
        if planar > WAYPOINT_CLAMP:
            wrel = wrel * (WAYPOINT_CLAMP / planar)
        return np.concatenate([feats, obs, wrel])
    raise ValueError(f"unknown task {task!r}")
