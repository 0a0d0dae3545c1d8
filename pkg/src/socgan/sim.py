"""Sampled reciprocal-velocity-obstacle crowd simulator and dataset archetypes."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import (CLASSES, CYCLIST, PEDESTRIAN, ROBOT, SKATER, AcousticEvent,
                   AgentClass, AgentState, EventCategory, ObstacleMap, Scenario,
                   attenuated_intensity, scenario_from_tracks)

GOAL_TOLERANCE = 0.2
TIE_EPS = 1e-9


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.4
    horizon: int = 60
    neighbor_radius: float = 5.0
    candidate_rings: int = 4
    candidates_per_ring: int = 16
    w: float = 2.0
    acoustic_gain: float = 1.0
    acoustic_threshold: float = 0.1
    substeps: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("dt", "horizon", "neighbor_radius", "candidate_rings",
                     "candidates_per_ring", "w", "acoustic_gain", "acoustic_threshold",
                     "substeps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SimConfig.{name} must be positive")
        if self.candidates_per_ring % 2:
            raise ValueError("candidates_per_ring must be even (mirrored pairs)")


@dataclass(frozen=True)
class GoalSpec:
    start: tuple[float, float]
    goal: tuple[float, float]
    cls: AgentClass = PEDESTRIAN

    def __post_init__(self):
        if tuple(self.start) == tuple(self.goal):
            raise ValueError("start and goal must differ")


def time_to_collision(p_rel, v_rel, r_sum: float) -> float:
    """Smallest t > 0 with |p_rel + v_rel t| = r_sum; 0 if overlapping, inf if never."""
    px, py = p_rel
    vx, vy = v_rel
    c = px * px + py * py - r_sum * r_sum
    if c < 0:
        return 0.0
    a = vx * vx + vy * vy
    b = px * vx + py * vy
    if a == 0.0 or b >= 0.0:
        return math.inf
    disc = b * b - a * c
    if disc < 0:
        return math.inf
    return (-b - math.sqrt(disc)) / a


def _time_to_collision_many(p_rel: np.ndarray, v_rel: np.ndarray, r_sum: np.ndarray) -> np.ndarray:
    """Vectorized time_to_collision over candidates (C, N, 2) x neighbors.

    Overlapping pairs give 0 when approaching and inf when separating, so an
    agent already in contact can always move apart.
    """
    c = np.einsum("...i,...i", p_rel, p_rel) - r_sum * r_sum
    a = np.einsum("...i,...i", v_rel, v_rel)
    b = np.einsum("...i,...i", p_rel, v_rel)
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
    t = np.where((a > 0) & (b < 0) & (disc >= 0), t, np.inf)
    return np.where(c < 0, np.where(b < 0, 0.0, np.inf), t)


def preferred_velocity(agent: AgentState, goal, events: Sequence[AcousticEvent] = (),
                       gain: float = 1.0, threshold: float = 0.1,
                       dt: float | None = None) -> np.ndarray:
    """Goal seeking plus repulsion from loud active sirens, clipped to max speed.

    ``events`` must already be filtered to the active ones.  With ``dt`` given
    the goal term slows down so the agent does not overshoot its goal.
    """
    pos = np.asarray(agent.position, dtype=float)
    to_goal = np.asarray(goal, dtype=float) - pos
    dist = math.hypot(*to_goal)
    v = np.zeros(2)
    if dist > GOAL_TOLERANCE:
        speed = agent.cls.preferred_speed
        if dt is not None:
            speed = min(speed, dist / dt)
        v = speed * to_goal / dist
    for ev in events:
        if ev.category != EventCategory.SIREN:
            continue
        away = pos - np.asarray(ev.origin, dtype=float)
        d = math.hypot(*away)
        a = attenuated_intensity(ev.intensity, d)
        if a > threshold and d > 0:
            v = v + gain * a * away / d
    speed = math.hypot(*v)
    if speed > agent.cls.max_speed:
        v = v * (agent.cls.max_speed / speed)
    return v


def candidate_velocities(v_pref, max_speed: float, rings: int, per_ring: int,
                         heading=None) -> np.ndarray:
    """v_pref, zero, then rings of mirrored pairs about the v_pref axis.

    Ring k has radius (k / rings) * max_speed.  Pair j sits at angles
    +/-(2j + 1) * pi / per_ring from the reference direction, positive first.
    The set is built by rotating one unit vector, so negating v_pref negates
    every candidate exactly.
    """
    v_pref = np.asarray(v_pref, dtype=float)
    n = math.hypot(*v_pref)
    if n > 0:
        u = v_pref / n
    else:
        h = np.zeros(2) if heading is None else np.asarray(heading, dtype=float)
        hn = math.hypot(*h)
        u = h / hn if hn > 1e-12 else np.array([1.0, 0.0])
    perp = np.array([-u[1], u[0]])
    angles = (2 * np.arange(per_ring // 2) + 1) * math.pi / per_ring
    cos, sin = np.cos(angles), np.sin(angles)
    dirs = []
    for c, s in zip(cos, sin):
        dirs.append(c * u + s * perp)
        dirs.append(c * u - s * perp)
    dirs = np.array(dirs)
    radii = np.arange(1, rings + 1) / rings * max_speed
    ring_pts = (radii[:, None, None] * dirs[None]).reshape(-1, 2)
    return np.concatenate([v_pref[None], np.zeros((1, 2)), ring_pts])


def rvo_penalties(position, velocity, candidates: np.ndarray, others_pos: np.ndarray,
                  others_vel: np.ndarray, r_sum: np.ndarray, reciprocal: np.ndarray,
                  v_pref, w: float, mask: np.ndarray | None = None) -> np.ndarray:
    """w / (earliest collision time) + |v' - v_pref| for every candidate.

    Shapes: position/velocity/v_pref (..., 2); candidates (..., C, 2);
    others_* (..., N, 2); r_sum, reciprocal, mask (..., N).  Neighbors with
    ``mask`` False are ignored.  Reciprocal neighbors see the effective
    velocity 2 v' - v_current; static ones see v' itself.
    """
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    v_pref = np.asarray(v_pref, dtype=float)
    p_rel = position[..., None, :] - others_pos                                # (..., N, 2)
    cand = candidates[..., :, None, :]                                         # (..., C, 1, 2)
    v_eff = np.where(reciprocal[..., None, :, None],
                     2.0 * cand - velocity[..., None, None, :], cand)          # (..., C, N, 2)
    tc = _time_to_collision_many(p_rel[..., None, :, :],
                                 v_eff - others_vel[..., None, :, :],
                                 r_sum[..., None, :])
    if mask is not None:
        tc = np.where(mask[..., None, :], tc, np.inf)
    t_min = tc.min(axis=-1) if tc.shape[-1] else np.full(candidates.shape[:-1], np.inf)
    with np.errstate(divide="ignore"):
        urgency = w / t_min
    return urgency + np.linalg.norm(candidates - v_pref[..., None, :], axis=-1)


def select_candidate(candidates: np.ndarray, penalties: np.ndarray, v_pref) -> int:
    """Index of the winning candidate under the tie-break rules."""
    best = penalties.min()
    if math.isinf(best):
        idx = np.arange(len(candidates))
    else:
        idx = np.flatnonzero(penalties <= best + TIE_EPS)
    if len(idx) == 1:
        return int(idx[0])
    v_pref = np.asarray(v_pref, dtype=float)
    dist = np.linalg.norm(candidates[idx] - v_pref, axis=1)
    idx = idx[dist <= dist.min() + TIE_EPS]
    cross = v_pref[0] * candidates[idx, 1] - v_pref[1] * candidates[idx, 0]
    right = idx[cross < -1e-12]
    return int(right[0] if len(right) else idx[0])


def rvo_choose_velocity(agent: AgentState, v_pref, neighbors: Sequence[AgentState],
                        cfg: SimConfig, obstacles: np.ndarray | None = None,
                        obstacle_radius: float = 0.0) -> np.ndarray:
    cands = candidate_velocities(v_pref, agent.cls.max_speed, cfg.candidate_rings,
                                 cfg.candidates_per_ring, heading=agent.velocity)
    pos = [n.position for n in neighbors]
    vel = [n.velocity for n in neighbors]
    rs = [agent.cls.radius + n.cls.radius for n in neighbors]
    recip = [True] * len(neighbors)
    if obstacles is not None and len(obstacles):
        pos += list(map(tuple, obstacles))
        vel += [(0.0, 0.0)] * len(obstacles)
        rs += [agent.cls.radius + obstacle_radius] * len(obstacles)
        recip += [False] * len(obstacles)
    if not pos:
        return np.asarray(v_pref, dtype=float).copy()
    pen = rvo_penalties(agent.position, agent.velocity, cands,
                        np.array(pos, dtype=float).reshape(-1, 2),
                        np.array(vel, dtype=float).reshape(-1, 2),
                        np.array(rs), np.array(recip), v_pref, cfg.w)
    return cands[select_candidate(cands, pen, v_pref)].copy()


class OverlapError(ValueError):
    pass


def _choose_all(pos, vel, v_pref, classes, cfg: SimConfig, obstacle_pts, obstacle_r):
    """rvo_choose_velocity for every agent at once (same arithmetic, batched)."""
    n = len(pos)
    radius = np.array([c.radius for c in classes])
    cands = np.stack([candidate_velocities(v_pref[i], classes[i].max_speed,
                                           cfg.candidate_rings, cfg.candidates_per_ring,
                                           heading=vel[i]) for i in range(n)])
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    mask = (d <= cfg.neighbor_radius) & ~np.eye(n, dtype=bool)
    others_pos = np.broadcast_to(pos, (n, n, 2))
    others_vel = np.broadcast_to(vel, (n, n, 2))
    r_sum = radius[:, None] + radius[None, :]
    recip = np.ones((n, n), dtype=bool)
    if len(obstacle_pts):
        od = np.linalg.norm(pos[:, None] - obstacle_pts[None], axis=-1)
        near = od <= cfg.neighbor_radius
        k = int(near.sum(axis=1).max())
        if k:
            # per-agent in-range obstacles, padded with masked slots
            order = np.argsort(~near, axis=1, kind="stable")[:, :k]
            ob_mask = np.take_along_axis(near, order, axis=1)
            ob_pos = obstacle_pts[order]
            mask = np.concatenate([mask, ob_mask], axis=1)
            others_pos = np.concatenate([others_pos, ob_pos], axis=1)
            others_vel = np.concatenate([others_vel, np.zeros((n, k, 2))], axis=1)
            r_sum = np.concatenate(
                [r_sum, np.broadcast_to(radius[:, None] + obstacle_r, (n, k))], axis=1)
            recip = np.concatenate([recip, np.zeros((n, k), dtype=bool)], axis=1)
    pen = rvo_penalties(pos, vel, cands, others_pos, others_vel, r_sum, recip, v_pref,
                        cfg.w, mask)
    out = np.empty_like(vel)
    for i in range(n):
        if not mask[i].any():
            out[i] = v_pref[i]
        else:
            out[i] = cands[i, select_candidate(cands[i], pen[i], v_pref[i])]
    return out


def exposed_obstacle_centers(m: ObstacleMap) -> np.ndarray:
    """Centers of occupied cells with at least one free cell among their 8 neighbors.

    A cell surrounded by occupied cells lies inside their discs, so dropping
    it never changes the earliest collision time.
    """
    occ = m.occupied
    padded = np.pad(occ, 1, constant_values=True)
    free_nbr = np.zeros_like(occ)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                free_nbr |= ~padded[1 + dr:1 + dr + occ.shape[0], 1 + dc:1 + dc + occ.shape[1]]
    r, c = np.nonzero(occ & free_nbr)
    return np.stack([m.origin[0] + (c + 0.5) * m.cell_size,
                     m.origin[1] + (r + 0.5) * m.cell_size], axis=1)


def simulate(goals: Sequence[GoalSpec], map: ObstacleMap | None = None,
             events: Sequence[AcousticEvent] = (), cfg: SimConfig = SimConfig()) -> Scenario:
    """Run all agents from their starts until everyone arrives or the horizon.

    Each emitted frame covers ``cfg.substeps`` synchronous decision steps of
    length dt / substeps; every agent chooses from the same pre-step state.
    """
    map = map if map is not None else ObstacleMap.empty()
    n = len(goals)
    classes = [g.cls for g in goals]
    radius = np.array([c.radius for c in classes])
    pos = np.array([g.start for g in goals], dtype=float).reshape(n, 2)
    goal = np.array([g.goal for g in goals], dtype=float).reshape(n, 2)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pos[i] - pos[j]) < radius[i] + radius[j]:
                raise OverlapError(f"starts of agents {i} and {j} overlap")

    obstacle_pts = exposed_obstacle_centers(map)
    obstacle_r = map.cell_size / math.sqrt(2.0)
    h = cfg.dt / cfg.substeps
    vel = np.zeros((n, 2))
    history = [pos.copy()]
    for t in range(cfg.horizon):
        if np.all(np.linalg.norm(pos - goal, axis=1) <= GOAL_TOLERANCE):
            break
        active = [e for e in events if e.active(t)]
        for _ in range(cfg.substeps):
            v_pref = np.array([
                preferred_velocity(AgentState(i, classes[i], tuple(pos[i]), tuple(vel[i])),
                                   goal[i], active, cfg.acoustic_gain,
                                   cfg.acoustic_threshold, dt=h)
                for i in range(n)]).reshape(n, 2)
            vel = _choose_all(pos, vel, v_pref, classes, cfg, obstacle_pts, obstacle_r)
            pos = pos + h * vel
        history.append(pos.copy())
    return scenario_from_tracks(cfg.dt, 0, np.array(history), list(range(n)), classes,
                                map, events)


# ---------------------------------------------------------------- archetypes

ARCHETYPES = ("crossing", "circle_swap", "corridor", "siren_pair")


@dataclass(frozen=True)
class DatasetSpec:
    """How many scenarios of each archetype to build and how big they are."""

    crossing: int = 0
    circle_swap: int = 0
    corridor: int = 0
    siren_pair: int = 0
    min_agents: int = 2
    max_agents: int = 8
    heterogeneous: bool = True

    def __post_init__(self):
        if self.crossing + self.circle_swap + self.corridor + self.siren_pair < 1:
            raise ValueError("dataset spec needs at least one scenario")
        if not 1 <= self.min_agents <= self.max_agents:
            raise ValueError("need 1 <= min_agents <= max_agents")


def _draw_class(rng: np.random.Generator, heterogeneous: bool) -> AgentClass:
    if not heterogeneous:
        return PEDESTRIAN
    return [PEDESTRIAN, SKATER, CYCLIST, ROBOT][rng.choice(4, p=[0.7, 0.12, 0.08, 0.1])]


def _spread_ok(points: list, radii: list, p, r) -> bool:
    return all(math.dist(p, q) >= rq + r + 0.3 for q, rq in zip(points, radii))


def circle_swap(n_agents: int, rng: np.random.Generator, heterogeneous: bool = True,
                radius: float | None = None) -> list[GoalSpec]:
    radius = radius if radius is not None else 4.0 + 0.5 * n_agents
    phase = rng.uniform(0, 2 * math.pi)
    specs = []
    for k in range(n_agents):
        ang = phase + 2 * math.pi * k / n_agents
        start = (radius * math.cos(ang), radius * math.sin(ang))
        specs.append(GoalSpec(start, (-start[0], -start[1]), _draw_class(rng, heterogeneous)))
    return specs


def crossing(n_agents: int, rng: np.random.Generator, heterogeneous: bool = True) -> list[GoalSpec]:
    """Two streams crossing at right angles near the origin."""
    specs: list[GoalSpec] = []
    pts: list = []
    rad: list = []
    rot = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(rot), math.sin(rot)
    while len(specs) < n_agents:
        cls = _draw_class(rng, heterogeneous)
        horizontal = len(specs) % 2 == 0
        along = -rng.uniform(7.0, 10.0)
        lateral = rng.uniform(-2.0, 2.0)
        sx, sy = (along, lateral) if horizontal else (lateral, along)
        gx, gy = (-along, lateral) if horizontal else (lateral, -along)
        start = (c * sx - s * sy, s * sx + c * sy)
        goal = (c * gx - s * gy, s * gx + c * gy)
        if _spread_ok(pts, rad, start, cls.radius):
            specs.append(GoalSpec(start, goal, cls))
            pts.append(start)
            rad.append(cls.radius)
    return specs


def corridor_map(length: float = 24.0, width: float = 4.0, cell: float = 0.5,
                 pillar: bool = True) -> ObstacleMap:
    """Walls along y = +/-width/2 with an optional pillar in the middle."""
    margin = 2.0
    cols = int(round((length + 2 * margin) / cell))
    rows = int(round((width + 2 * margin) / cell))
    origin = (-length / 2 - margin, -width / 2 - margin)
    grid = np.zeros((rows, cols), dtype=bool)
    ys = origin[1] + (np.arange(rows) + 0.5) * cell
    grid[np.abs(ys) > width / 2] = True
    xs = origin[0] + (np.arange(cols) + 0.5) * cell
    if pillar:
        grid[np.ix_(np.abs(ys) < 0.5, np.abs(xs) < 0.5)] = True
    return ObstacleMap(origin, cell, grid)


def corridor(n_agents: int, rng: np.random.Generator, heterogeneous: bool = True):
    """Bidirectional corridor traffic; returns (goal specs, map)."""
    m = corridor_map()
    specs: list[GoalSpec] = []
    pts: list = []
    rad: list = []
    lanes = (-1.1, -0.5, 0.5, 1.1)
    tries = 0
    while len(specs) < n_agents:
        tries += 1
        cls = PEDESTRIAN if tries > 200 else _draw_class(rng, heterogeneous)
        if cls.radius > 0.45:
            cls = SKATER
        direction = 1 if len(specs) % 2 == 0 else -1
        x0 = -direction * rng.uniform(7.0, 10.0)
        y0 = float(rng.choice(lanes))
        start = (x0, y0)
        if _spread_ok(pts, rad, start, cls.radius):
            specs.append(GoalSpec(start, (-x0, float(rng.choice(lanes))), cls))
            pts.append(start)
            rad.append(cls.radius)
    return specs, m


def siren_scene(n_agents: int, rng: np.random.Generator, horizon: int,
                heterogeneous: bool = True):
    """Agents crossing a plaza while a siren beside their path sounds mid-run.

    Returns the goal specs and the siren event; the matched pair is this
    geometry simulated with and without the event.
    """
    specs = crossing(n_agents, rng, heterogeneous)
    ang = rng.uniform(0, 2 * math.pi)
    dist = rng.uniform(0.5, 2.0)
    origin = (dist * math.cos(ang), dist * math.sin(ang))
    t_start = int(rng.integers(4, 10))
    t_end = min(horizon, t_start + int(rng.integers(12, 24)))
    event = AcousticEvent(origin, float(rng.uniform(4.0, 8.0)), EventCategory.SIREN,
                          t_start, t_end)
    return specs, event


def _background_events(rng: np.random.Generator, horizon: int) -> tuple[AcousticEvent, ...]:
    """Inert music/chatter sources so the category one-hot has something to contrast."""
    out = []
    for _ in range(int(rng.integers(0, 2))):
        cat = EventCategory.MUSIC if rng.random() < 0.5 else EventCategory.CHATTER
        origin = tuple(float(v) for v in rng.uniform(-6, 6, size=2))
        t0 = int(rng.integers(0, horizon // 2))
        out.append(AcousticEvent(origin, float(rng.uniform(1.0, 4.0)), cat,
                                 t0, t0 + int(rng.integers(5, horizon))))
    return tuple(out)


def make_dataset(spec: DatasetSpec, seed: int, cfg: SimConfig = SimConfig(),
                 names: bool = False):
    """Generate the archetype mix deterministically from ``seed``.

    Siren pairs contribute two scenarios each: with the siren, then without.
    With ``names=True`` returns (name, scenario) pairs.
    """
    rng = np.random.default_rng(seed)
    out = []

    def n_agents():
        return int(rng.integers(spec.min_agents, spec.max_agents + 1))

    for i in range(spec.crossing):
        g = crossing(n_agents(), rng, spec.heterogeneous)
        out.append((f"crossing_{i:04d}",
                    simulate(g, None, _background_events(rng, cfg.horizon), cfg)))
    for i in range(spec.circle_swap):
        g = circle_swap(n_agents(), rng, spec.heterogeneous)
        out.append((f"circle_swap_{i:04d}",
                    simulate(g, None, _background_events(rng, cfg.horizon), cfg)))
    for i in range(spec.corridor):
        g, m = corridor(n_agents(), rng, spec.heterogeneous)
        out.append((f"corridor_{i:04d}", simulate(g, m, (), cfg)))
    for i in range(spec.siren_pair):
        g, ev = siren_scene(n_agents(), rng, cfg.horizon, spec.heterogeneous)
        out.append((f"siren_{i:04d}_on", simulate(g, None, (ev,), cfg)))
        out.append((f"siren_{i:04d}_off", simulate(g, None, (), cfg)))
    return out if names else [s for _, s in out]


def constant_velocity_scenario(rng: np.random.Generator, n_agents: int = 3,
                               n_frames: int = 24, dt: float = 0.4) -> Scenario:
    """Non-interacting agents on straight lines at constant speed."""
    ids = list(range(n_agents))
    classes = [PEDESTRIAN] * n_agents
    pos = np.empty((n_frames, n_agents, 2))
    t = np.arange(n_frames)[:, None]
    for a in ids:
        start = rng.uniform(-8, 8, size=2)
        heading = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(0.6, 1.6)
        v = speed * np.array([math.cos(heading), math.sin(heading)])
        pos[:, a] = start + (t * dt) * v
    return scenario_from_tracks(dt, 0, pos, ids, classes)


def make_constant_velocity_dataset(n: int, seed: int, n_agents: int = 3,
                                   n_frames: int = 24, dt: float = 0.4) -> list[Scenario]:
    rng = np.random.default_rng(seed)
    return [constant_velocity_scenario(rng, n_agents, n_frames, dt) for _ in range(n)]


def class_by_name(name: str) -> AgentClass:
    return CLASSES[name]


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, rng_seed=seed)


@dataclass(frozen=True)
class OverlapStats:
    agent_steps: int
    overlapping: int
    worst_ratio: float      # min over pair-frames of d / (r_i + r_j)

    @property
    def fraction(self) -> float:
        return self.overlapping / self.agent_steps if self.agent_steps else 0.0


def overlap_stats(scenarios: Sequence[Scenario]) -> OverlapStats:
    """Count agent-timesteps that overlap some other agent, and the deepest approach."""
    steps = hits = 0
    worst = math.inf
    for s in scenarios:
        tr = s.tracks()
        radius = np.array([c.radius for c in tr.classes])
        for f in range(len(s.frames)):
            idx = np.flatnonzero(tr.present[f])
            steps += len(idx)
            if len(idx) < 2:
                continue
            p = tr.positions[f, idx]
            d = np.linalg.norm(p[:, None] - p[None], axis=-1)
            rs = radius[idx][:, None] + radius[idx][None]
            np.fill_diagonal(d, np.inf)
            ratio = d / rs
            hits += int(np.sum(np.any(ratio < 1.0, axis=1)))
            worst = min(worst, float(ratio.min()))
    return OverlapStats(steps, hits, worst)
