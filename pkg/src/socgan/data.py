"""Agents, scenarios, acoustic events, windowing, and the text file formats."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class AgentClass:
    name: str
    radius: float
    preferred_speed: float
    max_speed: float

    def __post_init__(self):
        if not 0.0 < self.radius <= 1.0:
            raise ValueError(f"{self.name}: radius {self.radius} outside (0, 1]")
        if not 0.0 < self.preferred_speed <= self.max_speed:
            raise ValueError(f"{self.name}: need 0 < preferred_speed <= max_speed")


PEDESTRIAN = AgentClass("Pedestrian", 0.3, 1.3, 1.8)
CYCLIST = AgentClass("Cyclist", 0.5, 3.5, 5.0)
SKATER = AgentClass("Skater", 0.4, 2.5, 4.0)
ROBOT = AgentClass("Robot", 0.35, 1.0, 1.5)

CLASSES = {c.name: c for c in (PEDESTRIAN, CYCLIST, SKATER, ROBOT)}


class EventCategory(enum.IntEnum):
    SIREN = 0
    MUSIC = 1
    CHATTER = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, token: str) -> "EventCategory":
        try:
            return cls[token.upper()]
        except KeyError:
            raise DataError(f"unknown event category {token!r}") from None


@dataclass(frozen=True)
class AgentState:
    agent_id: int
    cls: AgentClass
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Frame:
    t: int
    agents: tuple[AgentState, ...]


@dataclass(frozen=True)
class ObstacleMap:
    """Boolean occupancy grid; row r spans y in [oy + r*cs, oy + (r+1)*cs)."""

    origin: tuple[float, float]
    cell_size: float
    occupied: np.ndarray = field(compare=False)

    def __post_init__(self):
        grid = np.array(self.occupied, dtype=bool)
        if grid.ndim != 2 or min(grid.shape) < 1:
            raise ValueError(f"occupancy grid must be 2-d and non-empty, got {grid.shape}")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        grid.setflags(write=False)
        object.__setattr__(self, "occupied", grid)

    @property
    def rows(self) -> int:
        return self.occupied.shape[0]

    @property
    def cols(self) -> int:
        return self.occupied.shape[1]

    @classmethod
    def empty(cls, origin=(-20.0, -20.0), cell_size=0.5, rows=80, cols=80) -> "ObstacleMap":
        return cls(tuple(origin), cell_size, np.zeros((rows, cols), dtype=bool))

    def lookup(self, xy: np.ndarray) -> np.ndarray:
        """Occupancy at world points (..., 2); points off the map count as occupied."""
        xy = np.asarray(xy, dtype=float)
        col = np.floor((xy[..., 0] - self.origin[0]) / self.cell_size).astype(np.int64)
        row = np.floor((xy[..., 1] - self.origin[1]) / self.cell_size).astype(np.int64)
        inside = (row >= 0) & (row < self.rows) & (col >= 0) & (col < self.cols)
        out = np.ones(row.shape, dtype=bool)
        out[inside] = self.occupied[row[inside], col[inside]]
        return out

    def occupied_centers(self) -> np.ndarray:
        r, c = np.nonzero(self.occupied)
        return np.stack([self.origin[0] + (c + 0.5) * self.cell_size,
                         self.origin[1] + (r + 0.5) * self.cell_size], axis=1)

    def __eq__(self, other):
        if not isinstance(other, ObstacleMap):
            return NotImplemented
        return (self.origin == other.origin and self.cell_size == other.cell_size
                and np.array_equal(self.occupied, other.occupied))

    __hash__ = None


@dataclass(frozen=True)
class AcousticEvent:
    origin: tuple[float, float]
    intensity: float
    category: EventCategory
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError("t_start must not exceed t_end")
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")

    def active(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end


@dataclass(frozen=True)
class Scenario:
    dt: float
    frames: tuple[Frame, ...]
    map: ObstacleMap = field(default_factory=ObstacleMap.empty)
    events: tuple[AcousticEvent, ...] = ()

    def agent_ids(self) -> list[int]:
        return sorted({a.agent_id for f in self.frames for a in f.agents})

    def tracks(self) -> "Tracks":
        return Tracks.from_scenario(self)


def attenuated_intensity(i0: float, d: float | np.ndarray):
    return i0 / (1.0 + np.square(d))


@dataclass(frozen=True)
class Violation:
    frame: int | None
    agent_id: int | None
    message: str


def validate_scenario(s: Scenario) -> list[Violation]:
    out: list[Violation] = []
    if not s.dt > 0:
        out.append(Violation(None, None, f"dt must be positive, got {s.dt}"))
    seen_class: dict[int, str] = {}
    for k, frame in enumerate(s.frames):
        if k > 0 and frame.t != s.frames[k - 1].t + 1:
            out.append(Violation(frame.t, None,
                                 f"frame index {frame.t} does not follow {s.frames[k - 1].t}"))
        ids = set()
        for a in frame.agents:
            if a.agent_id in ids:
                out.append(Violation(frame.t, a.agent_id, "duplicate agent_id in frame"))
            ids.add(a.agent_id)
            prev = seen_class.setdefault(a.agent_id, a.cls.name)
            if prev != a.cls.name:
                out.append(Violation(frame.t, a.agent_id,
                                     f"class changed from {prev} to {a.cls.name}"))
            speed = math.hypot(*a.velocity)
            if speed > a.cls.max_speed + 1e-9:
                out.append(Violation(frame.t, a.agent_id,
                                     f"speed {speed:.6g} exceeds max {a.cls.max_speed}"))
    return out


def scenario_from_tracks(dt: float, t0: int, positions: np.ndarray, ids: Sequence[int],
                         classes: Sequence[AgentClass], map: ObstacleMap | None = None,
                         events: Iterable[AcousticEvent] = ()) -> Scenario:
    """Build a scenario from dense positions (F, A, 2); NaN rows mark absence.

    Velocities are backward differences (zero on an agent's first frame), the
    same rule :func:`load_trajectory_file` applies, so files round-trip exactly.
    """
    positions = np.asarray(positions, dtype=float)
    frames = []
    for f in range(positions.shape[0]):
        agents = []
        for a, (aid, cls) in enumerate(zip(ids, classes)):
            p = positions[f, a]
            if np.isnan(p[0]):
                continue
            if f > 0 and not np.isnan(positions[f - 1, a, 0]):
                v = (p - positions[f - 1, a]) / dt
            else:
                v = np.zeros(2)
            agents.append(AgentState(int(aid), cls, (float(p[0]), float(p[1])),
                                     (float(v[0]), float(v[1]))))
        frames.append(Frame(t0 + f, tuple(agents)))
    return Scenario(dt, tuple(frames), map if map is not None else ObstacleMap.empty(),
                    tuple(events))


@dataclass(frozen=True)
class Tracks:
    """Dense view of a scenario: positions (F, A, 2) with NaN where absent."""

    t0: int
    ids: tuple[int, ...]
    classes: tuple[AgentClass, ...]
    positions: np.ndarray
    velocities: np.ndarray

    @classmethod
    def from_scenario(cls, s: Scenario) -> "Tracks":
        ids = s.agent_ids()
        col = {aid: i for i, aid in enumerate(ids)}
        classes: list[AgentClass | None] = [None] * len(ids)
        pos = np.full((len(s.frames), len(ids), 2), np.nan)
        vel = np.full_like(pos, np.nan)
        for f, frame in enumerate(s.frames):
            for a in frame.agents:
                i = col[a.agent_id]
                pos[f, i] = a.position
                vel[f, i] = a.velocity
                classes[i] = classes[i] or a.cls
        t0 = s.frames[0].t if s.frames else 0
        return cls(t0, tuple(ids), tuple(classes), pos, vel)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.positions[..., 0])


@dataclass(frozen=True)
class Sample:
    """One training window for one agent.

    Neighbor arrays are aligned with ``neighbor_ids``; the per-channel feature
    fields stay ``None`` until :func:`socgan.features.attach_features` fills them.
    """

    scenario: int
    agent_id: int
    start: int
    observed: np.ndarray
    future: np.ndarray
    neighbor_ids: tuple[int, ...]
    neighbors: np.ndarray
    radius: float
    neighbor_radii: np.ndarray
    dynamic: np.ndarray | None = None
    spatial_crop: np.ndarray | None = None
    acoustic: np.ndarray | None = None
    neighbor_dynamic: np.ndarray | None = None
    neighbor_crops: np.ndarray | None = None
    neighbor_acoustic: np.ndarray | None = None

    def __post_init__(self):
        if len(self.observed) < 2 or len(self.future) < 1:
            raise ValueError("need at least 2 observed and 1 future position")

    @property
    def origin(self) -> np.ndarray:
        return self.observed[-1]

    @property
    def t_obs(self) -> int:
        return len(self.observed)

    @property
    def t_pred(self) -> int:
        return len(self.future)


def window_samples(s: Scenario, t_obs: int, t_pred: int, stride: int = 1,
                   scenario_index: int = 0) -> list[Sample]:
    if t_obs < 2 or t_pred < 1 or stride < 1:
        raise ValueError(f"need t_obs >= 2, t_pred >= 1, stride >= 1 "
                         f"(got {t_obs}, {t_pred}, {stride})")
    if not s.frames:
        return []
    tr = s.tracks()
    present = tr.present
    n_frames, n_agents = present.shape
    span = t_obs + t_pred
    samples = []
    for a in range(n_agents):
        for run_start, run_len in _runs(present[:, a]):
            for start in range(run_start, run_start + run_len - span + 1, stride):
                obs = slice(start, start + t_obs)
                others = [b for b in range(n_agents)
                          if b != a and present[obs, b].all()]
                samples.append(Sample(
                    scenario=scenario_index,
                    agent_id=tr.ids[a],
                    start=tr.t0 + start,
                    observed=tr.positions[obs, a].copy(),
                    future=tr.positions[start + t_obs:start + span, a].copy(),
                    neighbor_ids=tuple(tr.ids[b] for b in others),
                    neighbors=tr.positions[obs][:, others].transpose(1, 0, 2).copy(),
                    radius=tr.classes[a].radius,
                    neighbor_radii=np.array([tr.classes[b].radius for b in others]),
                ))
    return samples


def _runs(mask: np.ndarray):
    """(start, length) of each run of True values."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(b), int(e - b)) for b, e in zip(edges[::2], edges[1::2])]


def to_relative(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=float)
    if len(p) < 2:
        raise ValueError("to_relative needs at least 2 positions")
    return np.diff(p, axis=0)


def from_relative(origin, displacements) -> np.ndarray:
    d = np.asarray(displacements, dtype=float)
    out = np.empty((len(d) + 1, 2))
    out[0] = origin
    # sequential sums reproduce the original points exactly when differences were exact
    for i in range(len(d)):
        out[i + 1] = out[i] + d[i]
    return out


# ---------------------------------------------------------------- file formats


def write_trajectory_file(s: Scenario, path) -> None:
    lines = [f"# dt={s.dt!r}"]
    for frame in s.frames:
        for a in frame.agents:
            lines.append(f"{frame.t}\t{a.agent_id}\t{a.cls.name}\t"
                         f"{a.position[0]!r}\t{a.position[1]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory_file(path, map: ObstacleMap | None = None,
                         events: Iterable[AcousticEvent] = ()) -> Scenario:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# dt="):
        raise DataError(f"{path}: line 1: missing '# dt=<seconds>' header")
    try:
        dt = float(text[0][5:])
    except ValueError:
        raise DataError(f"{path}: line 1: bad dt value {text[0][5:]!r}") from None

    rows: dict[int, dict[int, tuple[AgentClass, float, float]]] = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataError(f"{path}: line {lineno}: expected 5 tab-separated columns, "
                            f"got {len(cols)}")
        try:
            t, aid = int(cols[0]), int(cols[1])
            x, y = float(cols[3]), float(cols[4])
        except ValueError:
            raise DataError(f"{path}: line {lineno}: malformed number") from None
        cls = CLASSES.get(cols[2])
        if cls is None:
            raise DataError(f"{path}: line {lineno}: unknown class {cols[2]!r}")
        rows.setdefault(t, {})[aid] = (cls, x, y)

    if not rows:
        return Scenario(dt, (), map if map is not None else ObstacleMap.empty(), tuple(events))
    t0, t1 = min(rows), max(rows)
    ids = sorted({aid for r in rows.values() for aid in r})
    col = {aid: i for i, aid in enumerate(ids)}
    classes: list[AgentClass | None] = [None] * len(ids)
    pos = np.full((t1 - t0 + 1, len(ids), 2), np.nan)
    for t, r in rows.items():
        for aid, (cls, x, y) in r.items():
            pos[t - t0, col[aid]] = (x, y)
            classes[col[aid]] = classes[col[aid]] or cls
    return scenario_from_tracks(dt, t0, pos, ids, classes, map, events)


def write_events_file(events: Iterable[AcousticEvent], path) -> None:
    lines = [f"{e.t_start} {e.t_end} {e.origin[0]!r} {e.origin[1]!r} {e.intensity!r} "
             f"{e.category.label}" for e in events]
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_events_file(path) -> tuple[AcousticEvent, ...]:
    events = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DataError(f"{path}: line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            ev = AcousticEvent((float(parts[2]), float(parts[3])), float(parts[4]),
                               EventCategory.parse(parts[5]), int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
        events.append(ev)
    return tuple(events)


def write_map_file(m: ObstacleMap, path) -> None:
    lines = [f"{m.origin[0]!r} {m.origin[1]!r} {m.cell_size!r} {m.rows} {m.cols}"]
    lines += [" ".join("1" if v else "0" for v in row) for row in m.occupied]
    Path(path).write_text("\n".join(lines) + "\n")


def load_map_file(path) -> ObstacleMap:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty map file")
    head = lines[0].split()
    if len(head) != 5:
        raise DataError(f"{path}: line 1: expected 'origin_x origin_y cell_size rows cols'")
    ox, oy, cs = map(float, head[:3])
    rows, cols = int(head[3]), int(head[4])
    if len(lines) - 1 != rows:
        raise DataError(f"{path}: expected {rows} grid rows, got {len(lines) - 1}")
    grid = np.zeros((rows, cols), dtype=bool)
    for r, line in enumerate(lines[1:]):
        vals = line.split()
        if len(vals) != cols or any(v not in ("0", "1") for v in vals):
            raise DataError(f"{path}: line {r + 2}: expected {cols} values of 0/1")
        grid[r] = [v == "1" for v in vals]
    return ObstacleMap((ox, oy), cs, grid)


def save_scenario(s: Scenario, directory, name: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_trajectory_file(s, d / f"{name}.tsv")
    write_events_file(s.events, d / f"{name}.events")
    write_map_file(s.map, d / f"{name}.map")


def load_scenario(tsv_path) -> Scenario:
    """Load a trajectory file plus sibling .events/.map files when present."""
    p = Path(tsv_path)
    ev = p.with_suffix(".events")
    mp = p.with_suffix(".map")
    events = load_events_file(ev) if ev.exists() else ()
    m = load_map_file(mp) if mp.exists() else None
    return load_trajectory_file(p, m, events)


def load_directory(directory) -> list[Scenario]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    return [load_scenario(p) for p in sorted(d.glob("*.tsv"))]
