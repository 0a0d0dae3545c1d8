"""Per-agent input channels: dynamic, spatial occupancy crop, and acoustic."""
from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .data import (AcousticEvent, AgentState, ObstacleMap, Sample, Scenario,
                   attenuated_intensity)

SLOT_WIDTH = 7          # intensity, sin, cos, 3-way category one-hot, filled flag
STATIONARY_SPEED = 1e-3


def extract_dynamic(positions: np.ndarray, dt: float) -> np.ndarray:
    """(T, 3) rows of [dx, dy, speed]; row 0 is zero padding.

    Accepts (T, 2) or a stack (..., T, 2).
    """
    p = np.asarray(positions, dtype=float)
    disp = np.zeros_like(p)
    disp[..., 1:, :] = p[..., 1:, :] - p[..., :-1, :]
    speed = np.linalg.norm(disp, axis=-1, keepdims=True) / dt
    return np.concatenate([disp, speed], axis=-1)


def crop_cell_centers(position, g: int, side: float) -> np.ndarray:
    """World coordinates (g, g, 2) of crop cell centers; row index grows with y."""
    c = side / g
    offs = (np.arange(g) + 0.5) * c - side / 2
    x = position[0] + offs[None, :]
    y = position[1] + offs[:, None]
    return np.stack(np.broadcast_arrays(x, y), axis=-1)


def extract_spatial(m: ObstacleMap, position, g: int = 8, side: float = 4.0) -> np.ndarray:
    """(g, g) boolean crop, axis-aligned and centered on ``position``."""
    if g < 1 or side <= 0:
        raise ValueError("need g >= 1 and side > 0")
    return m.lookup(crop_cell_centers(np.asarray(position, dtype=float), g, side))


def extract_acoustic(events: Sequence[AcousticEvent], agent: AgentState, t: int,
                     slots: int = 2) -> np.ndarray:
    """Top ``slots`` active events by attenuated intensity, bearing relative to heading."""
    if slots < 1:
        raise ValueError("need at least one event slot")
    return acoustic_vector(events, np.asarray(agent.position, dtype=float),
                           np.asarray(agent.velocity, dtype=float), t, slots)


def acoustic_vector(events, position: np.ndarray, velocity: np.ndarray, t: int,
                    slots: int) -> np.ndarray:
    out = np.zeros(slots * SLOT_WIDTH)
    active = [e for e in events if e.active(t)]
    if not active:
        return out
    speed = np.hypot(*velocity)
    heading = velocity / speed if speed >= STATIONARY_SPEED else np.array([1.0, 0.0])
    rows = []
    for e in active:
        rel = np.asarray(e.origin, dtype=float) - position
        d = np.hypot(*rel)
        u = rel / d if d > 0 else heading
        cos = heading[0] * u[0] + heading[1] * u[1]
        sin = heading[0] * u[1] - heading[1] * u[0]
        onehot = np.zeros(3)
        onehot[int(e.category)] = 1.0
        rows.append((attenuated_intensity(e.intensity, d), sin, cos, onehot))
    # stable sort keeps file order among equally loud events
    rows.sort(key=lambda r: -r[0])
    for k, (a, sin, cos, onehot) in enumerate(rows[:slots]):
        out[k * SLOT_WIDTH:(k + 1) * SLOT_WIDTH] = [a, sin, cos, *onehot, 1.0]
    return out


def attach_features(sample: Sample, scenario: Scenario, g: int = 8, side: float = 4.0,
                    slots: int = 2) -> Sample:
    """Fill the channel fields of a sample (center agent and its neighbors).

    The crop and acoustic vectors use the last observed step; the acoustic
    field of the center keeps one vector per observed step.
    """
    dt = scenario.dt
    t_obs = sample.t_obs
    t0 = scenario.frames[0].t
    t_last = sample.start + t_obs - 1

    def velocity(track: np.ndarray) -> np.ndarray:
        return (track[-1] - track[-2]) / dt

    acoustic = np.stack([
        acoustic_vector(scenario.events, sample.observed[i],
                        (sample.observed[i] - sample.observed[i - 1]) / dt if i else np.zeros(2),
                        sample.start + i, slots)
        for i in range(t_obs)])
    if sample.start > t0 and sample.start - t0 < len(scenario.frames):
        # the agent may have a previous frame giving a real first velocity
        prev = _position_at(scenario, sample.start - 1, sample.agent_id)
        if prev is not None:
            acoustic[0] = acoustic_vector(scenario.events, sample.observed[0],
                                          (sample.observed[0] - prev) / dt, sample.start, slots)

    nb = sample.neighbors
    return replace(
        sample,
        dynamic=extract_dynamic(sample.observed, dt),
        spatial_crop=extract_spatial(scenario.map, sample.origin, g, side),
        acoustic=acoustic,
        neighbor_dynamic=extract_dynamic(nb, dt) if len(nb) else np.zeros((0, t_obs, 3)),
        neighbor_crops=(np.stack([extract_spatial(scenario.map, p[-1], g, side) for p in nb])
                        if len(nb) else np.zeros((0, g, g), dtype=bool)),
        neighbor_acoustic=(np.stack([acoustic_vector(scenario.events, p[-1], velocity(p),
                                                     t_last, slots) for p in nb])
                           if len(nb) else np.zeros((0, slots * SLOT_WIDTH))),
    )


def _position_at(s: Scenario, t: int, agent_id: int):
    frame = s.frames[t - s.frames[0].t]
    for a in frame.agents:
        if a.agent_id == agent_id:
            return np.asarray(a.position, dtype=float)
    return None

