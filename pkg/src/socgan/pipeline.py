"""Glue between scenario files, windowed samples, and the model."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import DataError, Sample, Scenario, load_scenario, window_samples
from .features import attach_features

Named = list[tuple[str, Scenario]]


def load_named(directory) -> Named:
    """(stem, scenario) for every ``*.tsv`` in ``directory``, sorted by name."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    named = [(p.stem, load_scenario(p)) for p in sorted(d.glob("*.tsv"))]
    if not named:
        raise DataError(f"{d}: no scenario files (*.tsv)")
    return named


def build_samples(scenarios: Sequence[Scenario], rc: RunConfig,
                  indices: Sequence[int] | None = None, stride: int | None = None) -> list[Sample]:
    """Windowed samples with every channel attached; ``Sample.scenario`` is the list index."""
    out = []
    for i in (range(len(scenarios)) if indices is None else indices):
        s = scenarios[i]
        for w in window_samples(s, rc.t_obs, rc.t_pred, stride or rc.stride, i):
            out.append(attach_features(w, s, rc.crop_g, rc.crop_len, rc.event_slots))
    return out


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded scenario-level train/validation split (validation never empty when n > 1)."""
    order = np.random.default_rng([seed, 3]).permutation(n)
    n_val = int(round(n * val_fraction))
    if val_fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def pair_key(name: str) -> str:
    """Matched scenarios (``<stem>_on`` / ``<stem>_off``) share a key."""
    for suffix in ("_on", "_off"):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return name


def split_named(names: Sequence[str], val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Like :func:`split_indices`, but matched pairs always land on the same side."""
    keys = sorted({pair_key(n) for n in names})
    train_keys, val_keys = split_indices(len(keys), val_fraction, seed)
    held = {keys[i] for i in val_keys}
    train = [i for i, n in enumerate(names) if pair_key(n) not in held]
    val = [i for i, n in enumerate(names) if pair_key(n) in held]
    return train, val


def observation_samples(s: Scenario, rc: RunConfig) -> list[Sample]:
    """One sample per agent present through the last ``t_obs`` frames of ``s``.

    The future is a zero placeholder; only the observation is used.
    """
    tr = s.tracks()
    if len(s.frames) < rc.t_obs:
        raise DataError(f"input has {len(s.frames)} frames but the model observes "
                        f"t_obs={rc.t_obs}")
    obs = slice(len(s.frames) - rc.t_obs, len(s.frames))
    live = [a for a in range(len(tr.ids)) if tr.present[obs, a].all()]
    out = []
    for a in live:
        others = [b for b in live if b != a]
        w = Sample(
            scenario=0, agent_id=tr.ids[a], start=tr.t0 + obs.start,
            observed=tr.positions[obs, a].copy(), future=np.zeros((rc.t_pred, 2)),
            neighbor_ids=tuple(tr.ids[b] for b in others),
            neighbors=tr.positions[obs][:, others].transpose(1, 0, 2).copy(),
            radius=tr.classes[a].radius,
            neighbor_radii=np.array([tr.classes[b].radius for b in others]))
        out.append(attach_features(w, s, rc.crop_g, rc.crop_len, rc.event_slots))
    return out
