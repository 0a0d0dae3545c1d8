"""Flat ``key=value`` run configuration shared by every command."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .gan import ModelConfig, TrainConfig
from .sim import DatasetSpec, SimConfig


class ConfigError(ValueError):
    """Malformed config text, an unknown key, or an out-of-range value."""


@dataclass(frozen=True)
class RunConfig:
    # data and windowing
    dt: float = 0.4
    t_obs: int = 8
    t_pred: int = 12
    stride: int = 4
    # model
    hidden_dim: int = 32
    embed_dim: int = 16
    context_dim: int = 64
    pool_grid_n: int = 4
    pool_grid_len: float = 4.0
    crop_g: int = 8
    crop_len: float = 4.0
    event_slots: int = 2
    noise_dim: int = 8
    num_layers: int = 1
    self_channels: bool = True
    disc_context: bool = True
    # training
    k_variety: int = 5
    lambda_adv: float = 1.0
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    lr_decay: float = 0.1
    batch: int = 32
    epochs: int = 50
    d_steps: int = 1
    seed: int = 7
    val_fraction: float = 0.2
    k_eval: int = 5
    # simulator
    w: float = 2.0
    neighbor_radius: float = 5.0
    acoustic_gain: float = 1.0
    acoustic_threshold: float = 0.1
    candidate_rings: int = 4
    candidates_per_ring: int = 16
    horizon: int = 60
    substeps: int = 4
    # archetype mix written by the simulate command
    n_crossing: int = 60
    n_circle_swap: int = 60
    n_corridor: int = 40
    n_siren_pair: int = 20
    min_agents: int = 2
    max_agents: int = 8

    def __post_init__(self):
        positive = ("dt", "t_pred", "stride", "hidden_dim", "embed_dim", "context_dim",
                    "pool_grid_n", "pool_grid_len", "crop_g", "crop_len", "event_slots",
                    "noise_dim", "num_layers", "k_variety", "lr_g", "lr_d", "batch",
                    "d_steps", "k_eval", "w", "neighbor_radius", "acoustic_gain",
                    "acoustic_threshold", "candidate_rings", "candidates_per_ring",
                    "horizon", "substeps", "min_agents", "max_agents")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive (got {getattr(self, name)})")
        if self.t_obs < 2:
            raise ConfigError("t_obs must be at least 2")
        for name in ("epochs", "lambda_adv", "n_crossing", "n_circle_swap", "n_corridor",
                     "n_siren_pair"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.candidates_per_ring % 2:
            raise ConfigError("candidates_per_ring must be even")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.min_agents > self.max_agents:
            raise ConfigError("min_agents must not exceed max_agents")

    # ------------------------------------------------------------ views

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            t_obs=self.t_obs, hidden_dim=self.hidden_dim, embed_dim=self.embed_dim,
            context_dim=self.context_dim, pool_grid_n=self.pool_grid_n,
            pool_grid_len=self.pool_grid_len, crop_g=self.crop_g,
            event_slots=self.event_slots, num_layers=self.num_layers,
            self_channels=self.self_channels, t_pred=self.t_pred, noise_dim=self.noise_dim,
            disc_context=self.disc_context)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch=self.batch, lr_g=self.lr_g,
                           lr_d=self.lr_d, k=self.k_variety, lambda_adv=self.lambda_adv,
                           d_steps=self.d_steps, seed=self.seed, lr_decay=self.lr_decay)

    def sim_config(self) -> SimConfig:
        return SimConfig(dt=self.dt, horizon=self.horizon, neighbor_radius=self.neighbor_radius,
                         candidate_rings=self.candidate_rings,
                         candidates_per_ring=self.candidates_per_ring, w=self.w,
                         acoustic_gain=self.acoustic_gain,
                         acoustic_threshold=self.acoustic_threshold, substeps=self.substeps,
                         rng_seed=self.seed)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(crossing=self.n_crossing, circle_swap=self.n_circle_swap,
                           corridor=self.n_corridor, siren_pair=self.n_siren_pair,
                           min_agents=self.min_agents, max_agents=self.max_agents)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


KEYS = tuple(f.name for f in fields(RunConfig))
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(value)


def _parse_value(key: str, text: str, lineno: int):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes"):
                return True
            if low in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key}: {text!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key=value`` lines over ``base`` (defaults when omitted)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key: {key}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        values[key] = _parse_value(key, value, lineno)
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
