"""Per-agent LSTM encoding, social pooling per channel, and context fusion."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict[str, Tensor]


class Channel(enum.Enum):
    DYNAMIC = "dynamic"
    SPATIAL = "spatial"
    ACOUSTIC = "acoustic"


@dataclass(frozen=True)
class PoolingConfig:
    side: float = 4.0
    n: int = 4
    channel: Channel = Channel.DYNAMIC

    def __post_init__(self):
        if self.side <= 0 or self.n < 1:
            raise ValueError("pooling grid needs side > 0 and n >= 1")


class LstmParams(NamedTuple):
    W: Tensor   # (in, 4H), gate blocks ordered i, f, g, o
    U: Tensor   # (H, 4H)
    b: Tensor   # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[0]


class EncoderState(NamedTuple):
    h: Tensor
    c: Tensor


# ---------------------------------------------------------------- parameters


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def add_linear(params: Params, rng, name: str, n_in: int, n_out: int) -> None:
    params[f"{name}.W"] = init_uniform(rng, (n_in, n_out), n_in)
    params[f"{name}.b"] = init_uniform(rng, (n_out,), n_in)


def add_lstm(params: Params, rng, name: str, n_in: int, hidden: int) -> None:
    params[f"{name}.W"] = init_uniform(rng, (n_in, 4 * hidden), n_in)
    params[f"{name}.U"] = init_uniform(rng, (hidden, 4 * hidden), hidden)
    params[f"{name}.b"] = init_uniform(rng, (4 * hidden,), hidden)
    params[f"{name}.b"].data[hidden:2 * hidden] += 1.0   # forget gate starts mostly open


def lstm_params(params: Params, name: str) -> LstmParams:
    return LstmParams(params[f"{name}.W"], params[f"{name}.U"], params[f"{name}.b"])


def linear(x, params: Params, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


# ---------------------------------------------------------------- LSTM


def lstm_cell(x, state: EncoderState, p: LstmParams) -> EncoderState:
    """One LSTM step on a batch: x (B, in), h and c (B, H)."""
    x = ad.as_tensor(x)
    H = p.hidden
    if x.data.ndim != 2 or x.shape[1] != p.W.shape[0] or state.h.shape[-1] != H:
        raise ad.ShapeError(f"lstm_cell: input {x.shape}, hidden {state.h.shape} "
                            f"incompatible with W {p.W.shape}, U {p.U.shape}")
    a = ad.add(ad.add(ad.matmul(x, p.W), ad.matmul(state.h, p.U)), p.b)
    s = ad.sigmoid(a)
    i = s[:, :H]
    f = s[:, H:2 * H]
    o = s[:, 3 * H:]
    g = ad.tanh(a[:, 2 * H:3 * H])
    c = ad.add(ad.mul(f, state.c), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return EncoderState(h, c)


def zero_state(batch: int, hidden: int) -> EncoderState:
    z = Tensor(np.zeros((batch, hidden)))
    return EncoderState(z, Tensor(np.zeros((batch, hidden))))


def run_lstm(steps: Sequence, layers: Sequence[LstmParams],
             state: list[EncoderState] | None = None) -> list[EncoderState]:
    """Roll a stack of LSTM layers over a list of (B, in) inputs; returns final states."""
    batch = ad.as_tensor(steps[0]).shape[0]
    states = state or [zero_state(batch, p.hidden) for p in layers]
    for x in steps:
        inp = x
        for k, p in enumerate(layers):
            states[k] = lstm_cell(inp, states[k], p)
            inp = states[k].h
    return states


# ---------------------------------------------------------------- encoding


@dataclass(frozen=True)
class EncoderConfig:
    t_obs: int = 8
    hidden_dim: int = 32
    embed_dim: int = 16
    context_dim: int = 64
    pool_grid_n: int = 4
    pool_grid_len: float = 4.0
    crop_g: int = 8
    event_slots: int = 2
    num_layers: int = 1
    self_channels: bool = True

    @property
    def dyn_dim(self) -> int:
        return 3

    @property
    def aco_dim(self) -> int:
        return 7 * self.event_slots

    @property
    def self_dim(self) -> int:
        return self.hidden_dim + (2 * self.embed_dim if self.self_channels else 0)

    @property
    def fuse_dim(self) -> int:
        cells = self.pool_grid_n ** 2
        return self.self_dim + cells * (self.hidden_dim + 2 * self.embed_dim)


def init_encoder(params: Params, rng: np.random.Generator, cfg: EncoderConfig) -> Params:
    add_linear(params, rng, "enc.dyn_embed", cfg.dyn_dim, cfg.embed_dim)
    for k in range(cfg.num_layers):
        add_lstm(params, rng, f"enc.lstm{k}", cfg.embed_dim if k == 0 else cfg.hidden_dim,
                 cfg.hidden_dim)
    add_linear(params, rng, "enc.spa_embed", cfg.crop_g ** 2, cfg.embed_dim)
    add_linear(params, rng, "enc.aco_embed", cfg.aco_dim, cfg.embed_dim)
    add_linear(params, rng, "enc.fuse", cfg.fuse_dim, cfg.context_dim)
    return params


def encode_agent(dynamic: np.ndarray, crop: np.ndarray, acoustic: np.ndarray,
                 params: Params, cfg: EncoderConfig):
    """Channel representations for a batch of agents.

    dynamic (M, T, 3), crop (M, G*G) or (M, G, G), acoustic (M, E*7) for the
    last observed step.  Returns (h_dyn, e_spa, e_aco) as (M, .) tensors.
    """
    m = dynamic.shape[0]
    steps = [ad.tanh(linear(dynamic[:, t], params, "enc.dyn_embed"))
             for t in range(dynamic.shape[1])]
    layers = [lstm_params(params, f"enc.lstm{k}") for k in range(cfg.num_layers)]
    h_dyn = run_lstm(steps, layers)[-1].h
    e_spa = ad.tanh(linear(np.asarray(crop, dtype=float).reshape(m, -1), params, "enc.spa_embed"))
    e_aco = ad.tanh(linear(np.asarray(acoustic, dtype=float), params, "enc.aco_embed"))
    return h_dyn, e_spa, e_aco


# ---------------------------------------------------------------- pooling


def grid_cell(rel: np.ndarray, side: float, n: int) -> np.ndarray:
    """Flat row-major cell index of relative offsets (..., 2); -1 when outside."""
    size = side / n
    col = np.floor((rel[..., 0] + side / 2) / size).astype(np.int64)
    row = np.floor((rel[..., 1] + side / 2) / size).astype(np.int64)
    inside = (col >= 0) & (col < n) & (row >= 0) & (row < n)
    return np.where(inside, row * n + col, -1)


def social_pool(center: int, positions, vectors, cfg: PoolingConfig) -> Tensor:
    """Sum neighbors' vectors into an n x n grid around ``positions[center]``.

    Output is flattened cell by cell (row-major, rows along +y), each cell
    holding a vector-sized block.  Contributions to a cell are added in a
    canonical order (offset, then vector values) so the result does not
    depend on how the neighbors were listed.
    """
    positions = np.asarray(positions, dtype=float)
    vectors = ad.as_tensor(vectors)
    if len(positions) != vectors.shape[0]:
        raise ad.ShapeError(f"social_pool: {len(positions)} positions vs vectors {vectors.shape}")
    rel = positions - positions[center]
    cells = grid_cell(rel, cfg.side, cfg.n)
    pairs = [(int(cells[j]), rel[j, 0], rel[j, 1], tuple(vectors.data[j]), j)
             for j in range(len(positions)) if j != center and cells[j] >= 0]
    pairs.sort(key=lambda p: p[:4])
    seg = np.array([p[0] for p in pairs], dtype=np.intp)
    rows = np.array([p[4] for p in pairs], dtype=np.intp)
    pooled = ad.segment_sum(vectors, seg, rows, cfg.n * cfg.n)
    return ad.reshape(pooled, (cfg.n * cfg.n * vectors.shape[1],))


def pooling_pairs(groups: Sequence[np.ndarray], last_pos: np.ndarray, side: float, n: int,
                  keys: np.ndarray | None = None):
    """Segment/row pairs pooling every group's members around its first row.

    ``groups[s]`` lists the rows of sample s, center first.  Segment index is
    s * n*n + cell.  Within a segment, pairs are ordered by relative offset and
    then by the row's ``keys`` (the raw per-agent inputs), so the order, and
    hence every pooled sum, does not depend on how neighbors were listed.
    """
    seg, rows, off = [], [], []
    for s, g in enumerate(groups):
        if len(g) < 2:
            continue
        nb = np.asarray(g[1:])
        rel = last_pos[nb] - last_pos[g[0]]
        cells = grid_cell(rel, side, n)
        keep = cells >= 0
        seg.append(s * n * n + cells[keep])
        rows.append(nb[keep])
        off.append(rel[keep])
    if not seg:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    seg = np.concatenate(seg)
    rows = np.concatenate(rows)
    off = np.concatenate(off)
    extra = [] if keys is None else list(np.asarray(keys, dtype=float)[rows].T[::-1])
    order = np.lexsort(extra + [off[:, 1], off[:, 0], seg])
    return seg[order], rows[order]


def pool_batch(vectors: Tensor, seg: np.ndarray, rows: np.ndarray, n_samples: int,
               n: int) -> Tensor:
    pooled = ad.segment_sum(vectors, seg, rows, n_samples * n * n)
    return ad.reshape(pooled, (n_samples, n * n * vectors.shape[1]))


def fuse(h_self, pooled_dyn, pooled_spa, pooled_aco, params: Params) -> Tensor:
    """concat(self, dyn, spa, aco) -> linear -> tanh."""
    x = ad.concat([h_self, pooled_dyn, pooled_spa, pooled_aco], axis=-1)
    W = params["enc.fuse.W"]
    if x.shape[-1] != W.shape[0]:
        raise ad.ShapeError(f"fuse: concatenated input {x.shape} vs projection {W.shape}")
    return ad.tanh(linear(x, params, "enc.fuse"))


def social_context(dynamic, crop, acoustic, last_pos, groups, params: Params,
                   cfg: EncoderConfig) -> Tensor:
    """Context vectors (S, C) for the centers of ``groups`` (rows into the agent arrays)."""
    h_dyn, e_spa, e_aco = encode_agent(dynamic, crop, acoustic, params, cfg)
    m = len(last_pos)
    keys = np.concatenate([np.reshape(dynamic, (m, -1)), np.reshape(crop, (m, -1)),
                           np.reshape(acoustic, (m, -1))], axis=1)
    seg, rows = pooling_pairs(groups, last_pos, cfg.pool_grid_len, cfg.pool_grid_n, keys)
    s = len(groups)
    n = cfg.pool_grid_n
    centers = np.array([g[0] for g in groups], dtype=np.intp)
    own = [h_dyn[centers]]
    if cfg.self_channels:
        own += [e_spa[centers], e_aco[centers]]
    h_self = ad.concat(own, axis=-1) if len(own) > 1 else own[0]
    return fuse(h_self,
                pool_batch(h_dyn, seg, rows, s, n),
                pool_batch(e_spa, seg, rows, s, n),
                pool_batch(e_aco, seg, rows, s, n), params)
