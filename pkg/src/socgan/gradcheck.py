"""Finite-difference gradient battery over primitives and composite layers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import gan
from .autodiff import Tensor, grad_check
from .encoder import EncoderState, LstmParams, lstm_cell, social_context

PRIMITIVE_TOL = 1e-4
GAN_TOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tol

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name:<22} rel_err={self.error:.3e} tol={self.tol:.0e}"


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Fixed random weighting so every output element matters to the scalar."""
    w = rng.standard_normal(out.shape)
    return lambda y: ad.sum(ad.mul(y, w))


def _scalarize(fn, inputs, rng):
    proj = _project(fn(*inputs), rng)
    return lambda *xs: proj(fn(*xs))


def _primitive_cases(rng):
    seg = np.array([0, 0, 2, 1, 2])
    rows = np.array([0, 3, 1, 2, 3])
    cases = {
        "matmul": (ad.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]),
        "add": (ad.add, [_t(rng, 3, 4), _t(rng, 4)]),
        "sub": (ad.sub, [_t(rng, 3, 4), _t(rng, 3, 1)]),
        "mul": (ad.mul, [_t(rng, 3, 4), _t(rng, 1, 4)]),
        "tanh": (ad.tanh, [_t(rng, 3, 4)]),
        "sigmoid": (ad.sigmoid, [_t(rng, 3, 4)]),
        "concat": (lambda a, b: ad.concat([a, b], axis=-1), [_t(rng, 3, 2), _t(rng, 3, 4)]),
        "sum": (lambda a: ad.sum(a, axis=0), [_t(rng, 3, 4)]),
        "mean": (lambda a: ad.mean(a, axis=1), [_t(rng, 3, 4)]),
        "reshape": (lambda a: ad.reshape(a, (2, 6)), [_t(rng, 3, 4)]),
        "getitem": (lambda a: a[1:, ::2], [_t(rng, 3, 4)]),
        "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [_t(rng, 3, 4)]),
        "tile_rows": (lambda a: ad.tile_rows(a, 3), [_t(rng, 2, 3)]),
        "min": (lambda a: ad.min(a, axis=0), [_t(rng, 3, 4)]),
        "segment_sum": (lambda a: ad.segment_sum(a, seg, rows, 3), [_t(rng, 4, 3)]),
        "mse_loss": (ad.mse_loss, [_t(rng, 3, 2), _t(rng, 3, 2)]),
        "bce_loss": (lambda s, y: ad.bce_loss(ad.sigmoid(s), y),
                     [_t(rng, 4, 1), Tensor(rng.uniform(0.1, 0.9, (4, 1)), requires_grad=True)]),
    }
    for name, (fn, inputs) in cases.items():
        yield name, _scalarize(fn, inputs, rng), inputs, PRIMITIVE_TOL


def _tiny_model(seed: int):
    cfg = gan.ModelConfig(t_obs=3, t_pred=2, hidden_dim=4, embed_dim=3, context_dim=5,
                          pool_grid_n=2, pool_grid_len=4.0, crop_g=2, event_slots=1,
                          noise_dim=2)
    return cfg, gan.init_model(cfg, seed)


def _tiny_batch(rng, cfg):
    groups = [np.array([0, 1, 2]), np.array([3, 4])]
    m = 5
    return dict(
        dynamic=rng.standard_normal((m, cfg.t_obs, 3)) * 0.5,
        crop=(rng.random((m, cfg.crop_g ** 2)) < 0.3).astype(float),
        acoustic=rng.standard_normal((m, cfg.aco_dim)) * 0.5,
        last_pos=np.array([[0.0, 0.0], [0.7, 0.4], [-1.2, 0.3], [5.0, 5.0], [4.3, 5.6]]),
        groups=groups,
        observed=np.cumsum(rng.standard_normal((2, cfg.t_obs, 2)) * 0.3, axis=1),
        future=rng.standard_normal((2, cfg.t_pred, 2)),
    )


def _composite_cases(rng):
    H = 4
    x = Tensor(rng.standard_normal((3, 2)))
    h0, c0 = _t(rng, 3, H), _t(rng, 3, H)
    W, U, b = _t(rng, 2, 4 * H, scale=0.5), _t(rng, H, 4 * H, scale=0.5), _t(rng, 4 * H)

    def cell(xx, hh, cc, WW, UU, bb):
        st = lstm_cell(xx, EncoderState(hh, cc), LstmParams(WW, UU, bb))
        return ad.concat([st.h, st.c], axis=-1)

    inputs = [x, h0, c0, W, U, b]
    yield "lstm_cell", _scalarize(cell, inputs, rng), inputs, PRIMITIVE_TOL

    cfg, params = _tiny_model(1)
    batch = _tiny_batch(rng, cfg)
    enc_names = [n for n in params if n.startswith("enc.")]

    def context(*ps):
        p = dict(params, **dict(zip(enc_names, ps)))
        return social_context(batch["dynamic"], batch["crop"], batch["acoustic"],
                              batch["last_pos"], batch["groups"], p, cfg)

    inputs = [params[n] for n in enc_names]
    yield "pooling_fusion", _scalarize(context, inputs, rng), inputs, PRIMITIVE_TOL

    observed, future = batch["observed"], batch["future"]
    last_disp = observed[:, -1] - observed[:, -2]
    z = rng.standard_normal((2, cfg.noise_dim))
    g_names = gan.generator_names(params)
    ctx_data = context(*[params[n] for n in enc_names]).data

    def g_loss(*ps):
        p = dict(params, **dict(zip(g_names, ps)))
        ctx = social_context(batch["dynamic"], batch["crop"], batch["acoustic"],
                             batch["last_pos"], batch["groups"], p, cfg)
        pos, disps = gan.generate(ctx, z, last_disp, observed[:, -1], cfg.t_pred, p)
        variety = gan.variety_loss([pos], future)
        score = gan.discriminate(np.diff(observed, axis=1), disps, ctx_data, p)
        return ad.add(variety, ad.bce_loss(score, 1.0))

    inputs = [params[n] for n in g_names]
    yield "generator", g_loss, inputs, GAN_TOL

    d_names = gan.discriminator_names(params)
    fut_disp = np.diff(np.concatenate([observed[:, -1:], future], axis=1), axis=1)
    labels = np.array([[1.0], [0.0]])

    def d_loss(*ps):
        p = dict(params, **dict(zip(d_names, ps)))
        score = gan.discriminate(np.diff(observed, axis=1),
                                 [fut_disp[:, t] for t in range(cfg.t_pred)], ctx_data, p)
        return ad.bce_loss(score, labels)

    inputs = [params[n] for n in d_names]
    yield "discriminator", d_loss, inputs, GAN_TOL


def run_battery(seed: int = 0, only: set[str] | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for gen in (_primitive_cases, _composite_cases):
        for name, f, inputs, tol in gen(rng):
            if only is not None and name not in only:
                continue
            try:
                err = grad_check(f, inputs)
            except Exception:       # a broken rule may raise instead of mismatching
                err = float("inf")
            results.append(CheckResult(name, err, tol))
    return results
