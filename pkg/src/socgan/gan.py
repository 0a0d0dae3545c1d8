"""LSTM-GAN trajectory predictor: generator, discriminator, training, metrics."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .data import Sample
from .encoder import (EncoderConfig, EncoderState, Params, add_linear, add_lstm,
                      init_encoder, linear, lstm_cell, lstm_params, run_lstm,
                      social_context)

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """A loss or metric became non-finite."""


@dataclass(frozen=True)
class ModelConfig(EncoderConfig):
    t_pred: int = 12
    noise_dim: int = 8
    disc_context: bool = True


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    k: int = 5
    lambda_adv: float = 1.0
    d_steps: int = 1
    seed: int = 7
    k_eval_val: int = 1
    lr_decay: float = 0.1   # learning-rate fraction reached at the last epoch (cosine)

    def __post_init__(self):
        if self.k < 1 or self.batch < 1 or self.d_steps < 1 or self.epochs < 0:
            raise ValueError("need k, batch, d_steps >= 1 and epochs >= 0")
        if self.lambda_adv < 0 or self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive and lambda_adv >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")

    def lr_scale(self, epoch: int) -> float:
        """Cosine factor for 1-based ``epoch``: 1 at the first epoch, lr_decay at the last."""
        if self.epochs <= 1:
            return 1.0
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr_decay + (1 - self.lr_decay) * 0.5 * (1 + math.cos(math.pi * frac))


def generator_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith(("enc.", "gen."))]


def discriminator_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith("disc.")]


def init_model(cfg: ModelConfig, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    params: Params = {}
    init_encoder(params, rng, cfg)
    H, E, Z, C = cfg.hidden_dim, cfg.embed_dim, cfg.noise_dim, cfg.context_dim
    add_linear(params, rng, "gen.init_h", C + Z, H)
    add_linear(params, rng, "gen.init_c", C + Z, H)
    add_linear(params, rng, "gen.embed", 2, E)
    add_lstm(params, rng, "gen.lstm", E, H)
    add_linear(params, rng, "gen.out", H, 2)
    add_linear(params, rng, "disc.embed", 2, E)
    add_lstm(params, rng, "disc.lstm", E, H)
    add_linear(params, rng, "disc.score", H + (C if cfg.disc_context else 0), 1)
    return params


def zero_params(params: Params) -> Params:
    return {n: Tensor(np.zeros(p.shape), requires_grad=True) for n, p in params.items()}


def clone_params(params: Params) -> Params:
    return {n: Tensor(p.data.copy(), requires_grad=True) for n, p in params.items()}


# ---------------------------------------------------------------- batches


@dataclass
class Batch:
    """Samples packed for one forward pass.

    Agent-level arrays hold every center and neighbor; ``groups[s]`` lists
    the rows belonging to sample s, center first.
    """

    dynamic: np.ndarray
    crop: np.ndarray
    acoustic: np.ndarray
    last_pos: np.ndarray
    groups: list[np.ndarray]
    observed: np.ndarray
    future: np.ndarray
    radius: np.ndarray
    scene: list[tuple[int, int]]

    @property
    def size(self) -> int:
        return len(self.groups)

    @property
    def origin(self) -> np.ndarray:
        return self.observed[:, -1]

    @property
    def last_disp(self) -> np.ndarray:
        return self.observed[:, -1] - self.observed[:, -2]

    @property
    def obs_disp(self) -> np.ndarray:
        return np.diff(self.observed, axis=1)

    @property
    def future_disp(self) -> np.ndarray:
        full = np.concatenate([self.observed[:, -1:], self.future], axis=1)
        return np.diff(full, axis=1)


def make_batch(samples: Sequence[Sample], zero_acoustic: bool = False) -> Batch:
    dyn, crop, aco, last, groups = [], [], [], [], []
    row = 0
    for s in samples:
        if s.dynamic is None:
            raise ValueError("sample has no features; call attach_features first")
        n = 1 + len(s.neighbor_ids)
        dyn += [s.dynamic[None], s.neighbor_dynamic]
        crop += [s.spatial_crop.reshape(1, -1), s.neighbor_crops.reshape(n - 1, -1)]
        aco += [s.acoustic[-1][None], s.neighbor_acoustic]
        last += [s.observed[-1:], s.neighbors[:, -1] if n > 1 else np.zeros((0, 2))]
        groups.append(np.arange(row, row + n))
        row += n
    acoustic = np.concatenate(aco).astype(float)
    if zero_acoustic:
        acoustic = np.zeros_like(acoustic)
    return Batch(
        dynamic=np.concatenate(dyn),
        crop=np.concatenate(crop).astype(float),
        acoustic=acoustic,
        last_pos=np.concatenate(last),
        groups=groups,
        observed=np.stack([s.observed for s in samples]),
        future=np.stack([s.future for s in samples]),
        radius=np.array([s.radius for s in samples]),
        scene=[(s.scenario, s.start) for s in samples],
    )


def batch_context(batch: Batch, params: Params, cfg: ModelConfig) -> Tensor:
    return social_context(batch.dynamic, batch.crop, batch.acoustic, batch.last_pos,
                          batch.groups, params, cfg)


# ---------------------------------------------------------------- generator / discriminator


def generate(context, z, last_disp, origin, t_pred: int, params: Params):
    """Roll the decoder for ``t_pred`` steps.

    Returns (positions, displacements), each a list of (B, 2) tensors.
    """
    ctx = ad.concat([context, z], axis=-1)
    state = EncoderState(ad.tanh(linear(ctx, params, "gen.init_h")),
                         linear(ctx, params, "gen.init_c"))
    p = lstm_params(params, "gen.lstm")
    x = ad.as_tensor(last_disp)
    pos = ad.as_tensor(origin)
    positions, disps = [], []
    for _ in range(t_pred):
        state = lstm_cell(ad.tanh(linear(x, params, "gen.embed")), state, p)
        d = linear(state.h, params, "gen.out")
        pos = ad.add(pos, d)
        positions.append(pos)
        disps.append(d)
        x = d
    return positions, disps


def discriminate(obs_disp: np.ndarray, future_disp: Sequence, context, params: Params) -> Tensor:
    """Score (B, 1) that a trajectory is real, from its per-step displacements.

    ``obs_disp`` is (B, T_obs - 1, 2); ``future_disp`` lists T_pred (B, 2)
    displacements; ``context`` is (B, C) or None for an unconditioned model.
    """
    steps = [obs_disp[:, t] for t in range(obs_disp.shape[1])] + list(future_disp)
    steps = [ad.tanh(linear(s, params, "disc.embed")) for s in steps]
    h = run_lstm(steps, [lstm_params(params, "disc.lstm")])[-1].h
    if context is not None:
        h = ad.concat([h, context], axis=-1)
    return ad.sigmoid(linear(h, params, "disc.score"))


def discriminate_positions(positions: np.ndarray, context, params: Params) -> Tensor:
    """Score full trajectories (B, T, 2), observed followed by future."""
    disp = np.diff(np.asarray(positions, dtype=float), axis=1)
    return discriminate(disp[:, :0], [disp[:, t] for t in range(disp.shape[1])], context, params)


def stack_positions(positions: Sequence[Tensor]) -> Tensor:
    """List of T (B, 2) tensors -> (B, 2T) tensor, step-major."""
    return ad.concat(positions, axis=-1)


def trajectory_sq_error(positions: Sequence[Tensor], truth: np.ndarray) -> Tensor:
    """Per-row mean over steps of squared Euclidean error: (B,)."""
    pred = stack_positions(positions)
    diff = ad.sub(pred, truth.reshape(truth.shape[0], -1))
    return ad.mul(ad.sum(ad.mul(diff, diff), axis=1), 1.0 / truth.shape[1])


def variety_loss(samples: Sequence[Sequence[Tensor]], truth: np.ndarray) -> Tensor:
    """Batch mean of the per-agent minimum over samples of trajectory MSE.

    ``samples`` holds k generated futures, each a list of T (B, 2) tensors;
    ``truth`` is (B, T, 2).
    """
    errs = [ad.reshape(trajectory_sq_error(s, truth), (1, truth.shape[0])) for s in samples]
    return ad.mean(ad.min(ad.concat(errs, axis=0), axis=0))


def _variety_from_stacked(positions: Sequence[Tensor], truth: np.ndarray, k: int) -> Tensor:
    b = truth.shape[0]
    err = trajectory_sq_error(positions, np.tile(truth, (k, 1, 1)))
    return ad.mean(ad.min(ad.reshape(err, (k, b)), axis=0))


# ---------------------------------------------------------------- training


@dataclass
class Optimizers:
    g: AdamState
    d: AdamState

    @classmethod
    def create(cls, cfg: TrainConfig) -> "Optimizers":
        return cls(AdamState(lr=cfg.lr_g), AdamState(lr=cfg.lr_d))


@dataclass
class StepLosses:
    g_loss: float
    d_loss: float
    d_acc: float
    variety: float


def _clear(params: Params) -> None:
    for p in params.values():
        p.grad = None


def _apply(params: Params, names: list[str], state: AdamState) -> None:
    ad.adam_step([params[n] for n in names], [params[n].grad for n in names], state)


def train_step(batch: Batch, params: Params, cfg: TrainConfig, mcfg: ModelConfig,
               opt: Optimizers, rng: np.random.Generator) -> StepLosses:
    b = batch.size
    g_names = generator_names(params)
    d_names = discriminator_names(params)
    real_fut = batch.future_disp
    real_steps = [real_fut[:, t] for t in range(mcfg.t_pred)]

    d_loss = d_acc = 0.0
    for _ in range(cfg.d_steps):
        ctx = batch_context(batch, params, mcfg).data
        z = rng.standard_normal((b, mcfg.noise_dim))
        _, fake = generate(ctx, z, batch.last_disp, batch.origin, mcfg.t_pred, params)
        fake_steps = [f.data for f in fake]
        d_ctx = np.concatenate([ctx, ctx]) if mcfg.disc_context else None
        _clear(params)
        with Tape() as tape:
            scores = discriminate(
                np.concatenate([batch.obs_disp, batch.obs_disp]),
                [np.concatenate([r, f]) for r, f in zip(real_steps, fake_steps)],
                d_ctx, params)
            loss = ad.add(ad.bce_loss(scores[:b], 1.0), ad.bce_loss(scores[b:], 0.0))
        tape.backward(loss)
        _apply(params, d_names, opt.d)
        d_loss = loss.item()
        s = scores.data[:, 0]
        d_acc = (np.sum(s[:b] > 0.5) + np.sum(s[b:] < 0.5)) / (2 * b)

    k = cfg.k
    _clear(params)
    with Tape() as tape:
        ctx = batch_context(batch, params, mcfg)
        ctx_k = ad.tile_rows(ctx, k)
        z = rng.standard_normal((k * b, mcfg.noise_dim))
        positions, disps = generate(ctx_k, z, np.tile(batch.last_disp, (k, 1)),
                                    np.tile(batch.origin, (k, 1)), mcfg.t_pred, params)
        variety = _variety_from_stacked(positions, batch.future, k)
        loss = variety
        if cfg.lambda_adv > 0:
            scores = discriminate(np.tile(batch.obs_disp, (k, 1, 1)), disps,
                                  ctx_k.data if mcfg.disc_context else None, params)
            loss = ad.add(loss, ad.mul(ad.bce_loss(scores, 1.0), cfg.lambda_adv))
    tape.backward(loss)
    _apply(params, g_names, opt.g)
    _clear(params)
    return StepLosses(loss.item(), d_loss, float(d_acc), variety.item())


@dataclass
class EpochLog:
    epoch: int
    g_loss: float
    d_loss: float
    d_acc: float
    val_ade: float

    def csv(self) -> str:
        return f"{self.epoch},{self.g_loss!r},{self.d_loss!r},{self.d_acc!r},{self.val_ade!r}"


CSV_HEADER = "epoch,g_loss,d_loss,d_acc,val_ade"


def train(samples: Sequence[Sample], cfg: TrainConfig, mcfg: ModelConfig,
          val_samples: Sequence[Sample] | None = None,
          params: Params | None = None) -> tuple[Params, list[EpochLog]]:
    """Epoch loop over seeded shuffles; returns the best-validation-ADE parameters."""
    if not samples:
        raise ValueError("training set is empty")
    params = params if params is not None else init_model(mcfg, cfg.seed)
    if cfg.epochs == 0:
        return params, []
    val = list(val_samples) if val_samples else list(samples)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Optimizers.create(cfg)
    history: list[EpochLog] = []
    best, best_ade = clone_params(params), math.inf
    for epoch in range(1, cfg.epochs + 1):
        opt.g.lr = cfg.lr_g * cfg.lr_scale(epoch)
        opt.d.lr = cfg.lr_d * cfg.lr_scale(epoch)
        order = rng.permutation(len(samples))
        losses = []
        for step, lo in enumerate(range(0, len(order), cfg.batch)):
            batch = make_batch([samples[i] for i in order[lo:lo + cfg.batch]])
            out = train_step(batch, params, cfg, mcfg, opt, rng)
            if not (math.isfinite(out.g_loss) and math.isfinite(out.d_loss)):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}: "
                                   f"g={out.g_loss} d={out.d_loss}")
            losses.append(out)
        report = evaluate(val, params, mcfg, k_eval=cfg.k_eval_val, seed=cfg.seed)
        entry = EpochLog(epoch, float(np.mean([l.g_loss for l in losses])),
                         float(np.mean([l.d_loss for l in losses])),
                         float(np.mean([l.d_acc for l in losses])), report.ade)
        history.append(entry)
        log.info("epoch %d g=%.4f d=%.4f d_acc=%.3f val_ade=%.4f", epoch, entry.g_loss,
                 entry.d_loss, entry.d_acc, entry.val_ade)
        if report.ade < best_ade:
            best_ade = report.ade
            best = clone_params(params)
    return best, history


# ---------------------------------------------------------------- metrics


def _check(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    return pred, truth


def ade(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def fde(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean(np.linalg.norm(pred[..., -1, :] - truth[..., -1, :], axis=-1)))


def collision_rate(preds: np.ndarray, radii) -> float:
    """Fraction of agent-pair-timesteps closer than the sum of radii; preds (N, T, 2)."""
    preds = np.asarray(preds, dtype=float)
    radii = np.asarray(radii, dtype=float)
    hits, total = _collision_counts(preds, radii)
    return hits / total if total else 0.0


def _collision_counts(preds: np.ndarray, radii: np.ndarray) -> tuple[int, int]:
    n = len(preds)
    if n < 2:
        return 0, 0
    i, j = np.triu_indices(n, 1)
    d = np.linalg.norm(preds[i] - preds[j], axis=-1)
    return int(np.sum(d < (radii[i] + radii[j])[:, None])), d.size


def constant_velocity(observed: np.ndarray, t_pred: int) -> np.ndarray:
    """Extrapolate the last observed displacement; observed (..., T_obs, 2)."""
    observed = np.asarray(observed, dtype=float)
    step = observed[..., -1, :] - observed[..., -2, :]
    k = np.arange(1, t_pred + 1)[:, None]
    return observed[..., -1:, :] + k * step[..., None, :]


@dataclass
class EvalReport:
    ade: float
    fde: float
    collision_rate: float
    d_accuracy: float
    k: int
    n_samples: int
    baseline_ade: float
    baseline_fde: float
    per_scenario: dict[int, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def noise_for(seed: int, index: int, n: int, dim: int) -> np.ndarray:
    """Noise for evaluation sample ``index``; independent of how many are drawn."""
    return np.random.default_rng([seed, 2, index]).standard_normal((n, dim))


def predict_samples(samples: Sequence[Sample], params: Params, mcfg: ModelConfig, k: int,
                    seed: int, zero_acoustic: bool = False, chunk: int = 256) -> np.ndarray:
    """Predicted futures (k, N, T_pred, 2) under per-index seeded noise."""
    n = len(samples)
    out = np.empty((k, n, mcfg.t_pred, 2))
    zs = [noise_for(seed, i, n, mcfg.noise_dim) for i in range(k)]
    for lo in range(0, n, chunk):
        batch = make_batch(samples[lo:lo + chunk], zero_acoustic)
        ctx = batch_context(batch, params, mcfg).data
        for i in range(k):
            pos, _ = generate(ctx, zs[i][lo:lo + chunk], batch.last_disp, batch.origin,
                              mcfg.t_pred, params)
            out[i, lo:lo + chunk] = np.stack([p.data for p in pos], axis=1)
    return out


def evaluate(samples: Sequence[Sample], params: Params, mcfg: ModelConfig, k_eval: int = 5,
             seed: int = 7, zero_acoustic: bool = False,
             predictions: np.ndarray | None = None) -> EvalReport:
    """Best-of-k ADE/FDE, collision rate of the best sample set, D accuracy, CV baseline.

    ``predictions`` (k, N, T_pred, 2) replaces the generator output when given.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("evaluation set is empty")
    truth = np.stack([s.future for s in samples])
    observed = np.stack([s.observed for s in samples])
    preds = predictions if predictions is not None else predict_samples(
        samples, params, mcfg, k_eval, seed, zero_acoustic)
    err = np.linalg.norm(preds - truth[None], axis=-1)             # (k, N, T)
    ade_k = err.mean(axis=-1)
    fde_k = err[..., -1]
    best = np.argmin(ade_k, axis=0)
    min_ade = ade_k.min(axis=0)
    min_fde = fde_k.min(axis=0)
    if not (np.all(np.isfinite(min_ade)) and np.all(np.isfinite(min_fde))):
        raise NumericError("non-finite prediction during evaluation")

    chosen = preds[best, np.arange(len(samples))]
    groups: dict[tuple[int, int], list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault((s.scenario, s.start), []).append(i)
    hits = total = 0
    radii = np.array([s.radius for s in samples])
    for idx in groups.values():
        h, t = _collision_counts(chosen[idx], radii[idx])
        hits += h
        total += t

    d_acc = _discriminator_accuracy(samples, params, mcfg, preds[0], zero_acoustic)
    cv = constant_velocity(observed, truth.shape[1])
    per: dict[int, dict[str, float]] = {}
    for i, s in enumerate(samples):
        per.setdefault(s.scenario, {"ade": 0.0, "fde": 0.0, "count": 0})
        rec = per[s.scenario]
        rec["ade"] += min_ade[i]
        rec["fde"] += min_fde[i]
        rec["count"] += 1
    for rec in per.values():
        rec["ade"] /= rec["count"]
        rec["fde"] /= rec["count"]
    return EvalReport(
        ade=float(min_ade.mean()), fde=float(min_fde.mean()),
        collision_rate=hits / total if total else 0.0, d_accuracy=d_acc,
        k=preds.shape[0], n_samples=len(samples),
        baseline_ade=ade(cv, truth), baseline_fde=fde(cv, truth), per_scenario=per)


def _discriminator_accuracy(samples, params, mcfg, fake_pos, zero_acoustic, chunk=256) -> float:
    if not discriminator_names(params):
        return float("nan")
    correct = 0
    for lo in range(0, len(samples), chunk):
        batch = make_batch(samples[lo:lo + chunk], zero_acoustic)
        ctx = batch_context(batch, params, mcfg).data if mcfg.disc_context else None
        fut = fake_pos[lo:lo + chunk]
        full_fake = np.concatenate([batch.observed[:, -1:], fut], axis=1)
        fake_disp = np.diff(full_fake, axis=1)
        real = discriminate(batch.obs_disp, [batch.future_disp[:, t] for t in range(mcfg.t_pred)],
                            ctx, params).data[:, 0]
        fake = discriminate(batch.obs_disp, [fake_disp[:, t] for t in range(mcfg.t_pred)],
                            ctx, params).data[:, 0]
        correct += int(np.sum(real > 0.5) + np.sum(fake < 0.5))
    return correct / (2 * len(samples))


def params_copy(params: Params) -> Params:
    return copy.deepcopy(params)
