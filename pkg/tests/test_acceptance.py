"""Acceptance criteria A1-A10, each recorded as one PASS/FAIL line in the session summary."""
import math
import statistics
import time

import numpy as np
import pytest
from conftest import record

from socgan import autodiff as ad
from socgan import cli, gan, sim
from socgan.autodiff import Tape, Tensor
from socgan.config import RunConfig
from socgan.data import (CLASSES, PEDESTRIAN, SKATER, AcousticEvent, EventCategory,
                         ObstacleMap, load_scenario, save_scenario, scenario_from_tracks,
                         validate_scenario)
from socgan.encoder import (EncoderState, LstmParams, PoolingConfig, grid_cell, lstm_cell,
                            social_pool)
from socgan.gradcheck import run_battery
from socgan.pipeline import build_samples, pair_key, split_named

SEEDS = (7, 8, 9)
ACCEPTANCE_MIX = sim.DatasetSpec(crossing=60, circle_swap=60, corridor=40, siren_pair=20)
INTERACTION_MIX = sim.DatasetSpec(crossing=40, circle_swap=40, corridor=20, siren_pair=40)


# ---------------------------------------------------------------- A1


def test_a1_gradient_battery():
    t0 = time.perf_counter()
    results = run_battery()
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.error / r.tol for r in results)
    ok = not failed and elapsed < 60
    record("A1", ok, f"{len(results)} checks, failed={failed or 'none'}, "
                     f"worst err/tol={worst:.2e}, {elapsed:.1f}s")
    assert not failed
    assert elapsed < 60


# ---------------------------------------------------------------- A2


def test_a2_analytic_cases():
    checks = {}
    x = Tensor(0.0, requires_grad=True)
    with Tape() as tape:
        y = ad.sigmoid(x)
    tape.backward(y)
    checks["sigmoid(0)=0.5"] = y.item() == 0.5
    checks["sigmoid'(0)=0.25"] = float(x.grad) == 0.25
    checks["bce(0.5,1)=ln2"] = abs(ad.bce_loss(Tensor(0.5), 1.0).item() - math.log(2)) <= 1e-12

    zero = LstmParams(Tensor(np.zeros((2, 12))), Tensor(np.zeros((3, 12))), Tensor(np.zeros(12)))
    out = lstm_cell(np.ones((1, 2)), EncoderState(Tensor(np.zeros((1, 3))),
                                                  Tensor(np.ones((1, 3)))), zero)
    checks["zero LSTM h'"] = bool(np.all(np.abs(out.h.data - 0.5 * np.tanh(0.5)) <= 1e-12))

    cfg = gan.ModelConfig(t_obs=4, t_pred=5, hidden_dim=6, embed_dim=4, context_dim=5,
                          pool_grid_n=2, crop_g=3, event_slots=1, noise_dim=3)
    params = gan.zero_params(gan.init_model(cfg, 0))
    rng = np.random.default_rng(0)
    observed = np.cumsum(rng.standard_normal((3, 4, 2)), axis=1)
    ctx = Tensor(rng.standard_normal((3, 5)))
    pos, disps = gan.generate(ctx, rng.standard_normal((3, 3)), observed[:, -1] - observed[:, -2],
                              observed[:, -1], 5, params)
    checks["zero G stationary"] = all(np.array_equal(p.data, observed[:, -1]) for p in pos)
    score = gan.discriminate(np.diff(observed, axis=1), disps, ctx.data, params)
    checks["zero D score 0.5"] = bool(np.all(score.data == 0.5))

    failed = [k for k, v in checks.items() if not v]
    record("A2", not failed, f"{len(checks)} cases, failed={failed or 'none'}")
    assert not failed


# ---------------------------------------------------------------- A3


def test_a3_pooling_properties():
    rng = np.random.default_rng(3)
    cfg = PoolingConfig(side=4.0, n=4)
    checks = {}

    perm_ok = True
    for _ in range(50):
        n = int(rng.integers(2, 9))
        pos = np.concatenate([[[0.0, 0.0]], rng.uniform(-2.5, 2.5, (n, 2))])
        vec = rng.standard_normal((n + 1, 6))
        order = np.concatenate([[0], 1 + rng.permutation(n)])
        a = social_pool(0, pos, Tensor(vec), cfg)
        b = social_pool(0, pos[order], Tensor(vec[order]), cfg)
        perm_ok &= a.data.tobytes() == b.data.tobytes()
    checks["permutation invariance"] = perm_ok

    vec = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [50.0, 60.0]]))
    near = social_pool(0, [[0, 0], [0.5, 0.5], [2.0, 0.0]], vec, cfg)
    alone = social_pool(0, [[0, 0], [0.5, 0.5]], Tensor(vec.data[:2]), cfg)
    checks["locality"] = near.data.tobytes() == alone.data.tobytes()

    solo = social_pool(0, [[0.0, 0.0]], Tensor(np.array([[7.0, 7.0]])), cfg)
    checks["self-exclusion"] = bool(np.all(solo.data == 0))

    small = PoolingConfig(side=4.0, n=2)
    hand = social_pool(0, [[0.0, 0.0], [1.0, 0.0]], Tensor(np.array([[0.0], [5.0]])), small)
    checks["(1,0) bin"] = (int(grid_cell(np.array([1.0, 0.0]), 4.0, 2)) == 3
                           and hand.data.tolist() == [0.0, 0.0, 0.0, 5.0])

    failed = [k for k, v in checks.items() if not v]
    record("A3", not failed, f"{len(checks)} properties, failed={failed or 'none'}")
    assert not failed


# ---------------------------------------------------------------- A4


def _head_on_pairs():
    rng = np.random.default_rng(4)
    for k in range(6):
        cls = [PEDESTRIAN, SKATER, CLASSES["Robot"]][k % 3]
        ang = rng.uniform(0, 2 * math.pi)
        d = rng.uniform(3, 6)
        p = np.array([math.cos(ang), math.sin(ang)]) * d
        yield [sim.GoalSpec(tuple(-p), tuple(p), cls), sim.GoalSpec(tuple(p), tuple(-p), cls)]


def test_a4_simulator_properties():
    t0 = time.perf_counter()
    scenarios = sim.make_dataset(ACCEPTANCE_MIX, 7)
    elapsed = time.perf_counter() - t0
    stats = sim.overlap_stats(scenarios)
    speed_violations = sum(len(validate_scenario(s)) for s in scenarios)
    counts = [len(s.agent_ids()) for s in scenarios]
    sym_err = 0.0
    for goals in _head_on_pairs():
        pos = sim.simulate(goals).tracks().positions
        sym_err = max(sym_err, float(np.max(np.abs(pos[:, 0] + pos[:, 1]))))
    ttc = sim.time_to_collision((4.0, 0.0), (-2.0, 0.0), 1.0)

    ok = (len(scenarios) == 200 and min(counts) >= 2 and max(counts) <= 8
          and stats.fraction < 0.01 and stats.worst_ratio >= 0.8 and speed_violations == 0
          and sym_err <= 1e-6 and abs(ttc - 1.5) <= 1e-12 and elapsed < 120)
    record("A4", ok, f"{len(scenarios)} scenarios, overlap={stats.fraction:.5f}, "
                     f"closest={stats.worst_ratio:.3f}, speed violations={speed_violations}, "
                     f"symmetry err={sym_err:.1e}, t_c={ttc}, {elapsed:.0f}s")
    assert len(scenarios) == 200 and min(counts) >= 2 and max(counts) <= 8
    assert stats.fraction < 0.01
    assert stats.worst_ratio >= 0.8
    assert speed_violations == 0
    assert sym_err <= 1e-6
    assert abs(ttc - 1.5) <= 1e-12
    assert elapsed < 120


# ---------------------------------------------------------------- A5


def test_a5_metrics():
    rng = np.random.default_rng(5)
    truth = rng.standard_normal((10, 12, 2))
    checks = {
        "identity": gan.ade(truth, truth) == 0.0 and gan.fde(truth, truth) == 0.0,
        "offset": (abs(gan.ade(truth + [1.0, 0.0], truth) - 1.0) < 1e-12
                   and abs(gan.fde(truth + [1.0, 0.0], truth) - 1.0) < 1e-12),
    }
    rc = RunConfig(t_obs=8, t_pred=12)
    scen = sim.make_constant_velocity_dataset(10, 5)
    samples = build_samples(scen, rc)
    params = gan.init_model(rc.model_config(), 5)
    ades = [gan.evaluate(samples, params, rc.model_config(), k_eval=k, seed=5).ade
            for k in (1, 2, 3, 5, 8)]
    checks["best-of-k monotone"] = all(b <= a for a, b in zip(ades, ades[1:]))
    observed = np.stack([s.observed for s in samples])
    future = np.stack([s.future for s in samples])
    cv_ade = gan.ade(gan.constant_velocity(observed, rc.t_pred), future)
    checks["CV exact"] = cv_ade < 1e-9
    failed = [k for k, v in checks.items() if not v]
    record("A5", not failed, f"best-of-k ADE {['%.3f' % a for a in ades]}, CV ADE={cv_ade:.1e}")
    assert not failed


# ---------------------------------------------------------------- A6


def test_a6_supervised_smoke():
    t0 = time.perf_counter()
    rc = RunConfig(seed=7, epochs=30, lambda_adv=0.0, k_variety=1, stride=1)
    scenarios = sim.make_constant_velocity_dataset(200, 7)
    names = [f"cv_{i:04d}" for i in range(len(scenarios))]
    train_idx, val_idx = split_named(names, rc.val_fraction, rc.seed)
    params, history = gan.train(build_samples(scenarios, rc, train_idx), rc.train_config(),
                                rc.model_config(), build_samples(scenarios, rc, val_idx))
    val = build_samples(scenarios, rc, val_idx)
    final = gan.evaluate(val, params, rc.model_config(), k_eval=1, seed=rc.seed).ade
    first = history[0].val_ade
    elapsed = time.perf_counter() - t0
    ok = final < 0.05 and final < 0.1 * first and elapsed < 300
    record("A6", ok, f"val ADE epoch 1={first:.4f}, final={final:.4f} "
                     f"({final / first:.1%} of epoch 1), {elapsed:.0f}s")
    assert final < 0.05
    assert final < 0.1 * first
    assert elapsed < 300


# ---------------------------------------------------------------- A7-A9


def _interaction_run(seed: int) -> dict:
    t0 = time.perf_counter()
    rc = RunConfig(seed=seed)
    named = sim.make_dataset(INTERACTION_MIX, seed, rc.sim_config(), names=True)
    names = [n for n, _ in named]
    scenarios = [s for _, s in named]
    fit_idx, test_idx = split_named(names, 0.2, seed)
    sub_train, sub_val = split_named([names[i] for i in fit_idx], 0.1, seed)
    train_idx = [fit_idx[i] for i in sub_train]
    val_idx = [fit_idx[i] for i in sub_val]

    mcfg = rc.model_config()
    try:
        params, history = gan.train(build_samples(scenarios, rc, train_idx), rc.train_config(),
                                    mcfg, build_samples(scenarios, rc, val_idx))
    except gan.NumericError as exc:
        return {"seed": seed, "nan": str(exc), "seconds": time.perf_counter() - t0}

    inter = [i for i in test_idx if names[i].startswith(("crossing", "circle_swap"))]
    sirens = [i for i in test_idx if names[i].startswith("siren")]
    inter_samples = build_samples(scenarios, rc, inter)
    siren_samples = build_samples(scenarios, rc, sirens)
    report = gan.evaluate(inter_samples, params, mcfg, k_eval=5, seed=seed)
    with_aco = gan.evaluate(siren_samples, params, mcfg, k_eval=5, seed=seed)
    without = gan.evaluate(siren_samples, params, mcfg, k_eval=5, seed=seed, zero_acoustic=True)
    return {
        "seed": seed,
        "nan": None,
        "final_d_acc": history[-1].d_acc,
        "ade": report.ade,
        "cv_ade": report.baseline_ade,
        "siren_ade": with_aco.ade,
        "siren_ade_zeroed": without.ade,
        "siren_pairs": len({pair_key(names[i]) for i in sirens}),
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="session")
def interaction_runs():
    return [_interaction_run(s) for s in SEEDS]


@pytest.mark.slow
def test_a7_adversarial_diagnostic(interaction_runs):
    run = interaction_runs[0]
    assert run["seed"] == 7
    no_nan = run["nan"] is None
    d_acc = run.get("final_d_acc", float("nan"))
    in_band = no_nan and 0.3 <= d_acc <= 0.7
    note = "" if in_band else "  [outside 0.3-0.7: flagged for investigation]"
    record("A7", no_nan, f"seed 7, 50 epochs, NaN={'yes' if not no_nan else 'no'}, "
                         f"final D accuracy={d_acc:.3f}{note}")
    # the accuracy band is a reported diagnostic; only a non-finite run fails
    assert no_nan, run["nan"]
    if not in_band:
        import warnings
        warnings.warn(f"final discriminator accuracy {d_acc:.3f} outside [0.3, 0.7]")


@pytest.mark.slow
def test_a8_interaction_benefit(interaction_runs):
    assert all(r["nan"] is None for r in interaction_runs)
    model = statistics.median(r["ade"] for r in interaction_runs)
    base = statistics.median(r["cv_ade"] for r in interaction_runs)
    slowest = max(r["seconds"] for r in interaction_runs)
    per_seed = ", ".join(f"{r['seed']}: {r['ade']:.3f} vs {r['cv_ade']:.3f}"
                         for r in interaction_runs)
    ok = model <= 1.05 * base and slowest < 900
    record("A8", ok, f"median best-of-5 ADE {model:.3f} vs CV {base:.3f} "
                     f"(limit {1.05 * base:.3f}); per seed {per_seed}; slowest {slowest:.0f}s")
    assert model <= 1.05 * base
    assert slowest < 900


@pytest.mark.slow
def test_a9_acoustic_ablation(interaction_runs):
    assert all(r["nan"] is None for r in interaction_runs)
    active = statistics.median(r["siren_ade"] for r in interaction_runs)
    zeroed = statistics.median(r["siren_ade_zeroed"] for r in interaction_runs)
    per_seed = ", ".join(f"{r['seed']}: {r['siren_ade']:.3f} vs {r['siren_ade_zeroed']:.3f}"
                         for r in interaction_runs)
    record("A9", active < zeroed, f"median siren best-of-5 ADE active={active:.4f}, "
                                  f"zeroed={zeroed:.4f}; per seed {per_seed}")
    assert active < zeroed


# ---------------------------------------------------------------- A10

A10_CONFIG = """\
n_crossing=2
n_circle_swap=2
n_corridor=1
n_siren_pair=1
t_obs=4
t_pred=3
stride=3
hidden_dim=6
embed_dim=4
context_dim=5
pool_grid_n=2
crop_g=3
event_slots=1
noise_dim=2
epochs=2
batch=16
k_variety=2
"""


def _random_scenario(rng):
    n_frames, n_agents = int(rng.integers(2, 8)), int(rng.integers(1, 5))
    pos = rng.uniform(-30, 30, (n_frames, n_agents, 2))
    pos[rng.random((n_frames, n_agents)) < 0.2] = np.nan
    classes = [CLASSES[c] for c in rng.choice(sorted(CLASSES), n_agents)]
    ids = rng.choice(1000, n_agents, replace=False).tolist()
    events = tuple(AcousticEvent(tuple(rng.uniform(-9, 9, 2).tolist()), float(rng.uniform(0, 9)),
                                 EventCategory(int(rng.integers(0, 3))), int(t), int(t) + 3)
                   for t in rng.integers(0, 10, int(rng.integers(0, 4))))
    grid = rng.random((int(rng.integers(1, 6)), int(rng.integers(1, 6)))) < 0.4
    m = ObstacleMap(tuple(rng.uniform(-5, 5, 2).tolist()), float(rng.uniform(0.1, 1)), grid)
    # keep the first and last frames non-empty so the frame range survives the file
    pos[0, 0] = pos[-1, 0] = rng.uniform(-1, 1, 2)
    return scenario_from_tracks(float(rng.uniform(0.05, 1)), int(rng.integers(0, 50)), pos, ids,
                                classes, m, events)


def test_a10_determinism_and_persistence(tmp_path):
    checks = {}
    (tmp_path / "run.cfg").write_text(A10_CONFIG)
    cfg = str(tmp_path / "run.cfg")
    for tag in ("a", "b"):
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / tag)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    checks["simulate bytes"] = all((tmp_path / "a" / f).read_bytes() ==
                                   (tmp_path / "b" / f).read_bytes() for f in files)
    for tag in ("a", "b"):
        assert cli.main(["train", "--config", cfg, "--data", str(tmp_path / "a"),
                         "--out", str(tmp_path / f"{tag}.ckpt")]) == 0
    checks["checkpoint bytes"] = ((tmp_path / "a.ckpt").read_bytes()
                                  == (tmp_path / "b.ckpt").read_bytes())

    from socgan.checkpoint import load_checkpoint, save_checkpoint
    params, rc = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(tmp_path / "c.ckpt", params, rc)
    inp = str(tmp_path / "a" / "siren_0000_on.tsv")
    for tag in ("a", "b", "c"):
        assert cli.main(["predict", "--checkpoint", str(tmp_path / f"{tag}.ckpt"), "--input", inp,
                         "--out", str(tmp_path / f"{tag}.pred"), "--k", "3"]) == 0
    pred = (tmp_path / "a.pred").read_bytes()
    checks["prediction bytes"] = pred == (tmp_path / "b.pred").read_bytes()
    checks["checkpoint round-trip"] = (pred == (tmp_path / "c.pred").read_bytes()
                                       and (tmp_path / "c.ckpt").read_bytes()
                                       == (tmp_path / "a.ckpt").read_bytes())

    rng = np.random.default_rng(10)
    roundtrip_ok = True
    for k in range(100):
        s = _random_scenario(rng)
        save_scenario(s, tmp_path / "rt", f"s{k}")
        back = load_scenario(tmp_path / "rt" / f"s{k}.tsv")
        roundtrip_ok &= (back.dt == s.dt and back.map == s.map and back.events == s.events
                         and [f.t for f in back.frames] == [f.t for f in s.frames]
                         and all(sorted(a.agents, key=lambda x: x.agent_id)
                                 == sorted(b.agents, key=lambda x: x.agent_id)
                                 for a, b in zip(back.frames, s.frames)))
    checks["file round-trips (100 random)"] = roundtrip_ok

    failed = [k for k, v in checks.items() if not v]
    record("A10", not failed, f"{len(checks)} checks, failed={failed or 'none'}")
    assert not failed
