import numpy as np
import pytest

from socgan import autodiff as ad
from socgan import gan, sim
from socgan.autodiff import Tensor
from socgan.data import window_samples
from socgan.features import attach_features

TINY = gan.ModelConfig(t_obs=4, t_pred=3, hidden_dim=6, embed_dim=4, context_dim=5,
                       pool_grid_n=2, crop_g=3, event_slots=1, noise_dim=2)


def cv_samples(n_scen=4, t_obs=4, t_pred=3, seed=0, g=3, slots=1):
    out = []
    for i, s in enumerate(sim.make_constant_velocity_dataset(n_scen, seed, n_frames=12)):
        out += [attach_features(w, s, g=g, slots=slots)
                for w in window_samples(s, t_obs, t_pred, 2, i)]
    return out


@pytest.fixture(scope="module")
def samples():
    return cv_samples()


def positions(arr):
    return [Tensor(arr[:, t]) for t in range(arr.shape[1])]


def test_variety_loss_exact_match_is_zero():
    truth = np.random.default_rng(0).standard_normal((3, 4, 2))
    assert gan.variety_loss([positions(truth)], truth).item() == 0.0


def test_variety_loss_takes_min_per_agent():
    truth = np.zeros((1, 2, 2))
    a = np.full((1, 2, 2), 1.0)          # squared error 2 per step
    b = np.full((1, 2, 2), 0.5)          # squared error 0.5 per step
    assert gan.variety_loss([positions(a), positions(b)], truth).item() == 0.5


def test_variety_loss_k1_is_mse():
    rng = np.random.default_rng(2)
    truth, pred = rng.standard_normal((2, 5, 3, 2))
    expect = np.mean(np.sum((pred - truth) ** 2, axis=-1))
    assert gan.variety_loss([positions(pred)], truth).item() == pytest.approx(expect, rel=1e-12)


def test_variety_loss_below_every_sample():
    rng = np.random.default_rng(3)
    truth = rng.standard_normal((4, 3, 2))
    preds = rng.standard_normal((3, 4, 3, 2))
    v = gan.variety_loss([positions(p) for p in preds], truth).item()
    for p in preds:
        assert v <= gan.variety_loss([positions(p)], truth).item() + 1e-15


def test_zero_params_give_stationary_generator_and_half_score(samples):
    params = gan.zero_params(gan.init_model(TINY, 0))
    batch = gan.make_batch(samples[:5])
    ctx = gan.batch_context(batch, params, TINY)
    z = np.random.default_rng(0).standard_normal((5, TINY.noise_dim))
    pos, disps = gan.generate(ctx, z, batch.last_disp, batch.origin, TINY.t_pred, params)
    for p in pos:
        np.testing.assert_array_equal(p.data, batch.origin)
    score = gan.discriminate(batch.obs_disp, disps, ctx, params)
    assert np.all(score.data == 0.5)


def test_generator_is_deterministic_and_noise_matters(samples):
    params = gan.init_model(TINY, 1)
    batch = gan.make_batch(samples[:3])
    ctx = gan.batch_context(batch, params, TINY)
    rng = np.random.default_rng(5)
    z1, z2 = rng.standard_normal((2, 3, TINY.noise_dim))
    run = lambda z: np.stack([p.data for p in gan.generate(  # noqa: E731
        ctx, z, batch.last_disp, batch.origin, TINY.t_pred, params)[0]])
    np.testing.assert_array_equal(run(z1), run(z1))
    assert not np.allclose(run(z1), run(z2))


def test_discriminator_score_in_open_unit_interval(samples):
    params = gan.init_model(TINY, 2)
    for p in gan.discriminator_names(params):
        params[p].data *= 50
    batch = gan.make_batch(samples[:6])
    s = gan.discriminate(batch.obs_disp, list(batch.future_disp.transpose(1, 0, 2)),
                         gan.batch_context(batch, params, TINY).data, params)
    loss = ad.bce_loss(s, 1.0).item()
    assert np.isfinite(loss)


def _snapshot(params, names):
    return {n: params[n].data.copy() for n in names}


def test_steps_only_touch_their_own_parameters(samples, monkeypatch):
    params = gan.init_model(TINY, 3)
    g_names, d_names = gan.generator_names(params), gan.discriminator_names(params)
    cfg = gan.TrainConfig(k=2, batch=4)
    batch = gan.make_batch(samples[:4])
    before_g = _snapshot(params, g_names)
    before_d = _snapshot(params, d_names)

    # D step only: make the G update a no-op by giving it a zero learning rate
    opt = gan.Optimizers(ad.AdamState(lr=0.0), ad.AdamState(lr=1e-2))
    gan.train_step(batch, params, cfg, TINY, opt, np.random.default_rng(0))
    for n in g_names:
        assert params[n].data.tobytes() == before_g[n].tobytes()
    assert any(params[n].data.tobytes() != before_d[n].tobytes() for n in d_names)

    before_d = _snapshot(params, d_names)
    opt = gan.Optimizers(ad.AdamState(lr=1e-2), ad.AdamState(lr=0.0))
    gan.train_step(batch, params, cfg, TINY, opt, np.random.default_rng(0))
    for n in d_names:
        assert params[n].data.tobytes() == before_d[n].tobytes()
    assert any(params[n].data.tobytes() != before_g[n].tobytes() for n in g_names)


def test_train_step_is_bitwise_reproducible(samples):
    out = []
    for _ in range(2):
        params = gan.init_model(TINY, 4)
        opt = gan.Optimizers.create(gan.TrainConfig())
        losses = gan.train_step(gan.make_batch(samples[:8]), params, gan.TrainConfig(k=3),
                                TINY, opt, np.random.default_rng(9))
        out.append((losses, {n: p.data.tobytes() for n, p in params.items()}))
    assert out[0] == out[1]


def test_supervised_degenerate_config_loss_is_mse(samples):
    params = gan.init_model(TINY, 5)
    cfg = gan.TrainConfig(k=1, lambda_adv=0.0)
    batch = gan.make_batch(samples[:6])
    rng = np.random.default_rng(1)
    z = np.random.default_rng(1)
    _ = z.standard_normal((6, TINY.noise_dim))       # consumed by the D step
    z_g = z.standard_normal((6, TINY.noise_dim))
    ctx = gan.batch_context(batch, params, TINY)
    pos, _ = gan.generate(ctx, z_g, batch.last_disp, batch.origin, TINY.t_pred, params)
    pred = np.stack([p.data for p in pos], axis=1)
    expect = np.mean(np.sum((pred - batch.future) ** 2, axis=-1))
    opt = gan.Optimizers(ad.AdamState(lr=1e-3), ad.AdamState(lr=1e-3))
    losses = gan.train_step(batch, params, cfg, TINY, opt, rng)
    assert losses.g_loss == pytest.approx(expect, rel=1e-12)
    assert losses.g_loss == losses.variety


def test_supervised_steps_reduce_mse():
    data = cv_samples(n_scen=12)[:50]
    params = gan.init_model(TINY, 6)
    cfg = gan.TrainConfig(k=1, lambda_adv=0.0, lr_g=3e-3)
    opt = gan.Optimizers.create(cfg)
    rng = np.random.default_rng(0)
    batch = gan.make_batch(data)
    losses = [gan.train_step(batch, params, cfg, TINY, opt, rng).variety for _ in range(200)]
    assert losses[-1] < 0.1 * losses[0]


def test_train_zero_epochs_returns_initial_params(samples):
    init = gan.init_model(TINY, 7)
    params, log = gan.train(samples, gan.TrainConfig(epochs=0, seed=7), TINY)
    assert log == []
    for n in init:
        np.testing.assert_array_equal(params[n].data, init[n].data)


def test_train_is_deterministic(samples):
    cfg = gan.TrainConfig(epochs=2, batch=8, k=2, seed=3)
    a, log_a = gan.train(samples, cfg, TINY)
    b, log_b = gan.train(samples, cfg, TINY)
    assert [e.csv() for e in log_a] == [e.csv() for e in log_b]
    for n in a:
        assert a[n].data.tobytes() == b[n].data.tobytes()


def test_train_reports_nan_with_context(samples):
    params = gan.init_model(TINY, 8)
    params["gen.out.b"].data[:] = np.nan
    with pytest.raises(gan.NumericError, match="epoch 1, step 0"):
        gan.train(samples, gan.TrainConfig(epochs=1), TINY, params=params)


def test_metric_identity_and_offset():
    truth = np.random.default_rng(0).standard_normal((4, 6, 2))
    assert gan.ade(truth, truth) == 0.0 and gan.fde(truth, truth) == 0.0
    shifted = truth + np.array([1.0, 0.0])
    assert gan.ade(shifted, truth) == pytest.approx(1.0, abs=1e-15)
    assert gan.fde(shifted, truth) == pytest.approx(1.0, abs=1e-15)


def test_metric_length_mismatch_raises():
    with pytest.raises(ValueError, match="shape"):
        gan.ade(np.zeros((3, 2)), np.zeros((4, 2)))


def test_collision_rate_cases():
    close = np.array([[[0.0, 0.0]] * 5, [[0.1, 0.0]] * 5])
    assert gan.collision_rate(close, [0.3, 0.3]) == 1.0
    apart = np.array([[[0.0, 0.0]] * 5, [[5.0, 0.0]] * 5])
    assert gan.collision_rate(apart, [0.3, 0.3]) == 0.0
    assert gan.collision_rate(close[:1], [0.3]) == 0.0


def test_constant_velocity_baseline_is_exact_on_straight_lines():
    t = np.arange(10.0)[:, None]
    path = np.hstack([0.7 * t, -0.2 * t])
    pred = gan.constant_velocity(path[:4], 6)
    assert gan.ade(pred, path[4:]) < 1e-12


def test_best_of_k_is_monotone_with_nested_noise(samples):
    params = gan.init_model(TINY, 9)
    ades = [gan.evaluate(samples, params, TINY, k_eval=k, seed=1).ade for k in (1, 2, 3, 5)]
    assert all(b <= a for a, b in zip(ades, ades[1:]))


def test_evaluate_report_ranges(samples):
    r = gan.evaluate(samples, gan.init_model(TINY, 10), TINY, k_eval=2, seed=0)
    assert r.ade >= 0 and r.fde >= 0
    assert 0 <= r.collision_rate <= 1 and 0 <= r.d_accuracy <= 1
    assert sum(v["count"] for v in r.per_scenario.values()) == r.n_samples
    assert r.baseline_ade < 1e-9


def test_zero_acoustic_changes_inputs_only_for_events():
    s = cv_samples(n_scen=1)
    a = gan.make_batch(s)
    b = gan.make_batch(s, zero_acoustic=True)
    np.testing.assert_array_equal(b.acoustic, 0)
    np.testing.assert_array_equal(a.dynamic, b.dynamic)


def test_lr_schedule_runs_from_one_to_decay():
    cfg = gan.TrainConfig(epochs=11, lr_decay=0.1)
    scales = [cfg.lr_scale(e) for e in range(1, 12)]
    assert scales[0] == pytest.approx(1.0)
    assert scales[-1] == pytest.approx(0.1)
    assert scales[5] == pytest.approx(0.55)
    assert all(a >= b for a, b in zip(scales, scales[1:]))
    assert gan.TrainConfig(epochs=5, lr_decay=1.0).lr_scale(3) == 1.0
    with pytest.raises(ValueError):
        gan.TrainConfig(lr_decay=0.0)


def test_lstm_forget_bias_starts_open():
    params = gan.init_model(gan.ModelConfig(), 0)
    H = gan.ModelConfig().hidden_dim
    b = params["gen.lstm.b"].data
    assert b[H:2 * H].min() > 0.8
    assert abs(b[:H]).max() <= 1 / np.sqrt(H)
