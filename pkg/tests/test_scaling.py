import numpy as np
import pytest

from calibkit.core import Dataset, Predictions, softmax, sorted_topk_matrix
from calibkit.metrics import ece
from calibkit.scaling import (
    EtsModel,
    PtsTrainConfig,
    TsModel,
    _ece_loss_and_dq,
    _pts_backward_q,
    _pts_q_batch,
    apply_ets,
    apply_pts,
    apply_temperature,
    fit_ets,
    fit_pts,
    fit_ts,
    golden_section_minimize,
    pts_constant_model,
    pts_ece_loss,
    pts_temperature,
    softplus,
    softplus_inverse,
)
from calibkit.synth import SynthConfig, generate
from calibkit.tinynn import grad_check


def test_golden_section_quadratic():
    assert golden_section_minimize(lambda u: (u - 1.3) ** 2, -5.0, 5.0) == pytest.approx(1.3, abs=1e-4)


def test_apply_temperature_identity_and_softening():
    z = np.array([[2.0, 0.0, -1.0]])
    assert np.allclose(apply_temperature(z, 1.0), softmax(z))
    soft = apply_temperature(z, 10.0)
    assert soft[0].max() < softmax(z)[0].max()
    assert np.argmax(soft) == np.argmax(z)


def test_apply_temperature_rejects_nonpositive():
    with pytest.raises(ValueError):
        apply_temperature(np.zeros((1, 2)), 0.0)
    with pytest.raises(ValueError):
        TsModel(temperature=-1.0)


def test_fit_ts_recovers_global_scale():
    ds = generate(SynthConfig(num_samples=20_000, regime="global_temp", scale=2.5, seed=17))
    t = fit_ts(ds).temperature
    assert 2.3 <= t <= 2.7
    # scaling by the fitted temperature should nearly reproduce the true probabilities
    assert np.abs(apply_temperature(ds.logits, t) - ds.true_probs).max() < 0.05


def test_fit_ts_near_one_on_calibrated_data():
    ds = generate(SynthConfig(num_samples=20_000, regime="global_temp", scale=1.0, seed=3))
    assert fit_ts(ds).temperature == pytest.approx(1.0, abs=0.05)


def test_fit_ts_warns_on_single_class():
    ds = Dataset(labels=np.zeros(10, dtype=int), logits=np.random.default_rng(0).normal(size=(10, 3)))
    with pytest.warns(UserWarning):
        fit_ts(ds)


def test_ets_model_validation():
    with pytest.raises(ValueError):
        EtsModel(temperature=2.0, weights=(0.5, 0.6, -0.1), num_classes=5)
    with pytest.raises(ValueError):
        EtsModel(temperature=2.0, weights=(0.5, 0.4, 0.2), num_classes=5)


def test_apply_ets_degenerate_weights():
    z = np.random.default_rng(1).normal(size=(20, 6))
    pure_ts = EtsModel(temperature=3.0, weights=(1.0, 0.0, 0.0), num_classes=6)
    assert np.allclose(apply_ets(z, pure_ts), apply_temperature(z, 3.0))
    pure_id = EtsModel(temperature=3.0, weights=(0.0, 1.0, 0.0), num_classes=6)
    assert np.allclose(apply_ets(z, pure_id), softmax(z))
    uniform = EtsModel(temperature=3.0, weights=(0.0, 0.0, 1.0), num_classes=6)
    assert np.allclose(apply_ets(z, uniform), 1.0 / 6.0)


def test_fit_ets_improves_over_uncalibrated():
    ds = generate(SynthConfig(num_samples=20_000, regime="global_temp", scale=2.5, seed=5))
    test = generate(SynthConfig(num_samples=20_000, regime="global_temp", scale=2.5, seed=6))
    for loss in ("mse", "ece"):
        model = fit_ets(ds, loss=loss)
        assert sum(model.weights) == pytest.approx(1.0, abs=1e-9)
        before = ece(Predictions.from_probs(softmax(test.logits), test.labels), 10).value
        after = ece(Predictions.from_probs(model.apply_probs(test.logits), test.labels), 10).value
        assert after < before / 3


def test_fit_ets_rejects_unknown_loss():
    ds = generate(SynthConfig(num_samples=100, seed=0))
    with pytest.raises(ValueError):
        fit_ets(ds, loss="nll")


def test_softplus_inverse_round_trip():
    for y in (1e-3, 0.5, 1.0, 4.0, 30.0):
        assert softplus(np.array(softplus_inverse(y)))[()] == pytest.approx(y, rel=1e-12)
    with pytest.raises(ValueError):
        softplus_inverse(0.0)


def test_pts_train_config_validation():
    with pytest.raises(ValueError):
        PtsTrainConfig(steps=0)
    with pytest.raises(ValueError):
        PtsTrainConfig(loss="nll")
    with pytest.raises(ValueError):
        PtsTrainConfig(hidden=(5, 0))


def test_pts_constant_model_matches_temperature_scaling():
    z = np.random.default_rng(2).normal(size=(50, 10)) * 3.0
    for t in (0.5, 1.0, 2.5):
        model = pts_constant_model(t, num_classes=10)
        temps = np.array([pts_temperature(row, model) for row in z])
        assert np.allclose(temps, t, atol=1e-12)
        assert np.allclose(apply_pts(z, model), apply_temperature(z, t))


def test_apply_pts_single_row_matches_batch():
    ds = generate(SynthConfig(num_samples=200, regime="heteroscedastic", seed=7))
    model = fit_pts(ds, PtsTrainConfig(steps=50, seed=7))
    batch = apply_pts(ds.logits[:5], model)
    for i in range(5):
        assert np.allclose(apply_pts(ds.logits[i], model), batch[i])


def test_ece_loss_and_dq_hand_value():
    # two bins: (0.0, 0.5] holds q=0.3 (wrong), (0.5, 1.0] holds q=0.9, 0.7 (one correct)
    q = np.array([0.3, 0.9, 0.7])
    correct = np.array([False, True, False])
    loss, dq, idx = _ece_loss_and_dq(q, correct, num_bins=2)
    gap_lo = 0.0 - 0.3
    gap_hi = 0.5 - 0.8
    assert loss == pytest.approx((1 / 3) * gap_lo**2 + (2 / 3) * gap_hi**2)
    assert np.array_equal(idx, [0, 1, 1])
    assert dq == pytest.approx((2 / 3) * np.array([0.3 - 0.0, 0.8 - 0.5, 0.8 - 0.5]))


def test_pts_gradient_matches_finite_differences():
    """End-to-end check of the analytic gradient through softmax(z/T) and the net."""
    rng = np.random.default_rng(9)
    ds = generate(SynthConfig(num_samples=64, regime="heteroscedastic", seed=9))
    cfg = PtsTrainConfig(hidden=(4, 3), seed=9)
    model = fit_pts(ds, PtsTrainConfig(hidden=(4, 3), steps=30, seed=9))
    z = ds.logits
    zs = sorted_topk_matrix(z, cfg.topk)
    pred = np.argmax(z, axis=1)
    corr = pred == ds.labels

    def loss_fn(params):
        q, aux = _pts_q_batch(params, zs, z, pred, model.t_min)
        loss, dq, _ = _ece_loss_and_dq(q, corr, cfg.num_bins)
        return loss, _pts_backward_q(params, aux, z, pred, dq)

    report = grad_check(model.mlp, loss_fn, h=1e-5)
    assert report.max_rel_error <= 1e-4


def test_fit_pts_bitwise_reproducible():
    ds = generate(SynthConfig(num_samples=500, regime="heteroscedastic", seed=11))
    cfg = PtsTrainConfig(steps=200, seed=11)
    a = fit_pts(ds, cfg)
    b = fit_pts(ds, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.mlp.weights, b.mlp.weights))
    assert all(np.array_equal(x, y) for x, y in zip(a.mlp.biases, b.mlp.biases))


def test_fit_pts_seed_changes_result():
    ds = generate(SynthConfig(num_samples=500, regime="heteroscedastic", seed=11))
    a = fit_pts(ds, PtsTrainConfig(steps=200, seed=11))
    b = fit_pts(ds, PtsTrainConfig(steps=200, seed=12))
    assert not all(np.array_equal(x, y) for x, y in zip(a.mlp.weights, b.mlp.weights))


def test_pts_preserves_argmax():
    ds = generate(SynthConfig(num_samples=2000, regime="heteroscedastic", seed=13))
    model = fit_pts(ds, PtsTrainConfig(steps=300, seed=13))
    probs = model.apply_probs(ds.logits)
    assert np.array_equal(np.argmax(probs, axis=1), np.argmax(ds.logits, axis=1))


def test_pts_temperatures_respect_floor():
    ds = generate(SynthConfig(num_samples=500, regime="heteroscedastic", seed=14))
    model = fit_pts(ds, PtsTrainConfig(steps=100, seed=14))
    temps = np.array([pts_temperature(row, model) for row in ds.logits[:100]])
    assert np.all(temps >= model.t_min)


def test_pts_training_reduces_objective():
    ds = generate(SynthConfig(num_samples=5000, regime="heteroscedastic", seed=15))
    trained = fit_pts(ds, PtsTrainConfig(steps=2000, seed=15))
    untrained = pts_constant_model(1.0, num_classes=ds.num_classes)
    assert pts_ece_loss(trained, ds) < pts_ece_loss(untrained, ds)


def test_fit_pts_mse_loss_trains():
    ds = generate(SynthConfig(num_samples=5000, regime="heteroscedastic", seed=16))
    model = fit_pts(ds, PtsTrainConfig(steps=2000, seed=16, loss="mse"))
    preds = Predictions.from_probs(model.apply_probs(ds.logits), ds.labels)
    raw = Predictions.from_probs(softmax(ds.logits), ds.labels)
    assert ece(preds, 10).value < ece(raw, 10).value
