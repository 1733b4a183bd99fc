import numpy as np
import pytest

from calibkit.binning import (
    StepFunction,
    _replace_top_confidence,
    fit_hist_binning,
    fit_irm,
    fit_irova,
    fit_irova_ts,
    fit_pbmc,
    pav,
)
from calibkit.core import Dataset, softmax
from calibkit.synth import SynthConfig, generate


def isotonic_maxmin(ys):
    """Exact unweighted isotonic solution via the max-min averaging formula."""
    n = len(ys)
    out = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(i + 1):
            worst = min(np.mean(ys[j : k + 1]) for k in range(j, n))
            best = max(best, worst)
        out[i] = best
    return out


def test_pav_monotone_input_unchanged():
    ys = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(pav(np.arange(3.0), ys), ys)


def test_pav_decreasing_input_pools_to_mean():
    assert np.allclose(pav(np.arange(3.0), [3.0, 2.0, 1.0]), [2.0, 2.0, 2.0])


def test_pav_partial_pool():
    assert np.allclose(pav(np.arange(3.0), [1.0, 3.0, 2.0]), [1.0, 2.5, 2.5])


def test_pav_weighted_hand_value():
    fitted = pav(np.arange(3.0), [0.0, 1.0, 0.0], weights=[1.0, 1.0, 2.0])
    assert np.allclose(fitted, [0.0, 1 / 3, 1 / 3])


def test_pav_matches_maxmin_oracle():
    rng = np.random.default_rng(20)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        ys = rng.normal(size=n)
        assert np.allclose(pav(np.arange(n, dtype=float), ys), isotonic_maxmin(ys), atol=1e-12)


def test_pav_idempotent():
    rng = np.random.default_rng(21)
    ys = rng.normal(size=40)
    xs = np.arange(40.0)
    once = pav(xs, ys)
    assert np.allclose(pav(xs, once), once, atol=1e-12)


def test_pav_output_is_nondecreasing():
    rng = np.random.default_rng(22)
    fitted = pav(np.arange(200.0), rng.normal(size=200))
    assert np.all(np.diff(fitted) >= -1e-12)


def test_pav_validation():
    with pytest.raises(ValueError):
        pav(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        pav(np.arange(2.0), np.zeros(3))
    with pytest.raises(ValueError):
        pav(np.arange(2.0), np.zeros(2), weights=[1.0, 0.0])
    assert pav(np.empty(0), np.empty(0)).size == 0


def test_step_function_lookup():
    f = StepFunction(x=np.array([0.2, 0.5, 0.8]), y=np.array([0.1, 0.4, 0.9]))
    assert f(0.0) == 0.1  # constant extrapolation below
    assert f(0.2) == 0.1  # knot value applies from the knot itself
    assert f(0.49) == 0.1
    assert f(0.5) == 0.4
    assert f(1.0) == 0.9
    assert np.array_equal(f(np.array([0.0, 0.6, 0.9])), [0.1, 0.4, 0.9])


def test_step_function_validation():
    with pytest.raises(ValueError):
        StepFunction(x=np.array([0.1, 0.1]), y=np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        StepFunction(x=np.array([0.1, 0.2]), y=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        StepFunction(x=np.empty(0), y=np.empty(0))


def test_hist_binning_hand_values():
    # two equal-mass bins; low bin 0/2 correct, high bin 2/2 correct
    logits = np.log(np.array([[0.55, 0.45], [0.6, 0.4], [0.9, 0.1], [0.95, 0.05]]))
    labels = np.array([1, 1, 0, 0])
    model = fit_hist_binning(Dataset(labels=labels, logits=logits), num_bins=2)
    assert np.allclose(model.outputs, [0.0, 1.0])
    assert np.allclose(model.apply_confidence(np.array([0.5, 0.99])), [0.0, 1.0])


def test_hist_binning_output_changes_with_bin_accuracy():
    logits = np.log(np.array([[0.55, 0.45], [0.6, 0.4], [0.9, 0.1], [0.95, 0.05]]))
    flipped = fit_hist_binning(Dataset(labels=np.array([0, 1, 0, 0]), logits=logits), num_bins=2)
    assert np.allclose(flipped.outputs, [0.5, 1.0])


def test_hist_binning_probs_are_valid():
    ds = generate(SynthConfig(num_samples=2000, regime="global_temp", seed=23))
    model = fit_hist_binning(ds, 10)
    probs = model.apply_probs(ds.logits)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_hist_binning_rejects_tiny_dataset():
    ds = generate(SynthConfig(num_samples=5, seed=0))
    with pytest.raises(ValueError):
        fit_hist_binning(ds, 10)


def test_irova_witness_changes_a_prediction():
    """Fit data where the top class is always wrong; the per-class isotonic
    maps then invert the ranking on a matching test point."""
    probs_fit = np.array([[0.6, 0.4], [0.7, 0.3], [0.8, 0.2]])
    ds = Dataset(labels=np.array([1, 1, 1]), logits=np.log(probs_fit))
    model = fit_irova(ds)
    out = model.apply_probs(np.log(np.array([[0.6, 0.4]])))
    assert np.argmax(out[0]) == 1


def test_irova_probs_are_valid():
    ds = generate(SynthConfig(num_samples=3000, regime="heteroscedastic", seed=24))
    probs = fit_irova(ds).apply_probs(ds.logits)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_irm_preserves_argmax():
    ds = generate(SynthConfig(num_samples=3000, regime="heteroscedastic", seed=25))
    test = generate(SynthConfig(num_samples=3000, regime="heteroscedastic", seed=26))
    probs = fit_irm(ds).apply_probs(test.logits)
    assert np.array_equal(np.argmax(probs, axis=1), np.argmax(test.logits, axis=1))
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_irova_ts_composes():
    ds = generate(SynthConfig(num_samples=3000, regime="global_temp", seed=27))
    model = fit_irova_ts(ds)
    manual = model.irova.apply_to_probs(model.ts.apply_probs(ds.logits))
    assert np.allclose(model.apply_probs(ds.logits), manual)


def test_pbmc_preserves_argmax():
    ds = generate(SynthConfig(num_samples=5000, regime="global_temp", seed=28))
    test = generate(SynthConfig(num_samples=5000, regime="global_temp", seed=29))
    model = fit_pbmc(ds, num_bins=10, seed=28)
    probs = model.apply_probs(test.logits)
    assert np.array_equal(np.argmax(probs, axis=1), np.argmax(test.logits, axis=1))
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_pbmc_outputs_in_unit_interval():
    ds = generate(SynthConfig(num_samples=5000, regime="heteroscedastic", seed=30))
    model = fit_pbmc(ds, num_bins=10, seed=30)
    assert np.all(model.outputs >= 0.0)
    assert np.all(model.outputs <= 1.0)


def test_pbmc_rejects_tiny_dataset():
    ds = generate(SynthConfig(num_samples=20, seed=0))
    with pytest.raises(ValueError):
        fit_pbmc(ds, num_bins=10)


def test_replace_top_confidence_rescales_rest():
    probs = np.array([[0.5, 0.3, 0.2]])
    out = _replace_top_confidence(probs, np.array([0.8]), preserve_argmax=False)
    assert out[0, 0] == pytest.approx(0.8)
    assert out[0, 1] == pytest.approx(0.2 * 0.3 / 0.5)
    assert out.sum() == pytest.approx(1.0)


def test_replace_top_confidence_argmax_clamp():
    probs = np.array([[0.4, 0.35, 0.25]])
    free = _replace_top_confidence(probs, np.array([0.1]), preserve_argmax=False)
    assert np.argmax(free[0]) != 0
    clamped = _replace_top_confidence(probs, np.array([0.1]), preserve_argmax=True)
    assert np.argmax(clamped[0]) == 0
    assert clamped.sum() == pytest.approx(1.0)
