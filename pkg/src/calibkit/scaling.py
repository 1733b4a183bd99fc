"""Accuracy-preserving scaling calibrators: temperature scaling, ensemble
temperature scaling, and the neural-network parameterized temperature."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .core import Dataset, Predictions, softmax, sorted_topk_matrix
from .errors import NumericalError
from .metrics import PROB_FLOOR
from .tinynn import MlpParams, adam_init, adam_step, backward_batch, forward_batch, init_mlp

T_MIN = 1e-2
LOG_T_RANGE = (math.log(1e-2), math.log(1e2))
GOLDEN_TOL = 1e-4

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_minimize(f, a: float, b: float, tol: float = GOLDEN_TOL) -> float:
    """Golden-section search for the minimizer of a unimodal f on [a, b]."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(z / T); preserves the argmax for any T > 0."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(logits, dtype=float) / temperature)


@dataclass(frozen=True)
class TsModel:
    temperature: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def apply_probs(self, logits: np.ndarray) -> np.ndarray:
        return apply_temperature(logits, self.temperature)


def _nll_at_temperature(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def fit_ts(dataset: Dataset) -> TsModel:
    """Learn T by minimizing validation NLL; golden-section search on log T."""
    if np.unique(dataset.labels).size == 1:
        warnings.warn("dataset contains a single class; temperature fit is degenerate")
    log_t = golden_section_minimize(
        lambda u: _nll_at_temperature(dataset.logits, dataset.labels, math.exp(u)),
        *LOG_T_RANGE,
    )
    return TsModel(temperature=math.exp(log_t))


@dataclass(frozen=True)
class EtsModel:
    """Simplex-weighted mix of softmax at T, softmax at 1, and uniform 1/C."""

    temperature: float
    weights: tuple[float, float, float]
    num_classes: int

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    def apply_probs(self, logits: np.ndarray) -> np.ndarray:
        return apply_ets(logits, self)


def apply_ets(logits: np.ndarray, model: EtsModel) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    w1, w2, w3 = model.weights
    c = z.shape[-1]
    return w1 * softmax(z / model.temperature) + w2 * softmax(z) + w3 / c


def _simplex_grid(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    pts = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            pts.append((i * step, j * step, 1.0 - i * step - j * step))
    return np.asarray(pts)


def _ets_mse_objective(p1: np.ndarray, p2: np.ndarray, labels: np.ndarray):
    """MSE to one-hot labels is quadratic in the mixture weights; precompute
    the 3x3 quadratic form so grid evaluation is O(1) per point."""
    n, c = p1.shape
    comps = [p1, p2, np.full_like(p1, 1.0 / c)]
    a = np.empty((3, 3))
    b = np.empty(3)
    onehot_dot = [comps[i][np.arange(n), labels].mean() for i in range(3)]
    for i in range(3):
        b[i] = onehot_dot[i] / c
        for j in range(3):
            a[i, j] = (comps[i] * comps[j]).sum() / (n * c)

    def value(w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        return np.einsum("gi,ij,gj->g", w, a, w) - 2.0 * w @ b

    return value


def _ets_ece_objective(q1: np.ndarray, q2: np.ndarray, correct: np.ndarray, num_bins: int, num_classes: int):
    """Squared-gap equal-width ECE of the mixed confidence, as a function of w."""
    feats = np.stack([q1, q2, np.full_like(q1, 1.0 / num_classes)], axis=1)
    corr = correct.astype(float)
    n = q1.shape[0]

    def value(w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        out = np.empty(w.shape[0])
        for g in range(w.shape[0]):
            conf = feats @ w[g]
            idx = np.clip(np.ceil(conf * num_bins).astype(int), 1, num_bins) - 1
            counts = np.bincount(idx, minlength=num_bins)
            sum_c = np.bincount(idx, weights=conf, minlength=num_bins)
            sum_a = np.bincount(idx, weights=corr, minlength=num_bins)
            nz = counts > 0
            gap = (sum_a[nz] - sum_c[nz]) / counts[nz]
            out[g] = float(((counts[nz] / n) * gap * gap).sum())
        return out

    return value


def fit_ets(dataset: Dataset, loss: str = "mse", num_bins: int = 10) -> EtsModel:
    """T from fit_ts; weights by simplex grid search (0.01) plus local
    refinement (0.001) minimizing mse to one-hot labels or the squared-gap ECE."""
    if loss not in ("mse", "ece"):
        raise ValueError("loss must be 'mse' or 'ece'")
    t = fit_ts(dataset).temperature
    z = dataset.logits
    c = dataset.num_classes
    p1 = softmax(z / t)
    p2 = softmax(z)
    if loss == "mse":
        objective = _ets_mse_objective(p1, p2, dataset.labels)
    else:
        pred = np.argmax(z, axis=1)
        rows = np.arange(len(dataset))
        objective = _ets_ece_objective(
            p1[rows, pred], p2[rows, pred], pred == dataset.labels, num_bins, c
        )

    grid = _simplex_grid(0.01)
    best = grid[int(np.argmin(objective(grid)))]

    # local refinement on a 0.001 lattice around the coarse optimum
    deltas = np.arange(-10, 11) * 0.001
    cand = []
    for d1 in deltas:
        for d2 in deltas:
            w1, w2 = best[0] + d1, best[1] + d2
            w3 = 1.0 - w1 - w2
            if w1 >= -1e-12 and w2 >= -1e-12 and w3 >= -1e-12:
                cand.append((max(w1, 0.0), max(w2, 0.0), max(w3, 0.0)))
    cand = np.asarray(cand)
    best = cand[int(np.argmin(objective(cand)))]
    best = best / best.sum()
    return EtsModel(temperature=t, weights=(float(best[0]), float(best[1]), float(best[2])), num_classes=c)


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def softplus_inverse(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus is positive")
    return y + math.log1p(-math.exp(-y))


@dataclass(frozen=True)
class PtsTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1000
    steps: int = 100_000
    num_bins: int = 10
    hidden: tuple[int, ...] = (5, 5)
    loss: str = "ece"  # ece | mse
    seed: int = 17
    topk: int = 10

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.steps, self.num_bins, self.topk) <= 0:
            raise ValueError("all training-config values must be positive")
        if self.loss not in ("ece", "mse"):
            raise ValueError("loss must be 'ece' or 'mse'")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


@dataclass(frozen=True)
class PtsModel:
    """Temperature network over the sorted top-k logits; T >= t_min via softplus."""

    mlp: MlpParams
    input_width: int
    num_classes: int
    t_min: float = T_MIN
    config: PtsTrainConfig = field(default_factory=PtsTrainConfig)

    def apply_probs(self, logits: np.ndarray) -> np.ndarray:
        return apply_pts(logits, self)


def pts_constant_model(temperature: float, num_classes: int, config: PtsTrainConfig | None = None) -> PtsModel:
    """A PTS model pinned to a constant temperature (zero weights, output bias
    chosen so t_min + softplus(bias) == temperature). Used as a TS-equivalent
    reference point."""
    cfg = config or PtsTrainConfig()
    widths = [cfg.topk, *cfg.hidden, 1]
    mlp = init_mlp(widths, seed=0)
    for w in mlp.weights:
        w[:] = 0.0
    for b in mlp.biases:
        b[:] = 0.0
    mlp.biases[-1][0] = softplus_inverse(temperature - T_MIN)
    return PtsModel(mlp=mlp, input_width=cfg.topk, num_classes=num_classes, config=cfg)


def pts_temperature_batch(logits: np.ndarray, model: PtsModel) -> np.ndarray:
    zs = sorted_topk_matrix(np.asarray(logits, dtype=float), model.input_width)
    raw, _ = forward_batch(model.mlp, zs)
    return model.t_min + softplus(raw)


def pts_temperature(logits: np.ndarray, model: PtsModel) -> float:
    return float(pts_temperature_batch(np.asarray(logits, dtype=float)[None, :], model)[0])


def apply_pts(logits: np.ndarray, model: PtsModel) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    t = pts_temperature_batch(z, model)
    probs = softmax(z / t[:, None])
    return probs[0] if single else probs


def _pts_q_batch(mlp: MlpParams, zs: np.ndarray, z: np.ndarray, pred: np.ndarray, t_min: float):
    """Calibrated confidences Q for a batch plus everything backward needs."""
    raw, cache = forward_batch(mlp, zs)
    t = t_min + softplus(raw)
    probs = softmax(z / t[:, None])
    rows = np.arange(z.shape[0])
    q = probs[rows, pred]
    return q, (raw, cache, t, probs)


def _pts_backward_q(mlp: MlpParams, aux, z: np.ndarray, pred: np.ndarray, dq: np.ndarray) -> MlpParams:
    """Backpropagate per-sample dL/dQ through softmax(z/T) and the network."""
    raw, cache, t, probs = aux
    rows = np.arange(z.shape[0])
    q = probs[rows, pred]
    # dQ/dT = -(Q/T^2) * (z_pred - E_p[z])
    expected_z = (probs * z).sum(axis=1)
    dq_dt = -(q / (t * t)) * (z[rows, pred] - expected_z)
    # dT/draw = sigmoid(raw)
    draw = dq * dq_dt * expit(raw)
    grads, _ = backward_batch(mlp, cache, draw)
    return grads


def _ece_loss_and_dq(q: np.ndarray, correct: np.ndarray, num_bins: int, frozen_bins: np.ndarray | None = None):
    """Squared-gap binned loss with bin memberships and bin accuracies frozen;
    the gradient flows only through the per-bin mean of Q."""
    beta = q.shape[0]
    idx = frozen_bins if frozen_bins is not None else np.clip(np.ceil(q * num_bins).astype(int), 1, num_bins) - 1
    counts = np.bincount(idx, minlength=num_bins)
    sum_q = np.bincount(idx, weights=q, minlength=num_bins)
    sum_a = np.bincount(idx, weights=correct.astype(float), minlength=num_bins)
    safe = np.maximum(counts, 1)
    mean_q = sum_q / safe
    acc = sum_a / safe
    gap = acc - mean_q
    loss = float(((counts / beta) * gap * gap).sum())
    dq = (2.0 / beta) * (mean_q - acc)[idx]
    return loss, dq, idx


def pts_ece_loss(model: PtsModel, dataset: Dataset, num_bins: int | None = None) -> float:
    """Full-dataset value of the squared-gap binned training objective."""
    m = num_bins or model.config.num_bins
    pred = np.argmax(dataset.logits, axis=1)
    q, _ = _pts_q_batch(
        model.mlp,
        sorted_topk_matrix(dataset.logits, model.input_width),
        dataset.logits,
        pred,
        model.t_min,
    )
    loss, _, _ = _ece_loss_and_dq(q, pred == dataset.labels, m)
    return loss


def _recenter_biases(mlp: MlpParams, inputs: np.ndarray) -> None:
    """Center every pre-activation over the fit data, then start the output at
    T ~= 1. The sorted top-k logits are all large and positive, so zero biases
    leave narrow hidden layers permanently dead; centering keeps each unit
    active on about half the data."""
    h = inputs
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = h @ w + b
        b -= a.mean(axis=0)
        if i == last:
            b += softplus_inverse(1.0 - T_MIN)
        h = np.maximum(a - a.mean(axis=0), 0.0)


RESUSCITATE_EVERY = 500


def _resuscitate_dead_units(mlp: MlpParams, inputs: np.ndarray) -> None:
    """Bump the bias of any hidden unit that is inactive on the entire fit set
    just past zero, so its gradient path reopens. No-op when nothing is dead;
    narrow layers otherwise risk permanent ReLU death mid-training."""
    h = inputs
    for i in range(len(mlp.weights) - 1):
        a = h @ mlp.weights[i] + mlp.biases[i]
        dead = a.max(axis=0) <= 0.0
        if np.any(dead):
            shift = -np.median(a[:, dead], axis=0)
            mlp.biases[i][dead] += shift
            a[:, dead] += shift
        h = np.maximum(a, 0.0)


def fit_pts(dataset: Dataset, config: PtsTrainConfig | None = None) -> PtsModel:
    """Train the temperature network with Adam on seeded uniform minibatches.

    Per step, bin memberships and bin accuracies are constants of the batch;
    the gradient reaches the network only through the calibrated confidences.
    """
    cfg = config or PtsTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    widths = [cfg.topk, *cfg.hidden, 1]
    mlp = init_mlp(widths, rng=rng)

    z_all = dataset.logits
    zs_all = sorted_topk_matrix(z_all, cfg.topk)
    _recenter_biases(mlp, zs_all)
    state = adam_init(mlp)
    pred_all = np.argmax(z_all, axis=1)
    corr_all = pred_all == dataset.labels
    n = len(dataset)

    last_resuscitation = cfg.steps - cfg.steps // 10
    for step in range(cfg.steps):
        if step and step % RESUSCITATE_EVERY == 0 and step <= last_resuscitation:
            _resuscitate_dead_units(mlp, zs_all)
        idx = rng.integers(0, n, size=cfg.batch_size)
        z, zs, pred, corr = z_all[idx], zs_all[idx], pred_all[idx], corr_all[idx]
        q, aux = _pts_q_batch(mlp, zs, z, pred, T_MIN)
        if cfg.loss == "ece":
            loss, dq, _ = _ece_loss_and_dq(q, corr, cfg.num_bins)
        else:
            resid = q - corr.astype(float)
            loss = float((resid * resid).mean())
            dq = 2.0 * resid / cfg.batch_size
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite training loss at step {state.step}")
        grads = _pts_backward_q(mlp, aux, z, pred, dq)
        adam_step(mlp, grads, state, cfg.learning_rate)

    if not mlp.check_finite():
        raise NumericalError("non-finite parameters after training")
    return PtsModel(mlp=mlp, input_width=cfg.topk, num_classes=dataset.num_classes, config=cfg)
