"""Minimal fully-connected network: forward, reverse-mode gradients, Adam,
and finite-difference gradient checking. Double precision throughout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass
class MlpParams:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors.

    Hidden layers use ReLU, the output layer is linear with width 1.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class AdamState:
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_mlp(widths: Sequence[int], seed: int | None = None, rng: np.random.Generator | None = None) -> MlpParams:
    """Symmetric uniform fan-in/fan-out init (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    if rng is None:
        rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases)


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def forward_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Affine -> ReLU on hidden layers, linear scalar output per row of x (B, k).

    Returns the (B,) outputs and the activation cache needed by backward_batch.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError("input width does not match the first layer")
    cache = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        h = a if i == last else np.maximum(a, 0.0)
        cache.append(h)
    return h[:, 0], cache


def forward(params: MlpParams, x: np.ndarray) -> tuple[float, list]:
    out, cache = forward_batch(params, np.asarray(x, dtype=float)[None, :])
    return float(out[0]), cache


def backward_batch(params: MlpParams, cache: list, upstream: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Exact reverse-mode gradients, summed over the batch.

    upstream is the (B,) gradient of the loss w.r.t. the scalar outputs.
    ReLU subgradient at 0 is 0. Also returns the gradient w.r.t. the input.
    """
    upstream = np.asarray(upstream, dtype=float)
    grads = zeros_like_params(params)
    delta = upstream[:, None]
    for i in range(len(params.weights) - 1, -1, -1):
        h_prev = cache[i]
        grads.weights[i] = h_prev.T @ delta
        grads.biases[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * (cache[i] > 0.0)
    return grads, delta


def backward(params: MlpParams, cache: list, upstream: float) -> tuple[MlpParams, np.ndarray]:
    grads, dx = backward_batch(params, cache, np.array([upstream]))
    return grads, dx[0]


def adam_init(params: MlpParams) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float) -> tuple[MlpParams, AdamState]:
    """Standard bias-corrected Adam update. Mutates params and state in place
    and returns them (single-owner optimizer state)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i in range(len(params.weights)):
        for p, g, m, v in (
            (params.weights[i], grads.weights[i], state.m_weights[i], state.v_weights[i]),
            (params.biases[i], grads.biases[i], state.m_biases[i], state.v_biases[i]),
        ):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    num_checked: int


def grad_check(
    params: MlpParams,
    loss_fn: Callable[[MlpParams], tuple[float, MlpParams]],
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare loss_fn's analytic gradients against central finite differences
    on every parameter entry; returns the maximum relative error."""
    _, analytic = loss_fn(params)
    work = params.copy()
    max_err = 0.0
    count = 0

    def check_array(arr: np.ndarray, ga: np.ndarray):
        nonlocal max_err, count
        flat = arr.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.shape[0]):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_fn(work)
            flat[j] = orig - h
            lm, _ = loss_fn(work)
            flat[j] = orig
            fd = (lp - lm) / (2 * h)
            g = gflat[j]
            diff = abs(g - fd)
            scale = max(abs(g), abs(fd))
            err = 0.0 if diff <= 1e-9 else diff / max(scale, 1e-8)
            max_err = max(max_err, err)
            count += 1

    for i in range(len(work.weights)):
        check_array(work.weights[i], analytic.weights[i])
        check_array(work.biases[i], analytic.biases[i])
    return GradCheckReport(max_rel_error=max_err, num_checked=count)
