"""Finite-difference verification of the end-to-end backward pass.

The graph structure (neighbor indices, centroid vectors) is captured
once and frozen, removing the non-differentiable selection steps; the
remaining computation is smooth almost everywhere, so central
differences in 64-bit mode should agree with the analytic gradients to
high precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .model import ModelConfig, forward, init_params
from .training import compute_loss


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    checked: int


@dataclass
class GradCheckReport:
    results: list
    loss: float

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.results)

    def worst(self) -> TensorCheck:
        return max(self.results, key=lambda r: r.max_rel_error)


def gradient_check(
    config: ModelConfig,
    seed: int = 0,
    batch: int = 2,
    samples_per_tensor: int = 3,
    task: str = "multilabel",
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs in float64 with epsilon = 1e-4 * (1 + |theta|) per entry and
    relative error |a - n| / max(|a|, |n|, 1e-6), sampling a few entries
    from every trainable tensor.
    """
    if samples_per_tensor < 1:
        raise ParameterError("samples_per_tensor must be >= 1")
    config.validate()
    params = init_params(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 101])
    x = rng.normal(0.0, 1.0, (batch, config.in_frames, config.in_mels))
    if task == "multilabel":
        y = (rng.random((batch, config.num_classes)) < 0.3).astype(np.float64)
    else:
        y = rng.integers(0, config.num_classes, size=batch)

    logits, frozen = forward(x, params, config, training=True, capture=True, update_stats=False)
    loss = compute_loss(logits, y, task)
    loss_value = loss.item()
    grads = T.backward(loss, params)

    def loss_at() -> float:
        with T.no_grad():
            out = forward(x, params, config, training=True, frozen=frozen, update_stats=False)
            return compute_loss(out, y, task).item()

    picker = np.random.default_rng([seed, 202])
    results = []
    for name, tensor in params.trainable():
        flat = tensor.data.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        chosen = picker.choice(flat.size, size=count, replace=False)
        worst = 0.0
        for i in chosen:
            theta = flat[i]
            eps = 1e-4 * (1.0 + abs(theta))
            flat[i] = theta + eps
            plus = loss_at()
            flat[i] = theta - eps
            minus = loss_at()
            flat[i] = theta
            numeric = (plus - minus) / (2.0 * eps)
            analytic = grads[name].reshape(-1)[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, float(rel))
        results.append(TensorCheck(name=name, max_rel_error=worst, checked=count))
    return GradCheckReport(results=results, loss=loss_value)
