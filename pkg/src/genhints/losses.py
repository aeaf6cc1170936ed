"""Classification and hint objectives.

All losses take batched logits ``[N, d]`` (a single ``[d]`` vector is
treated as a batch of one) and return the batch mean as a scalar tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .images import HintTransformSpec, RasterImage, transform_batch

LOG_FLOOR = math.log(1e-12)
VARIANTS = ("symmetric_kl", "mse")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class HintLossConfig:
    temperature: float = 0.8
    variant: str = "symmetric_kl"
    alpha: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise LossError(f"temperature must be positive, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise LossError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.alpha >= 0:
            raise LossError(f"alpha must be nonnegative, got {self.alpha}")


def _as_batch(logits) -> Tensor:
    t = logits if isinstance(logits, Tensor) else Tensor(logits)
    if t.data.ndim == 1:
        t = ad.reshape(t, (1, t.shape[0]))
    if t.data.ndim != 2 or t.shape[1] < 2:
        raise LossError(f"logits must be [N, d] with d >= 2, got shape {t.shape}")
    return t


def _pair(logits_a, logits_b) -> tuple[Tensor, Tensor]:
    a, b = _as_batch(logits_a), _as_batch(logits_b)
    if a.shape != b.shape:
        raise LossError(f"logit shapes differ: {a.shape} vs {b.shape}")
    return a, b


def cross_entropy(logits, labels) -> Tensor:
    """Mean of -log_softmax(logits)[label] over the batch."""
    z = _as_batch(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, d = z.shape
    if labels.shape != (n,):
        raise LossError(f"expected {n} labels, got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= d:
        raise LossError(f"labels must be integers in [0, {d}), got {labels.tolist()}")
    onehot = np.zeros((n, d))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.sum_all(ad.mul(ad.log_softmax(z, axis=1), Tensor(onehot)))
    return ad.scale(picked, -1.0 / n)


def mse_targets(logits, labels) -> Tensor:
    """Mean squared error against one-hot targets (regression-style classification)."""
    z = _as_batch(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, d = z.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= d:
        raise LossError(f"labels must be {n} integers in [0, {d})")
    onehot = np.zeros((n, d))
    onehot[np.arange(n), labels] = 1.0
    diff = ad.sub(z, Tensor(onehot))
    return ad.mean_all(ad.mul(diff, diff))


def symmetric_kl_hint(logits_a, logits_b, temperature: float = 1.0) -> Tensor:
    """0.5 * (KL(p||q) + KL(q||p)) with p, q = softmax(logits / T).

    Written as 0.5 * sum((p - q) * (log p - log q)), which is exactly symmetric
    in its arguments and exactly zero for identical inputs.
    """
    if not temperature > 0:
        raise LossError(f"temperature must be positive, got {temperature}")
    a, b = _pair(logits_a, logits_b)
    inv_t = 1.0 / temperature
    log_p = ad.clamp_min(ad.log_softmax(ad.scale(a, inv_t), axis=1), LOG_FLOOR)
    log_q = ad.clamp_min(ad.log_softmax(ad.scale(b, inv_t), axis=1), LOG_FLOOR)
    diff_p = ad.sub(ad.exp(log_p), ad.exp(log_q))
    diff_log = ad.sub(log_p, log_q)
    total = ad.sum_all(ad.mul(diff_p, diff_log))
    return ad.scale(total, 0.5 / a.shape[0])


def mse_hint(logits_a, logits_b) -> Tensor:
    """(1/d) * sum_i (a_i - b_i)^2, averaged over the batch."""
    a, b = _pair(logits_a, logits_b)
    diff = ad.sub(a, b)
    return ad.mean_all(ad.mul(diff, diff))


def hint_loss(logits_a, logits_b, config: HintLossConfig, temperature: float | None = None) -> Tensor:
    t = config.temperature if temperature is None else temperature
    if config.variant == "mse":
        return mse_hint(logits_a, logits_b)
    return symmetric_kl_hint(logits_a, logits_b, t)


def evaluate_hint_loss_on_set(
    forward: Callable[[Sequence[RasterImage]], Tensor],
    images: Sequence[RasterImage],
    spec: HintTransformSpec,
    config: HintLossConfig,
    eval_temperature: float = 1.0,
    key: Sequence[int] = (0,),
) -> float:
    """Mean hint loss of ``forward`` over ``images`` and their transformed copies.

    ``key`` fixes the per-image transform draws, so repeated evaluations of
    the same set see the same transforms.
    """
    images = list(images)
    if not images:
        raise LossError("cannot evaluate a hint loss on an empty image set")
    transformed = transform_batch(images, spec, key)
    y = forward(images)
    y_t = forward(transformed)
    a = Tensor(y.data if isinstance(y, Tensor) else y)
    b = Tensor(y_t.data if isinstance(y_t, Tensor) else y_t)
    return hint_loss(a, b, config, eval_temperature).item()
