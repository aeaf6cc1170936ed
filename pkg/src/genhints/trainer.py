"""Alternating classification / hint training of a small convolutional classifier.

Each mini-batch of labeled data gets one classification update followed by
one alpha-weighted hint update on freshly sampled virtual examples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .generators import SamplerHandle, sample
from .images import HintTransformSpec, RasterImage, stack, transform_batch
from .losses import (
    HintLossConfig,
    cross_entropy,
    evaluate_hint_loss_on_set,
    hint_loss,
    mse_targets,
)
from .metrics import accuracy
from .task import LabeledSet

logger = logging.getLogger(__name__)

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")
HIDDEN = 8
# fixed input gain, about 1 / RMS pixel value of the default task; no centering so
# the zero padding of the first convolution still matches the zero background
INPUT_SCALE = 6.4
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8

# offsets separating the random streams of one run
_ORDER, _AUG, _VIRTUAL, _HINT_T, _EVAL_VIRTUAL, _EVAL_VIRTUAL_T, _EVAL_REAL_T, _INIT = range(8)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class ClassifierParams:
    tensors: dict[str, Tensor]
    input_shape: tuple[int, int]
    num_classes: int

    def __iter__(self):
        return (self.tensors[name] for name in PARAM_NAMES)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self)


def init_classifier(
    input_shape: tuple[int, int], num_classes: int, seed: int, zero_head: bool = False
) -> ClassifierParams:
    """He-normal conv kernels, small Gaussian head, zero biases."""
    rng = np.random.default_rng([int(seed), _INIT])
    shapes = {
        "conv1_w": (HIDDEN, 1, 3, 3),
        "conv1_b": (HIDDEN,),
        "conv2_w": (HIDDEN, HIDDEN, 3, 3),
        "conv2_b": (HIDDEN,),
        "dense_w": (HIDDEN, num_classes),
        "dense_b": (num_classes,),
    }
    fan_in = {"conv1_w": 9, "conv2_w": 9 * HIDDEN, "dense_w": HIDDEN}
    tensors = {}
    for name in PARAM_NAMES:
        if name in fan_in and not (zero_head and name == "dense_w"):
            data = rng.normal(0.0, math.sqrt(2.0 / fan_in[name]), size=shapes[name])
        else:
            data = np.zeros(shapes[name])
        tensors[name] = Tensor(data, requires_grad=True)
    return ClassifierParams(tensors, tuple(input_shape), int(num_classes))


def load_classifier(arrays: dict[str, np.ndarray]) -> ClassifierParams:
    tensors = {name: Tensor(np.asarray(arrays[name]), requires_grad=True) for name in PARAM_NAMES}
    h, w = (int(v) for v in np.asarray(arrays["input_shape"]))
    return ClassifierParams(tensors, (h, w), tensors["dense_b"].shape[0])


def _batch_tensor(params: ClassifierParams, batch) -> Tensor:
    if isinstance(batch, np.ndarray):
        arr = batch
    else:
        arr = stack(batch)
    if arr.ndim != 3 or arr.shape[1:] != params.input_shape:
        raise TrainingError(f"expected images of shape {params.input_shape}, got {arr.shape[1:]}")
    return Tensor(INPUT_SCALE * arr[:, None, :, :])


def forward(params: ClassifierParams, batch, track_grad: bool = True) -> Tensor:
    """Logits [N, num_classes] for a list of images or an [N, H, W] array."""
    x = _batch_tensor(params, batch)
    p = params.tensors if track_grad else {k: Tensor(v.data) for k, v in params.tensors.items()}
    h = ad.relu(ad.conv2d(x, p["conv1_w"], p["conv1_b"], padding="same"))
    h = ad.relu(ad.conv2d(h, p["conv2_w"], p["conv2_b"], padding="valid"))
    pooled = ad.mean_axes(h, (2, 3))
    return ad.add_bias(ad.matmul(pooled, p["dense_w"]), p["dense_b"])


def predict_logits(params: ClassifierParams, batch, chunk: int = 64) -> np.ndarray:
    arr = batch if isinstance(batch, np.ndarray) else stack(batch)
    parts = [forward(params, arr[i : i + chunk], track_grad=False).data for i in range(0, len(arr), chunk)]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: ClassifierParams, state: OptimizerState, lr: float, weight_decay: float
) -> None:
    """Bias-corrected Adam with decoupled weight decay, in place."""
    missing = [n for n in PARAM_NAMES if params[n].grad is None]
    if missing:
        raise TrainingError(f"missing gradients for {missing}")
    state.step += 1
    t = state.step
    for name in PARAM_NAMES:
        p = params[name]
        g = p.grad
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - BETA1**t)
        v_hat = v / (1 - BETA2**t)
        if weight_decay:
            p.data = p.data - lr * weight_decay * p.data
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise TrainingError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# configuration / records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    alpha: float = 25.0
    train_temperature: float = 0.8
    eval_temperature: float = 1.0
    hint_spec: HintTransformSpec = HintTransformSpec(1.0, 0.05, 18.0, seed_stream=1)
    aug_spec: HintTransformSpec = HintTransformSpec(0.5, 0.05, 18.0, seed_stream=2)
    loss_variant: str = "symmetric_kl"
    scheduler: str = "cosine"
    seed: int = 0
    checkpoint_count: int = 120
    hint_only: bool = False
    real_eval_count: int = 256
    virtual_eval_count: int = 256
    test_eval_count: int = 500

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.alpha < 0:
            problems.append("alpha must be >= 0")
        if not self.train_temperature > 0 or not self.eval_temperature > 0:
            problems.append("temperatures must be > 0")
        if self.checkpoint_count < 2:
            problems.append("checkpoint_count must be >= 2")
        if self.loss_variant not in ("symmetric_kl", "mse"):
            problems.append(f"unknown loss_variant {self.loss_variant!r}")
        if self.scheduler not in ("constant", "cosine"):
            problems.append(f"unknown scheduler {self.scheduler!r}")
        if min(self.real_eval_count, self.virtual_eval_count, self.test_eval_count) < 1:
            problems.append("evaluation counts must be >= 1")
        if problems:
            raise TrainingError("; ".join(problems))

    @property
    def hint_config(self) -> HintLossConfig:
        return HintLossConfig(self.train_temperature, self.loss_variant, self.alpha)

    def steps_per_epoch(self, n_train: int) -> int:
        return math.ceil(n_train / self.batch_size)

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.scheduler == "constant":
            return self.learning_rate
        return cosine_lr(step, total_steps, self.learning_rate)


RECORD_COLUMNS = ("step", "lr", "class_loss", "hint_loss_virtual", "hint_loss_real", "test_accuracy")


@dataclass(frozen=True)
class CheckpointRow:
    step: int
    lr: float
    class_loss: float
    hint_loss_virtual: float
    hint_loss_real: float
    test_accuracy: float


@dataclass
class RunRecord:
    rows: list[CheckpointRow]
    params: ClassifierParams
    final: dict[str, float] = field(default_factory=dict)
    diverged: Optional[str] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)


def checkpoint_steps(total_steps: int, count: int) -> list[int]:
    """``count`` evenly spaced step indices from 0 to total_steps inclusive."""
    return [round(i * total_steps / (count - 1)) for i in range(count)]


# ---------------------------------------------------------------------------
# training steps
# ---------------------------------------------------------------------------


def _classification_loss(logits: Tensor, labels: np.ndarray, variant: str) -> Tensor:
    if variant == "mse":
        return mse_targets(logits, labels)
    return cross_entropy(logits, labels)


def train_step_classification(
    params: ClassifierParams,
    state: OptimizerState,
    images: Sequence[RasterImage],
    labels: np.ndarray,
    aug_spec: HintTransformSpec,
    config: TrainingConfig,
    lr: float,
    key: Sequence[int] = (0,),
) -> float:
    """One supervised update on an augmented labeled batch; returns the pre-update loss."""
    if len(images) == 0:
        raise TrainingError("empty classification batch")
    batch = transform_batch(images, aug_spec, key)
    ad.zero_grad(params)
    loss = _classification_loss(forward(params, batch), np.asarray(labels), config.loss_variant)
    ad.backward(loss)
    adam_step(params, state, lr, config.weight_decay)
    return loss.item()


def train_step_hint(
    params: ClassifierParams,
    state: OptimizerState,
    sampler: SamplerHandle,
    hint_spec: HintTransformSpec,
    config: TrainingConfig,
    lr: float,
    key: Sequence[int] = (0,),
) -> float:
    """One alpha-weighted hint update on fresh virtual examples; returns the unweighted loss.

    Takes no labels. The optimizer step is skipped when the weighted loss
    carries no gradient (alpha == 0 or an exactly invariant batch) so that
    shared Adam moments cannot move the parameters on their own.
    """
    virtual = sample(sampler, config.batch_size, (*key, _VIRTUAL))
    transformed = transform_batch(virtual, hint_spec, (*key, _HINT_T))
    ad.zero_grad(params)
    loss = hint_loss(forward(params, virtual), forward(params, transformed), config.hint_config)
    value = loss.item()
    if config.alpha == 0:
        return value
    ad.backward(ad.scale(loss, config.alpha))
    if all(not np.any(p.grad) for p in params):
        return value
    adam_step(params, state, lr, config.weight_decay)
    return value


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def accuracy_of(params: ClassifierParams, data: LabeledSet) -> float:
    preds = predict_logits(params, data.images).argmax(axis=1)
    return accuracy(preds, data.labels)


def hint_loss_on(
    params: ClassifierParams,
    images: Sequence[RasterImage],
    spec: HintTransformSpec,
    config: TrainingConfig,
    key: Sequence[int],
) -> float:
    """Hint loss at the evaluation temperature; never touches gradients."""
    return evaluate_hint_loss_on_set(
        lambda batch: predict_logits(params, batch),
        images,
        spec,
        config.hint_config,
        config.eval_temperature,
        key,
    )


def class_loss_on(params: ClassifierParams, data: LabeledSet, config: TrainingConfig) -> float:
    logits = Tensor(predict_logits(params, data.images))
    return _classification_loss(logits, data.labels, config.loss_variant).item()


# ---------------------------------------------------------------------------
# full loop
# ---------------------------------------------------------------------------


def run_training(
    config: TrainingConfig,
    dataset: LabeledSet,
    sampler: SamplerHandle,
    test_set: LabeledSet,
    params: Optional[ClassifierParams] = None,
) -> RunRecord:
    if len(dataset) == 0:
        raise TrainingError("empty training set")
    shape = dataset.images[0].shape
    num_classes = int(max(dataset.labels.max(), test_set.labels.max()) + 1)
    if params is None:
        params = init_classifier(shape, max(num_classes, 2), config.seed)
    state = OptimizerState()
    seed = config.seed

    n = len(dataset)
    per_epoch = config.steps_per_epoch(n)
    total = config.epochs * per_epoch
    marks = checkpoint_steps(total, config.checkpoint_count)

    real_slice = LabeledSet(
        dataset.images[: config.real_eval_count], dataset.labels[: config.real_eval_count]
    )
    test_slice = LabeledSet(
        test_set.images[: config.test_eval_count], test_set.labels[: config.test_eval_count]
    )
    rows: list[CheckpointRow] = []

    def record(step: int, index: int) -> None:
        virtual = sample(sampler, config.virtual_eval_count, (seed, _EVAL_VIRTUAL, index))
        real_logits = predict_logits(params, real_slice.images)
        real_moved = transform_batch(real_slice.images, config.hint_spec, (seed, _EVAL_REAL_T))
        rows.append(
            CheckpointRow(
                step=step,
                lr=config.lr_at(min(step, total), total),
                class_loss=_classification_loss(
                    Tensor(real_logits), real_slice.labels, config.loss_variant
                ).item(),
                hint_loss_virtual=hint_loss_on(
                    params, virtual, config.hint_spec, config, (seed, _EVAL_VIRTUAL_T, index)
                ),
                hint_loss_real=hint_loss(
                    Tensor(real_logits),
                    Tensor(predict_logits(params, real_moved)),
                    config.hint_config,
                    config.eval_temperature,
                ).item(),
                test_accuracy=accuracy_of(params, test_slice),
            )
        )

    def record_due(step: int) -> None:
        while len(rows) < len(marks) and marks[len(rows)] == step:
            record(step, len(rows))

    record_due(0)
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, _ORDER, epoch]).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            lr = config.lr_at(step, total)
            if not config.hint_only:
                train_step_classification(
                    params,
                    state,
                    [dataset.images[i] for i in idx],
                    dataset.labels[idx],
                    config.aug_spec,
                    config,
                    lr,
                    key=(seed, _AUG, step),
                )
            if config.alpha > 0:
                # keyed RNG: skipping the no-op hint step at alpha 0 changes no other draw
                train_step_hint(
                    params, state, sampler, config.hint_spec, config, lr, key=(seed, 0, step)
                )
            step += 1
            if not params.all_finite():
                msg = f"non-finite parameters after step {step} (epoch {epoch})"
                logger.error(msg)
                return RunRecord(rows, params, diverged=msg)
            record_due(step)

    final = {
        "train_accuracy": accuracy_of(params, dataset),
        "test_accuracy": accuracy_of(params, test_set),
        "hint_loss_real": rows[-1].hint_loss_real,
        "hint_loss_virtual": rows[-1].hint_loss_virtual,
        "hint_loss_test": hint_loss_on(
            params, test_set.images, config.hint_spec, config, (seed, _EVAL_REAL_T)
        ),
    }
    return RunRecord(rows, params, final)


def baseline_of(config: TrainingConfig) -> TrainingConfig:
    """Same run with the hint objective switched off."""
    return replace(config, alpha=0.0)
