"""Synthetic 4-class shape task used as the training distribution.

Classes: 0 centred blob, 1 horizontal bar, 2 vertical bar, 3 blob pair side by
side. Every renderer is mirror-symmetric as a class: flipping an image of
class c yields another image of class c.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .images import RasterImage, quantize

CLASS_NAMES = ("blob", "horizontal_bar", "vertical_bar", "blob_pair")
LABEL_THRESHOLD = 0.3
NOT_IN_GRAMMAR = -1


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticTaskSpec:
    image_side: int = 16
    num_classes: int = 4
    jitter_fraction: float = 0.2
    intensity_low: float = 0.6
    intensity_high: float = 1.0
    noise_std: float = 0.02

    def __post_init__(self):
        if self.num_classes != 4:
            raise TaskError("the shape grammar defines exactly 4 classes")
        if self.image_side < 12:
            raise TaskError(f"image_side must be at least 12, got {self.image_side}")
        if not 0 < self.intensity_low <= self.intensity_high <= 1:
            raise TaskError("intensity range must satisfy 0 < low <= high <= 1")
        if self.noise_std < 0 or not 0 <= self.jitter_fraction <= 0.25:
            raise TaskError("noise_std must be >= 0 and jitter_fraction in [0, 0.25]")


def _gauss(coord: np.ndarray, centre: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.exp(-((coord - centre) ** 2) / (2.0 * sigma * sigma))


def _soft_span(coord: np.ndarray, centre: np.ndarray, half: np.ndarray) -> np.ndarray:
    # flat inside |coord-centre| <= half, Gaussian roll-off (sd 0.6 px) outside
    over = np.maximum(np.abs(coord - centre) - half, 0.0)
    return np.exp(-(over**2) / (2.0 * 0.36))


def render_batch(spec: SyntheticTaskSpec, labels: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Render one image per label as an [N, side, side] array."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
        raise TaskError(f"labels must be in [0, {spec.num_classes})")
    n, s = labels.size, spec.image_side
    centre = (s - 1) / 2.0
    j = spec.jitter_fraction * s
    jitter = rng.uniform(-j, j, size=(n, 2))
    amp = rng.uniform(spec.intensity_low, spec.intensity_high, size=n)
    size_u = rng.random(n)
    noise = rng.normal(0.0, spec.noise_std, size=(n, s, s))

    col = lambda v: np.asarray(v, dtype=np.float64).reshape(-1, 1, 1)  # noqa: E731
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    unit = s / 16.0
    cx, cy = col(centre + jitter[:, 0]), col(centre + jitter[:, 1])
    u = col(size_u)
    bar_half = (4.5 + 1.0 * u) * unit

    blob_sigma = (1.1 + 0.3 * u) * unit
    blob = _gauss(xs, cx, blob_sigma) * _gauss(ys, cy, blob_sigma)
    hbar = _soft_span(xs, cx, bar_half) * _gauss(ys, cy, 0.7 * unit)
    vbar = _gauss(xs, cx, 0.7 * unit) * _soft_span(ys, cy, bar_half)
    sep = (3.4 + 0.4 * u) * unit
    pair_cx = np.clip(cx, sep + 1.0, s - 2.0 - sep)  # keep both blobs in frame
    pair_sigma = 0.95 * unit
    pair = (_gauss(xs, pair_cx - sep, pair_sigma) + _gauss(xs, pair_cx + sep, pair_sigma)) * _gauss(
        ys, cy, pair_sigma
    )
    shapes = np.stack([blob, hbar, vbar, pair])[labels, np.arange(n)]
    return quantize(np.clip(col(amp) * shapes + noise, 0.0, 1.0))


def render(spec: SyntheticTaskSpec, label: int, rng: np.random.Generator) -> RasterImage:
    """Render a single image of class ``label``."""
    return RasterImage(render_batch(spec, [label], rng)[0])


def _runs(active: np.ndarray) -> int:
    """Number of maximal runs of True in a 1-D boolean array."""
    padded = np.concatenate(([False], active, [False]))
    return int(np.count_nonzero(padded[1:] & ~padded[:-1]))


def true_label(img: RasterImage) -> int:
    """Ground-truth labeler for the shape grammar.

    Uses only column/row occupancy counts of the thresholded image, which a
    horizontal flip permutes without changing, so label(flip(x)) == label(x)
    holds exactly. Returns NOT_IN_GRAMMAR for images no renderer produces.
    """
    mask = img.pixels > LABEL_THRESHOLD
    cols = mask.any(axis=0)
    rows = mask.any(axis=1)
    width, height = int(cols.sum()), int(rows.sum())
    if width == 0 or mask.sum() > 0.4 * mask.size:
        return NOT_IN_GRAMMAR
    col_runs, row_runs = _runs(cols), _runs(rows)
    if row_runs != 1 or col_runs > 2:
        return NOT_IN_GRAMMAR
    if col_runs == 2:
        return 3
    # size thresholds are in units of side / 16 so they track the renderers
    unit = max(img.shape) / 16.0
    if width >= 2 * height and width >= 6 * unit:
        return 1
    if height >= 2 * width and height >= 6 * unit:
        return 2
    if width <= 5 * unit and height <= 5 * unit:
        return 0
    return NOT_IN_GRAMMAR


def is_valid(img: RasterImage, spec: SyntheticTaskSpec) -> bool:
    """True when ``img`` has the task shape and parses as one of the classes."""
    return img.shape == (spec.image_side, spec.image_side) and true_label(img) != NOT_IN_GRAMMAR


def sample_labeled(
    spec: SyntheticTaskSpec, n: int, rng: np.random.Generator
) -> tuple[list[RasterImage], np.ndarray]:
    """Draw ``n`` images with uniformly random classes."""
    labels = rng.integers(0, spec.num_classes, size=n)
    return [RasterImage(p) for p in render_batch(spec, labels, rng)], labels


@dataclass
class LabeledSet:
    images: list[RasterImage]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.images)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != self.labels.shape[0]:
            raise TaskError("image and label counts differ")


def _balanced(spec: SyntheticTaskSpec, n: int, rng: np.random.Generator) -> LabeledSet:
    labels = np.arange(n) % spec.num_classes
    rng.shuffle(labels)
    return LabeledSet([RasterImage(p) for p in render_batch(spec, labels, rng)], labels)


def synth_dataset(
    spec: SyntheticTaskSpec, n_train: int, n_test: int, seed: int
) -> tuple[LabeledSet, LabeledSet]:
    """Class-balanced train and test sets, deterministic in ``seed``."""
    if n_train < spec.num_classes or n_test < spec.num_classes:
        raise TaskError(
            f"need at least {spec.num_classes} train and test examples, got {n_train}/{n_test}"
        )
    train_ss, test_ss = np.random.SeedSequence([int(seed), 0x5EED]).spawn(2)
    return (
        _balanced(spec, n_train, np.random.default_rng(train_ss)),
        _balanced(spec, n_test, np.random.default_rng(test_ss)),
    )


def labels_of(images: Sequence[RasterImage]) -> np.ndarray:
    return np.array([true_label(im) for im in images], dtype=np.int64)
