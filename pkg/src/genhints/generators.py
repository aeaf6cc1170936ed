"""Virtual-example sources and a Fréchet-distance quality measure.

Three sampler kinds span the quality axis:

* ``true_distribution`` renders fresh images from the task grammar,
* ``kde`` resamples a fitted corpus and adds Gaussian pixel noise of std
  ``quality_knob`` (0 memorises the corpus),
* ``noise`` emits i.i.d. uniform pixels.

Sampling is a pure function of (handle seed, request key): nothing is cached
between calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .images import RasterImage, stack
from .task import SyntheticTaskSpec, render_batch

SAMPLER_KINDS = ("true_distribution", "kde", "noise")
FEATURE_DIM = 32
NEG_EIG_TOLERANCE = 1e-8

Key = Union[int, Sequence[int]]


class SamplerError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SamplerHandle:
    kind: str
    seed: int
    shape: tuple[int, int]
    quality_knob: float = 0.0
    corpus: Optional[np.ndarray] = field(default=None, repr=False)
    task: Optional[SyntheticTaskSpec] = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise SamplerError(f"unknown sampler kind {self.kind!r}")
        if self.quality_knob < 0:
            raise SamplerError("quality_knob must be nonnegative")
        if self.kind == "kde" and (self.corpus is None or len(self.corpus) == 0):
            raise SamplerError("kde sampler needs a nonempty fitted corpus")
        if self.kind == "true_distribution" and self.task is None:
            raise SamplerError("true_distribution sampler needs a task spec")

    def describe(self) -> str:
        if self.kind == "kde":
            return f"kde_sigma={self.quality_knob:g}"
        return self.kind


def fit_kde(corpus: Sequence[RasterImage], bandwidth: float, seed: int) -> SamplerHandle:
    if len(corpus) == 0:
        raise SamplerError("cannot fit a kde sampler on an empty corpus")
    if bandwidth < 0:
        raise SamplerError(f"bandwidth must be nonnegative, got {bandwidth}")
    try:
        arr = stack(corpus).copy()
    except ValueError as exc:
        raise SamplerError(str(exc)) from exc
    arr.setflags(write=False)
    return SamplerHandle(
        kind="kde", seed=int(seed), shape=arr.shape[1:], quality_knob=float(bandwidth), corpus=arr
    )


def true_distribution_sampler(task: SyntheticTaskSpec, seed: int) -> SamplerHandle:
    side = task.image_side
    return SamplerHandle(kind="true_distribution", seed=int(seed), shape=(side, side), task=task)


def noise_sampler(shape: tuple[int, int], seed: int) -> SamplerHandle:
    return SamplerHandle(kind="noise", seed=int(seed), shape=tuple(shape))


def _key_tuple(key: Key) -> tuple[int, ...]:
    if isinstance(key, (int, np.integer)):
        return (int(key),)
    return tuple(int(k) for k in key)


def sample(handle: SamplerHandle, n: int, key: Key) -> list[RasterImage]:
    """Draw ``n`` unlabeled images; identical (handle.seed, key) gives identical output."""
    if n <= 0:
        raise SamplerError(f"sample count must be positive, got {n}")
    rng = np.random.default_rng([handle.seed, *_key_tuple(key)])
    h, w = handle.shape
    if handle.kind == "noise":
        return [RasterImage(p) for p in rng.random((n, h, w))]
    if handle.kind == "true_distribution":
        labels = rng.integers(0, handle.task.num_classes, size=n)
        return [RasterImage(p) for p in render_batch(handle.task, labels, rng)]
    picks = rng.integers(0, len(handle.corpus), size=n)
    base = handle.corpus[picks]
    if handle.quality_knob > 0:
        base = base + rng.normal(0.0, handle.quality_knob, size=base.shape)
    return [RasterImage(p) for p in np.clip(base, 0.0, 1.0)]


# ---------------------------------------------------------------------------
# quality measurement
# ---------------------------------------------------------------------------


def _projection(n_pixels: int, embedder_seed: int) -> np.ndarray:
    rng = np.random.default_rng([int(embedder_seed), n_pixels, 0xFEA7])
    return rng.normal(0.0, 1.0 / np.sqrt(n_pixels), size=(n_pixels, FEATURE_DIM))


def embed_features(images: Sequence[RasterImage], embedder_seed: int) -> np.ndarray:
    """Frozen random projection to 32 dims followed by tanh."""
    if len(images) == 0:
        raise SamplerError("cannot embed an empty image list")
    flat = stack(images).reshape(len(images), -1)
    return np.tanh(flat @ _projection(flat.shape[1], embedder_seed))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -NEG_EIG_TOLERANCE:
        raise SamplerError(f"covariance has negative eigenvalue {vals.min():.3g}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_moments(mu1, cov1, mu2, cov2) -> float:
    mu1, mu2 = np.atleast_1d(mu1).astype(float), np.atleast_1d(mu2).astype(float)
    cov1, cov2 = np.atleast_2d(cov1).astype(float), np.atleast_2d(cov2).astype(float)
    root1 = _psd_sqrt(cov1)
    # sqrt(cov1 cov2) has the same trace as sqrt(root1 cov2 root1), which is symmetric PSD
    inner = root1 @ cov2 @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -NEG_EIG_TOLERANCE:
        raise SamplerError(f"covariance product has negative eigenvalue {vals.min():.3g}")
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def frechet_distance(real_feats: np.ndarray, gen_feats: np.ndarray) -> float:
    a = np.asarray(real_feats, dtype=np.float64)
    b = np.asarray(gen_feats, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise SamplerError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise SamplerError("each feature set needs at least 2 rows")
    return frechet_from_moments(
        a.mean(axis=0), np.cov(a, rowvar=False, ddof=1), b.mean(axis=0), np.cov(b, rowvar=False, ddof=1)
    )


@dataclass(frozen=True)
class QualityReport:
    sampler: str
    fid_analog: float
    sample_count: int


MIN_REPORT_SAMPLES = 256


def quality_report(
    handle: SamplerHandle,
    real_corpus: Sequence[RasterImage],
    n_samples: int,
    embedder_seed: int,
    key: Key = 0,
) -> QualityReport:
    if n_samples < MIN_REPORT_SAMPLES:
        raise SamplerError(f"quality reports need at least {MIN_REPORT_SAMPLES} samples")
    generated = sample(handle, n_samples, key)
    fid = frechet_distance(
        embed_features(real_corpus, embedder_seed), embed_features(generated, embedder_seed)
    )
    return QualityReport(handle.describe(), fid, n_samples)
