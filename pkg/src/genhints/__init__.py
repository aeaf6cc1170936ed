"""Generative hints: invariance hints enforced on virtual examples.

A small numpy autodiff engine, image transforms, hint losses, virtual-example
samplers, an alternating classification/hint trainer and a CLI harness.
"""

from .autodiff import Tensor, backward, tensor_new
from .generators import (
    SamplerHandle,
    fit_kde,
    frechet_distance,
    noise_sampler,
    quality_report,
    sample,
    true_distribution_sampler,
)
from .images import HintTransformSpec, RasterImage, apply_hint_transform, flip_horizontal, rotate, translate
from .losses import HintLossConfig, cross_entropy, hint_loss, mse_hint, symmetric_kl_hint
from .metrics import accuracy, correlation_study, pearson
from .task import SyntheticTaskSpec, synth_dataset, true_label
from .trainer import TrainingConfig, init_classifier, run_training

__version__ = "0.1.0"
