"""Flat ``section.key=value`` experiment configuration.

One assignment per line, ``#`` starts a comment. Keys mirror the nested
dataclass fields, e.g. ``training.hint_spec.flip_probability=1.0``. The
resolved form lists every key in sorted order and is what gets hashed.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .task import SyntheticTaskSpec
from .trainer import TrainingConfig, TrainingError

PAPER_ALPHAS = (0.1, 0.5, 1.0, 5.0, 10.0, 25.0, 50.0)
STUDY_BANDWIDTHS = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_test: int = 2000
    seed: int = 0
    path: str = ""


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "true_distribution"
    bandwidth: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class StudyConfig:
    # the virtual-vs-real study trains hint-only for a short schedule
    bandwidths: tuple = STUDY_BANDWIDTHS
    epochs: int = 5
    n_samples: int = 1024
    embedder_seed: int = 0
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple = PAPER_ALPHAS


@dataclass(frozen=True)
class ExperimentConfig:
    task: SyntheticTaskSpec = SyntheticTaskSpec()
    data: DataConfig = DataConfig()
    training: TrainingConfig = TrainingConfig()
    sampler: SamplerConfig = SamplerConfig()
    seeds: tuple = (0, 1, 2, 3, 4)
    with_baseline: bool = False
    output_dir: str = "runs"
    sweep: SweepConfig = SweepConfig()
    study: StudyConfig = StudyConfig()


# ---------------------------------------------------------------------------
# flattening
# ---------------------------------------------------------------------------


def flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, default: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            kind = type(default[0]) if default else float
            return tuple(kind(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc


def _rebuild(template: Any, flat: dict[str, Any], prefix: str = "") -> Any:
    kwargs = {}
    for f in dataclasses.fields(template):
        value = getattr(template, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            kwargs[f.name] = _rebuild(value, flat, key + ".")
        else:
            kwargs[f.name] = flat[key]
    return type(template)(**kwargs)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    defaults = flatten(ExperimentConfig())
    values = dict(defaults)
    unknown, malformed = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            malformed.append(f"line {lineno}: {line!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            unknown.append(key)
            continue
        values[key] = _parse(raw, defaults[key], key)
    if malformed:
        raise ConfigError(f"{source}: malformed lines: {', '.join(malformed)}")
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(sorted(unknown))}")
    try:
        config = _rebuild(ExperimentConfig(), values)
    except (TypeError, ValueError, TrainingError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    validate(config)
    return config


def validate(config: ExperimentConfig) -> None:
    if not config.seeds:
        raise ConfigError("seeds must list at least one seed")
    if config.sampler.kind not in ("true_distribution", "kde", "noise"):
        raise ConfigError(f"sampler.kind: unknown sampler {config.sampler.kind!r}")
    if config.sampler.bandwidth < 0:
        raise ConfigError("sampler.bandwidth must be >= 0")
    if config.study.epochs < 1 or config.study.n_samples < 256:
        raise ConfigError("study.epochs must be >= 1 and study.n_samples >= 256")
    if not config.sweep.alphas or min(config.sweep.alphas) < 0:
        raise ConfigError("sweep.alphas must be a nonempty list of values >= 0")
    if min(config.study.bandwidths, default=0.0) < 0:
        raise ConfigError("study.bandwidths must be >= 0")
    if config.data.n_train < config.task.num_classes or config.data.n_test < config.task.num_classes:
        raise ConfigError(f"data.n_train and data.n_test must be >= {config.task.num_classes}")


def load_config(path: Path | str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def resolved_text(config: ExperimentConfig) -> str:
    flat = flatten(config)
    return "".join(f"{key}={_format(flat[key])}\n" for key in sorted(flat))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(resolved_text(config).encode()).hexdigest()


def replace_path(config: Any, dotted: str, value: Any) -> Any:
    """Copy of a nested frozen dataclass with one dotted field replaced."""
    head, _, rest = dotted.partition(".")
    if not rest:
        return dataclasses.replace(config, **{head: value})
    return dataclasses.replace(config, **{head: replace_path(getattr(config, head), rest, value)})

