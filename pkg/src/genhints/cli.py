"""Command-line harness for datasets, training runs, alpha sweeps and the quality study.

Also evaluates saved models.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    load_config,
    parse_config_text,
    replace_path,
    resolved_text,
    validate,
)
from .generators import (
    SamplerHandle,
    fit_kde,
    noise_sampler,
    quality_report,
    true_distribution_sampler,
)
from .images import IDENTITY_SPEC, HintTransformSpec, ImageError, load_images, save_images
from .metrics import CorrelationStudyRow, correlation_study
from .task import LabeledSet, synth_dataset
from .trainer import (
    PARAM_NAMES,
    RECORD_COLUMNS,
    RunRecord,
    TrainingConfig,
    accuracy_of,
    hint_loss_on,
    load_classifier,
    run_training,
)

logger = logging.getLogger("genhints")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
HASH_PREFIX = "# config_sha256="


class HarnessError(RuntimeError):
    pass


def fmt(value: float) -> str:
    """Floats in output files: 10 significant digits."""
    return f"{float(value):.10g}"


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def write_labels(path: Path, labels: np.ndarray, digest: str) -> None:
    lines = [HASH_PREFIX + digest, "label"] + [str(int(v)) for v in labels]
    path.write_text("\n".join(lines) + "\n")


def read_labels(path: Path) -> np.ndarray:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise HarnessError(f"cannot read labels {path}: {exc}") from exc
    rows = [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]
    if not rows or rows[0] != "label":
        raise HarnessError(f"{path}: expected a 'label' header")
    try:
        return np.array([int(v) for v in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise HarnessError(f"{path}: non-integer label ({exc})") from exc


def labels_path_for(images_path: Path) -> Path:
    return images_path.with_name(images_path.stem + "_labels.csv")


def load_split(images_path: Path) -> LabeledSet:
    images_path = Path(images_path)
    try:
        images = load_images(images_path)
    except ImageError as exc:
        raise HarnessError(str(exc)) from exc
    if not images:
        raise HarnessError(f"{images_path}: dataset file holds no images")
    labels = read_labels(labels_path_for(images_path))
    if len(labels) != len(images):
        raise HarnessError(
            f"{images_path}: {len(images)} images but {len(labels)} labels"
        )
    return LabeledSet(images, labels)


def write_dataset(out: Path, train: LabeledSet, test: LabeledSet, digest: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("test", test)):
        save_images(out / f"{name}.bin", split.images)
        write_labels(out / f"{name}_labels.csv", split.labels, digest)


def dataset_for(config: ExperimentConfig) -> tuple[LabeledSet, LabeledSet]:
    if config.data.path:
        root = Path(config.data.path)
        return load_split(root / "train.bin"), load_split(root / "test.bin")
    return synth_dataset(config.task, config.data.n_train, config.data.n_test, config.data.seed)


def build_sampler(
    config: ExperimentConfig, train: LabeledSet, run_seed: int, kind: Optional[str] = None,
    bandwidth: Optional[float] = None,
) -> SamplerHandle:
    kind = kind or config.sampler.kind
    seed = derive_seed(config.sampler.seed, run_seed)
    if kind == "true_distribution":
        return true_distribution_sampler(config.task, seed)
    if kind == "noise":
        return noise_sampler(train.images[0].shape, seed)
    bw = config.sampler.bandwidth if bandwidth is None else bandwidth
    return fit_kde(train.images, bw, seed)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def record_csv(record: RunRecord, digest: str) -> str:
    lines = [HASH_PREFIX + digest, ",".join(RECORD_COLUMNS)]
    for row in record.rows:
        lines.append(
            ",".join([str(row.step)] + [fmt(getattr(row, c)) for c in RECORD_COLUMNS[1:]])
        )
    return "\n".join(lines) + "\n"


def save_model(path: Path, record: RunRecord, training: TrainingConfig, digest: str) -> None:
    arrays = {name: record.params[name].data for name in PARAM_NAMES}
    spec = training.hint_spec
    np.savez(
        path,
        input_shape=np.array(record.params.input_shape, dtype=np.int64),
        hint_spec=np.array(
            [spec.flip_probability, spec.max_translate_fraction, spec.max_rotate_degrees,
             spec.seed_stream],
            dtype=np.float64,
        ),
        eval_temperature=np.float64(training.eval_temperature),
        config_sha256=np.array(digest),
        **arrays,
    )


def load_model(path: Path):
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise HarnessError(f"cannot read model {path}: {exc}") from exc
    missing = [k for k in (*PARAM_NAMES, "input_shape", "hint_spec") if k not in arrays]
    if missing:
        raise HarnessError(f"{path}: model file lacks {missing}")
    flip, trans, rot, stream = (float(v) for v in arrays["hint_spec"])
    spec = HintTransformSpec(flip, trans, rot, int(stream))
    return load_classifier(arrays), spec


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------------------
# jobs: one (mode, seed, alpha, sampler) cell per call, picklable arguments
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Cell:
    label: str
    seed: int
    training: TrainingConfig
    sampler_kind: Optional[str] = None
    bandwidth: Optional[float] = None


def _run_cell(config: ExperimentConfig, cell: Cell) -> RunRecord:
    train, test = dataset_for(config)
    sampler = build_sampler(config, train, cell.seed, cell.sampler_kind, cell.bandwidth)
    record = run_training(cell.training, train, sampler, test)
    if record.diverged:
        raise HarnessError(f"{cell.label}: {record.diverged}")
    logger.info("%s done: %s", cell.label, {k: round(v, 6) for k, v in record.final.items()})
    return record


def run_cells(config: ExperimentConfig, cells: Sequence[Cell], jobs: int) -> list[RunRecord]:
    """Results come back in ``cells`` order whatever the worker count."""
    if jobs <= 1 or len(cells) <= 1:
        return [_run_cell(config, c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, [config] * len(cells), cells))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth_data(config: ExperimentConfig, out: Path, jobs: int) -> int:
    digest = config_hash(config)
    train, test = synth_dataset(config.task, config.data.n_train, config.data.n_test, config.data.seed)
    write_dataset(out, train, test, digest)
    write_text(out / "config.resolved.txt", resolved_text(config))
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")
    return EXIT_OK


SUMMARY_METRICS = (
    ("final_train_accuracy", "train_accuracy"),
    ("final_test_accuracy", "test_accuracy"),
    ("final_hint_loss_heldout", "hint_loss_test"),
    ("final_hint_loss_real", "hint_loss_real"),
    ("final_hint_loss_virtual", "hint_loss_virtual"),
)


def summary_text(digest: str, results: dict[str, list[tuple[int, RunRecord]]]) -> str:
    lines = [f"config_sha256={digest}", f"modes={','.join(results)}"]
    for mode, runs in results.items():
        lines.append(f"{mode}.mode={mode}")
        lines.append(f"{mode}.seeds={','.join(str(s) for s, _ in runs)}")
        for seed, rec in runs:
            for key, src in SUMMARY_METRICS:
                lines.append(f"{mode}.seed{seed}.{key}={fmt(rec.final[src])}")
        for key, src in SUMMARY_METRICS:
            mean = float(np.mean([rec.final[src] for _, rec in runs]))
            lines.append(f"{mode}.mean.{key}={fmt(mean)}")
    return "\n".join(lines) + "\n"


def read_summary(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key] = value
    return out


def _train_modes(config: ExperimentConfig) -> list[tuple[str, TrainingConfig]]:
    training = config.training
    if training.alpha == 0:
        return [("baseline", training)]
    modes = [("hints", training)]
    if config.with_baseline:
        modes.insert(0, ("baseline", dataclasses.replace(training, alpha=0.0)))
    return modes


def cmd_train(config: ExperimentConfig, out: Path, jobs: int) -> int:
    digest = config_hash(config)
    cells = [
        Cell(f"{mode}/seed{seed}", seed, dataclasses.replace(training, seed=seed))
        for mode, training in _train_modes(config)
        for seed in config.seeds
    ]
    records = run_cells(config, cells, jobs)
    results: dict[str, list[tuple[int, RunRecord]]] = {}
    for cell, rec in zip(cells, records):
        mode = cell.label.split("/")[0]
        results.setdefault(mode, []).append((cell.seed, rec))
        run_dir = out / mode / f"seed{cell.seed}"
        write_text(run_dir / "record.csv", record_csv(rec, digest))
        save_model(run_dir / "model.npz", rec, cell.training, digest)
    write_text(out / "summary.txt", summary_text(digest, results))
    write_text(out / "config.resolved.txt", resolved_text(config))
    for mode, runs in results.items():
        acc = np.mean([r.final["test_accuracy"] for _, r in runs])
        hl = np.mean([r.final["hint_loss_test"] for _, r in runs])
        print(f"{mode}: mean test accuracy {acc:.4f}, mean held-out hint loss {hl:.6g}")
    return EXIT_OK


SWEEP_HEADER = "alpha,seed,final_accuracy,final_hint_loss_real"


def cmd_sweep_alpha(config: ExperimentConfig, out: Path, jobs: int) -> int:
    alphas = config.sweep.alphas
    if not alphas:
        raise ConfigError("sweep.alphas must list at least one alpha")
    digest = config_hash(config)
    cells = [
        Cell(f"alpha{alpha:g}/seed{seed}", seed,
             dataclasses.replace(config.training, alpha=float(alpha), seed=seed))
        for alpha in alphas
        for seed in config.seeds
    ]
    records = run_cells(config, cells, jobs)
    lines = [HASH_PREFIX + digest, SWEEP_HEADER]
    for cell, rec in zip(cells, records):
        lines.append(
            f"{fmt(cell.training.alpha)},{cell.seed},{fmt(rec.final['test_accuracy'])},"
            f"{fmt(rec.final['hint_loss_test'])}"
        )
    write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    write_text(out / "config.resolved.txt", resolved_text(config))
    print(f"wrote {len(records)} sweep rows to {out / 'sweep.csv'}")
    return EXIT_OK


STUDY_HEADER = "sampler,fid_analog,pearson_r"


def study_cells(config: ExperimentConfig) -> list[Cell]:
    seed = config.seeds[0]
    training = dataclasses.replace(
        config.training,
        hint_only=True,
        epochs=config.study.epochs,
        learning_rate=config.study.learning_rate,
        seed=seed,
    )
    cells = [Cell("true_distribution", seed, training, "true_distribution")]
    cells += [Cell(f"kde_sigma={bw:g}", seed, training, "kde", float(bw)) for bw in config.study.bandwidths]
    cells.append(Cell("noise", seed, training, "noise"))
    return cells


def cmd_quality_study(config: ExperimentConfig, out: Path, jobs: int) -> int:
    if not config.study.bandwidths:
        raise ConfigError("study.bandwidths must list at least one bandwidth")
    digest = config_hash(config)
    train, _ = dataset_for(config)
    cells = study_cells(config)
    reports = [
        quality_report(
            build_sampler(config, train, c.seed, c.sampler_kind, c.bandwidth),
            train.images,
            config.study.n_samples,
            config.study.embedder_seed,
        )
        for c in cells
    ]
    records = run_cells(config, cells, jobs)
    for cell, rec in zip(cells, records):
        write_text(out / "runs" / f"{cell.label}.csv", record_csv(rec, digest))
    rows = correlation_study(records, reports)
    write_text(out / "study.csv", study_csv(rows, digest))
    write_text(out / "config.resolved.txt", resolved_text(config))
    for row in rows:
        print(f"{row.sampler:>22s}  fid_analog={row.fid_analog:.6g}  pearson_r={row.pearson_r:+.4f}")
    return EXIT_OK


def study_csv(rows: Sequence[CorrelationStudyRow], digest: str) -> str:
    lines = [HASH_PREFIX + digest, STUDY_HEADER]
    lines += [f"{r.sampler},{fmt(r.fid_analog)},{fmt(r.pearson_r)}" for r in rows]
    return "\n".join(lines) + "\n"


def cmd_eval(config: ExperimentConfig, model: Path, data: Path, identity_hint: bool) -> dict:
    params, spec = load_model(model)
    split = load_split(data)
    if split.images[0].shape != params.input_shape:
        raise HarnessError(
            f"{data}: images are {split.images[0].shape}, model expects {params.input_shape}"
        )
    if identity_hint:
        spec = IDENTITY_SPEC
    training = dataclasses.replace(config.training, hint_spec=spec, eval_temperature=1.0)
    metrics = {
        "n": len(split),
        "accuracy": accuracy_of(params, split),
        "hint_loss": hint_loss_on(params, split.images, spec, training, (0,)),
    }
    return metrics


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"not a comma-separated float list: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genhints", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs"):
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the run seed list (or data seed)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="extra config assignment, may repeat")

    common(sub.add_parser("synth-data", help="write a class-balanced synthetic dataset"), "data")
    common(sub.add_parser("train", help="baseline and/or hints runs over the seed list"))
    p = sub.add_parser("sweep-alpha", help="one run per (alpha, seed)")
    common(p)
    p.add_argument("--alphas", type=_float_list, default=None, help="comma-separated alphas")
    p = sub.add_parser("quality-study", help="sampler quality vs hint-loss correlation")
    common(p)
    p.add_argument("--bandwidths", type=_float_list, default=None, help="comma-separated KDE sigmas")
    p = sub.add_parser("eval", help="accuracy and hint loss (T=1) of a saved model")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--model", type=Path, required=True, help="model.npz written by train")
    p.add_argument("--data", type=Path, required=True, help="images .bin with a sibling _labels.csv")
    p.add_argument("--identity-hint", action="store_true", help="evaluate with the identity transform")
    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "set", None):
        base = resolved_text(config) + "\n".join(args.set) + "\n"
        config = parse_config_text(base, "--set")
    if getattr(args, "seed", None) is not None:
        if args.command == "synth-data":
            config = replace_path(config, "data.seed", args.seed)
        else:
            config = dataclasses.replace(config, seeds=(args.seed,))
    if getattr(args, "alphas", None) is not None:
        config = replace_path(config, "sweep.alphas", args.alphas)
    if getattr(args, "bandwidths", None) is not None:
        config = replace_path(config, "study.bandwidths", args.bandwidths)
    if getattr(args, "jobs", 1) < 1:
        raise ConfigError("--jobs must be >= 1")
    validate(config)
    return config


COMMANDS: dict[str, Callable] = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "sweep-alpha": cmd_sweep_alpha,
    "quality-study": cmd_quality_study,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(message)s",
        )
        config = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "eval":
            metrics = cmd_eval(config, args.model, args.data, args.identity_hint)
            for key, value in metrics.items():
                print(f"{key}={value if isinstance(value, int) else fmt(value)}")
            return EXIT_OK
        return COMMANDS[args.command](config, args.out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any runtime failure maps to exit code 2
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
