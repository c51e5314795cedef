"""Training and evaluation loop, metrics logging and repeat-run averaging."""

from __future__ import annotations

import csv
import json
import math
import time
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .data import AugmentSpec, BatchPlan, Dataset, augment, batches, load_cifar, load_idx, normalize
from .errors import ConfigError, DivergenceError
from .layers import NetworkConfig, WaveletNetwork, init_params, softmax_xent
from .optim import Adam, AdamState, LrSchedule, lr_at

METRICS_HEADER = ("run", "epoch", "train_loss", "train_acc", "test_acc", "lr", "seconds")
DATASET_FORMATS = ("idx", "cifar10", "cifar100")


@dataclass
class TrainConfig:
    """Every knob of a training job, as one flat record.

    The flat layout doubles as the CLI config-file schema: each field is one
    key, and unknown keys are rejected.
    """

    # network
    paths: int = 8
    levels_per_path: int = 3
    fc_widths: tuple[int, ...] = (32, 32)
    classes: int = 10
    input_shape: tuple[int, int, int] = (28, 28, 1)
    dropout_keep: float = 0.8
    activation: str = "centered_sigmoid"
    # optimisation
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0
    lr_initial: float = 0.01
    lr_decay: float = 0.95
    lr_staircase: bool = True
    repeats: int = 1
    # augmentation (off unless a range is set)
    augment_shift: int = 0
    augment_rotation: float = 0.0
    augment_invert_prob: float = 0.0
    # data
    dataset_format: str = "idx"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    data_dir: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    # output
    output_dir: str = "runs"
    log_wall_time: bool = True

    def __post_init__(self):
        self.fc_widths = tuple(int(w) for w in self.fc_widths)
        self.input_shape = tuple(int(d) for d in self.input_shape)

    @classmethod
    def from_mapping(cls, values: Mapping) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad config value: {e}") from e

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_widths"] = list(self.fc_widths)
        d["input_shape"] = list(self.input_shape)
        return d

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            paths=self.paths,
            levels_per_path=self.levels_per_path,
            fc_widths=self.fc_widths,
            classes=self.classes,
            input_shape=self.input_shape,
            dropout_keep=self.dropout_keep,
            activation=self.activation,
        )

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_initial, self.lr_decay, self.lr_staircase)

    def augmentation(self) -> AugmentSpec:
        return AugmentSpec(self.augment_shift, self.augment_rotation, self.augment_invert_prob)

    def validate(self) -> None:
        ints = ("paths", "levels_per_path", "classes", "epochs", "batch_size", "seed", "repeats", "augment_shift")
        for name in ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("train_subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive when set, got {value}")
        if self.dataset_format not in DATASET_FORMATS:
            raise ConfigError(f"dataset_format must be one of {DATASET_FORMATS}, got {self.dataset_format!r}")
        if self.dataset_format == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, name):
                    raise ConfigError(f"dataset_format 'idx' requires {name}")
        elif not self.data_dir:
            raise ConfigError(f"dataset_format {self.dataset_format!r} requires data_dir")
        self.network()
        self.schedule()
        self.augmentation()


@dataclass
class MetricsRow:
    run: int
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    lr: float
    seconds: float

    def as_csv(self) -> list[str]:
        return [str(self.run), str(self.epoch)] + [
            repr(float(v)) for v in (self.train_loss, self.train_acc, self.test_acc, self.lr, self.seconds)
        ]


@dataclass
class RunResult:
    run: int
    seed: int
    rows: list[MetricsRow]
    checkpoint: Checkpoint  # state after the final epoch
    best_checkpoint_path: Path | None

    @property
    def final_test_acc(self) -> float:
        return self.rows[-1].test_acc

    @property
    def best_test_acc(self) -> float:
        return max(r.test_acc for r in self.rows)


@dataclass
class TrainResult:
    runs: list[RunResult]
    metrics_path: Path
    summary_path: Path

    @property
    def mean_final_test_acc(self) -> float:
        return float(np.mean([r.final_test_acc for r in self.runs]))

    @property
    def mean_best_test_acc(self) -> float:
        return float(np.mean([r.best_test_acc for r in self.runs]))


def load_datasets(config: TrainConfig) -> tuple[Dataset, Dataset]:
    """Load, normalize and subset the train/test sets named by ``config``."""
    if config.dataset_format == "idx":
        train = load_idx(config.train_images, config.train_labels, config.classes)
        test = load_idx(config.test_images, config.test_labels, config.classes)
    else:
        train = load_cifar(config.data_dir, config.dataset_format, "train")
        test = load_cifar(config.data_dir, config.dataset_format, "test")
    if config.train_subset:
        train = train.subset(config.train_subset)
    if config.test_subset:
        test = test.subset(config.test_subset)
    return normalize(train), normalize(test)


def check_compatible(config: NetworkConfig, dataset: Dataset) -> None:
    if dataset.image_shape != config.input_shape:
        raise ConfigError(f"dataset images are {dataset.image_shape}, network expects {config.input_shape}")
    if dataset.class_count != config.classes:
        raise ConfigError(f"dataset has {dataset.class_count} classes, network expects {config.classes}")


def accuracy(net: WaveletNetwork, dataset: Dataset, batch_size: int = 500) -> float:
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(net.predict(dataset.images, batch_size) == dataset.labels))


def _param_norms(params: dict[str, np.ndarray]) -> str:
    return ", ".join(f"{k}={np.linalg.norm(v):.4g}" for k, v in params.items())


def train_run(
    config: TrainConfig,
    train: Dataset,
    test: Dataset,
    run: int = 0,
    resume: Checkpoint | None = None,
    out_dir: Path | None = None,
    on_epoch: Callable[[MetricsRow], None] | None = None,
) -> RunResult:
    """One independent training run with seed ``config.seed + run``.

    With ``resume`` the run continues from the checkpoint's completed epoch;
    shuffling, dropout and augmentation streams are derived from
    ``(seed, epoch)`` so a resumed run matches an uninterrupted one exactly.
    """
    net_cfg = config.network()
    check_compatible(net_cfg, train)
    check_compatible(net_cfg, test)
    schedule = config.schedule()
    aug = config.augmentation()
    seed = config.seed + run

    if resume is None:
        params = init_params(net_cfg, np.random.default_rng(seed))
        state = AdamState.zeros_like(params)
        start, history = 0, []
    else:
        if resume.config != net_cfg:
            raise ConfigError("checkpoint network config differs from the training config")
        params = {k: v.copy() for k, v in resume.params.items()}
        state = AdamState(
            m={k: v.copy() for k, v in resume.adam.m.items()},
            v={k: v.copy() for k, v in resume.adam.v.items()},
            t=resume.adam.t,
        )
        start, history, seed = resume.epoch, list(resume.history), resume.seed

    net = WaveletNetwork(net_cfg, params)
    adam = Adam()
    rows = [MetricsRow(**h) for h in history]
    best_acc = max((r.test_acc for r in rows), default=-1.0)
    best_path = out_dir / f"run{run}_best.ckpt" if out_dir is not None else None

    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        lr = lr_at(schedule, epoch)
        drop_rng = np.random.default_rng([seed, epoch, 1])
        aug_rng = np.random.default_rng([seed, epoch, 2])
        loss_sum, correct, seen = 0.0, 0, 0
        plan = BatchPlan(config.batch_size, seed, epoch)
        for b, (xb, yb) in enumerate(batches(train, plan)):
            if aug.enabled:
                xb = np.stack([augment(img, aug, aug_rng) for img in xb])
            logits = net.forward(xb, train=True, rng=drop_rng)
            loss, grad = softmax_xent(logits, yb)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} in run {run}, epoch {epoch}, batch {b}; "
                    f"parameter norms: {_param_norms(params)}"
                )
            grads = net.backward(grad)
            adam.step(params, grads, state, lr)
            loss_sum += loss * len(yb)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
            seen += len(yb)

        row = MetricsRow(
            run=run,
            epoch=epoch,
            train_loss=loss_sum / seen,
            train_acc=correct / seen,
            test_acc=accuracy(net, test),
            lr=lr,
            seconds=time.perf_counter() - t0 if config.log_wall_time else 0.0,
        )
        rows.append(row)
        ckpt = Checkpoint(net_cfg, params, state, epoch + 1, seed, run, [asdict(r) for r in rows])
        if out_dir is not None:
            save_checkpoint(ckpt, out_dir / f"run{run}_last.ckpt")
            if row.test_acc > best_acc:
                save_checkpoint(ckpt, best_path)
        best_acc = max(best_acc, row.test_acc)
        if on_epoch is not None:
            on_epoch(row)

    final = Checkpoint(
        net_cfg,
        {k: v.copy() for k, v in params.items()},
        AdamState({k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()}, state.t),
        config.epochs,
        seed,
        run,
        [asdict(r) for r in rows],
    )
    return RunResult(run, seed, rows, final, best_path)


def write_metrics(path: Path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.as_csv())


def train(
    config: TrainConfig,
    on_epoch: Callable[[MetricsRow], None] | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Run ``config.repeats`` independent trainings and record their metrics.

    Writes ``metrics.csv``, ``summary.json`` and per-run ``run{r}_best.ckpt``
    / ``run{r}_last.ckpt`` into ``config.output_dir``. Everything is
    validated and loaded before the output directory is touched.
    """
    config.validate()
    train_set, test_set = load_datasets(config)
    net_cfg = config.network()
    check_compatible(net_cfg, train_set)
    check_compatible(net_cfg, test_set)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for r in range(config.repeats):
        runs.append(
            train_run(
                config,
                train_set,
                test_set,
                run=r,
                resume=resume if resume is not None and resume.run == r else None,
                out_dir=out,
                on_epoch=on_epoch,
            )
        )

    metrics_path = out / "metrics.csv"
    write_metrics(metrics_path, [row for run in runs for row in run.rows])
    result = TrainResult(runs, metrics_path, out / "summary.json")
    summary = {
        "config": config.to_dict(),
        "runs": [
            {"run": r.run, "seed": r.seed, "final_test_acc": r.final_test_acc, "best_test_acc": r.best_test_acc}
            for r in runs
        ],
        "mean_final_test_acc": result.mean_final_test_acc,
        "mean_best_test_acc": result.mean_best_test_acc,
    }
    result.summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    return result


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def error_pct(self) -> float:
        return 100.0 * (1.0 - self.accuracy)


def evaluate(checkpoint: Checkpoint, dataset: Dataset, batch_size: int = 500) -> EvalResult:
    check_compatible(checkpoint.config, dataset)
    net = WaveletNetwork(checkpoint.config, checkpoint.params)
    pred = net.predict(dataset.images, batch_size)
    k = checkpoint.config.classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    acc = float(np.trace(confusion) / len(dataset)) if len(dataset) else 0.0
    return EvalResult(acc, confusion)
