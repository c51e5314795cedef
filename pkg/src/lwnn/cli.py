"""Command-line entry point: ``lwnn {train,eval,filters,decompose}``.

Exit codes: 0 success, 1 configuration/usage error, 2 data error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import load_checkpoint
from .data import load_idx, load_idx_images, normalize
from .errors import CheckpointError, ConfigError, DataError, DivergenceError, LwnnError
from .filters import WaveletParams, check_qmf, make_filters
from .layers import WaveletNetwork
from .trainer import MetricsRow, TrainConfig, evaluate, train
from .transform import SUBBAND_NAMES

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

# Range below which a subband counts as constant when scaling to 8 bits.
FLAT_RANGE = 1e-9


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; usage errors here are config errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _finite_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return value


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# Flags that override config-file keys, as (flag, key, type).
_TRAIN_OVERRIDES = [
    ("--paths", "paths", int),
    ("--levels", "levels_per_path", int),
    ("--fc-widths", "fc_widths", _int_list),
    ("--classes", "classes", int),
    ("--input-shape", "input_shape", _int_list),
    ("--dropout-keep", "dropout_keep", float),
    ("--activation", "activation", str),
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--seed", "seed", int),
    ("--lr", "lr_initial", float),
    ("--lr-decay", "lr_decay", float),
    ("--repeats", "repeats", int),
    ("--dataset-format", "dataset_format", str),
    ("--train-images", "train_images", str),
    ("--train-labels", "train_labels", str),
    ("--test-images", "test_images", str),
    ("--test-labels", "test_labels", str),
    ("--data-dir", "data_dir", str),
    ("--train-subset", "train_subset", int),
    ("--test-subset", "test_subset", int),
    ("--output-dir", "output_dir", str),
]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lwnn", description="Multi-path learnable wavelet neural network.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train (and evaluate) a network")
    p.add_argument("--config", type=Path, help="YAML file of flat TrainConfig keys")
    for flag, key, typ in _TRAIN_OVERRIDES:
        p.add_argument(flag, dest=key, type=typ, default=None)
    p.add_argument("--no-wall-time", dest="log_wall_time", action="store_false", default=None,
                   help="write 0 in the seconds column so metrics files are reproducible")
    p.add_argument("--resume", type=Path, help="checkpoint to continue training from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on an IDX dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)

    p = sub.add_parser("filters", help="print the filter pair for given angles")
    p.add_argument("--alpha", type=_finite_float, required=True)
    p.add_argument("--beta", type=_finite_float, required=True)

    p = sub.add_parser("decompose", help="export every subband of one image as PGM files")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def load_train_config(path: Path | None, overrides: dict) -> TrainConfig:
    values = {}
    if path is not None:
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a mapping of flat keys")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = TrainConfig.from_mapping(values)
    config.validate()
    return config


def _print_row(row: MetricsRow) -> None:
    print(
        f"run {row.run} epoch {row.epoch}: loss={row.train_loss:.4f} "
        f"train_acc={row.train_acc:.4f} test_acc={row.test_acc:.4f} "
        f"lr={row.lr:.6g} time={row.seconds:.1f}s",
        flush=True,
    )


def cmd_train(args) -> int:
    overrides = {key: getattr(args, key) for _, key, _ in _TRAIN_OVERRIDES}
    overrides["log_wall_time"] = args.log_wall_time
    config = load_train_config(args.config, overrides)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(config, on_epoch=_print_row, resume=resume)
    print(
        f"mean final test_acc={result.mean_final_test_acc:.6f} "
        f"mean best test_acc={result.mean_best_test_acc:.6f} "
        f"over {len(result.runs)} run(s); metrics in {result.metrics_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data = normalize(load_idx(args.images, args.labels, ckpt.config.classes))
    result = evaluate(ckpt, data)
    print(f"accuracy={result.accuracy:.6f} error_pct={result.error_pct:.2f}")
    return EXIT_OK


def cmd_filters(args) -> int:
    pair = make_filters(WaveletParams(args.alpha, args.beta))
    report = check_qmf(pair, 1e-10)
    # round first so that -1e-17 and -0.0 print as plain zero
    fmt = lambda xs: ",".join(f"{round(float(x), 12) + 0.0:.12f}" for x in xs)  # noqa: E731
    print(f"lowpass={fmt(pair.lowpass)}")
    print(f"highpass={fmt(pair.highpass)}")
    print(
        f"residuals sum={report.sum_residual:.3e} norm={report.norm_residual:.3e} "
        f"shift2={report.shift2_residual:.3e} pass={report.passed}"
    )
    return EXIT_OK


def to_pgm(plane: np.ndarray) -> bytes:
    """Min-max scale one plane to 8-bit binary PGM; a flat plane becomes mid-grey."""
    lo, hi = float(plane.min()), float(plane.max())
    if hi - lo < FLAT_RANGE:
        pixels = np.full(plane.shape, 128, dtype=np.uint8)
    else:
        pixels = np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    h, w = plane.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def cmd_decompose(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    images = load_idx_images(args.images)
    if not 0 <= args.index < len(images):
        raise ConfigError(f"index {args.index} out of range for {len(images)} images")
    image = images[args.index : args.index + 1].astype(np.float64) / 255.0
    if image.shape[1:] != ckpt.config.input_shape:
        raise ConfigError(f"images are {image.shape[1:]}, checkpoint expects {ckpt.config.input_shape}")

    net = WaveletNetwork(ckpt.config, ckpt.params)
    files = {}
    for p, path in enumerate(net.paths):
        h = image
        for lvl, neuron in enumerate(path, start=1):
            h = neuron.forward(h, keep_cache=False)
            for ch in range(h.shape[3] // 4):
                for s, name in enumerate(SUBBAND_NAMES):
                    files[f"path{p}_level{lvl}_{name}_ch{ch}.pgm"] = to_pgm(h[0, :, :, 4 * ch + s])

    args.out.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (args.out / name).write_bytes(data)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "filters": cmd_filters, "decompose": cmd_decompose}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except LwnnError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
