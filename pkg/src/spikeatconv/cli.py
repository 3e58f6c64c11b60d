"""Command-line entry point: ``spikeatconv {train,eval,gradcheck,inspect}``.

Settings resolve as built-in default < config file < command-line flag. A
config file has ``[model]``, ``[train]``, ``[augment]`` and ``[data]``
sections; ``--set section.key=value`` overrides any single field.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure,
130 interrupted (after writing a checkpoint).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import signal
import sys
from dataclasses import dataclass

import numpy as np

from . import config, data, gradcheck, kernels
from . import model as model_mod
from . import train
from .errors import ConfigError, DataFormatError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_INTERRUPTED = 0, 2, 3, 4, 130
DATASETS = ("synthetic", "cifar10", "cifar100", "idx")


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "synthetic"
    root: str = ""
    train_limit: int = 0
    test_limit: int = 0
    synthetic_classes: int = 10
    synthetic_train_per_class: int = 40
    synthetic_test_per_class: int = 20
    synthetic_noise: float = 0.1
    idx_train_images: str = "train-images-idx3-ubyte"
    idx_train_labels: str = "train-labels-idx1-ubyte"
    idx_test_images: str = "t10k-images-idx3-ubyte"
    idx_test_labels: str = "t10k-labels-idx1-ubyte"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.train_limit < 0 or self.test_limit < 0:
            raise ConfigError("train_limit/test_limit must be >= 0 (0 means no limit)")


SECTIONS = {"model": model_mod.ModelConfig, "train": train.TrainConfig, "augment": data.AugmentConfig,
            "data": DataConfig}


@dataclass(frozen=True)
class RunConfig:
    model: model_mod.ModelConfig = model_mod.ModelConfig()
    train: train.TrainConfig = train.TrainConfig()
    augment: data.AugmentConfig = data.AugmentConfig()
    data: DataConfig = DataConfig()

    def to_text(self) -> str:
        return config.sections_to_text({name: getattr(self, name) for name in SECTIONS})

    @property
    def hash(self) -> str:
        return config.text_hash(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return resolve(text, {})


def resolve(file_text: str | None, overrides: dict[str, dict]) -> RunConfig:
    """Merge defaults, the parsed file and ``{section: {key: value}}`` overrides."""
    merged: dict[str, dict] = {name: {} for name in SECTIONS}
    if file_text:
        for section, values in config.read_sections(file_text).items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]; expected {sorted(SECTIONS)}")
            merged[section].update(values)
    for section, values in overrides.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        merged[section].update(values)
    built = {}
    for section, cls in SECTIONS.items():
        try:
            built[section] = config.from_dict(cls, merged[section], section)
        except TypeError as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return RunConfig(**built)


# ---------------------------------------------------------------- argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file with [model]/[train]/[augment]/[data] sections")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--data-root", help="dataset directory (default: $DATA_ROOT)")
    p.add_argument("--spk", choices=("sl", "rl", "mbpl", "hsl", "dcl"))
    p.add_argument("--attn", choices=("sisa", "bdsa"))
    p.add_argument("--t", type=int, dest="T", help="timesteps per forward pass")
    p.add_argument("--tau", type=float)
    p.add_argument("--thresholds", help="comma-separated firing thresholds, e.g. 0.2,1,2,4")
    p.add_argument("--surrogate", choices=("atan", "sigmoid"))
    p.add_argument("--spike-free", action="store_true", default=None,
                   help="replace every spiking block with a GELU")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs/latest")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config field; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeatconv", description="Train and inspect SpikeAtConv networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics.csv and checkpoints")
    _add_common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a fresh model) on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file; omit to evaluate a freshly initialised model")
    p.add_argument("--logits", help="write per-image logits to this CSV")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=("op", "block", "model"), default="op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true", help="print every check, not only failures")

    p = sub.add_parser("inspect", help="per-site firing rates on one batch")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--batch", type=int, default=16, help="number of test images to run")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, dict]:
    o: dict[str, dict] = {name: {} for name in SECTIONS}
    m, t, a, d = o["model"], o["train"], o["augment"], o["data"]
    if args.dataset is not None:
        d["dataset"] = args.dataset
    root = args.data_root if args.data_root is not None else os.environ.get("DATA_ROOT")
    if root:
        d["root"] = root
    for flag, key in (("spk", "spk"), ("attn", "attn"), ("T", "T"), ("tau", "tau"), ("surrogate", "surrogate")):
        if getattr(args, flag) is not None:
            m[key] = getattr(args, flag)
    if args.thresholds is not None:
        m["thresholds"] = args.thresholds
    if args.spike_free:
        m["spike_free"] = True
    if args.seed is not None:
        m["seed"] = t["seed"] = a["seed"] = args.seed
    for flag, key in (("epochs", "epochs"), ("lr", "base_lr"), ("batch_size", "batch_size")):
        if getattr(args, flag, None) is not None:
            t[key] = getattr(args, flag)
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, field = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        o.setdefault(section, {})[field.strip()] = value
    return o


def _read_file(path: str | None) -> str | None:
    if path is None:
        return None
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


# ---------------------------------------------------------------- data wiring


def _limit(ds: data.Dataset, n: int, seed: int) -> data.Dataset:
    if not n or n >= len(ds):
        return ds
    idx = np.sort(np.random.default_rng(seed).permutation(len(ds))[:n])
    return ds.subset(idx)


def load_datasets(run: RunConfig) -> tuple[data.Dataset, data.Dataset]:
    dc, res = run.data, run.model.resolution
    if dc.dataset == "synthetic":
        train_ds, test_ds = data.synthetic_splits(dc.synthetic_classes, dc.synthetic_train_per_class,
                                                  dc.synthetic_test_per_class, res, run.train.seed,
                                                  dc.synthetic_noise)
    else:
        if not dc.root:
            raise DataFormatError(f"dataset {dc.dataset} needs --data-root or $DATA_ROOT")
        if not os.path.isdir(dc.root):
            raise DataFormatError(f"data root {dc.root} is not a directory")
        if dc.dataset == "idx":
            j = lambda name: os.path.join(dc.root, name)  # noqa: E731
            train_ds = data.load_idx(j(dc.idx_train_images), j(dc.idx_train_labels), split="train")
            test_ds = data.load_idx(j(dc.idx_test_images), j(dc.idx_test_labels),
                                    classes=train_ds.classes, split="test")
        else:
            variant = "c10" if dc.dataset == "cifar10" else "c100"
            train_ds = data.load_cifar(dc.root, variant, "train")
            test_ds = data.load_cifar(dc.root, variant, "test")
    train_ds = _limit(train_ds, dc.train_limit, run.train.seed).resized(res)
    test_ds = _limit(test_ds, dc.test_limit, run.train.seed + 1).resized(res)
    return train_ds, test_ds


def fit_model_to_data(run: RunConfig, ds: data.Dataset) -> RunConfig:
    """Set the model's class count and input channels from the dataset."""
    m = run.model.replace(classes=ds.classes, in_channels=ds.images.shape[1])
    return dataclasses.replace(run, model=m)


# ---------------------------------------------------------------- commands


def cmd_train(run: RunConfig, out_dir: str, log=print) -> int:
    train_ds, test_ds = load_datasets(run)
    run = fit_model_to_data(run, train_ds)
    text = run.to_text()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.cfg"), "w") as fh:
        fh.write(text)
    log(f"# resolved config sha256={config.text_hash(text)} kernels={kernels.BACKEND}")
    log(text.rstrip())
    net = model_mod.build(run.model)
    log(f"# {model_mod.param_count(net)} parameters; {len(train_ds)} train / {len(test_ds)} test images")

    stop = {"flag": False}

    def on_sigint(signum, frame):
        stop["flag"] = True

    previous = signal.signal(signal.SIGINT, on_sigint)
    try:
        result = train.fit(net, train_ds, test_ds, run.train, out_dir, run.augment, text, log=log,
                           should_stop=lambda: stop["flag"])
    except train.TrainingInterrupted as exc:
        log(str(exc))
        return EXIT_INTERRUPTED
    finally:
        signal.signal(signal.SIGINT, previous)
    log(f"# metrics: {result.metrics_path}\n# checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _model_and_stats(run: RunConfig, checkpoint: str | None, train_ds: data.Dataset):
    if checkpoint:
        if not os.path.exists(checkpoint):
            raise DataFormatError(f"checkpoint {checkpoint} not found")
        net, stats, _ = train.load_checkpoint(checkpoint)
        return net, stats
    return model_mod.build(fit_model_to_data(run, train_ds).model), data.Normalization.fit(train_ds)


def _checkpoint_run(args, run: RunConfig) -> RunConfig:
    """Model settings come from the checkpoint; data flags still apply."""
    if not getattr(args, "checkpoint", None) or not os.path.exists(args.checkpoint):
        return run
    from . import checkpoint as ckpt_io

    saved = resolve(ckpt_io.load(args.checkpoint).config_text, {})
    cli = overrides_from_args(args)
    file_text = _read_file(args.config)
    file_data = config.read_sections(file_text).get("data", {}) if file_text else {}
    data_values = {**config.to_dict(saved.data), **file_data, **cli["data"]}
    return dataclasses.replace(saved, data=config.from_dict(DataConfig, data_values, "data"))


def cmd_eval(run: RunConfig, checkpoint: str | None, logits_path: str | None = None, log=print) -> dict:
    train_ds, test_ds = load_datasets(run)
    net, stats = _model_and_stats(run, checkpoint, train_ds)
    metrics = train.evaluate(net, test_ds, stats, run.train.eval_batch_size, logits_path)
    log(f"top1 {metrics['top1']:.2f}%  top5 {metrics['top5']:.2f}%  loss {metrics['loss']:.4f}  "
        f"({len(test_ds)} images)")
    return metrics


def cmd_gradcheck(scope: str, seed: int = 0, verbose: bool = False, log=print) -> int:
    suites = {"op": gradcheck.op_suite, "block": gradcheck.block_suite, "model": gradcheck.model_suite}
    results = suites[scope](seed)
    for r in results:
        if verbose or not r.passed:
            log(r.line())
    log(gradcheck.summarize(results, scope).line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_inspect(run: RunConfig, checkpoint: str | None, batch: int, log=print) -> list:
    train_ds, test_ds = load_datasets(run)
    net, stats = _model_and_stats(run, checkpoint, train_ds)
    images = stats.apply(test_ds.images[:batch], net.dtype)
    rows = model_mod.spike_rate_report(net, images)
    log(model_mod.format_rate_report(rows))
    if rows:
        log(f"mean rate {np.mean([r for _, r in rows]):.4f} over {len(rows)} sites")
    return rows


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.scope, args.seed, args.verbose)
        run = resolve(_read_file(args.config), overrides_from_args(args))
        if args.command == "train":
            return cmd_train(run, args.out_dir)
        run = _checkpoint_run(args, run)
        if args.command == "eval":
            cmd_eval(run, args.checkpoint, args.logits)
        else:
            cmd_inspect(run, args.checkpoint, args.batch)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
