"""Command-line interface: ``manifool <command> [options]``.

Every option can also be given in a ``key = value`` config file passed with
``--config``; flags on the command line win over the file.  Exit codes:
0 success, 1 algorithmic failure, 2 usage or config error, 3 I/O or format
error.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import classifier as clf
from .attack import AttackParams, FoolResult, manifool_multiclass, recompose
from .classifier import Architecture, LabeledDataset
from .data import (
    bundled_mnist,
    load_idx_images,
    load_idx_labels,
    load_labels_csv,
    load_pgm_dir,
    synth_blobs,
)
from .errors import AllFailed, EmptyDataset, FormatError, ManifoolError
from .geodesic import GeodesicParams, RaySampler, normalized_score, random_direction
from .image import Image, pgm_bytes, read_pgm, warp
from .metrics import (
    EVAL_HEADER,
    attack_dataset,
    misclassification_curve,
    report_from_results,
)
from .parallel import default_jobs
from .transforms import Transform, TransformGroup

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# Seed derivation: every consumer gets np.random.default_rng([seed, stream]).
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_SYNTH = 2
STREAM_SYNTH_TEST = 3
STREAM_RANDOM_FINETUNE = 4
STREAM_SAMPLE = 5


class UsageError(Exception):
    pass


# ---- option tables ------------------------------------------------------

@dataclass
class Option:
    flag: str
    kind: Callable[[str], Any]
    default: Any = None
    required: bool = False
    help: str = ""

    @property
    def key(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _groups(text: str) -> list[TransformGroup]:
    return [TransformGroup.parse(v) for v in str(text).split(",") if v.strip()]


def _offsets(text: str) -> list[tuple[float, float]]:
    pairs = []
    for chunk in str(text).split(";"):
        if chunk.strip():
            x, y = (float(v) for v in chunk.split(","))
            pairs.append((x, y))
    return pairs


def _dataset_options(prefix: str = "") -> list[Option]:
    p = f"--{prefix}" if prefix else "--"
    return [
        Option(f"{p}images", str, help="IDX image archive (.gz allowed)"),
        Option(f"{p}labels", str, help="IDX label archive or image_index,label CSV"),
        Option(f"{p}pgm-dir", str, help="directory of PGM images (labels from --labels CSV)"),
        Option(f"{p}mnist", str, help="bundled MNIST sample: train or test"),
        Option(f"{p}synth-blobs", int, help="synthetic Gaussian blobs, images per class"),
        Option(f"{p}offset", int, 0, help="skip this many images"),
        Option(f"{p}limit", int, help="keep at most this many images"),
    ]


SYNTH_OPTIONS = [
    Option("--synth-width", int, 28),
    Option("--synth-height", int, 28),
    Option("--synth-offsets", _offsets, "-3,0;3,0", help="per-class blob centres 'x,y;x,y'"),
    Option("--synth-sigma", float, 2.0),
    Option("--synth-jitter", float, 0.5),
]

ATTACK_OPTIONS = [
    Option("--max-iters", int, AttackParams.max_iters),
    Option("--momentum", float, AttackParams.momentum),
    Option("--initial-step", float, AttackParams.initial_step),
    Option("--line-search-trials", int, AttackParams.line_search_trials),
    Option("--line-search-shrink", float, AttackParams.line_search_shrink),
    Option("--num-targets", int, AttackParams.num_targets),
    Option("--step-floor", float, AttackParams.step_floor),
]

GEO_OPTIONS = [
    Option("--geodesic-step", float, GeodesicParams.step),
    Option("--max-segments", int, GeodesicParams.max_segments),
]

COMMON = [
    Option("--seed", int, 0, help="root seed for every random choice"),
    Option("--jobs", int, None, help="worker processes (default: $MANIFOOL_JOBS or 1)"),
]

MODEL = [Option("--model", str, required=True, help="weights file")]

SINGLE_IMAGE = [
    Option("--image", str, help="PGM image (otherwise --index into the dataset)"),
    Option("--index", int, 0, help="dataset index of the image"),
    Option("--label", int, help="true label of the image"),
]

TRAIN_OPTIONS = [
    Option("--arch", Architecture.parse, "cnn", help="linear, mlp or cnn"),
    Option("--classes", int, help="number of classes (default: max label + 1)"),
    Option("--hidden", int, 64),
    Option("--epochs", int, 5),
    Option("--lr", float, 0.2),
    Option("--lr-decay", float, 0.6),
    Option("--batch-size", int, 8),
]

COMMANDS: dict[str, list[Option]] = {
    "train": COMMON + _dataset_options() + _dataset_options("test-") + SYNTH_OPTIONS
    + TRAIN_OPTIONS + [
        Option("--init-model", str, help="continue from these weights"),
        Option("--out", str, required=True, help="weights file to write"),
        Option("--csv", str, help="summary CSV (default: stdout)"),
    ],
    "attack": COMMON + MODEL + SINGLE_IMAGE + _dataset_options() + SYNTH_OPTIONS
    + ATTACK_OPTIONS + GEO_OPTIONS + [
        Option("--group", TransformGroup.parse, "similarity"),
        Option("--out-transform", str, help="file for the 9-number transform line"),
        Option("--out-image", str, help="PGM of the warped image"),
        Option("--csv", str, help="result CSV (default: stdout)"),
        Option("--trace", str, help="per-iteration CSV"),
    ],
    "eval-rho": COMMON + MODEL + _dataset_options() + SYNTH_OPTIONS + ATTACK_OPTIONS
    + GEO_OPTIONS + [
        Option("--group", _groups, "similarity", help="one group or a comma list"),
        Option("--csv", str, help="one summary row per group (default: stdout)"),
        Option("--details", str, help="per-image CSV"),
    ],
    "eval-curve": COMMON + MODEL + _dataset_options() + SYNTH_OPTIONS + GEO_OPTIONS + [
        Option("--group", TransformGroup.parse, "similarity"),
        Option("--r-grid", _floats, "0.0001,0.25,0.5,0.75,1,1.25,1.5,2,2.5,3"),
        Option("--reps", int, 10, help="random transforms per image"),
        Option("--csv", str, help="curve CSV (default: stdout)"),
    ],
    "sample": COMMON + SINGLE_IMAGE + _dataset_options() + SYNTH_OPTIONS + GEO_OPTIONS + [
        Option("--group", TransformGroup.parse, "similarity"),
        Option("--score", float, required=True, help="target normalized score"),
        Option("--out-transform", str),
        Option("--out-image", str),
    ],
    "distance": COMMON + SINGLE_IMAGE + _dataset_options() + SYNTH_OPTIONS + GEO_OPTIONS + [
        Option("--transform", str, required=True,
               help="file holding a 9-number transform line, or the 9 numbers"),
        Option("--group", TransformGroup.parse, help="logarithm basis (default: inferred)"),
    ],
    "finetune": COMMON + MODEL + _dataset_options() + _dataset_options("test-")
    + SYNTH_OPTIONS + ATTACK_OPTIONS + GEO_OPTIONS + [
        Option("--mode", str, "minimal", help="minimal, random or baseline"),
        Option("--group", TransformGroup.parse, "affine"),
        Option("--epochs", int, 1),
        Option("--lr", float, 0.2, help="base learning rate before --lr-scale"),
        Option("--lr-scale", float, 0.5),
        Option("--batch-size", int, 8),
        Option("--out", str, required=True, help="fine-tuned weights file"),
        Option("--csv", str, help="before/after CSV (default: stdout)"),
    ],
}

_CONFIG_ONLY_SKIP = {"config"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file; flags override it")
        for opt in options:
            default = "" if opt.default is None else f" (default: {opt.default})"
            p.add_argument(opt.flag, dest=opt.key, type=str, help=opt.help + default)
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge flags over config over defaults and convert every value."""
    options = {opt.key: opt for opt in COMMANDS[command]}
    config = read_config(ns.config) if getattr(ns, "config", None) else {}
    unknown = sorted(set(config) - set(options))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    cfg = {}
    for key, opt in options.items():
        raw = flags.get(key, config.get(key))
        if raw is None:
            if opt.required:
                raise UsageError(f"{opt.flag} is required")
            raw = opt.default
        if raw is None or not isinstance(raw, str):
            cfg[key] = raw
            continue
        try:
            cfg[key] = opt.kind(raw)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad value for {opt.flag}: {raw!r} ({exc})") from None
    if cfg.get("jobs") is None:
        cfg["jobs"] = default_jobs()
    return cfg


# ---- helpers ------------------------------------------------------------

def atomic_write(path, payload) -> None:
    """Write ``payload`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit(text: str, path: Optional[str]) -> None:
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def num(v) -> str:
    return "" if v is None else repr(float(v))


def load_dataset(cfg: dict, prefix: str = "", stream: int = STREAM_SYNTH,
                 required: bool = True) -> Optional[LabeledDataset]:
    get = lambda name: cfg.get(prefix + name)  # noqa: E731
    sources = [n for n in ("images", "pgm_dir", "mnist", "synth_blobs") if get(n) is not None]
    if not sources:
        if required:
            raise UsageError(f"no dataset given (use --{prefix.replace('_', '-')}images, "
                             f"--{prefix.replace('_', '-')}mnist, ...)")
        return None
    if len(sources) > 1:
        raise UsageError(f"choose one dataset source, got {', '.join(sources)}")
    source = sources[0]
    if source == "mnist":
        data = bundled_mnist(get("mnist"))
    elif source == "synth_blobs":
        data = synth_blobs(get("synth_blobs"), cfg["synth_width"], cfg["synth_height"],
                           cfg["synth_offsets"], cfg["synth_sigma"],
                           seed=[cfg["seed"], stream], jitter=cfg["synth_jitter"])
    else:
        images = (load_idx_images(get("images")) if source == "images"
                  else load_pgm_dir(get("pgm_dir")))
        labels_path = get("labels")
        if labels_path is None:
            raise UsageError(f"--{prefix.replace('_', '-')}labels is required with {source}")
        labels = (load_labels_csv(labels_path) if str(labels_path).endswith(".csv")
                  else load_idx_labels(labels_path))
        if len(labels) != len(images):
            raise FormatError(f"{len(images)} images but {len(labels)} labels")
        data = LabeledDataset(images, labels)
    start = get("offset") or 0
    stop = len(data) if get("limit") is None else start + get("limit")
    return data.subset(range(start, min(stop, len(data))))


def nonempty(data: LabeledDataset) -> LabeledDataset:
    if len(data) == 0:
        raise EmptyDataset("dataset is empty")
    return data


def single_image(cfg: dict) -> tuple[Image, Optional[int]]:
    if cfg.get("image"):
        return read_pgm(cfg["image"]), cfg.get("label")
    data = load_dataset(cfg)
    i = cfg["index"]
    if not 0 <= i < len(data):
        raise UsageError(f"--index {i} out of range for {len(data)} images")
    label = cfg["label"] if cfg.get("label") is not None else data.labels[i]
    return data.images[i], label


def attack_params(cfg: dict) -> AttackParams:
    return AttackParams(cfg["max_iters"], cfg["momentum"], cfg["initial_step"],
                        cfg["line_search_trials"], cfg["line_search_shrink"],
                        cfg["num_targets"], cfg["step_floor"])


def geo_params(cfg: dict) -> GeodesicParams:
    return GeodesicParams(cfg["geodesic_step"], cfg["max_segments"])


def check_model_input(model, data: LabeledDataset) -> None:
    if len(data) and data.images[0].shape != (model.height, model.width):
        raise UsageError(f"images are {data.images[0].shape}, model expects "
                         f"{(model.height, model.width)}")


# ---- commands -----------------------------------------------------------

TRAIN_HEADER = ["arch", "epochs", "train_accuracy", "test_accuracy", "train_loss"]


def cmd_train(cfg: dict) -> int:
    data = nonempty(load_dataset(cfg))
    test = load_dataset(cfg, "test_", STREAM_SYNTH_TEST, required=False)
    if cfg.get("init_model"):
        model = clf.load_weights(cfg["init_model"])
    else:
        classes = cfg["classes"] or max(data.labels) + 1
        h, w = data.images[0].shape
        model = clf.init_model(cfg["arch"], classes, w, h, seed=[cfg["seed"], STREAM_INIT],
                               hidden=cfg["hidden"])
    check_model_input(model, data)
    model = clf.train_sgd(model, data, cfg["epochs"], cfg["lr"], cfg["batch_size"],
                          seed=[cfg["seed"], STREAM_SHUFFLE], lr_decay=cfg["lr_decay"])
    atomic_write(cfg["out"], clf.weights_bytes(model))
    test_acc = clf.accuracy(model, test) if test is not None and len(test) else None
    row = [model.arch.name.lower(), cfg["epochs"], num(clf.accuracy(model, data)),
           num(test_acc), num(clf.dataset_loss(model, data))]
    emit(csv_text(TRAIN_HEADER, [row]), cfg.get("csv"))
    return EXIT_OK


ATTACK_HEADER = ["success", "score", "new_label", "iterations", "original_label", "target"]
TRACE_HEADER = ["iteration", "target", "step", "g_before", "g_after", "forced", "running_score"]


def trace_rows(img: Image, result: FoolResult, group: TransformGroup, geo: GeodesicParams):
    rows = []
    for k, rec in enumerate(result.trace):
        tau = recompose(result.trace[:k + 1])
        try:
            running = normalized_score(img, tau, geo, group)
        except ManifoolError:
            running = math.inf
        rows.append([rec.iteration, rec.target, num(rec.step), num(rec.g_before),
                     num(rec.g_after), int(rec.forced), num(running)])
    return rows


def cmd_attack(cfg: dict) -> int:
    model = clf.load_weights(cfg["model"])
    img, label = single_image(cfg)
    if img.shape != (model.height, model.width):
        raise UsageError(f"image is {img.shape}, model expects {(model.height, model.width)}")
    group, geo = cfg["group"], geo_params(cfg)
    res = manifool_multiclass(img, model, group, attack_params(cfg), geo, true_label=label)
    if cfg.get("out_transform"):
        atomic_write(cfg["out_transform"], res.tau_hat.to_line() + "\n")
    if cfg.get("out_image"):
        atomic_write(cfg["out_image"], pgm_bytes(res.fooled_image))
    if cfg.get("trace"):
        atomic_write(cfg["trace"], csv_text(TRACE_HEADER, trace_rows(img, res, group, geo)))
    row = [int(res.success), num(res.geodesic_score) if res.success else "", res.new_label,
           res.iterations, res.original_label, "" if res.target is None else res.target]
    emit(csv_text(ATTACK_HEADER, [row]), cfg.get("csv"))
    if not res.success:
        print(f"attack failed: {res.reason}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


RHO_HEADER = ["group", "rho_hat", "images", "successes", "failures"]


def cmd_eval_rho(cfg: dict) -> int:
    model = clf.load_weights(cfg["model"])
    data = nonempty(load_dataset(cfg))
    check_model_input(model, data)
    summary, details, status = [], [], EXIT_OK
    for group in cfg["group"]:
        results = attack_dataset(data, model, group, attack_params(cfg), geo_params(cfg),
                                 jobs=cfg["jobs"])
        try:
            report = report_from_results(data, results, group)
        except AllFailed:
            summary.append([group.value, "", len(data), 0, len(data)])
            status = EXIT_FAILURE
            continue
        summary.append([group.value, num(report.rho_hat), len(data),
                        len(data) - report.failure_count, report.failure_count])
        details.extend([group.value] + rec.row() for rec in report.per_image)
    if cfg.get("details"):
        atomic_write(cfg["details"], csv_text(["group"] + EVAL_HEADER, details))
    emit(csv_text(RHO_HEADER, summary), cfg.get("csv"))
    return status


def cmd_eval_curve(cfg: dict) -> int:
    model = clf.load_weights(cfg["model"])
    data = nonempty(load_dataset(cfg))
    check_model_input(model, data)
    try:
        curve = misclassification_curve(data, model, cfg["group"], cfg["r_grid"], cfg["reps"],
                                        seed=cfg["seed"], geo_params=geo_params(cfg),
                                        jobs=cfg["jobs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    emit(curve.to_csv(), cfg.get("csv"))
    if curve.r_hat is None:
        print("misclassification rate never reached 0.5: r_hat undefined", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sample(cfg: dict) -> int:
    img, _ = single_image(cfg)
    group, geo = cfg["group"], geo_params(cfg)
    direction = random_direction(group, [cfg["seed"], STREAM_SAMPLE])
    t = RaySampler(img, group, direction, geo).solve(cfg["score"])
    score = normalized_score(img, t, geo, group)
    if cfg.get("out_transform"):
        atomic_write(cfg["out_transform"], t.to_line() + "\n")
    if cfg.get("out_image"):
        atomic_write(cfg["out_image"], pgm_bytes(warp(img, t)))
    print(t.to_line())
    print(repr(score))
    return EXIT_OK


def parse_transform(text: str) -> Transform:
    path = Path(text)
    if len(text.split()) != 9 and path.exists():
        text = path.read_text()
    try:
        return Transform.from_line(text.strip().splitlines()[0] if text.strip() else "")
    except ValueError as exc:
        raise FormatError(f"bad transform: {exc}") from None


def cmd_distance(cfg: dict) -> int:
    img, _ = single_image(cfg)
    t = parse_transform(cfg["transform"])
    print(repr(normalized_score(img, t, geo_params(cfg), cfg.get("group"))))
    return EXIT_OK


FINETUNE_HEADER = ["mode", "stage", "rho_hat", "failures", "accuracy"]
FINETUNE_MODES = ("minimal", "random", "baseline")


def finetune_transforms(mode: str, model, data: LabeledDataset, cfg: dict) -> list:
    """Per-image training transforms (``None`` keeps the clean image)."""
    if mode == "baseline":
        return [None] * len(data)
    group, geo = cfg["group"], geo_params(cfg)
    results = attack_dataset(data, model, group, attack_params(cfg), geo, jobs=cfg["jobs"])
    fooled = [r.tau_hat if r.success and r.geodesic_score > 0 else None for r in results]
    if mode == "minimal":
        return fooled
    scores = [r.geodesic_score for r in results if r.success and r.geodesic_score > 0]
    if not scores:
        raise AllFailed("no fooling transforms to take a median score from")
    target = float(np.median(scores))
    out = []
    for i, img in enumerate(data.images):
        direction = random_direction(group, [cfg["seed"], STREAM_RANDOM_FINETUNE, i])
        try:
            out.append(RaySampler(img, group, direction, geo).solve(target))
        except ManifoolError:
            out.append(None)
    return out


def cmd_finetune(cfg: dict) -> int:
    mode = cfg["mode"]
    if mode not in FINETUNE_MODES:
        raise UsageError(f"--mode must be one of {', '.join(FINETUNE_MODES)}")
    model = clf.load_weights(cfg["model"])
    data = nonempty(load_dataset(cfg))
    test = load_dataset(cfg, "test_", STREAM_SYNTH_TEST, required=False) or data
    check_model_input(model, data)
    check_model_input(model, test)
    transforms = finetune_transforms(mode, model, data, cfg)
    tuned = clf.finetune_adversarial(model, data, transforms, cfg["epochs"], cfg["lr"],
                                     cfg["lr_scale"], cfg["batch_size"],
                                     seed=[cfg["seed"], STREAM_SHUFFLE])
    atomic_write(cfg["out"], clf.weights_bytes(tuned))
    rows = []
    for stage, m in (("before", model), ("after", tuned)):
        results = attack_dataset(test, m, cfg["group"], attack_params(cfg), geo_params(cfg),
                                 jobs=cfg["jobs"])
        try:
            report = report_from_results(test, results, cfg["group"])
            rho, failures = num(report.rho_hat), report.failure_count
        except AllFailed:
            rho, failures = "", len(test)
        rows.append([mode, stage, rho, failures, num(clf.accuracy(m, test))])
    emit(csv_text(FINETUNE_HEADER, rows), cfg.get("csv"))
    return EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval-rho": cmd_eval_rho,
    "eval-curve": cmd_eval_curve,
    "sample": cmd_sample,
    "distance": cmd_distance,
    "finetune": cmd_finetune,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(ns.command, ns)
        return HANDLERS[ns.command](cfg)
    except (UsageError, EmptyDataset) as exc:
        print(f"manifool {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"manifool {ns.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ManifoolError as exc:
        print(f"manifool {ns.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"manifool {ns.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
