"""Command-line interface.

Subcommands: summary, train, eval, infer, bench, gradcheck. Configuration is
a flat key=value text file with sectioned keys (``model.groups=4``); every key
has a default and unknown keys are rejected. Exit codes: 0 success, 1 usage
or configuration error, 2 data error (datasets, images, checkpoints),
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import kfold_split, load_dataset, load_image, make_synthetic_dataset
from .errors import ConfigError, DataError, DimensionError, MpoxMambaError, NumericError
from .gradcheck import grad_check
from .metrics import evaluate_metrics
from .model import (
    ABLATIONS,
    ModelConfig,
    ablation_config,
    build_model,
    count_flops,
    count_params,
    grad_cam,
)
from .ssm import bench_scan
from .tensor import Tensor, no_grad, softmax_lastdim
from .train import TrainConfig, cross_entropy, evaluate, fit, train_cross_validation
from .viz import save_overlay_png

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    """Parsed union of model config, training hyperparameters and run options."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    kfolds: int = 5
    width_divisor: int = 1

    def effective_model(self) -> ModelConfig:
        cfg = self.model
        if self.width_divisor > 1:
            cfg = cfg.scaled(self.width_divisor)
        cfg.validate()
        return cfg


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_pair(text: str):
    parts = [int(p) for p in text.replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        return (parts[0], parts[0])
    if len(parts) != 2:
        raise ConfigError(f"expected one or two integers, got {text!r}")
    return tuple(parts)


_MODEL_KEYS = {
    "model.num_classes": ("num_classes", int),
    "model.input_size": ("input_hw", _parse_pair),
    "model.stem_channels": ("stem_channels", int),
    "model.stage_widths": ("stage_widths", _parse_pair),
    "model.downsample_widths": ("downsample_widths", _parse_pair),
    "model.head_width": ("head_width", int),
    "model.stage_depths": ("stage_depths", _parse_pair),
    "model.groups": ("groups", int),
    "model.state_size": ("state_size", int),
    "model.dt_rank": ("dt_rank", int),
    "model.vm_expand": ("vm_expand", int),
    "model.expansion": ("expansion", int),
    "model.enable_global": ("enable_global", _parse_bool),
    "model.enable_fusion": ("enable_fusion", _parse_bool),
    "model.dtype": ("dtype", str),
}
_TRAIN_KEYS = {
    "train.epochs": ("epochs", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("lr", float),
    "train.beta1": ("beta1", float),
    "train.beta2": ("beta2", float),
    "train.eps": ("eps", float),
    "train.weight_decay": ("weight_decay", float),
}
_RUN_KEYS = {
    "run.seed": ("seed", int),
    "run.kfolds": ("kfolds", int),
    "run.width_divisor": ("width_divisor", int),
}


def parse_config_file(path) -> RunConfig:
    """key=value lines; '#' comments and blank lines ignored; unknown keys rejected."""
    run = RunConfig()
    model_fields: Dict = {}
    train_fields: Dict = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _MODEL_KEYS:
                name, cast = _MODEL_KEYS[key]
                model_fields[name] = cast(value)
            elif key in _TRAIN_KEYS:
                name, cast = _TRAIN_KEYS[key]
                train_fields[name] = cast(value)
            elif key in _RUN_KEYS:
                name, cast = _RUN_KEYS[key]
                setattr(run, name, cast(value))
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    run.model = replace(run.model, **model_fields)
    run.train = replace(run.train, **train_fields)
    return run


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpoxmamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")

    p_summary = sub.add_parser("summary", help="print stage shapes, parameters and FLOPs")
    common(p_summary)
    p_summary.add_argument("--ablation", choices=ABLATIONS, default=None)
    p_summary.add_argument("--groups", type=int, choices=range(1, 5), default=None)

    p_train = sub.add_parser("train", help="k-fold cross-validation training")
    common(p_train)
    p_train.add_argument("--data", type=str, required=True, help="class-per-folder image root")
    p_train.add_argument("--out", type=str, default="runs", help="output directory")
    p_train.add_argument("--ablation", choices=ABLATIONS, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--data", type=str, required=True)
    p_eval.add_argument("--checkpoint", type=str, required=True)
    p_eval.add_argument("--batch-size", type=int, default=16)

    p_infer = sub.add_parser("infer", help="classify one image")
    common(p_infer)
    p_infer.add_argument("--checkpoint", type=str, required=True)
    p_infer.add_argument("--image", type=str, required=True)
    p_infer.add_argument("--cam", action="store_true", help="write a heatmap overlay PNG")
    p_infer.add_argument("--out", type=str, default=None, help="overlay output path")

    p_bench = sub.add_parser("bench", help="scan runtime scaling")
    common(p_bench)
    p_bench.add_argument("--op", choices=["scan"], default="scan")
    p_bench.add_argument("--lengths", type=str, default="1024,2048,4096")

    p_gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p_gradcheck)
    p_gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _load_run_config(args) -> RunConfig:
    run = parse_config_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run.seed = args.seed
    if getattr(args, "ablation", None):
        run.model = ablation_config(args.ablation, run.model)
    if getattr(args, "groups", None):
        run.model = replace(run.model, groups=args.groups,
                            enable_global=True, enable_fusion=True)
    return run


def _format_g(value: float) -> str:
    return f"{value / 1e9:.4f}G"


def cmd_summary(args) -> int:
    run = _load_run_config(args)
    cfg = run.effective_model()
    model = build_model(cfg, seed=run.seed)
    params = count_params(model)
    report = count_flops(model)
    print(f"input: {cfg.in_channels} x {cfg.input_hw[0]} x {cfg.input_hw[1]}  "
          f"classes: {cfg.num_classes}  groups: {cfg.groups}  depths: {cfg.stage_depths}")
    for row in model.stage_shapes():
        print(f"  {row}")
    print(f"parameters: {params:,} ({params / 1e6:.3f}M)")
    print(f"FLOPs (conv+linear MACs, profiler convention): {_format_g(report.flops)}")
    print(f"  scan-core MACs: {_format_g(report.scan_macs)}")
    print(f"  total MACs: {_format_g(report.total_macs)}")
    print(f"  total FLOPs at 2 ops/MAC: {_format_g(report.total_flops)}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _load_run_config(args)
    cfg = run.effective_model()
    index = load_dataset(args.data)
    if index.num_classes != cfg.num_classes:
        cfg = replace(cfg, num_classes=index.num_classes)
    split = kfold_split(index, k=run.kfolds, seed=run.seed)
    print(f"{len(index)} images, {index.num_classes} classes, {run.kfolds}-fold cross-validation")
    results = train_cross_validation(cfg, index, split, run.train, run.seed, args.out,
                                     log=lambda line: print(line))
    for r in results:
        print(f"fold {r.fold}: val oa {r.val_oa:.4f} se {r.val_se_macro:.4f} "
              f"sp {r.val_sp_macro:.4f} loss {r.val_loss:.4f}")
    print(f"mean val oa: {np.mean([r.val_oa for r in results]):.4f}")
    print(f"outputs written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _load_run_config(args)
    model = load_checkpoint(args.checkpoint)
    index = load_dataset(args.data)
    if index.num_classes != model.cfg.num_classes:
        raise DataError(f"dataset has {index.num_classes} classes, "
                        f"checkpoint expects {model.cfg.num_classes}")
    from .data import ImageStore

    store = ImageStore(index, model.cfg.input_hw)
    ids = list(range(len(index)))
    cm, loss = evaluate(model, store.batch(ids), index.labels(), args.batch_size)
    report = evaluate_metrics(cm)
    print(f"samples: {cm.total}  loss: {loss:.4f}")
    print(f"oa: {report.oa:.4f}  se_macro: {report.se_macro:.4f}  sp_macro: {report.sp_macro:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    model.eval()
    image = load_image(args.image, model.cfg.input_hw).astype(model.cfg.np_dtype)
    with no_grad():
        logits = model(Tensor(image[None]))
        probs = softmax_lastdim(logits).data[0]
    predicted = int(np.argmax(probs))
    print(f"predicted class: {predicted}")
    for cls, p in enumerate(probs):
        print(f"  class {cls}: {p:.6f}")
    if args.cam:
        cam = grad_cam(model, image, predicted)
        out_path = args.out or str(Path(args.image).with_suffix("")) + "_cam.png"
        width, height = save_overlay_png(args.image, cam.heatmap, out_path)
        print(f"cam overlay ({width}x{height}) written to {out_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        lengths = [int(part) for part in args.lengths.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --lengths value {args.lengths!r}: {exc}") from exc
    results = bench_scan(lengths, seed=0)
    print(f"{'length':>8} {'median_ms':>12} {'ratio':>8}")
    prev = None
    for length, seconds in results:
        ratio = "" if prev is None else f"{seconds / prev:.2f}"
        print(f"{length:>8} {seconds * 1e3:>12.3f} {ratio:>8}")
        prev = seconds
    print("(median of 5 runs; warm-up iterations excluded)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import ops, ssm
    from .tensor import silu

    run = _load_run_config(args)
    rng = np.random.default_rng(run.seed)
    tol = args.tolerance
    t64 = lambda a: Tensor(np.asarray(a, dtype=np.float64))
    checks = []

    x = t64(rng.uniform(-1, 1, size=(3, 4)))
    w = t64(rng.uniform(-1, 1, size=(2, 4)))
    b = t64(rng.uniform(-1, 1, size=2))
    checks.append(("linear", grad_check(ops.linear, [x, w, b], tolerance=tol)))

    xc = t64(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
    wc = t64(rng.uniform(-1, 1, size=(4, 2, 3, 3)))
    checks.append(("conv2d", grad_check(
        lambda u, v: ops.conv2d(u, v, stride=1, padding=1), [xc, wc], tolerance=tol)))

    checks.append(("silu", grad_check(silu, [t64(rng.uniform(-1, 1, size=8) + 0.1)], tolerance=tol)))

    xs = t64(rng.uniform(-1, 1, size=(1, 6, 3)))
    a_bar = t64(rng.uniform(0.1, 0.9, size=(1, 6, 3, 2)))
    b_bar = t64(rng.uniform(-1, 1, size=(1, 6, 3, 2)))
    cs = t64(rng.uniform(-1, 1, size=(1, 6, 2)))
    ds = t64(rng.uniform(-1, 1, size=3))
    checks.append(("selective_scan", grad_check(
        ssm.selective_scan, [xs, a_bar, b_bar, cs, ds], tolerance=tol)))

    block = ssm.S6(np.random.default_rng(run.seed), 3, 2, dtype=np.float64)
    xb = t64(rng.uniform(-1, 1, size=(1, 4, 3)))
    checks.append(("s6_block", grad_check(
        lambda u, *ps: block(u), [xb, *block.parameters()], tolerance=tol)))

    failed = False
    for name, report in checks:
        status = "pass" if report.passed else "FAIL"
        print(f"{name:>16}: {status}  max rel err {report.max_rel_error:.3g} (tol {tol:g})")
        failed = failed or not report.passed
    if failed:
        raise NumericError("gradient check failed")
    return EXIT_OK


_COMMANDS = {
    "summary": cmd_summary,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
