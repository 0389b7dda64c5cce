"""Acceptance suite: one test per release criterion, each printing a verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
Budgets are asserted at their stated tolerances; timing-bound criteria
measure wall time.
"""

import re
import time

import numpy as np
import pytest

from mpoxmamba.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from mpoxmamba.cli import EXIT_DATA, EXIT_OK, main
from mpoxmamba.data import kfold_split, make_synthetic_dataset
from mpoxmamba.errors import DataError
from mpoxmamba.gradcheck import grad_check
from mpoxmamba.metrics import ConfusionMatrix, evaluate_metrics
from mpoxmamba.model import ModelConfig, ablation_config, build_model, count_flops, count_params
from mpoxmamba.ssm import (
    S6,
    discretize_zoh,
    kernel_conv_apply,
    lti_scan_kernel,
    selective_scan,
)
from mpoxmamba.tensor import Tensor, no_grad, sigmoid, silu, softmax_lastdim, softplus
from mpoxmamba.train import TrainConfig, cross_entropy, evaluate, fit
from mpoxmamba.vision_mamba import VisionMambaLayer, VmLayerConfig, cross_merge, cross_scan
from mpoxmamba import ops


def verdict(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_parameter_and_flop_budget(capsys):
    start = time.perf_counter()
    assert main(["summary"]) == EXIT_OK
    out = capsys.readouterr().out
    elapsed = time.perf_counter() - start
    params = int(re.search(r"parameters: ([\d,]+)", out).group(1).replace(",", ""))
    flops = float(re.search(r"profiler convention\): (\d+\.\d+)G", out).group(1)) * 1e9
    param_err = abs(params - 0.77e6) / 0.77e6
    flop_err = abs(flops - 0.53e9) / 0.53e9
    with capsys.disabled():
        verdict("parameter budget",
                param_err <= 0.10 and flop_err <= 0.15 and elapsed < 5.0,
                f"{params / 1e6:.3f}M params ({param_err:.1%} off 0.77M), "
                f"{flops / 1e9:.3f}G FLOPs ({flop_err:.1%} off 0.53G), {elapsed:.2f}s")


def test_ablation_ladder():
    start = time.perf_counter()
    params = {}
    flops = {}
    for name in ("basic", "g4", "g3", "g2", "vm-fusion"):
        model = build_model(ablation_config(name), seed=0)
        params[name] = count_params(model)
        flops[name] = count_flops(model).flops
    elapsed = time.perf_counter() - start
    param_ok = (params["basic"] < params["g4"] < params["g3"]
                < params["g2"] < params["vm-fusion"])
    flop_ok = flops["g4"] < flops["g3"] < flops["g2"] < flops["vm-fusion"]
    summary = "/".join(f"{params[n] / 1e6:.2f}" for n in ("basic", "g4", "g3", "g2", "vm-fusion"))
    verdict("ablation ladder", param_ok and flop_ok and elapsed < 10.0,
            f"params {summary}M ordered, GFLOPs ordered, {elapsed:.2f}s")


def test_ssm_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(120):
        n = int(rng.integers(1, 5))
        length = int(rng.integers(1, 33))
        a = rng.uniform(-0.95, 0.95, size=n)
        b = rng.normal(size=n)
        c = rng.normal(size=n)
        x = rng.normal(size=length)
        via_kernel = kernel_conv_apply(x, lti_scan_kernel(a, b, c, length))
        a_bar = np.broadcast_to(a, (1, length, 1, n)).astype(np.float64).copy()
        b_bar = np.broadcast_to(b, (1, length, 1, n)).astype(np.float64).copy()
        cs = np.broadcast_to(c, (1, length, n)).astype(np.float64).copy()
        via_scan = selective_scan(x.reshape(1, length, 1), a_bar, b_bar, cs,
                                  np.zeros(1)).data.ravel()
        worst = max(worst, float(np.abs(via_scan - via_kernel).max()))
    elapsed = time.perf_counter() - start
    verdict("ssm oracle equivalence", worst <= 1e-10 and elapsed < 5.0,
            f"120 parameter sets, max |recurrence - convolution| = {worst:.3e}, {elapsed:.2f}s")


def test_cross_scan_round_trip():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(1, 17))
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        fmap = rng.normal(size=(c, h, w))
        merged = cross_merge(cross_scan(Tensor(fmap)), h, w)
        worst = max(worst, float(np.abs(merged.data - 4.0 * fmap).max()))
    elapsed = time.perf_counter() - start
    verdict("cross-scan round trip", worst <= 1e-12 and elapsed < 5.0,
            f"100 maps up to 16x8x8, max |merge(scan(M)) - 4M| = {worst:.3e}, {elapsed:.2f}s")


def test_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    t64 = lambda a: Tensor(np.asarray(a, dtype=np.float64))
    reports = {}

    for name, fn in (("silu", silu), ("sigmoid", sigmoid),
                     ("softplus", softplus), ("softmax", softmax_lastdim)):
        reports[name] = grad_check(fn, [t64(rng.uniform(-1, 1, size=(3, 4)) + 0.05)],
                                   tolerance=1e-4)

    reports["linear"] = grad_check(
        ops.linear,
        [t64(rng.uniform(-1, 1, size=(3, 4))), t64(rng.uniform(-1, 1, size=(2, 4))),
         t64(rng.uniform(-1, 1, size=2))], tolerance=1e-4)

    reports["conv2d"] = grad_check(
        lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1, groups=2),
        [t64(rng.uniform(-1, 1, size=(1, 4, 6, 6))),
         t64(rng.uniform(-1, 1, size=(4, 2, 3, 3))),
         t64(rng.uniform(-1, 1, size=4))], tolerance=1e-4)

    mean, var = np.zeros(3), np.ones(3)
    reports["batch_norm"] = grad_check(
        lambda x, g, b: ops.batch_norm2d(x, g, b, mean, var, training=True),
        [t64(rng.uniform(-1, 1, size=(2, 3, 4, 4))),
         t64(rng.uniform(0.5, 1.5, size=3)), t64(rng.uniform(-0.5, 0.5, size=3))],
        tolerance=1e-4)

    reports["layer_norm"] = grad_check(
        lambda x, g, b: ops.layer_norm(x, g, b),
        [t64(rng.uniform(-1, 1, size=(2, 4, 5))),
         t64(rng.uniform(0.5, 1.5, size=5)), t64(rng.uniform(-0.5, 0.5, size=5))],
        tolerance=1e-4)

    reports["global_avg_pool"] = grad_check(
        ops.global_avg_pool, [t64(rng.uniform(-1, 1, size=(2, 3, 4, 4)))], tolerance=1e-4)

    reports["channel_conv1d"] = grad_check(
        ops.channel_conv1d,
        [t64(rng.uniform(-1, 1, size=(2, 8))), t64(rng.uniform(-1, 1, size=3))],
        tolerance=1e-4)

    reports["discretize_zoh"] = grad_check(
        lambda a, b, d: discretize_zoh(a, b, d).b_bar,
        [Tensor(-rng.uniform(0.5, 2.0, size=(2, 3)), dtype=np.float64),
         t64(rng.normal(size=(1, 4, 3))),
         t64(rng.uniform(0.01, 0.1, size=(1, 4, 2)))], tolerance=1e-4, step=1e-6)

    reports["selective_scan"] = grad_check(
        selective_scan,
        [t64(rng.uniform(-1, 1, size=(2, 5, 3))),
         t64(rng.uniform(0.1, 0.9, size=(2, 5, 3, 2))),
         t64(rng.uniform(-1, 1, size=(2, 5, 3, 2))),
         t64(rng.uniform(-1, 1, size=(2, 5, 2))),
         t64(rng.uniform(-1, 1, size=3))], tolerance=1e-4)

    s6 = S6(np.random.default_rng(1), 3, 2, dtype=np.float64)
    reports["s6_block"] = grad_check(
        lambda x, *ps: s6(x), [t64(rng.uniform(-1, 1, size=(1, 4, 3))), *s6.parameters()],
        tolerance=1e-4)

    vm = VisionMambaLayer(np.random.default_rng(2),
                          VmLayerConfig(channels=2, state_size=2, expand=1),
                          dtype=np.float64)
    reports["vm_layer"] = grad_check(
        lambda x, *ps: vm(x), [t64(rng.uniform(-1, 1, size=(1, 2, 3, 2))), *vm.parameters()],
        tolerance=1e-4)

    cross_entropy_targets = np.array([0, 2, 1])
    reports["cross_entropy"] = grad_check(
        lambda lg: cross_entropy(lg, cross_entropy_targets),
        [t64(rng.normal(size=(3, 3)))], tolerance=1e-4)

    # end-to-end: width/8 model at 32x32, finite differences on sampled parameters
    cfg = ModelConfig(input_hw=(32, 32), stage_depths=(1, 1), state_size=2,
                      dtype="float64").scaled(8)
    model = build_model(cfg, seed=5)
    model.train(True)
    x = Tensor(rng.uniform(0, 1, size=(2, 3, 32, 32)), dtype=np.float64)
    targets = np.array([0, 1])
    loss = cross_entropy(model(x), targets)
    model.zero_grad()
    loss.backward()
    params = model.parameters()
    picks = rng.choice(len(params), size=20, replace=False)
    step = 1e-5
    worst_e2e = 0.0
    for pi in picks:
        p = params[pi]
        j = int(rng.integers(p.size))
        analytic = p.grad.reshape(-1)[j] if p.grad is not None else 0.0
        original = p.data.reshape(-1)[j]
        p.data.reshape(-1)[j] = original + step
        up = cross_entropy(model(x), targets).item()
        p.data.reshape(-1)[j] = original - step
        down = cross_entropy(model(x), targets).item()
        p.data.reshape(-1)[j] = original
        numeric = (up - down) / (2 * step)
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst_e2e = max(worst_e2e, err)

    elapsed = time.perf_counter() - start
    failures = [name for name, rep in reports.items() if not rep.passed]
    worst_op = max(rep.max_rel_error for rep in reports.values())
    ok = not failures and worst_e2e <= 1e-4 and elapsed < 300.0
    verdict("gradient suite", ok,
            f"{len(reports)} op checks (worst {worst_op:.2e}), "
            f"end-to-end over 20 params (worst {worst_e2e:.2e}), {elapsed:.1f}s"
            + (f"; failed: {failures}" if failures else ""))


def test_desk_scale_training_sanity():
    start = time.perf_counter()
    images, labels = make_synthetic_dataset(n=64, hw=(64, 64), seed=7)
    cfg = ModelConfig(input_hw=(64, 64), stage_depths=(1, 1)).scaled(4)
    model = build_model(cfg, seed=3)
    train_cfg = TrainConfig(epochs=20, batch_size=16, lr=1e-4,
                            beta1=0.9, beta2=0.999, weight_decay=1e-4)
    history = fit(model, images, labels, train_cfg, seed=11)
    cm, _ = evaluate(model, images, labels, batch_size=16)
    accuracy = evaluate_metrics(cm).oa
    losses = np.array(history.train_losses)
    smoothed = np.convolve(losses, np.ones(5) / 5.0, mode="valid")
    decreasing = bool(np.all(np.diff(smoothed) < 0.0))
    elapsed = time.perf_counter() - start
    verdict("desk-scale training sanity",
            accuracy >= 0.95 and decreasing and elapsed < 600.0,
            f"final train accuracy {accuracy:.3f}, smoothed loss "
            f"{smoothed[0]:.3f}->{smoothed[-1]:.3f} strictly decreasing={decreasing}, "
            f"{elapsed:.1f}s")


def test_harness_correctness():
    labels = np.array([0] * 102 + [1] * 126)
    split = kfold_split(labels, k=5, seed=0)
    sizes = sorted((len(f) for f in split.folds), reverse=True)
    stratified = True
    for cls in (0, 1):
        per_fold = [int((labels[f] == cls).sum()) for f in split.folds]
        stratified &= max(per_fold) - min(per_fold) <= 1
    report = evaluate_metrics(ConfusionMatrix.from_counts([[8, 2], [1, 9]]))
    metrics_ok = (report.per_class_se[0] == 0.8 and report.per_class_sp[0] == 0.9
                  and report.oa == 0.85)
    verdict("harness correctness",
            sizes == [46, 46, 46, 45, 45] and stratified and metrics_ok,
            f"fold sizes {sizes}, stratified={stratified}, "
            f"Se=80% Sp=90% OA=85% reproduced={metrics_ok}")


def test_scan_scaling(capsys):
    assert main(["bench", "--lengths", "1024,2048,4096,8192"]) == EXIT_OK
    out = capsys.readouterr().out
    ratios = [float(m.group(1)) for m in re.finditer(r"\d\s+([\d.]+)\s*$", out, re.M)]
    ratios = ratios[-3:]
    with capsys.disabled():
        verdict("scan scaling", len(ratios) == 3 and all(r <= 2.5 for r in ratios),
                f"time(2L)/time(L) at L=1024,2048,4096: {ratios}")


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(input_hw=(32, 32), stage_depths=(1, 1), state_size=2).scaled(8)
    model = build_model(cfg, seed=6).eval()
    x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 32, 32)).astype(np.float32))
    with no_grad():
        before = model(x).data
    path = tmp_path / "model.mpxm"
    save_checkpoint(model, path)
    restored = load_checkpoint(path).eval()
    with no_grad():
        after = restored(x).data
    bitwise = bool(np.array_equal(before, after))

    corrupted = tmp_path / "corrupt.mpxm"
    raw = bytearray(path.read_bytes())
    assert raw[:4] == MAGIC
    raw[:4] = b"ZZZZ"
    corrupted.write_bytes(bytes(raw))
    with pytest.raises(DataError):
        load_checkpoint(corrupted)
    image = tmp_path / "probe.png"
    from PIL import Image

    Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(image)
    code = main(["infer", "--checkpoint", str(corrupted), "--image", str(image)])
    verdict("checkpoint round trip", bitwise and code == EXIT_DATA,
            f"forward bitwise-identical={bitwise}, corrupt magic exit code {code}")
