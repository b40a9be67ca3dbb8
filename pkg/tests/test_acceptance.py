"""Acceptance gate: one group of tests per criterion, tagged ``criterion(n)``.

The terminal summary prints one PASS/FAIL line per criterion.
"""
import math
import subprocess
import sys

import numpy as np
import pytest
import torch

from deeptrinet import synthetic
from deeptrinet.core import ModelConfig, TrainConfig
from deeptrinet.evaluate import confusion, metrics
from deeptrinet.model import ASPPTAU, TAU, ChannelAttention, PixelAttention, SEBlock, SpatialAttention, build_model, forward
from deeptrinet.preprocess import build_manifest, decode_mask, denormalize, normalize, read_rgb, write_rgb
from deeptrinet.tiling import extract_patches, make_blend_window, pad_image, plan_grid, reassemble_smooth
from deeptrinet.train import export_history, fit, read_history

from helpers import gradient_check


# ---------------------------------------------------------------- 1


@pytest.mark.criterion(1)
@pytest.mark.parametrize("classes", [5, 15])
def test_c01_output_shape(classes):
    model = build_model(ModelConfig(num_classes=classes, input_size=256))
    assert forward(model, np.zeros((2, 256, 256, 3), np.float32)).shape == (2, 256, 256, classes)


# ---------------------------------------------------------------- 2

GRAD_BLOCKS = {
    "se_block": lambda: SEBlock(4, 2),
    "channel_attention": lambda: ChannelAttention(4, 2),
    "spatial_attention": lambda: SpatialAttention(4, 3),
    "pixel_attention": lambda: PixelAttention(4),
    "tau": lambda: TAU(4, 2, 3),
    "aspp_tau": lambda: ASPPTAU(4, 4, (1, 2, 3), 2, 3),
}


@pytest.mark.criterion(2)
@pytest.mark.parametrize("name", list(GRAD_BLOCKS))
def test_c02_gradient_check(name):
    # Five random draws with a nonzero gradient; a draw where every ReLU of
    # the block is dead has an all-zero gradient and checks nothing.
    errors = []
    for seed in range(20):
        torch.manual_seed(seed)
        block = GRAD_BLOCKS[name]()
        with torch.no_grad():
            for p in block.parameters():
                if p.dim() == 1:
                    p.normal_(0, 0.1)
        nhwc = torch.randn(1, 8, 8, 4, generator=torch.Generator().manual_seed(100 + seed), dtype=torch.float64)
        err, scale = gradient_check(block, nhwc.permute(0, 3, 1, 2).contiguous())
        if scale > 0:
            errors.append(err)
        if len(errors) == 5:
            break
    print(f"{name}: max relative error {max(errors):.3e} over {len(errors)} draws")
    assert len(errors) == 5
    assert max(errors) <= 1e-4


# ---------------------------------------------------------------- 3


@pytest.mark.criterion(3)
def test_c03_tau_zero_preserving():
    tau = TAU(8, 2, 7)
    x = torch.zeros(2, 8, 9, 9)
    assert torch.equal(tau(x), x)


@pytest.mark.criterion(3)
def test_c03_tau_attenuation_and_gates():
    torch.manual_seed(0)
    gen = torch.Generator().manual_seed(1)
    for i in range(1000):
        if i % 100 == 0:
            tau = TAU(8, 2, 3)  # several random parameterizations
        x = torch.randn(1, 8, 5, 5, generator=gen) * float(1 + i % 7)
        with torch.no_grad():
            out = tau(x)
            gates = tau.gates(x)
        assert bool(torch.all(out.abs() <= x.abs())), i
        for g in gates:
            assert bool(torch.all((g > 0) & (g < 1))), i


# ---------------------------------------------------------------- 4


@pytest.mark.criterion(4)
def test_c04_normalization():
    values = np.arange(256)
    out = normalize(values)
    assert out.min() >= -1 and out.max() <= 1
    assert out[0] == -1.0 and out[255] == 1.0
    assert np.array_equal(denormalize(out), values)


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5)
def test_c05_tiling_round_trip():
    rng = np.random.default_rng(2024)
    patch, c = 256, 5
    eye = np.eye(c)
    for _ in range(50):
        h, w = rng.integers(100, 701, size=2)
        labels = rng.integers(0, c, (h, w))
        spec = plan_grid(h, w, patch, patch)
        tiles = extract_patches(pad_image(labels, spec), spec)
        back = reassemble_smooth([eye[t] for t in tiles], spec).argmax(-1)
        assert back.shape == (h, w)
        assert np.array_equal(back, labels)


# ---------------------------------------------------------------- 6


@pytest.mark.criterion(6)
@pytest.mark.parametrize("h, w, stride", [(300, 420, 64), (129, 257, 32), (700, 100, 100)])
def test_c06_blended_probabilities_sum_to_one(h, w, stride):
    rng = np.random.default_rng(h * w)
    patch, c = 128, 5
    spec = plan_grid(h, w, patch, stride)
    probs = []
    for _ in range(spec.num_patches):
        z = rng.normal(size=(patch, patch, c))
        e = np.exp(z)
        probs.append(e / e.sum(-1, keepdims=True))
    full = reassemble_smooth(probs, spec, make_blend_window(patch))
    assert np.max(np.abs(full.sum(-1) - 1)) <= 1e-6


@pytest.mark.criterion(6)
def test_c06_constant_input_reproduced():
    spec = plan_grid(333, 211, 64, 24)
    const = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
    full = reassemble_smooth([np.broadcast_to(const, (64, 64, 5))] * spec.num_patches, spec)
    assert np.max(np.abs(full - const)) <= 1e-12


# ---------------------------------------------------------------- 7


def _loop_metrics(pred, target, c):
    cm = [[0] * c for _ in range(c)]
    for p, t in zip(pred.ravel().tolist(), target.ravel().tolist()):
        cm[t][p] += 1
    total = sum(map(sum, cm))
    acc = sum(cm[k][k] for k in range(c)) / total
    prec, rec, iou = [], [], []
    for k in range(c):
        tp = cm[k][k]
        pred_k = sum(cm[i][k] for i in range(c))
        true_k = sum(cm[k])
        prec.append(tp / pred_k if pred_k else None)
        rec.append(tp / true_k if true_k else None)
        iou.append(tp / (pred_k + true_k - tp) if pred_k + true_k - tp else None)
    return cm, acc, prec, rec, iou


def _close(a, b, tol=1e-12):
    return (a is None and b is None) or (a is not None and b is not None and abs(a - b) <= tol)


@pytest.mark.criterion(7)
def test_c07_metric_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pred, target = rng.integers(0, 5, (2, 32, 32))
        cm, acc, prec, rec, iou = _loop_metrics(pred, target, 5)
        got_cm = confusion(pred, target, 5)
        assert got_cm.tolist() == cm
        rep = metrics(got_cm)
        assert abs(rep.accuracy - acc) <= 1e-12
        for k in range(5):
            assert _close(rep.precision[k], prec[k])
            assert _close(rep.recall[k], rec[k])
            assert _close(rep.iou[k], iou[k])


@pytest.mark.criterion(7)
def test_c07_worked_case():
    rep = metrics(np.array([[2, 2], [0, 4]]))
    assert rep.accuracy == 0.75
    assert abs(rep.macro_iou - (0.5 + 4 / 6) / 2) <= 1e-12
    assert abs(rep.macro_iou - 0.5833) < 1e-4


# ---------------------------------------------------------------- 8 and 10


def _overfit_run(root):
    # 10 scenes at the default 0.2 validation fraction leave 8 training patches
    images, masks, _ = synthetic.write_dataset(root / "data", 10, height=256, seed=0)
    cmap = synthetic.class_map()
    tcfg = TrainConfig(epochs=200)
    manifest = build_manifest(images, masks, cmap, tcfg)
    assert manifest.splits.count("train") == 8
    torch.set_num_threads(1)
    model = build_model(ModelConfig(num_classes=4), seed=tcfg.seed)
    result = fit(model, manifest, tcfg, cmap, root / "run")
    export_history(result.history, root / "run" / "history.csv", plot=False)
    return result, root / "run" / "history.csv"


@pytest.fixture(scope="module")
def overfit_runs(tmp_path_factory):
    return [_overfit_run(tmp_path_factory.mktemp(f"overfit{i}")) for i in range(2)]


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_c08_overfit(overfit_runs):
    result, csv_path = overfit_runs[0]
    last = result.history[-1]
    print(f"final train_acc {last.train_acc:.4f} train_loss {last.train_loss:.4f} (ln 4 = {math.log(4):.4f})")
    assert len(result.history) == 200
    assert last.train_acc >= 0.95
    assert last.train_loss < math.log(4)
    values = [v for _, v in result.checkpoints]
    assert values and all(b > a for a, b in zip(values, values[1:]))
    assert [r.val_iou for r in result.history if r.epoch in dict(result.checkpoints)] == values


@pytest.mark.slow
@pytest.mark.criterion(10)
def test_c10_determinism(overfit_runs):
    (_, a), (_, b) = overfit_runs
    assert a.read_bytes() == b.read_bytes()
    assert len(read_history(a)) == 200


# ---------------------------------------------------------------- 9


def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "deeptrinet", *map(str, args)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_c09_end_to_end(tmp_path):
    images, masks, classes = synthetic.write_dataset(tmp_path / "raw", 3, height=512, seed=21)
    grid, run = tmp_path / "grid", tmp_path / "run"
    _cli("grid", "--image", images, "--mask", masks, "--patch", 256, "--stride", 256,
         "--out", grid, "--classes", classes)
    _cli("train", "--manifest", grid / "manifest.tsv", "--classes", classes, "--out", run, "--epochs", 80)
    assert len(read_history(run / "history.csv")) == 80

    # held-out raster: new seed, size not a multiple of the patch
    image, labels = synthetic.make_scene(600, 700, np.random.default_rng(99))
    cmap = synthetic.class_map()
    write_rgb(image, tmp_path / "held" / "scene.png")
    write_rgb(decode_mask(labels, cmap), tmp_path / "held" / "truth.png")
    tiles, out = tmp_path / "tiles", tmp_path / "scene_pred.png"
    _cli("predict", "--checkpoint", run / "best.ckpt", "--image", tmp_path / "held" / "scene.png",
         "--classes", classes, "--out", out, "--emit-patches", tiles)
    assert read_rgb(out).shape == (600, 700, 3)
    assert len(list(tiles.glob("scene_r*_c*.png"))) == 4 * 5
    report = tmp_path / "report.txt"
    proc = _cli("evaluate", "--checkpoint", run / "best.ckpt", "--image", tmp_path / "held" / "scene.png",
                "--mask", tmp_path / "held" / "truth.png", "--classes", classes, "--report", report)
    print(proc.stdout)
    accuracy = float(report.read_text().splitlines()[0].split("=")[1])
    assert accuracy >= 0.9
