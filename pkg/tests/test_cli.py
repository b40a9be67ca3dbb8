import json

import numpy as np
import pytest

from deeptrinet import synthetic
from deeptrinet.cli import main
from deeptrinet.core import format_config
from deeptrinet.preprocess import read_rgb
from deeptrinet.train import read_history

from conftest import TINY


@pytest.fixture
def rasters(tmp_path):
    images, masks, classes = synthetic.write_dataset(tmp_path / "raw", 3, height=128, width=160, seed=4, cell=16)
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(format_config(TINY) + "batch_size = 4\nlearning_rate = 0.003\n")
    return images, masks, classes, cfg


def test_full_workflow(rasters, tmp_path, capsys):
    images, masks, classes, cfg = rasters
    grid = tmp_path / "grid"
    assert main(["grid", "--image", str(images), "--mask", str(masks), "--patch", "64", "--stride", "64",
                 "--out", str(grid), "--classes", str(classes)]) == 0
    # 128 x 160 at 64 px: 2 rows x 3 cols per raster
    assert len(list((grid / "images").glob("*.png"))) == 3 * 6
    assert (grid / "masks" / "scene000.grid").exists()

    run = tmp_path / "run"
    assert main(["train", "--manifest", str(grid / "manifest.tsv"), "--classes", str(classes),
                 "--config", str(cfg), "--out", str(run), "--epochs", "2"]) == 0
    assert len(read_history(run / "history.csv")) == 2
    assert (run / "history.png").exists() and (run / "best.ckpt").exists()
    assert (run / "checkpoints.log").read_text().startswith("1\tval_iou\t")

    tiles = tmp_path / "tiles"
    out = tmp_path / "pred.png"
    assert main(["predict", "--checkpoint", str(run / "best.ckpt"), "--image", str(images / "scene000.png"),
                 "--classes", str(classes), "--out", str(out), "--emit-patches", str(tiles),
                 "--probs", str(tmp_path / "p.npy")]) == 0
    assert read_rgb(out).shape == (128, 160, 3)
    assert (tiles / "scene000.grid").exists() and list(tiles.glob("scene000_r*_c*.png"))
    assert np.load(tmp_path / "p.npy").shape == (128, 160, 4)

    capsys.readouterr()
    report = tmp_path / "report.txt"
    assert main(["evaluate", "--checkpoint", str(run / "best.ckpt"), "--image", str(images / "scene001.png"),
                 "--mask", str(masks / "scene001.png"), "--classes", str(classes),
                 "--report", str(report)]) == 0
    assert capsys.readouterr().out.startswith("accuracy = ")
    data = json.loads(report.with_suffix(".json").read_text())
    assert data["total_pixels"] == 128 * 160


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["predict", "--checkpoint", str(tmp_path / "none.ckpt"), "--image", "x.png",
                 "--classes", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o.png")]) == 1
    assert "error:" in capsys.readouterr().err


def test_class_count_mismatch_exits_1(rasters, tmp_path, capsys):
    images, masks, classes, cfg = rasters
    grid = tmp_path / "grid"
    main(["grid", "--image", str(images), "--mask", str(masks), "--patch", "64", "--stride", "64",
          "--out", str(grid)])
    cfg.write_text(cfg.read_text().replace("num_classes = 4", "num_classes = 5"))
    assert main(["train", "--manifest", str(grid / "manifest.tsv"), "--classes", str(classes),
                 "--config", str(cfg), "--out", str(tmp_path / "run")]) == 1
    assert "num_classes" in capsys.readouterr().err


def test_invalid_config_lists_problems(rasters, tmp_path, capsys):
    images, masks, classes, cfg = rasters
    cfg.write_text("input_size = 250\nlearning_rate = 0\n")
    assert main(["train", "--manifest", "m.tsv", "--classes", str(classes), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "divisible" in err and "learning_rate" in err


def test_grid_without_pairs_exits_1(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    assert main(["grid", "--image", str(tmp_path / "a"), "--mask", str(tmp_path / "b"),
                 "--out", str(tmp_path / "o")]) == 1
