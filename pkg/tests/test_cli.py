import csv
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from steerlearn.cli import main
from steerlearn.dataset import FrameSamples, load_dataset
from steerlearn.models import build_conv3d_lstm, build_nvidia, save_checkpoint
from steerlearn.synthetic import write_dataset
from steerlearn.train_eval import zero_baseline


def write_config(path, root, out, **extra):
    keys = {"model": "nvidia", "dataset_root": root, "epochs": 1, "batch_size": 8, "output_dir": out, "timing": "false", **extra}
    path.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return path


def test_ingest_summary(road_dataset, capsys):
    assert main(["ingest", str(road_dataset)]) == 0
    out = capsys.readouterr().out
    assert "video00: frames=10" in out and "video01: frames=10" in out and "total frames=20" in out
    assert "steering mean=" in out and "skipped=0" in out


def test_ingest_reports_skipped_rows(tmp_path, capsys):
    root = write_dataset(tmp_path / "d", videos=1, frames=3, shape=(8, 8))
    (root / "video00" / "frame00001.png").unlink()
    assert main(["ingest", str(root)]) == 0
    assert "skipped row 3" in capsys.readouterr().out


def test_ingest_layout_errors(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["ingest", str(tmp_path / "empty")]) == 2
    (tmp_path / "bad" / "v1").mkdir(parents=True)
    assert main(["ingest", str(tmp_path / "bad")]) == 2
    assert "index.csv" in capsys.readouterr().err


def test_train_smoke_and_artifacts(road_dataset, tmp_path, capsys):
    cfg = write_config(tmp_path / "run.txt", road_dataset, tmp_path / "out")
    assert main(["train", str(cfg)]) == 0
    assert "epoch 1: train_rmse=" in capsys.readouterr().out
    for f in ("history.csv", "best.stck", "last.stck", "config.txt"):
        assert (tmp_path / "out" / f).is_file()
    rows = list(csv.reader((tmp_path / "out" / "history.csv").read_text().splitlines()[1:]))
    assert rows[0] == ["epoch", "train_rmse", "val_rmse", "seconds"] and len(rows) == 2


def test_train_twice_bit_identical(road_dataset, tmp_path):
    for run in ("a", "b"):
        cfg = write_config(tmp_path / f"{run}.txt", road_dataset, tmp_path / run, epochs=2, preset="moderate")
        assert main(["train", str(cfg)]) == 0
    for f in ("history.csv", "best.stck", "last.stck"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_bad_key_exits_2(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("model = nvidia\nbatchsize = 3\n")
    assert main(["train", str(tmp_path / "bad.txt")]) == 2
    assert "batchsize" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_override_and_divergence(road_dataset, tmp_path, capsys):
    cfg = write_config(tmp_path / "run.txt", road_dataset, tmp_path / "out")
    assert main(["train", str(cfg), "--set", "lr=1e30", "--set", "epochs=3"]) == 3
    assert "diverged" in capsys.readouterr().err


def test_eval_zero_head_on_zero_labels(tmp_path, capsys):
    root = write_dataset(tmp_path / "d", videos=1, frames=5)
    idx = root / "video00" / "index.csv"
    lines = idx.read_text().splitlines()
    fixed = [lines[0]] + [",".join(r.split(",")[:3] + ["0.0"] + r.split(",")[4:]) for r in lines[1:]]
    idx.write_text("\n".join(fixed) + "\n")
    g = build_nvidia()
    g.params["fc_out/kernel"][:] = 0
    g.params["fc_out/bias"][:] = 0
    save_checkpoint(g, tmp_path / "zero.stck")
    assert main(["eval", str(tmp_path / "zero.stck"), "--dataset", str(root), "--split", "all"]) == 0
    assert "rmse=0.000000" in capsys.readouterr().out


def test_eval_roundtrip_and_baseline(road_dataset, tmp_path, capsys):
    cfg = write_config(tmp_path / "run.txt", road_dataset, tmp_path / "out")
    main(["train", str(cfg)])
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "out" / "last.stck"), "--config", str(cfg), "--baseline"]) == 0
    out = capsys.readouterr().out
    hist = (tmp_path / "out" / "history.csv").read_text().splitlines()[-1].split(",")
    rmse = float(out.split("rmse=")[-1])
    assert rmse == pytest.approx(float(hist[2]), abs=5e-7)
    val = FrameSamples([r for recs in load_dataset(road_dataset).videos.values() for r in recs[8:]])
    assert f"zero_baseline_rmse={zero_baseline(val):.6f}" in out


def test_eval_needs_checkpoint_or_baseline(road_dataset, capsys):
    assert main(["eval", "--dataset", str(road_dataset)]) == 2
    assert main(["eval", "--dataset", str(road_dataset), "--baseline", "--split", "all"]) == 0
    assert "zero_baseline_rmse=" in capsys.readouterr().out


def test_augment_preview(road_dataset, tmp_path):
    cfg = write_config(tmp_path / "run.txt", road_dataset, tmp_path / "out", preset="heavy")
    assert main(["augment", "preview", str(cfg), "-n", "0", "--out", str(tmp_path / "none")]) == 0
    assert not (tmp_path / "none").exists()
    for run in ("p1", "p2"):
        assert main(["augment", "preview", str(cfg), "-n", "3", "--out", str(tmp_path / run)]) == 0
    files = sorted(p.name for p in (tmp_path / "p1").iterdir())
    assert files == ["0000_after.png", "0000_before.png", "0001_after.png", "0001_before.png", "0002_after.png", "0002_before.png", "labels.csv"]
    for f in files:
        assert (tmp_path / "p1" / f).read_bytes() == (tmp_path / "p2" / f).read_bytes()
    rows = list(csv.DictReader((tmp_path / "p1" / "labels.csv").open()))
    assert len(rows) == 3
    for r in rows:
        assert float(r["delta"]) == pytest.approx(float(r["steering_after"]) - float(r["steering_before"]))


def test_augment_preview_none_preset_is_identity(road_dataset, tmp_path):
    cfg = write_config(tmp_path / "run.txt", road_dataset, tmp_path / "out", preset="none")
    assert main(["augment", "preview", str(cfg), "-n", "2", "--out", str(tmp_path / "p")]) == 0
    for i in range(2):
        before = np.asarray(Image.open(tmp_path / "p" / f"{i:04d}_before.png"))
        after = np.asarray(Image.open(tmp_path / "p" / f"{i:04d}_after.png"))
        assert before.shape == (120, 320, 3) and np.array_equal(before, after)


def test_saliency_frame(road_dataset, tmp_path, capsys):
    save_checkpoint(build_nvidia(seed=1), tmp_path / "n.stck")
    assert main(["saliency", str(tmp_path / "n.stck"), "--dataset", str(road_dataset), "--index", "3", "--out", str(tmp_path / "s" / "m.png")]) == 0
    assert np.asarray(Image.open(tmp_path / "s" / "m.png")).shape == (120, 320, 3)
    assert (tmp_path / "s" / "m_angle.png").is_file()
    assert "predicted=" in capsys.readouterr().out


def test_saliency_window_writes_25_maps_and_collapse(road_dataset, tmp_path):
    save_checkpoint(build_conv3d_lstm(seed=2), tmp_path / "c.stck")
    assert main(["saliency", str(tmp_path / "c.stck"), "--dataset", str(road_dataset), "--out", str(tmp_path / "w" / "win.png")]) == 0
    per_frame = sorted((tmp_path / "w").glob("win_clip*_frame*.png"))
    assert len(per_frame) == 25
    assert (tmp_path / "w" / "win.png").is_file() and (tmp_path / "w" / "win_angle.png").is_file()


def test_saliency_missing_checkpoint(tmp_path):
    assert main(["saliency", str(tmp_path / "nope.stck"), "--out", str(tmp_path / "x.png")]) == 2


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2


def test_module_entry_point_exit_code(tmp_path):
    res = subprocess.run([sys.executable, "-m", "steerlearn.cli", "ingest", str(tmp_path / "missing")], capture_output=True, text=True)
    assert res.returncode == 2 and "not a directory" in res.stderr
