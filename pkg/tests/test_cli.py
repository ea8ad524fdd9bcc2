import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from ffcvsr.cli import main
from ffcvsr.frames import FrameStore
from ffcvsr.metrics import EvalReport
from ffcvsr.model import ModelConfig, init_weights, save_weights, zero_heads
from ffcvsr.resample import bicubic_upsample
from ffcvsr.synthetic import checkerboard_pan, degrade

MINI = """\
scale = 4
trunk_width = 8
feature_channels = 8
resblocks_local = 1
resblocks_context = 1
clip_length = 8
patch_size = 32
pyramid_factors = 1
mad_threshold = 0.5
batch_size = 1
total_steps = 3
"""


def write_video(root, frames):
    store = FrameStore.create(root, len(frames))
    for i, f in enumerate(frames, start=1):
        store.write(i, f)
    return store


def quantized(frames):
    return np.floor(np.clip(frames, 0, 1) * 255 + 0.5) / 255


@pytest.fixture
def videos(tmp_path):
    hr = quantized(checkerboard_pan(64, 64, 16, square=8))
    lr = quantized(degrade(hr.astype(np.float32), 4))
    write_video(tmp_path / "hr", list(hr))
    write_video(tmp_path / "lr", list(lr))
    (tmp_path / "mini.cfg").write_text(MINI)
    return tmp_path


def test_full_pipeline(videos, capsys):
    d = videos
    cfg = str(d / "mini.cfg")
    assert main(["prepare-data", "--config", cfg, "--in", str(d / "hr"), "--out", str(d / "data")]) == 0
    assert "clips\t8" in capsys.readouterr().out  # 2 clips in time x 4 patches
    assert main(["train", "--config", cfg, "--data", str(d / "data" / "manifest.tsv"), "--out", str(d / "w.ffcw")]) == 0
    out = capsys.readouterr().out
    assert "steps\t3" in out
    assert (d / "w.ffcw.opt").exists()
    assert len((d / "w.ffcw.loss.tsv").read_text().splitlines()) == 4
    assert main(["infer", "--weights", str(d / "w.ffcw"), "--in", str(d / "lr"), "--out", str(d / "sr"),
                 "--reset-period", "5"]) == 0
    out = capsys.readouterr().out
    assert "frames\t16" in out and "ms_per_frame\t" in out
    assert FrameStore.open(d / "sr").count == 16
    assert main(["evaluate", "--sr", str(d / "sr"), "--hr", str(d / "hr"), "--out", str(d / "report.tsv")]) == 0
    report = EvalReport.from_text((d / "report.tsv").read_text())
    assert report.frames == 16 and report.border_crop == 4
    assert main(["profile", "--in", str(d / "sr"), "--row", "10", "--out", str(d / "profile.png")]) == 0
    assert np.asarray(Image.open(d / "profile.png")).shape == (16, 64)


def test_resume_training_uses_optimizer_sidecar(videos, capsys):
    d = videos
    cfg = str(d / "mini.cfg")
    main(["prepare-data", "--config", cfg, "--in", str(d / "hr"), "--out", str(d / "data")])
    data = str(d / "data" / "manifest.tsv")
    main(["train", "--config", cfg, "--data", data, "--out", str(d / "a.ffcw")])
    assert main(["train", "--config", cfg, "--data", data, "--init", str(d / "a.ffcw"), "--steps", "2",
                 "--out", str(d / "b.ffcw")]) == 0
    assert "steps\t5" in capsys.readouterr().out


def test_zero_residual_infer_matches_bicubic_baseline(videos, capsys):
    d = videos
    save_weights(zero_heads(init_weights(ModelConfig(trunk_width=8, feature_channels=8), 0)), d / "zero.ffcw")
    assert main(["infer", "--weights", str(d / "zero.ffcw"), "--in", str(d / "lr"), "--out", str(d / "sr")]) == 0
    lr = FrameStore.open(d / "lr")
    write_video(d / "bicubic", [bicubic_upsample(f, 4).data for f in lr.frames()])
    for name in ("sr", "bicubic"):
        main(["evaluate", "--sr", str(d / name), "--hr", str(d / "hr"), "--out", str(d / f"{name}.tsv")])
    sr, base = (EvalReport.from_text((d / f"{n}.tsv").read_text()) for n in ("sr", "bicubic"))
    assert sr.psnr == base.psnr and sr.mean_psnr == base.mean_psnr


def test_evaluate_same_directory(videos, capsys):
    assert main(["evaluate", "--sr", str(videos / "hr"), "--hr", str(videos / "hr")]) == 0
    rep = EvalReport.from_text(capsys.readouterr().out)
    assert rep.mean_psnr == float("inf") and rep.mean_ssim == 1.0


def test_color_infer_writes_rgb(tmp_path, capsys):
    rng = np.random.default_rng(0)
    store = FrameStore.create(tmp_path / "rgb", 2)
    for i in (1, 2):
        Image.fromarray(rng.integers(0, 256, (6, 5, 3), dtype=np.uint8), mode="RGB").save(store.path(i))
    save_weights(init_weights(ModelConfig(trunk_width=4, feature_channels=4, resblocks_local=1,
                                          resblocks_context=1), 0), tmp_path / "w.ffcw")
    assert main(["infer", "--weights", str(tmp_path / "w.ffcw"), "--in", str(tmp_path / "rgb"),
                 "--out", str(tmp_path / "sr"), "--color"]) == 0
    assert np.asarray(Image.open(tmp_path / "sr" / "frame_0001.png")).shape == (24, 20, 3)
    assert main(["infer", "--weights", str(tmp_path / "w.ffcw"), "--in", str(tmp_path / "rgb"),
                 "--out", str(tmp_path / "sr2")]) == 1
    assert "--luma" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["infer", "--bogus"])
    assert info.value.code == 2
    (tmp_path / "bad.cfg").write_text("colour = 3\n")
    assert main(["evaluate", "--config", str(tmp_path / "bad.cfg"), "--sr", "x", "--hr", "y"]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["evaluate", "--sr", str(tmp_path / "missing"), "--hr", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: FrameFormatError") and err.count("\n") == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ffcvsr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "prepare-data" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "ffcvsr", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
