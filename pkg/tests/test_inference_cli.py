import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest
import torch

from combcn import data, sampleio
from combcn.cli import cli
from combcn.errors import EmptyMask, ShapeMismatch, TooFewFrames
from combcn.inference import (InpaintRequest, MaskSource, compute_metrics, inpaint,
                              inpaint_video, temporal_diff)
from combcn.losses import loss_combcn
from combcn.model import ModelBundle
from combcn.training import train
from combcn.config import TrainConfig


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    vids = data.synth_corpus(2, 4, 16, 3)
    cfg = TrainConfig(strategy="t1", pretrain_iters=2, joint_iters=3, reduced=True, seed=0)
    train(vids, [], cfg, out_dir=out)
    clip = out / "clip"
    sampleio.write_frames(clip, vids[0])
    return out


def digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestInpaint:
    def test_zero_mask_identity(self, rng):
        bundle = ModelBundle.create(reduced=True, seed=2)
        video = rng.random((4, 16, 16, 3)).astype(np.float32)
        res = inpaint(bundle, video, np.zeros((4, 16, 16), np.uint8))
        assert np.array_equal(res.output, video)
        assert res.lowres.shape == (4, 8, 8, 3)

    def test_outside_hole_untouched(self, rng):
        bundle = ModelBundle.create(reduced=True, seed=2)
        video = rng.random((4, 16, 16, 3)).astype(np.float32)
        mask = data.gen_random_masks(4, 16, 9)
        res = inpaint(bundle, video, mask)
        keep = mask == 0
        assert np.array_equal(res.output[keep], video[keep])
        assert res.output.min() >= 0 and res.output.max() <= 1

    def test_from_checkpoint(self, run_dir, tmp_path):
        req = InpaintRequest(run_dir / "final.ckpt", run_dir / "clip", MaskSource.RANDOM,
                             seed=4, output_dir=tmp_path, emit_lowres=True, emit_diffs=True)
        res = inpaint_video(req)
        assert res.output.shape == (4, 16, 16, 3)
        assert len(list((tmp_path / "frames").iterdir())) == 4
        assert all(p.stem.endswith("_lowres") for p in (tmp_path / "lowres").iterdir())
        assert len(list((tmp_path / "diffs").iterdir())) == 3
        assert np.array_equal(np.load(tmp_path / "mask.npy"), res.mask)

    def test_size_mismatch(self, run_dir, tmp_path):
        big = np.zeros((4, 24, 24, 3), np.float32)
        with pytest.raises(ShapeMismatch):
            inpaint_video(InpaintRequest(run_dir / "final.ckpt", big))
        res = inpaint_video(InpaintRequest(run_dir / "final.ckpt", big, resize=True))
        assert res.output.shape == (4, 16, 16, 3)


class TestMetrics:
    def test_identity(self, rng):
        v = rng.random((3, 8, 8, 3))
        rep = compute_metrics(v, v, np.ones((3, 8, 8)))
        assert rep.video == 0 and rep.frames == [0, 0, 0]

    def test_constant_error_target(self, rng):
        gt = rng.random((2, 8, 8, 3)) * 0.5
        m = np.zeros((2, 8, 8))
        m[:, 2:6, 2:6] = 1
        out = gt + (9.56 / 255) * m[..., None]
        assert compute_metrics(out, gt, m).video == pytest.approx(9.56, abs=1e-9)

    def test_matches_training_loss(self, rng):
        out, gt = rng.random((4, 8, 8, 3)), rng.random((4, 8, 8, 3))
        m = (rng.random((4, 8, 8)) < 0.3).astype(float)
        m[:, 0, 0] = 1
        want = loss_combcn(*(torch.as_tensor(a) for a in (out, m, gt))).item()
        assert compute_metrics(out, gt, m).video == pytest.approx(want, abs=1e-9)

    def test_empty_frame_nan_and_rows(self, rng):
        v = rng.random((2, 4, 4, 3))
        m = np.zeros((2, 4, 4))
        m[1, 0, 0] = 1
        rep = compute_metrics(v + 0.1, v, m)
        assert np.isnan(rep.frames[0]) and rep.frames[1] == pytest.approx(25.5)
        assert rep.rows("x")[-1] == ["x", "all", rep.video]

    def test_empty_mask(self, rng):
        v = rng.random((2, 4, 4, 3))
        with pytest.raises(EmptyMask):
            compute_metrics(v, v, np.zeros((2, 4, 4)))


class TestTemporalDiff:
    def test_static(self):
        d = temporal_diff(np.full((5, 4, 4, 3), 0.3))
        assert d.shape == (4, 4, 4) and not d.any()

    def test_count_and_gain(self):
        v = np.zeros((32, 2, 2, 3))
        v[1::2] = 0.1
        d = temporal_diff(v)
        assert d.shape[0] == 31
        np.testing.assert_allclose(d, 0.5, atol=1e-6)
        np.testing.assert_allclose(temporal_diff(v, gain=20.0), 1.0)

    def test_too_few(self):
        with pytest.raises(TooFewFrames):
            temporal_diff(np.zeros((1, 2, 2, 3)))


class TestCli:
    def test_synth_reproducible(self, tmp_path):
        args = ["synth", "--n", "2", "--frames", "8", "--size", "32", "--seed", "7", "--out"]
        assert cli(args + [str(tmp_path / "a")]) == 0
        assert cli(args + [str(tmp_path / "b")]) == 0
        da, db = digest(tmp_path / "a"), digest(tmp_path / "b")
        assert len(da) == 16 and da == db

    def test_usage_error(self, capsys):
        assert cli(["synth", "--bogus"]) == 2
        assert cli([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_runtime_error(self, tmp_path):
        assert cli(["prepare", "--input", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1

    def test_infer_empty_mask(self, run_dir, tmp_path):
        np.save(tmp_path / "m.npy", np.zeros((4, 16, 16), np.uint8))
        code = cli(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
                    "--frames", str(run_dir / "clip"), "--mask", str(tmp_path / "m.npy"),
                    "--out", str(tmp_path / "o")])
        assert code == 1
        assert not (tmp_path / "o").exists()

    def test_infer_reproducible(self, run_dir, tmp_path):
        for name in "ab":
            assert cli(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
                        "--frames", str(run_dir / "clip"), "--mask", "random", "--seed", "3",
                        "--diffs", "--out", str(tmp_path / name)]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_eval_and_diff(self, run_dir, tmp_path, capsys):
        out = tmp_path / "o"
        assert cli(["infer", "--checkpoint", str(run_dir / "final.ckpt"),
                    "--frames", str(run_dir / "clip"), "--out", str(out)]) == 0
        capsys.readouterr()
        assert cli(["eval", "--pred", str(out / "frames"), "--gt", str(run_dir / "clip"),
                    "--mask", str(out / "mask.npy"), "--out", str(tmp_path / "m.csv")]) == 0
        value = float(capsys.readouterr().out)
        with open(tmp_path / "m.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["video_id", "frame", "l1_masked"]
        assert rows[-1][1] == "all" and float(rows[-1][2]) == pytest.approx(value)
        assert cli(["diff", "--frames", str(out / "frames"), "--out", str(tmp_path / "d")]) == 0
        assert len(list((tmp_path / "d").iterdir())) == 3

    def test_prepare_and_train(self, tmp_path):
        assert cli(["synth", "--n", "3", "--frames", "8", "--size", "16", "--out",
                    str(tmp_path / "c")]) == 0
        assert cli(["prepare", "--input", str(tmp_path / "c"), "--out", str(tmp_path / "s"),
                    "--frames", "4", "--size", "16"]) == 0
        assert len(sampleio.load_split(tmp_path / "s" / "manifest.json", "train")) == 5
        assert cli(["train", "--manifest", str(tmp_path / "s" / "manifest.json"),
                    "--out", str(tmp_path / "r"), "--strategy", "t1", "--reduced",
                    "--pretrain-iters", "2", "--joint-iters", "2", "--log-every", "1"]) == 0
        lines = (tmp_path / "r" / "losses.csv").read_text().splitlines()
        assert lines[0].startswith("iter,phase") and len(lines) > 4

    def test_paramdiff_t1(self, run_dir, capsys):
        args = ["paramdiff", str(run_dir / "pretrain.ckpt"), str(run_dir / "final.ckpt")]
        assert cli(args + ["--group", "3dcn"]) == 0
        assert capsys.readouterr().out.strip().endswith("max |diff| = 0")
        assert cli(args + ["--group", "combcn"]) == 0
        assert not capsys.readouterr().out.strip().endswith("= 0")
