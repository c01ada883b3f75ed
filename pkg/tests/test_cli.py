from pathlib import Path

import numpy as np
import pytest

from scenecast import dataio
from scenecast.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def tree_bytes(root: Path) -> dict:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture()
def small_frames_dir(tmp_path, capsys):
    out = tmp_path / "frames"
    code, _, err = run(
        capsys,
        "synth",
        "--seed", "3",
        "--dims", "64,96,16",
        "--frames", "6",
        "--speed", "1.0",
        "--start-y", "2.0",
        "--out-dir", str(out),
    )
    assert code == 0, err
    return out


class TestSynth:
    def test_outputs_exist(self, small_frames_dir):
        assert (small_frames_dir / "scene.vxg").exists()
        assert (small_frames_dir / "poses.txt").exists()
        assert (small_frames_dir / "000000.ppm").exists()
        assert (small_frames_dir / "000025.dpt").exists()

    def test_byte_identical_rerun(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code, _, err = run(capsys, "synth", "--seed", "5", "--dims", "32,32,8",
                               "--frames", "2", "--out-dir", str(out))
            assert code == 0, err
        assert tree_bytes(a) == tree_bytes(b)


class TestForecast:
    def test_exact_on_constant_velocity(self, small_frames_dir, capsys, tmp_path):
        code, out, err = run(
            capsys, "forecast",
            "--poses", str(small_frames_dir / "poses.txt"),
            "--interval", "5",
            "--gt",
            "--out", str(tmp_path / "pred.txt"),
        )
        assert code == 0, err
        lines = out.strip().splitlines()
        assert len(lines) == 2
        mse = float(lines[1].split(",")[1])
        assert mse < 1e-18
        assert (tmp_path / "pred.txt").exists()

    def test_needs_history(self, tmp_path, capsys):
        path = tmp_path / "poses.txt"
        path.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        code, _, err = run(capsys, "forecast", "--poses", str(path))
        assert code == 1
        assert err.startswith("error:")


class TestWarp:
    def test_outputs_and_monotone_coverage(self, small_frames_dir, tmp_path, capsys):
        out = tmp_path / "warp"
        code, _, err = run(
            capsys, "warp",
            "--frames-dir", str(small_frames_dir),
            "--interval", "5",
            "--out-dir", str(out),
        )
        assert code == 0, err
        for name in ("warped.ppm", "warped.dpt", "hit_mask.pgm",
                     "source_index.pgm", "coverage.csv", "target_pose.txt"):
            assert (out / name).exists(), name
        rows = (out / "coverage.csv").read_text().strip().splitlines()[1:]
        hits = [int(r.split(",")[1]) for r in rows]
        assert hits == sorted(hits)

    def test_target_index_mode(self, small_frames_dir, tmp_path, capsys):
        out = tmp_path / "warp2"
        code, _, err = run(
            capsys, "warp",
            "--frames-dir", str(small_frames_dir),
            "--interval", "5",
            "--target-index", "25",
            "--refiner", "fill",
            "--out-dir", str(out),
        )
        assert code == 0, err
        depth = dataio.read_depth(out / "warped.dpt")
        assert (depth > 0).all()  # fill refiner leaves no holes


class TestFuse:
    def test_pseudo_future_outputs(self, small_frames_dir, tmp_path, capsys):
        out = tmp_path / "fuse"
        code, _, err = run(
            capsys, "fuse",
            "--frames-dir", str(small_frames_dir),
            "--interval", "5",
            "--past", "3",
            "--future", "pseudo",
            "--refiner", "fill",
            "--range-dims", "64,64,16",
            "--range-origin=-12.8,0,-2.0",
            "--out-dir", str(out),
        )
        assert code == 0, err
        fused = dataio.read_fused(out / "fused.fvx")
        bv = dataio.read_blockvis(out / "blockvis.bvx")
        assert fused.block_dims == (16, 16, 4)
        assert bv.num_frames == 5  # 3 past + current + pseudo-future
        lines = (out / "coverage.csv").read_text().strip().splitlines()
        assert lines[0] == "frame,visible_blocks"
        assert lines[-1].startswith("union,")

    def test_future_gt_uses_final_frame(self, small_frames_dir, tmp_path, capsys):
        out = tmp_path / "fuse_gt"
        code, _, err = run(
            capsys, "fuse",
            "--frames-dir", str(small_frames_dir),
            "--interval", "5",
            "--past", "2",
            "--future", "gt",
            "--range-dims", "64,64,16",
            "--range-origin=-12.8,0,-2.0",
            "--out-dir", str(out),
        )
        assert code == 0, err
        bv = dataio.read_blockvis(out / "blockvis.bvx")
        assert bv.frame_indices[-1] == 25


class TestEval:
    def test_self_comparison_is_perfect(self, small_frames_dir, tmp_path, capsys):
        grid = small_frames_dir / "scene.vxg"
        code, out, err = run(capsys, "eval", "--pred", str(grid), "--gt", str(grid))
        assert code == 0, err
        lines = dict(
            line.split(",", 1) for line in out.strip().splitlines()[1:]
        )
        assert float(lines["iou"]) == 1.0
        assert float(lines["miou"]) == 1.0

    def test_missing_file_is_one_line_error(self, capsys):
        code, out, err = run(capsys, "eval", "--pred", "/nonexistent.vxg",
                             "--gt", "/nonexistent.vxg")
        assert code == 1
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1


class TestGradCheck:
    def test_passes_at_tolerance(self, capsys):
        code, out, err = run(capsys, "grad-check", "--volumes", "3", "--seed", "1")
        assert code == 0, err
        lines = out.strip().splitlines()
        assert lines[0] == "loss,max_relative_error"
        for line in lines[1:]:
            assert float(line.split(",")[1]) <= 1e-4


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path, capsys):
        cfg = tmp_path / "conf"
        cfg.write_text("seed=9\ndims=32,32,8\nframes=2\n")
        out_a = tmp_path / "a"
        code, _, err = run(capsys, "synth", "--config", str(cfg),
                           "--out-dir", str(out_a))
        assert code == 0, err
        out_b = tmp_path / "b"
        code, _, _ = run(capsys, "synth", "--config", str(cfg), "--seed", "10",
                         "--out-dir", str(out_b))
        assert code == 0
        a = dataio.read_grid(out_a / "scene.vxg")
        b = dataio.read_grid(out_b / "scene.vxg")
        assert a.labels.shape == (32, 32, 8)
        assert not np.array_equal(a.labels, b.labels)  # flag overrode the seed


class TestDemo:
    def test_summary_and_coverage_ordering(self, tmp_path, capsys):
        out = tmp_path / "demo"
        code, stdout, err = run(capsys, "demo", "--seed", "0", "--out-dir", str(out))
        assert code == 0, err
        rows = (out / "summary.csv").read_text().strip().splitlines()[1:]
        by_name = {r.split(",")[0]: r.split(",")[1:] for r in rows}
        cur = int(by_name["current"][0])
        past = int(by_name["past_current"][0])
        full = int(by_name["past_current_future"][0])
        assert cur < past < full
        assert (full - past) / past >= 0.10
        ious = [float(by_name[k][1]) for k in ("current", "past_current", "past_current_future")]
        assert ious[0] < ious[1] < ious[2]
        for name in ("scene.vxg", "gt_range.vxg", "pseudo_future.ppm",
                     "predicted_pose.txt", "pose_error.csv"):
            assert (out / name).exists(), name
