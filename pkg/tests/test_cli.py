import json
import math

import numpy as np
import pytest

from conftest import make_random_stream
from evdepth import config
from evdepth.cli import main
from evdepth.events import read_events, slice_sbt, write_events
from evdepth.imgio import read_pfm, save_depth_pfm, write_pfm, write_pgm
from evdepth.stacks import encode_tencode, save_stack_pfm

MS = 1000


def write_frames(dirpath, specs):
    dirpath.mkdir(exist_ok=True)
    for t_us, value in specs:
        write_pgm(dirpath / f"{t_us:09d}.pgm", np.full((8, 8), value, dtype=np.uint8))


@pytest.fixture()
def events_file(tmp_path):
    stream = make_random_stream(np.random.default_rng(0), width=16, height=12, n_events=3000)
    path = tmp_path / "events.evb"
    write_events(stream, path)
    return path


class TestExitCodes:
    def test_usage_error_is_one(self, capsys):
        assert main(["slice", "--events", "x.evb"]) == 1  # --td-us missing
        assert main(["not-a-command"]) == 1
        assert main([]) == 1

    def test_data_error_is_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("# evcsv v1 width=8 height=8\n1,1,0,10\n")
        assert main(["slice", "--events", str(bad), "--td-us", "10", "--dt-us", "5",
                     "--out", str(tmp_path / "o.evb")]) == 2
        assert "error" in capsys.readouterr().err

    def test_io_error_is_three(self, tmp_path, capsys):
        assert main(["slice", "--events", str(tmp_path / "missing.evb"), "--td-us", "10",
                     "--dt-us", "5", "--out", str(tmp_path / "o.evb")]) == 3
        assert "missing.evb" in capsys.readouterr().err

    def test_help_is_zero(self, capsys):
        assert main(["--help"]) == 0


class TestSimulate:
    def test_constant_frames_give_header_only_evb(self, tmp_path, capsys):
        frames = tmp_path / "frames"
        write_frames(frames, [(0, 90), (1000, 90), (2000, 90)])
        out = tmp_path / "out.evb"
        assert main(["simulate", "--frames", str(frames), "--contrast", "0.1",
                     "--out", str(out)]) == 0
        assert out.stat().st_size == 16
        assert "0 events" in capsys.readouterr().out

    def test_ramp_event_count_matches_threshold_oracle(self, tmp_path, capsys):
        frames = tmp_path / "frames"
        write_frames(frames, [(0, 49), (1000, 135)])
        out = tmp_path / "out.evb"
        assert main(["simulate", "--frames", str(frames), "--contrast", "0.1",
                     "--out", str(out), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        per_pixel = math.floor(math.log(136 / 50) / 0.1)
        assert payload["n_events"] == 64 * per_pixel
        assert len(read_events(out)) == payload["n_events"]

    def test_missing_dir_reports_path(self, tmp_path, capsys):
        missing = tmp_path / "nope"
        assert main(["simulate", "--frames", str(missing), "--contrast", "0.1",
                     "--out", str(tmp_path / "o.evb")]) == 3
        assert str(missing) in capsys.readouterr().err


class TestSliceEncode:
    def test_slice_writes_substream(self, tmp_path, events_file):
        out = tmp_path / "slice.evb"
        assert main(["slice", "--events", str(events_file), "--td-us", "500000",
                     "--dt-us", "100000", "--out", str(out)]) == 0
        sliced = read_events(out)
        full = read_events(events_file)
        expected = [e for e in full if 400000 <= e.timestamp <= 500000]
        assert list(sliced) == expected

    def test_mutually_exclusive_window_args(self, tmp_path, events_file):
        assert main(["slice", "--events", str(events_file), "--td-us", "10",
                     "--dt-us", "5", "--count", "3", "--out", str(tmp_path / "o.evb")]) == 1

    def test_encode_matches_library_golden_bytes(self, tmp_path, events_file):
        out = tmp_path / "stack.pfm"
        assert main(["encode", "--events", str(events_file), "--td-us", "500000",
                     "--dt-us", "100000", "--layout", "tencode", "--out", str(out)]) == 0
        golden = tmp_path / "golden.pfm"
        stream = read_events(events_file)
        save_stack_pfm(encode_tencode(slice_sbt(stream, 500000, 100000)), golden)
        assert out.read_bytes() == golden.read_bytes()

    def test_encode_default_window_and_bins(self, tmp_path, events_file, capsys):
        out = tmp_path / "stack.pfm"
        assert main(["encode", "--events", str(events_file), "--td-us", "500000",
                     "--layout", "voxel", "--out", str(out), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        # default SBT window is 50 ms and default bins is 5 (one pfm per bin)
        assert payload["t_start_us"] == 500000 - 50 * MS
        assert len(payload["files"]) == 5

    def test_encode_empty_slice_warns_but_succeeds(self, tmp_path, events_file, capsys):
        out = tmp_path / "stack.pfm"
        assert main(["encode", "--events", str(events_file), "--td-us", "999000000",
                     "--dt-us", "10", "--out", str(out)]) == 0
        err = capsys.readouterr().err
        assert "empty slice" in err
        assert not read_pfm(out).any()

    def test_encode_rerun_is_byte_identical(self, tmp_path, events_file):
        a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
        args = ["encode", "--events", str(events_file), "--td-us", "500000",
                "--dt-us", "100000"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestAlignEvaluate:
    def test_align_recovers_affine_map(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        target = rng.uniform(1, 10, (12, 12))
        save_depth_pfm(tmp_path / "target.pfm", target)
        save_depth_pfm(tmp_path / "pred.pfm", (target - 3.0) / 2.0)
        assert main(["align", "--pred", str(tmp_path / "pred.pfm"),
                     "--target", str(tmp_path / "target.pfm"), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["scale"] == pytest.approx(2.0, abs=1e-6)
        assert payload["shift"] == pytest.approx(3.0, abs=1e-6)

    def _make_eval_dirs(self, tmp_path, scale=1.0, shift=0.0):
        rng = np.random.default_rng(2)
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for k in range(3):
            gt = rng.uniform(1, 10, (10, 10))
            save_depth_pfm(gt_dir / f"f{k}.pfm", gt)
            save_depth_pfm(pred_dir / f"f{k}.pfm", scale * gt + shift)
        return pred_dir, gt_dir

    def test_identical_dirs_give_zero_errors(self, tmp_path, capsys):
        pred_dir, gt_dir = self._make_eval_dirs(tmp_path)
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
                     "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        agg = payload["aggregate"]
        assert agg["abs_rel"] == 0.0 and agg["rmse"] == 0.0
        assert agg["delta1"] == 1.0 and agg["delta3"] == 1.0
        assert len(payload["frames"]) == 3

    def test_alignment_flag_controls_scaled_predictions(self, tmp_path, capsys):
        pred_dir, gt_dir = self._make_eval_dirs(tmp_path, scale=3.0, shift=1.0)
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
                     "--no-align", "--json"]) == 0
        no_align = json.loads(capsys.readouterr().out)["aggregate"]
        assert no_align["abs_rel"] > 0.5
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
                     "--json"]) == 0
        aligned = json.loads(capsys.readouterr().out)["aggregate"]
        # float32 PFM storage quantizes the affine relation at ~1e-7 relative
        assert aligned["abs_rel"] < 1e-6

    def test_mismatched_sets_fail_listing_basenames(self, tmp_path, capsys):
        pred_dir, gt_dir = self._make_eval_dirs(tmp_path)
        (pred_dir / "extra.pfm").write_bytes((pred_dir / "f0.pfm").read_bytes())
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)]) == 2
        assert "extra" in capsys.readouterr().err

    def test_report_files_written(self, tmp_path):
        pred_dir, gt_dir = self._make_eval_dirs(tmp_path)
        json_out = tmp_path / "r.json"
        csv_out = tmp_path / "r.csv"
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
                     "--json-out", str(json_out), "--csv-out", str(csv_out)]) == 0
        payload = json.loads(json_out.read_text())
        assert {f["frame"] for f in payload["frames"]} == {"f0", "f1", "f2"}
        assert csv_out.read_text().startswith("frame,abs_rel")


class TestDatasetAndFusion:
    def _build_dataset(self, tmp_path, events_file):
        frames = tmp_path / "frames"
        proxies = tmp_path / "proxy"
        frames.mkdir()
        proxies.mkdir()
        rng = np.random.default_rng(3)
        for t_ms in (300, 600, 900):
            stem = f"{t_ms * MS:09d}"
            write_pgm(frames / f"{stem}.pgm", rng.integers(0, 256, (12, 16)).astype(np.uint8))
            save_depth_pfm(proxies / f"{stem}.pfm", rng.uniform(1, 10, (12, 16)))
        return frames, proxies

    def test_build_export_fusion_round(self, tmp_path, events_file, capsys):
        frames, proxies = self._build_dataset(tmp_path, events_file)
        manifest_path = tmp_path / "manifest.json"
        assert main(["dataset", "build", "--events", str(events_file),
                     "--frames", str(frames), "--proxy", str(proxies),
                     "--dt-us", str(300 * MS), "--out", str(manifest_path)]) == 0
        assert manifest_path.is_file()

        stacks_dir = tmp_path / "stacks"
        assert main(["dataset", "export", "--manifest", str(manifest_path),
                     "--out", str(stacks_dir)]) == 0
        exported = sorted(stacks_dir.glob("*.pfm"))
        assert len(exported) == 3

        first = {p.name: p.read_bytes() for p in exported}
        assert main(["dataset", "export", "--manifest", str(manifest_path),
                     "--out", str(stacks_dir)]) == 0
        assert {p.name: p.read_bytes() for p in sorted(stacks_dir.glob("*.pfm"))} == first

    def test_fusion_run_deterministic(self, tmp_path, capsys):
        stacks_dir = tmp_path / "stacks"
        stacks_dir.mkdir()
        rng = np.random.default_rng(4)
        for k in range(4):
            write_pfm(stacks_dir / f"{k:012d}.pfm", rng.random((32, 32, 3)).astype(np.float32))
        out_a, out_b = tmp_path / "da", tmp_path / "db"
        params_path = tmp_path / "model.bin"
        assert main(["fusion", "run", "--stacks", str(stacks_dir), "--out", str(out_a),
                     "--seed", "7", "--params-out", str(params_path)]) == 0
        assert main(["fusion", "run", "--stacks", str(stacks_dir), "--out", str(out_b),
                     "--seed", "7", "--params", str(params_path)]) == 0
        files_a = sorted(out_a.glob("*.pfm"))
        files_b = sorted(out_b.glob("*.pfm"))
        assert len(files_a) == 4
        for a, b in zip(files_a, files_b):
            assert a.read_bytes() == b.read_bytes()
        depth = read_pfm(files_a[0])
        assert depth.shape == (8, 8)  # finest stride of 32x32 input


class TestBench:
    def test_bench_reports_throughput_and_hashes(self, tmp_path, events_file, capsys):
        out_json = tmp_path / "bench.json"
        assert main(["bench", "--events", str(events_file), "--repetitions", "3",
                     "--out", str(out_json), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["n_events"] == 3000
        for layout in ("voxel", "imagelike", "tencode"):
            entry = payload["layouts"][layout]
            assert len(entry["times_s"]) == 3
            assert entry["events_per_s"] > 0
            assert len(entry["hash"]) == 16
        assert payload["peak_rss_kb"] > 0
        assert json.loads(out_json.read_text()) == payload

    def test_baseline_comparison_is_non_gating(self, tmp_path, events_file, capsys):
        baseline = tmp_path / "base.json"
        baseline.write_text(json.dumps(
            {"layouts": {"tencode": {"events_per_s": 1e12}}}
        ))
        assert main(["bench", "--events", str(events_file), "--layouts", "tencode",
                     "--repetitions", "1", "--baseline", str(baseline)]) == 0
        assert "REGRESSION" in capsys.readouterr().err

    def test_unknown_layout_is_usage_error(self, events_file):
        assert main(["bench", "--events", str(events_file), "--layouts", "hexgrid"]) == 1


class TestThreadsEnv:
    def test_env_var_caps_workers(self, monkeypatch):
        monkeypatch.setenv(config.THREADS_ENV_VAR, "2")
        assert config.max_threads() == 2
        monkeypatch.setenv(config.THREADS_ENV_VAR, "not-a-number")
        assert config.max_threads() >= 1
        monkeypatch.delenv(config.THREADS_ENV_VAR)
        assert config.max_threads() >= 1
