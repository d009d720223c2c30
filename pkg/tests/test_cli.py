import os
import subprocess
import sys

import numpy as np
import pytest

from diif.decoder import Architecture, load_weights, save_weights
from diif.pipeline import save_png, synth_image, weight_init


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "diif.cli", *args],
                          capture_output=True, text=True, env=env)


@pytest.fixture(scope="module")
def weights_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cliw") / "w.bin"
    save_weights(p, weight_init(Architecture(27, hidden=32), 0))
    return p


@pytest.fixture(scope="module")
def input_png(tmp_path_factory):
    p = tmp_path_factory.mktemp("clii") / "in.png"
    save_png(p, synth_image(3, 16, 14))
    return p


class TestUpscaleCommand:
    def test_writes_output_and_summary(self, input_png, weights_file, tmp_path):
        out = tmp_path / "up.png"
        r = run_cli("upscale", "--input", str(input_png), "--scale", "2",
                    "--out", str(out), "--weights", str(weights_file))
        assert r.returncode == 0, r.stderr
        assert out.exists()
        assert "MACs" in r.stdout and "slices" in r.stdout

    def test_default_output_name(self, input_png, weights_file):
        r = run_cli("upscale", "--input", str(input_png), "--scale", "2",
                    "--weights", str(weights_file))
        assert r.returncode == 0, r.stderr
        expect = str(input_png)[:-4] + "_x2.png"
        assert os.path.exists(expect)

    def test_thread_env_does_not_change_bytes(self, input_png, weights_file,
                                              tmp_path):
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / f"t{threads}.png"
            r = run_cli("upscale", "--input", str(input_png), "--scale", "2.5",
                        "--out", str(out), "--weights", str(weights_file),
                        env_extra={"DIIF_THREADS": threads})
            assert r.returncode == 0, r.stderr
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_input_reports_path(self, weights_file):
        r = run_cli("upscale", "--input", "/nope/missing.png", "--scale", "2",
                    "--weights", str(weights_file))
        assert r.returncode != 0
        assert "missing.png" in r.stderr

    def test_fixed_interval_requires_fixed_strategy(self, input_png, weights_file):
        r = run_cli("upscale", "--input", str(input_png), "--scale", "2",
                    "--weights", str(weights_file), "--fixed-interval", "3")
        assert r.returncode != 0
        assert "fixed" in r.stderr

    def test_fixed_interval_accepted(self, input_png, weights_file, tmp_path):
        out = tmp_path / "f.png"
        r = run_cli("upscale", "--input", str(input_png), "--scale", "2",
                    "--out", str(out), "--weights", str(weights_file),
                    "--strategy", "fixed", "--fixed-interval", "3")
        assert r.returncode == 0, r.stderr

    def test_no_ensemble_flag_rejects_ensemble_weights(self, input_png,
                                                       weights_file):
        r = run_cli("upscale", "--input", str(input_png), "--scale", "2",
                    "--weights", str(weights_file), "--no-ensemble")
        assert r.returncode != 0
        assert "ensemble" in r.stderr


class TestTrainCommand:
    def test_trains_and_saves(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        for i in range(2):
            save_png(data / f"i{i}.png", synth_image(i, 32, 32))
        out = tmp_path / "w.bin"
        r = run_cli("train", "--data", str(data), "--iters", "3", "--seed", "5",
                    "--out", str(out), "--crop", "24")
        assert r.returncode == 0, r.stderr
        w = load_weights(out)
        assert w.arch.feature_depth == 27


class TestBenchCommand:
    def test_writes_csv(self, weights_file, tmp_path):
        report = tmp_path / "costs.csv"
        r = run_cli("bench", "--width", "16", "--height", "12",
                    "--scales", "2,3", "--weights", str(weights_file),
                    "--report", str(report))
        assert r.returncode == 0, r.stderr
        lines = report.read_text().strip().splitlines()
        assert lines[0].startswith("scale,groups,slices")
        assert len(lines) == 3


class TestVerifyCommand:
    def test_passes(self):
        r = run_cli("verify")
        assert r.returncode == 0, r.stdout + r.stderr
        assert "6/6 checks passed" in r.stdout


def test_unknown_command_rejected():
    r = run_cli("frobnicate")
    assert r.returncode != 0
