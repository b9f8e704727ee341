import os

import numpy as np
import pytest

from esdnet.cli import main, parse_hw, read_manifest
from esdnet.io import load_png, read_csv, save_weights
from esdnet.model import ModelConfig, build_model


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "tiny.esdw"
    save_weights(build_model(ModelConfig(width_div=8), seed=0), path)
    return str(path)


def _synth(tmp_path, name="data", *extra):
    out = str(tmp_path / name)
    assert main(["synth", "--n", "4", "--seed", "7", "--hw", "32x32", "--out", out, *extra]) == 0
    return out


def test_parse_hw():
    assert parse_hw("3840x2160") == (2160, 3840)


class TestSynth:
    def test_byte_identical(self, tmp_path):
        a, b = _synth(tmp_path, "a"), _synth(tmp_path, "b")
        assert sorted(os.listdir(a)) == sorted(os.listdir(b))
        for name in os.listdir(a):
            with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_manifest(self, tmp_path):
        out = _synth(tmp_path)
        pairs = read_manifest(out)
        assert len(pairs) == 4
        line = open(os.path.join(out, "manifest.txt")).readline()
        assert "moire.amplitudes=" in line and "moire.gamma=" in line

    def test_refuses_non_empty_out(self, tmp_path, capsys):
        out = _synth(tmp_path)
        assert main(["synth", "--n", "1", "--out", out]) == 2
        err = capsys.readouterr().err
        assert err.startswith("esdnet: error:") and err.count("\n") == 1

    def test_fixed_identity_degradation(self, tmp_path):
        out = _synth(tmp_path, "id", "--set", "moire.amplitudes=0,0,0")
        for _, clean, moire in read_manifest(out):
            assert np.array_equal(load_png(clean), load_png(moire))


class TestInferEval:
    def test_infer_keeps_shape(self, tmp_path, weights):
        data = _synth(tmp_path, "id", "--set", "moire.amplitudes=0,0,0")
        _, _, moire = read_manifest(data)[0]
        out = str(tmp_path / "r.png")
        assert main(["infer", "--weights", weights, "--in", moire, "--out", out,
                     "--tile", "32", "--overlap", "32"]) == 2
        assert main(["infer", "--weights", weights, "--in", moire, "--out", out]) == 0
        assert load_png(out).shape == load_png(moire).shape

    def test_eval_report(self, tmp_path, weights):
        data = _synth(tmp_path)
        report = str(tmp_path / "rep.csv")
        assert main(["eval", "--weights", weights, "--data", data, "--report", report]) == 0
        rows = read_csv(report)
        assert len(rows) == 5 and rows[-1]["index"] == "mean"
        assert all(np.isfinite(float(r["psnr"])) for r in rows)

    def test_corrupt_weights(self, tmp_path, weights):
        bad = tmp_path / "bad.esdw"
        bad.write_bytes(open(weights, "rb").read()[:-10])
        data = _synth(tmp_path)
        assert main(["eval", "--weights", str(bad), "--data", data, "--report", str(tmp_path / "r.csv")]) == 2
        assert not (tmp_path / "r.csv").exists()


class TestTrain:
    def test_writes_weights_and_log(self, tmp_path):
        data = _synth(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("model.width_div = 8\ntrain.patch = 32\ntrain.total_epochs = 1\nloss.perceptual_block = 1\n")
        w = str(tmp_path / "m.esdw")
        assert main(["train", "--config", str(cfg), "--data", data, "--out-weights", w]) == 0
        log = read_csv(str(tmp_path / "m.loss.csv"))
        assert len(log) == 2 and list(log[0]) == ["step", "epoch", "lr", "loss", "l1_term", "perceptual_term"]
        assert os.path.getsize(w) > 0

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        data = _synth(tmp_path)
        code = main(["train", "--data", data, "--out-weights", str(tmp_path / "m.esdw"),
                     "--set", "train.speed=3"])
        assert code == 1
        assert "train.speed" in capsys.readouterr().err
        assert not (tmp_path / "m.esdw").exists()

    def test_missing_data_dir(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out-weights", str(tmp_path / "w")]) == 2


class TestMisc:
    def test_usage_errors(self, capsys):
        assert main([]) == 1
        assert main(["synth"]) == 1
        assert main(["bench", "--hw", "big"]) == 1
        assert main(["synth", "--n", "0", "--out", "x"]) == 1

    def test_gradcheck_quick(self, capsys):
        assert main(["gradcheck", "--quick"]) == 0
        out = capsys.readouterr().out
        assert "conv2d" in out and "FAIL" not in out

    def test_bench_small(self, tmp_path, weights):
        csv_path = str(tmp_path / "b.csv")
        assert main(["bench", "--weights", weights, "--hw", "96x64", "--runs", "2", "--tile", "64",
                     "--overlap", "32", "--csv", csv_path]) == 0
        rows = read_csv(csv_path)
        assert [r["run"] for r in rows] == ["0", "1", "median", "p95"]
        assert all(float(r["seconds"]) > 0 for r in rows)
