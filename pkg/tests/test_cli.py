import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from rankloss import io
from rankloss.cli import EXIT_INPUT, EXIT_NUMERIC, main
from rankloss.network import Dataset, Layer, Network, init_network
from test_network import FIXTURE_MODEL_SHA256


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert main(["train-toy", "--arch", "8,64,64,3", "--generate", "blobs:3classes:1000",
                 "--seed", "42", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def compressed(toy_dir, tmp_path_factory):
    outs = {}
    for mode in ("lossless", "compact"):
        out = tmp_path_factory.mktemp(mode)
        code = main(["compress", "--model", str(toy_dir / "model.json"),
                     "--data", str(toy_dir / "calib.csv"), "--holdout", str(toy_dir / "holdout.csv"),
                     "--mode", mode, "--eps", "calibrate", "--curves", "--out", str(out)])
        assert code == 0
        outs[mode] = out
    return outs


def read_json(path):
    return json.loads(path.read_text())


def test_train_toy_outputs(toy_dir):
    calib = io.load_dataset(toy_dir / "calib.csv")
    assert calib.m == 1000 and set(np.unique(calib.labels)) == {0, 1, 2}
    assert hashlib.sha256((toy_dir / "model.json").read_bytes()).hexdigest() == FIXTURE_MODEL_SHA256
    meta = read_json(toy_dir / "model.meta.json")
    assert meta["seed"] == 42 and meta["steps"] == 600 and meta["final_loss"] > 0


def test_train_toy_zero_steps(tmp_path):
    assert main(["train-toy", "--arch", "8,5,3", "--generate", "blobs:3classes:30", "--steps", "0",
                 "--seed", "7", "--out", str(tmp_path)]) == 0
    net = io.load_network(tmp_path / "model.json")
    ref = init_network((8, 5, 3), 7, init_scale=0.01)
    for a, b in zip(net.layers, ref.layers):
        assert np.array_equal(a.weight, b.weight)


def test_train_toy_needs_seed(tmp_path):
    with pytest.raises(SystemExit):
        main(["train-toy", "--generate", "blobs:3classes:30", "--out", str(tmp_path)])


def test_train_toy_divergence_exit_code(tmp_path, capsys):
    code = main(["train-toy", "--arch", "8,16,1", "--generate", "blobs:3classes:60",
                 "--activation", "identity", "--loss-kind", "mean-squared-error",
                 "--lr", "10", "--init-scale", "1", "--steps", "500", "--seed", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "diverged" in capsys.readouterr().err


def test_lossless_report(compressed):
    report = read_json(compressed["lossless"] / "report.json")
    assert report["calibration_after"]["loss"] <= report["calibration_before"]["loss"]
    assert report["holdout_after"]["loss"] <= report["holdout_before"]["loss"] + 1e-3
    assert any(l["rank"] is not None for l in report["layers"])
    assert "timing" not in report
    assert set(read_json(compressed["lossless"] / "timing.json")) == {"calibration_s", "total_s"}
    for i in range(3):
        with open(compressed["lossless"] / f"curve_layer{i}.csv") as fh:
            assert next(csv.reader(fh)) == ["layer", "rank", "loss", "max_abs_noise", "admissible"]


def test_compact_drops_more(compressed):
    lossless = read_json(compressed["lossless"] / "report.json")
    compact = read_json(compressed["compact"] / "report.json")
    assert compact["drop_rate"] >= lossless["drop_rate"]
    assert compact["compressed_params"] <= lossless["compressed_params"]


def test_compress_is_deterministic(toy_dir, compressed, tmp_path):
    args = ["compress", "--model", str(toy_dir / "model.json"), "--data",
            str(toy_dir / "calib.csv"), "--holdout", str(toy_dir / "holdout.csv"),
            "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "report.json").read_bytes() == \
        (compressed["lossless"] / "report.json").read_bytes()


def test_eval_matches_report(toy_dir, compressed, capsys):
    report = read_json(compressed["lossless"] / "report.json")
    capsys.readouterr()
    assert main(["eval", "--model", str(compressed["lossless"] / "compressed_model.json"),
                 "--data", str(toy_dir / "holdout.csv"), "--json"]) == 0
    after = json.loads(capsys.readouterr().out)
    assert main(["eval", "--model", str(toy_dir / "model.json"),
                 "--data", str(toy_dir / "holdout.csv"), "--json"]) == 0
    before = json.loads(capsys.readouterr().out)
    assert after["loss"] - before["loss"] == pytest.approx(
        report["holdout_after"]["loss"] - report["holdout_before"]["loss"], abs=1e-8)


def test_eval_identity_model(tmp_path, capsys):
    net = Network((Layer([[1.0]], [0.0]),), "mean-squared-error")
    io.save_network(net, tmp_path / "id.json")
    x = np.linspace(-1, 1, 7).reshape(-1, 1)
    io.save_dataset(Dataset(x, x[:, 0]), tmp_path / "id.csv")
    assert main(["eval", "--model", str(tmp_path / "id.json"), "--data",
                 str(tmp_path / "id.csv")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "loss 0"


@pytest.mark.parametrize("command", ["eval", "compress", "probe", "calibrate"])
def test_missing_file(tmp_path, capsys, command):
    code = main([command, "--model", str(tmp_path / "nope.json"), "--data",
                 str(tmp_path / "none.csv"), *([] if command == "eval" else ["--out", str(tmp_path)])])
    assert code == EXIT_INPUT
    assert "nope.json" in capsys.readouterr().err


def test_bad_model_file(tmp_path, capsys):
    (tmp_path / "m.json").write_text("{not json")
    (tmp_path / "d.csv").write_text("1,0\n")
    assert main(["eval", "--model", str(tmp_path / "m.json"), "--data",
                 str(tmp_path / "d.csv")]) == EXIT_INPUT
    assert "m.json" in capsys.readouterr().err


def test_all_small_network_exits_zero(tmp_path, capsys):
    rng = np.random.default_rng(0)
    net = Network(tuple(Layer(rng.standard_normal((2, 2)), np.zeros(2), "tanh") for _ in range(2)))
    io.save_network(net, tmp_path / "m.json")
    io.save_dataset(Dataset(rng.standard_normal((10, 2)), rng.integers(0, 2, 10)), tmp_path / "d.csv")
    assert main(["compress", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--out", str(tmp_path / "o")]) == 0
    report = read_json(tmp_path / "o" / "report.json")
    assert report["warnings"] and report["drop_rate"] == 0
    assert "warning" in capsys.readouterr().err


def test_probe_on_fixture(toy_dir, tmp_path):
    assert main(["probe", "--model", str(toy_dir / "model.json"), "--data",
                 str(toy_dir / "calib.csv"), "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "probe_summary.json")
    assert summary["gradient_stats"]["fraction_exact_zero"] < 0.01
    records = read_json(tmp_path / "probe.json")
    at = [r for r in records if r["eps_bound"] == 1e-3]
    assert at and all(r["discrepancy"] < 1e-4 for r in at)
    assert summary["second_order"]["median_first_to_residual"] >= 10


def test_probe_on_quadratic_layer(tmp_path):
    # linear net under MSE with one output: the gap is exactly mean_s (a delta x_s)^2
    rng = np.random.default_rng(4)
    u, _ = np.linalg.qr(rng.standard_normal((6, 5)))
    v, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    w = (u * [1.0, 0.1, 2e-3, 3e-4, 1e-5]) @ v.T
    a = rng.standard_normal((1, 6))
    net = Network((Layer(w, np.zeros(6)), Layer(a, np.zeros(1))), "mean-squared-error")
    x = rng.standard_normal((20, 5))
    io.save_network(net, tmp_path / "m.json")
    io.save_dataset(Dataset(x, rng.standard_normal(20)), tmp_path / "d.csv")
    assert main(["probe", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d.csv"),
                 "--layers", "0", "--out", str(tmp_path)]) == 0
    records = read_json(tmp_path / "probe.json")
    assert len(records) >= 3
    uu, ss, vt = np.linalg.svd(w, full_matrices=False)
    for r in records:
        k = r["rank"]
        delta = (uu[:, :k] * ss[:k]) @ vt[:k] - w
        assert r["discrepancy"] == pytest.approx(np.mean((x @ (a @ delta).T) ** 2), abs=1e-10)


def test_config_file_and_csv_format(toy_dir, tmp_path):
    (tmp_path / "c.toml").write_text('[compression]\nmode = "compact"\neps = 0.05\n')
    assert main(["compress", "--model", str(toy_dir / "model.json"), "--data",
                 str(toy_dir / "calib.csv"), "--config", str(tmp_path / "c.toml"),
                 "--format", "csv", "--out", str(tmp_path / "o")]) == 0
    report = read_json(tmp_path / "o" / "report.json")
    assert report["config"]["mode"] == "compact" and report["config"]["eps"] == 0.05
    assert (tmp_path / "o" / "report.csv").exists()
    assert main(["compress", "--model", str(toy_dir / "model.json"), "--data",
                 str(toy_dir / "calib.csv"), "--config", str(tmp_path / "c.toml"),
                 "--mode", "lossless", "--out", str(tmp_path / "p")]) == 0
    assert read_json(tmp_path / "p" / "report.json")["config"]["mode"] == "lossless"


def test_calibrate_command(toy_dir, tmp_path):
    assert main(["calibrate", "--model", str(toy_dir / "model.json"), "--data",
                 str(toy_dir / "calib.csv"), "--layers", "1,2", "--out", str(tmp_path)]) == 0
    eps = read_json(tmp_path / "eps.json")
    assert set(eps["eps"]) == {"1", "2"}
    assert main(["calibrate", "--model", str(toy_dir / "model.json"), "--data",
                 str(toy_dir / "calib.csv"), "--layers", "7", "--out", str(tmp_path)]) == EXIT_INPUT


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "rankloss", "eval", "--model",
                           str(tmp_path / "x.json"), "--data", str(tmp_path / "y.csv")],
                          capture_output=True, text=True)
    assert done.returncode == EXIT_INPUT and "x.json" in done.stderr
