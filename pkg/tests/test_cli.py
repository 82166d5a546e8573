import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from minnet.cli import CNN_SHAPE_TRACES, check_shape_trace, main
from minnet.data import write_idx_fixture
from minnet.models import PRESETS
from minnet.tensor import make_rng


@pytest.fixture(scope="module")
def tiny_mnist(tmp_path_factory):
    """120 training and 40 test images whose class is encoded by a bright block."""
    root = tmp_path_factory.mktemp("mnist")
    rng = make_rng(0)
    for prefix, n in (("train", 120), ("test", 40)):
        labels = np.arange(n) % 10
        images = rng.integers(0, 40, (n, 28, 28))
        for k, label in enumerate(labels):
            images[k, 2 * label:2 * label + 4, 4:24] = 250
        write_idx_fixture(root, images, labels, prefix=prefix)
    return str(root)


def _run(tmp_path, *argv):
    return main(list(argv) + ["--out-dir", str(tmp_path), "--no-png"])


class TestXor:
    def test_torch_example(self, tmp_path):
        code = _run(tmp_path, "xor", "--hidden", "2", "--activation", "tanh", "--lr", "0.05",
                    "--epochs", "1000", "--encoding", "shifted", "--loss", "mse",
                    "--surface-points", "20000")
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["preset"] == "torch-xor" and summary["accuracy"] == 1.0
        for name in ("loss.csv", "loss.svg", "surface.svg"):
            assert (tmp_path / name).exists()
        ET.parse(tmp_path / "surface.svg")

    def test_tf_example(self, tmp_path):
        code = _run(tmp_path, "xor", "--hidden", "3", "--activation", "sigmoid", "--lr", "0.1",
                    "--epochs", "5000", "--encoding", "zero-one", "--loss", "mse-sum",
                    "--surface-points", "20000")
        assert code == 0
        assert json.loads((tmp_path / "summary.json").read_text())["preset"] == "tf-xor"

    def test_png_written(self, tmp_path):
        assert main(["xor", "--epochs", "50", "--surface-points", "1000",
                     "--out-dir", str(tmp_path)]) in (0, 1)
        assert (tmp_path / "loss.png").exists() and (tmp_path / "surface.png").exists()

    def test_hidden_zero_is_usage_error(self, tmp_path, capsys):
        assert _run(tmp_path, "xor", "--hidden", "0") == 2
        assert "usage: minnet xor" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            _run(tmp_path, "xor", "--bogus")
        assert exc.value.code == 2

    def test_negative_lr(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            _run(tmp_path, "xor", "--lr", "-1")
        assert exc.value.code == 2

    def test_deterministic(self, tmp_path):
        outs = []
        for k in range(2):
            d = tmp_path / str(k)
            _run(d, "xor", "--preset", "tf-xor", "--epochs", "300", "--surface-points", "2000",
                 "--seed", "4")
            outs.append(((d / "loss.csv").read_bytes(), (d / "surface.svg").read_bytes()))
        assert outs[0] == outs[1]


class TestXorn:
    def test_both(self, tmp_path, capsys):
        assert _run(tmp_path, "xorn", "--n", "10", "--mode", "both") == 0
        out = capsys.readouterr().out
        assert "deep: n=10 neurons=27 layers=18" in out and "shallow: n=10 neurons=513 layers=2" in out
        spec = json.loads((tmp_path / "parity_deep_net.json").read_text())
        assert spec["neurons"] == 27

    def test_two_deep(self, tmp_path):
        assert _run(tmp_path, "xorn", "--n", "2", "--mode", "deep") == 0
        result = json.loads((tmp_path / "summary.json").read_text())["results"]["deep"]
        assert (result["neurons"], result["layers"], result["accuracy"]) == (3, 2, 1.0)

    def test_n_one_is_usage_error(self, tmp_path):
        assert _run(tmp_path, "xorn", "--n", "1") == 2


class TestMnist:
    def test_missing_data(self, tmp_path, capsys):
        code = _run(tmp_path, "mnist-mlp", "--data-dir", str(tmp_path / "nowhere"))
        assert code == 3
        assert "train-images-idx3-ubyte" in capsys.readouterr().err

    def test_mlp_fixture(self, tmp_path, tiny_mnist):
        code = _run(tmp_path, "mnist-mlp", "--data-dir", tiny_mnist, "--epochs", "5",
                    "--hidden", "20")
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert (summary["train_size"], summary["val_size"], summary["test_size"]) == (90, 30, 40)
        rows = list(csv.reader(open(tmp_path / "confusion.csv")))
        assert len(rows) == 11 and sum(int(v) for r in rows[1:] for v in r[1:]) == 40

    @pytest.mark.parametrize("arch", ["figure", "half-res", "tf-same"])
    def test_cnn_fixture(self, tmp_path, tiny_mnist, arch):
        code = _run(tmp_path, "mnist-cnn", "--arch", arch, "--data-dir", tiny_mnist,
                    "--epochs", "1", "--batch-size", "16")
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["shape_trace"] == [list(s) for s in CNN_SHAPE_TRACES[arch]]
        assert (tmp_path / "filters.svg").exists() and (tmp_path / "confusion.csv").exists()

    def test_diverged_exit_code(self, tmp_path):
        with np.errstate(all="ignore"):
            code = _run(tmp_path, "xor", "--lr", "1e150", "--epochs", "20")
        assert code == 4
        assert json.loads((tmp_path / "summary.json").read_text())["diverged"] is True

    def test_reports_deterministic(self, tmp_path, tiny_mnist):
        outs = []
        for k in range(2):
            d = tmp_path / str(k)
            _run(d, "mnist-mlp", "--data-dir", tiny_mnist, "--epochs", "4", "--hidden", "16",
                 "--seed", "3")
            outs.append(((d / "loss.csv").read_bytes(), (d / "confusion.csv").read_bytes()))
        assert outs[0] == outs[1]


class TestBench:
    def test_full_batch_smoke(self, tmp_path, tiny_mnist):
        code = _run(tmp_path, "bench", "--arch", "mlp-1000", "--batch-mode", "full",
                    "--repeats", "2", "--epochs", "2", "--data-dir", tiny_mnist)
        assert code == 0
        (row,) = list(csv.DictReader(open(tmp_path / "bench.csv")))
        assert row["updates"] == "2" and row["repeats"] == "2"
        assert float(row["mean_seconds"]) > 0 and float(row["std_seconds"]) >= 0

    def test_all_modes(self, tmp_path, tiny_mnist):
        assert _run(tmp_path, "bench", "--arch", "all", "--epochs", "1", "--repeats", "1",
                    "--subset", "20", "--data-dir", tiny_mnist) == 0
        rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
        assert len(rows) == 9
        assert {r["updates"] for r in rows if r["batch_mode"] == "sgd"} == {"20"}


def test_four_layer_bench_arch():
    from minnet.models import bench_model
    from minnet.nn import Linear
    model = bench_model("mlp-300x3", make_rng(0))
    sizes = [(m.n_in, m.n_out) for m in model.children() if isinstance(m, Linear)]
    assert sizes == [(784, 300), (300, 300), (300, 300), (300, 10)]


@pytest.mark.parametrize("arch", sorted(CNN_SHAPE_TRACES))
def test_shape_trace_check(arch):
    assert check_shape_trace(PRESETS[arch].build(make_rng(0)), arch) == CNN_SHAPE_TRACES[arch]
