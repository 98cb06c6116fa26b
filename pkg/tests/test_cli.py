import csv
import json

import pytest

from edgeprop.cli import main
from edgeprop.config import ConfigError, RunConfig, load, parse_text


@pytest.fixture
def tiny(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# tiny corpus\n"
        f"data_dir = {tmp_path / 'data'}\n"
        f"out_dir = {tmp_path / 'out'}\n"
        "n_nodes = 20\n"
        "d_embed = 8\n"
        "lr = 0.01\n"
        "max_epochs = 5\n"
    )
    assert main(["gen-data", "--config", str(cfg)]) == 0
    return tmp_path, cfg


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("lr = 0.5\nuse_edge_features = false\n")
        cfg = load(str(p), {"lr": "0.25"})
        assert cfg.lr == 0.25 and cfg.use_edge_features is False and cfg.batch_size == 32

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            load(None, {"bogus": "1"})

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load(None, {"batch_size": "many"})

    def test_invalid_combination(self):
        with pytest.raises(ConfigError):
            load(None, {"patience": "0"})

    def test_digest_ignores_paths(self):
        assert RunConfig(out_dir="a").digest() == RunConfig(out_dir="b").digest()
        assert RunConfig(lr=0.1).digest() != RunConfig().digest()

    def test_parse_text(self):
        assert parse_text("a = 1\n# c\nb=x\n") == {"a": "1", "b": "x"}


class TestGenData:
    def test_outputs(self, tiny):
        root, _ = tiny
        data = root / "data"
        for name in ("nodes.csv", "transactions.csv", "labels_full.csv", "manifest.json"):
            assert (data / name).exists()
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["config_sha256"]) == 64

    def test_byte_identical(self, tiny, tmp_path):
        root, cfg = tiny
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
        for name in ("nodes.csv", "transactions.csv", "labels_full.csv", "manifest.json"):
            assert (root / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_seed_flag(self, tiny, tmp_path):
        root, cfg = tiny
        main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "s1"), "--seed", "1"])
        assert (root / "data" / "nodes.csv").read_bytes() != (tmp_path / "s1" / "nodes.csv").read_bytes()

    def test_config_error(self, tmp_path, capsys):
        assert main(["gen-data", "--set", "n_nodes=3", "--out", str(tmp_path)]) == 2
        assert "config error" in capsys.readouterr().err


class TestTrainEval:
    def test_train_then_eval(self, tiny, capsys):
        root, cfg = tiny
        assert main(["train", "--config", str(cfg)]) == 0
        out = root / "out"
        rows = read_rows(out / "train_log.csv")
        assert rows[0] == ["epoch", "train_loss", "val_accuracy", "elapsed_ms"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        assert (out / "model.ckpt").read_bytes()[:8] == b"EPCKPT01"
        best_val = max(float(r[2]) for r in rows[1:])
        capsys.readouterr()
        assert main(["eval", "--config", str(cfg), "--split", "validation", "--json"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["accuracy"] == best_val
        assert (out / "metrics_validation.csv").exists()

    def test_eval_test_split_csv(self, tiny):
        root, cfg = tiny
        main(["train", "--config", str(cfg)])
        assert main(["eval", "--config", str(cfg)]) == 0
        rows = dict(read_rows(root / "out" / "metrics_test.csv")[1:5])
        assert set(rows) == {"accuracy", "macro_precision", "macro_recall", "macro_f1"}

    def test_deterministic_checkpoint(self, tiny, tmp_path):
        root, cfg = tiny
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()

    def test_resume(self, tiny, tmp_path):
        root, cfg = tiny
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "straight")])
        split = str(tmp_path / "split")
        assert main(["train", "--config", str(cfg), "--out", split, "--stop-after", "2"]) == 0
        assert main(["train", "--config", str(cfg), "--out", split, "--resume"]) == 0
        assert (tmp_path / "straight" / "model.ckpt").read_bytes() == (tmp_path / "split" / "model.ckpt").read_bytes()
        a = [r[:3] for r in read_rows(tmp_path / "straight" / "train_log.csv")]
        b = [r[:3] for r in read_rows(tmp_path / "split" / "train_log.csv")]
        assert a == b

    def test_corrupt_csv(self, tiny, capsys):
        root, cfg = tiny
        nodes = root / "data" / "nodes.csv"
        lines = nodes.read_text().splitlines()
        lines[4] = lines[4].rsplit(",", 1)[0] + ",notanumber"
        nodes.write_text("\n".join(lines) + "\n")
        assert main(["train", "--config", str(cfg)]) == 3
        assert "nodes.csv:5" in capsys.readouterr().err

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 3

    def test_feature_width_mismatch(self, tiny, tmp_path):
        root, cfg = tiny
        main(["train", "--config", str(cfg)])
        other = tmp_path / "wide"
        main(["gen-data", "--config", str(cfg), "--out", str(other), "--set", "node_dim=9"])
        assert main(["eval", "--config", str(cfg), "--data", str(other)]) == 5

    def test_bad_checkpoint(self, tiny, tmp_path):
        root, cfg = tiny
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage!")
        assert main(["eval", "--config", str(cfg), "--checkpoint", str(bad)]) == 5


class TestDiagnostics:
    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["pass"] is True

    def test_gradcheck_sum(self):
        assert main(["gradcheck", "--set", "aggregator=sum", "--set", "layers=2"]) == 0

    def test_gradcheck_negative_control(self):
        assert main(["gradcheck", "--perturb-gradient"]) == 1

    def test_variance_columns(self, tmp_path):
        out = tmp_path / "v"
        assert main(["variance", "--trials", "1", "--out", str(out), "--set", "n_nodes=60"]) == 0
        rows = read_rows(out / "variance.csv")
        assert rows[0] == ["node", "deg", "plain_mse", "cv_mse"]
        assert all(float(r[2]) >= 0 and float(r[3]) >= 0 for r in rows[1:])

    def test_variance_full_sample(self, tmp_path):
        out = tmp_path / "v"
        assert main(["variance", "--trials", "2", "--out", str(out), "--set", "n_nodes=60",
                     "--set", "sample_size=1000"]) == 0
        rows = read_rows(out / "variance.csv")[1:]
        assert all(float(r[2]) == 0 and float(r[3]) == 0 for r in rows)
