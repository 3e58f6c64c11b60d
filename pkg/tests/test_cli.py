import os

import numpy as np
import pytest

from spikeatconv import checkpoint as ckpt_io
from spikeatconv import cli, config, data, train

TINY = """
[model]
dims = 8,8,8,8
depths = 1,1,1,1
resolution = 32
head_dim = 4
window = 1
grid = 1

[train]
epochs = 1
batch_size = 8

[augment]
hflip = 0.0
rotation = 0.0
shear = 0.0
crop_padding = 0

[data]
synthetic_classes = 3
synthetic_train_per_class = 4
synthetic_test_per_class = 2
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


def quiet(*_):
    pass


class TestResolve:
    def test_precedence(self, tiny_cfg):
        args = cli.build_parser().parse_args(["train", "--config", tiny_cfg, "--tau", "4", "--epochs", "3"])
        run = cli.resolve(open(tiny_cfg).read(), cli.overrides_from_args(args))
        assert run.model.tau == 4.0
        assert run.train.epochs == 3
        assert run.train.batch_size == 8
        assert run.train.base_lr == train.TrainConfig().base_lr

    def test_set_flag_and_thresholds(self, tiny_cfg):
        args = cli.build_parser().parse_args(
            ["train", "--config", tiny_cfg, "--thresholds", "0.5,1,3", "--set", "train.batch_size=2",
             "--set", "augment.hflip=0.25", "--seed", "9"])
        run = cli.resolve(open(tiny_cfg).read(), cli.overrides_from_args(args))
        assert run.model.thresholds == (0.5, 1.0, 3.0)
        assert (run.train.batch_size, run.augment.hflip) == (2, 0.25)
        assert run.model.seed == run.train.seed == run.augment.seed == 9

    def test_data_root_env(self, monkeypatch):
        monkeypatch.setenv("DATA_ROOT", "/somewhere")
        args = cli.build_parser().parse_args(["eval"])
        assert cli.overrides_from_args(args)["data"]["root"] == "/somewhere"

    def test_text_round_trip_and_hash(self, tiny_cfg):
        run = cli.resolve(open(tiny_cfg).read(), {})
        assert cli.RunConfig.from_text(run.to_text()) == run
        assert run.hash == cli.resolve(open(tiny_cfg).read(), {}).hash
        assert run.hash != cli.resolve(open(tiny_cfg).read(), {"model": {"tau": "3"}}).hash

    @pytest.mark.parametrize("argv", [
        ["eval", "--set", "model.width=3"],
        ["eval", "--set", "optimizer.lr=1"],
        ["eval", "--set", "nodot=1"],
        ["eval", "--thresholds", "2,1"],
        ["eval", "--config", "/nonexistent/x.cfg"],
    ])
    def test_config_errors_exit_2(self, argv):
        assert cli.main(argv) == cli.EXIT_CONFIG


class TestCommands:
    def test_train_smoke(self, tiny_cfg, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", "--config", tiny_cfg, "--out-dir", str(out)]) == 0
        assert (out / "checkpoint.ckpt").exists() and (out / "config.cfg").exists()
        saved = (out / "config.cfg").read_text()
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == f"# config_sha256={config.text_hash(saved)}"
        ck = ckpt_io.load(out / "checkpoint.ckpt")
        assert ck.config_text == saved and ck.meta["epoch"] == 1

    def test_eval_checkpoint_matches(self, tiny_cfg, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["train", "--config", tiny_cfg, "--out-dir", str(out)])
        logits = tmp_path / "logits.csv"
        run = cli.resolve(open(tiny_cfg).read(), {})
        m = cli.cmd_eval(run, str(out / "checkpoint.ckpt"), str(logits), log=quiet)
        last = (out / "metrics.csv").read_text().splitlines()[-1].split(",")
        assert float(last[train.METRIC_COLUMNS.index("top1")]) == m["top1"]
        z, y = train.read_logits_csv(logits)
        assert train.metrics_from_logits(z, y)["top1"] == m["top1"]
        assert cli.main(["eval", "--config", tiny_cfg, "--checkpoint", str(out / "checkpoint.ckpt")]) == 0
        assert cli.main(["inspect", "--config", tiny_cfg, "--checkpoint", str(out / "checkpoint.ckpt"),
                         "--batch", "3"]) == 0
        assert "stem.spk" in capsys.readouterr().out

    def test_eval_fresh_nano_is_chance(self):
        m = cli.cmd_eval(cli.RunConfig(), None, log=quiet)
        assert abs(m["top1"] - 10.0) <= 5.0

    def test_gradcheck_op(self):
        assert cli.main(["gradcheck", "--scope", "op"]) == 0

    def test_gradcheck_block(self):
        assert cli.cmd_gradcheck("block", log=quiet) == 0

    def test_missing_data_root_exit_3(self, tmp_path):
        assert cli.main(["eval", "--dataset", "cifar10", "--data-root", str(tmp_path)]) == cli.EXIT_DATA
        assert cli.main(["eval", "--dataset", "cifar10", "--data-root", str(tmp_path / "no")]) == cli.EXIT_DATA

    def test_corrupt_data_exit_3(self, tmp_path):
        root = tmp_path / data.CIFAR_SUBDIRS["c10"]
        root.mkdir()
        for name in data.CIFAR_FILES["c10"]["train"] + data.CIFAR_FILES["c10"]["test"]:
            (root / name).write_bytes(bytes(3000))
        assert cli.main(["eval", "--dataset", "cifar10", "--data-root", str(tmp_path)]) == cli.EXIT_DATA

    def test_cifar_directory_pipeline(self, tmp_path, tiny_cfg):
        root = tmp_path / data.CIFAR_SUBDIRS["c10"]
        root.mkdir()
        r = np.random.default_rng(0)
        for name in data.CIFAR_FILES["c10"]["train"] + data.CIFAR_FILES["c10"]["test"]:
            ds = data.Dataset(r.integers(0, 256, (4, 3, 32, 32), dtype=np.uint8), np.arange(4) % 10, 10)
            data.write_cifar(root / name, ds)
        run = cli.resolve(open(tiny_cfg).read(), {"data": {"dataset": "cifar10", "root": str(tmp_path),
                                                           "train_limit": "6"}})
        tr, te = cli.load_datasets(run)
        assert (len(tr), len(te), tr.classes, tr.shape) == (6, 4, 10, (3, 32, 32))

    def test_idx_pipeline(self, tmp_path, tiny_cfg):
        r = np.random.default_rng(0)
        dc = cli.DataConfig()
        for imgs, labs, n in ((dc.idx_train_images, dc.idx_train_labels, 6), (dc.idx_test_images,
                                                                               dc.idx_test_labels, 3)):
            ds = data.Dataset(r.integers(0, 256, (n, 1, 28, 28), dtype=np.uint8), np.arange(n) % 3, 3)
            data.write_idx(tmp_path / imgs, tmp_path / labs, ds)
        out = tmp_path / "run"
        assert cli.main(["train", "--config", tiny_cfg, "--dataset", "idx", "--data-root", str(tmp_path),
                         "--out-dir", str(out)]) == 0
        saved = cli.RunConfig.from_text((out / "config.cfg").read_text())
        assert (saved.model.in_channels, saved.model.classes) == (1, 3)
