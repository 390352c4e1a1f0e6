from pathlib import Path

import pytest

from schema.run_schema import LrSchedule, RunConfig
from utils.config_loader import RUN_CONFIG_NAME, build_run_config, read_config_file, write_run_config
from utils.errors import ConfigError, DatasetIOError


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text(
        "# smoke run\n"
        "seed = 11\n"
        "batch_size = 32\n"
        "lambda = 0.002\n"
        "lr_schedule = 2x0.001,1x0.0001\n"
        "use_inception = false\n"
        "epochs = 99\n"
        "dropout_rate = 0.3\n"
        "data_root =\n",
        encoding="utf-8",
    )
    return path


def test_defaults():
    cfg = build_run_config()
    assert cfg.batch_size == 64 and cfg.lam == 0.001 and cfg.val_fraction == 0.28
    assert str(cfg.lr_schedule) == "5x0.001,3x0.0001,3x0.00004"
    assert cfg.epochs == 11


def test_file_values_and_echo_only_keys(config_file):
    cfg = build_run_config(config_file)
    assert cfg.seed == 11 and cfg.batch_size == 32 and cfg.lam == 0.002
    assert cfg.use_inception is False
    assert cfg.data_root is None
    # epochs comes from the schedule, not the file
    assert cfg.epochs == 3


def test_flags_override_file(config_file):
    cfg = build_run_config(config_file, {"seed": 5, "lam": 0.0, "batch_size": None})
    assert cfg.seed == 5 and cfg.lam == 0.0
    assert cfg.batch_size == 32


def test_unknown_key(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("seed = 1\nlearning_rate = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="learning_rate"):
        read_config_file(path)


@pytest.mark.parametrize("line", ["batch_size = 0", "val_fraction = 1.5", "lr_schedule = 3xfast",
                                  "use_inception = maybe", "lambda = -1"])
def test_invalid_values(tmp_path, line):
    path = tmp_path / "bad.txt"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        build_run_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(DatasetIOError):
        build_run_config(tmp_path / "nope.txt")


def test_written_config_reads_back(tmp_path):
    cfg = RunConfig(seed=3, batch_size=16, lam=0.0005, lr_schedule=LrSchedule.parse("1x0.01,2x0.00004"),
                    out_dir=tmp_path / "run", data_root=Path("data/synth"))
    path = write_run_config(cfg, tmp_path / "run")
    assert path.name == RUN_CONFIG_NAME
    text = path.read_text(encoding="utf-8")
    assert "lr_schedule = 1x0.01,2x0.00004\n" in text
    assert "epochs = 3\n" in text and "\r" not in text
    keys = [line.split(" = ")[0] for line in text.splitlines()]
    assert keys == sorted(keys)
    assert build_run_config(path) == cfg
