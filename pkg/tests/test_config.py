import pytest

from traffic_examiner.config import (
    DEFAULT_SEED,
    AppConfig,
    ConfigManager,
    Hyperparams,
    LoggingConfig,
    LrnConfig,
    PreprocessConfig,
    RunConfig,
)
from traffic_examiner.errors import ConfigError


def test_missing_file_gives_defaults(tmp_path):
    config = ConfigManager(tmp_path / "absent.ini").load()
    assert config == AppConfig()
    assert config.seed == DEFAULT_SEED == 20200
    assert config.training == Hyperparams(5000, 200, 0.0006, 0.5, 0.0005, 0.00009)
    assert config.preprocess.target_len == 784
    assert config.preprocess.allows_udp


def test_save_then_load(tmp_path):
    path = tmp_path / "config.ini"
    original = AppConfig(
        preprocess=PreprocessConfig(anonymize=False, time_unit_secs=30.0, include_transport="tcp", workers=4),
        training=Hyperparams(epoch=10, batchsize=8, learn_rate=0.01, dropout=0.0),
        lrn=LrnConfig(k=1.0, n=3, alpha=0.001, beta=0.5),
        run=RunConfig(sink="tcp:10.0.0.5:9000", tcp_timeout=1.5, batch=16),
        logging=LoggingConfig(level="DEBUG"),
        seed=7,
    )
    ConfigManager(path).save(original)

    assert ConfigManager(path).load() == original
    assert not ConfigManager(path).load().preprocess.allows_udp


def test_partial_file_uses_fallbacks(tmp_path):
    path = tmp_path / "config.ini"
    path.write_text("[training]\nepoch = 3\n", encoding="utf-8")
    config = ConfigManager(path).load()
    assert config.training.epoch == 3
    assert config.training.batchsize == 200
    assert config.run.sink == "stdout"


@pytest.mark.parametrize(
    "text",
    [
        "[preprocess]\ntarget_len = 900\n",
        "[preprocess]\ntime_unit_secs = 0\n",
        "[preprocess]\ninclude_transport = icmp\n",
        "[training]\ndropout = 1.0\n",
        "[training]\nepoch = many\n",
        "[lrn]\nn = 4\n",
        "[run]\nbatch = 0\n",
        "[logging]\nlevel = LOUD\n",
        "no section header\n",
    ],
)
def test_invalid_values_are_config_errors(tmp_path, text):
    path = tmp_path / "config.ini"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(path).load()
