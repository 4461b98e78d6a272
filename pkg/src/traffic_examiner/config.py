from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import configparser

from .errors import ConfigError


CONFIG_FILE = Path(__file__).resolve().parent.parent.parent / "config.ini"

DEFAULT_SEED = 20200
TRANSPORT_CHOICES = ("tcp", "tcp+udp")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class PreprocessConfig:
    target_len: int = 784
    anonymize: bool = True
    dedupe: bool = True
    time_unit_secs: float = 60.0
    include_transport: str = "tcp+udp"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.target_len != 784:
            raise ConfigError(f"traffic-graph 固定为 28x28，target_len 只能为 784，当前为 {self.target_len}")
        if self.time_unit_secs <= 0:
            raise ConfigError(f"time_unit_secs 必须为正数，当前为 {self.time_unit_secs}")
        if self.include_transport not in TRANSPORT_CHOICES:
            raise ConfigError(
                f"include_transport 只能是 {'/'.join(TRANSPORT_CHOICES)}，当前为 {self.include_transport!r}"
            )
        if self.workers < 1:
            raise ConfigError("workers 至少为 1")

    @property
    def allows_udp(self) -> bool:
        return self.include_transport == "tcp+udp"


@dataclass
class Hyperparams:
    """Training hyperparameters; defaults are the reference TEST settings."""

    epoch: int = 5000
    batchsize: int = 200
    learn_rate: float = 0.0006
    dropout: float = 0.5
    lambda_conv: float = 0.0005
    lambda_lstm: float = 0.00009

    def __post_init__(self) -> None:
        if self.epoch <= 0 or self.batchsize <= 0:
            raise ConfigError("epoch 与 batchsize 必须为正整数")
        if self.learn_rate <= 0:
            raise ConfigError("learn_rate 必须为正数")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout 必须位于 [0, 1)，当前为 {self.dropout}")
        if self.lambda_conv < 0 or self.lambda_lstm < 0:
            raise ConfigError("L1 正则系数不能为负")


@dataclass
class LrnConfig:
    k: float = 2.0
    n: int = 5
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self) -> None:
        if self.n < 1 or self.n % 2 == 0:
            raise ConfigError(f"LRN 窗口 n 必须为正奇数，当前为 {self.n}")
        if self.k <= 0:
            raise ConfigError("LRN 常数 k 必须为正数")


@dataclass
class RunConfig:
    sink: str = "stdout"
    tcp_timeout: float = 2.0
    batch: int = 64

    def __post_init__(self) -> None:
        if self.tcp_timeout <= 0 or self.batch < 1:
            raise ConfigError("tcp_timeout 必须为正数，batch 至少为 1")


@dataclass
class LoggingConfig:
    level: str = "INFO"

    def __post_init__(self) -> None:
        if self.level.upper() not in LOG_LEVELS:
            raise ConfigError(f"日志级别只能是 {'/'.join(LOG_LEVELS)}，当前为 {self.level!r}")


@dataclass
class AppConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    training: Hyperparams = field(default_factory=Hyperparams)
    lrn: LrnConfig = field(default_factory=LrnConfig)
    run: RunConfig = field(default_factory=RunConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    seed: int = DEFAULT_SEED


class ConfigManager:
    def __init__(self, path: Optional[Path] = None) -> None:
        self._path = path or CONFIG_FILE
        self._parser = configparser.ConfigParser()

    def load(self) -> AppConfig:
        if self._path.exists():
            try:
                self._parser.read(self._path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"无法解析配置文件 {self._path}: {exc}") from exc
        get = self._parser
        try:
            preprocess = PreprocessConfig(
                target_len=get.getint("preprocess", "target_len", fallback=784),
                anonymize=get.getboolean("preprocess", "anonymize", fallback=True),
                dedupe=get.getboolean("preprocess", "dedupe", fallback=True),
                time_unit_secs=get.getfloat("preprocess", "time_unit_secs", fallback=60.0),
                include_transport=get.get("preprocess", "include_transport", fallback="tcp+udp"),
                workers=get.getint("preprocess", "workers", fallback=1),
            )
            training = Hyperparams(
                epoch=get.getint("training", "epoch", fallback=5000),
                batchsize=get.getint("training", "batchsize", fallback=200),
                learn_rate=get.getfloat("training", "learn_rate", fallback=0.0006),
                dropout=get.getfloat("training", "dropout", fallback=0.5),
                lambda_conv=get.getfloat("training", "lambda_conv", fallback=0.0005),
                lambda_lstm=get.getfloat("training", "lambda_lstm", fallback=0.00009),
            )
            lrn = LrnConfig(
                k=get.getfloat("lrn", "k", fallback=2.0),
                n=get.getint("lrn", "n", fallback=5),
                alpha=get.getfloat("lrn", "alpha", fallback=1e-4),
                beta=get.getfloat("lrn", "beta", fallback=0.75),
            )
            run = RunConfig(
                sink=get.get("run", "sink", fallback="stdout"),
                tcp_timeout=get.getfloat("run", "tcp_timeout", fallback=2.0),
                batch=get.getint("run", "batch", fallback=64),
            )
            logging_cfg = LoggingConfig(level=get.get("logging", "level", fallback="INFO"))
            seed = get.getint("training", "seed", fallback=DEFAULT_SEED)
        except ValueError as exc:
            raise ConfigError(f"配置文件 {self._path} 中存在非法取值: {exc}") from exc
        return AppConfig(
            preprocess=preprocess,
            training=training,
            lrn=lrn,
            run=run,
            logging=logging_cfg,
            seed=seed,
        )

    def save(self, config: AppConfig) -> None:
        sections = {
            "preprocess": config.preprocess,
            "training": config.training,
            "lrn": config.lrn,
            "run": config.run,
            "logging": config.logging,
        }
        for name, section in sections.items():
            if name not in self._parser:
                self._parser.add_section(name)
            for item in fields(section):
                value = getattr(section, item.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                self._parser.set(name, item.name, str(value))
        self._parser.set("training", "seed", str(config.seed))
        with self._path.open("w", encoding="utf-8") as fh:
            self._parser.write(fh)
