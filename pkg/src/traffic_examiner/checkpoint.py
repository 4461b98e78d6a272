"""Binary checkpoint codec.

Layout (all integers and reals little-endian)::

    magic "TESTCKPT" | u16 version | u16 num_classes
    architecture: 10 x u32
    lrn: f64 k | u32 n | f64 alpha | f64 beta
    hyperparams: u32 epoch | u32 batchsize | f64 lr | f64 dropout | f64 lambda_conv | f64 lambda_lstm
    u32 meta_len | meta JSON (utf-8, sorted keys)
    u32 tensor_count | per tensor: u16 name_len | name | u8 ndim | ndim x u32 | f64 data
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Hyperparams, LrnConfig
from .errors import CheckpointFormatError, ClassCountMismatchError, ConfigError
from .model import Architecture, TestModelParams

logger = logging.getLogger(__name__)

MAGIC = b"TESTCKPT"
VERSION = 1
_ARCH_FIELDS = [f.name for f in fields(Architecture)]


@dataclass
class TrainingMeta:
    epochs_completed: int = 0
    final_loss: Optional[float] = None
    seed: Optional[int] = None
    task: str = ""


@dataclass
class Checkpoint:
    params: TestModelParams
    hyperparams: Hyperparams
    meta: TrainingMeta


def encode_checkpoint(m: TestModelParams, hp: Hyperparams, meta: TrainingMeta) -> bytes:
    arch = m.architecture
    parts = [
        MAGIC,
        struct.pack("<HH", VERSION, m.num_classes),
        struct.pack(f"<{len(_ARCH_FIELDS)}I", *(getattr(arch, name) for name in _ARCH_FIELDS)),
        struct.pack("<dIdd", m.lrn.k, m.lrn.n, m.lrn.alpha, m.lrn.beta),
        struct.pack(
            "<IIdddd", hp.epoch, hp.batchsize, hp.learn_rate, hp.dropout, hp.lambda_conv, hp.lambda_lstm
        ),
    ]
    meta_blob = json.dumps(asdict(meta), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)) + meta_blob)
    arrays = m.named_arrays()
    parts.append(struct.pack("<I", len(arrays)))
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._offset = 0

    def take(self, size: int) -> bytes:
        if self._offset + size > len(self._data):
            raise CheckpointFormatError(f"checkpoint 在偏移 {self._offset} 处被截断")
        chunk = self._data[self._offset : self._offset + size]
        self._offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._data)


def decode_checkpoint(data: bytes, expected_classes: Optional[int] = None) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("不是 TEST checkpoint 文件（magic 不匹配）")
    version, num_classes = reader.unpack("HH")
    if version != VERSION:
        raise CheckpointFormatError(f"不支持的 checkpoint 版本 {version}")
    if expected_classes is not None and num_classes != expected_classes:
        raise ClassCountMismatchError(expected_classes, num_classes)
    try:
        arch = Architecture(**dict(zip(_ARCH_FIELDS, reader.unpack(f"{len(_ARCH_FIELDS)}I"))))
        k, n, alpha, beta = reader.unpack("dIdd")
        lrn_cfg = LrnConfig(k=k, n=n, alpha=alpha, beta=beta)
        epoch, batchsize, lr, drop, lam_conv, lam_lstm = reader.unpack("IIdddd")
        hp = Hyperparams(epoch, batchsize, lr, drop, lam_conv, lam_lstm)
    except (ConfigError, ValueError) as exc:
        raise CheckpointFormatError(f"checkpoint 头部字段非法: {exc}") from exc
    (meta_len,) = reader.unpack("I")
    try:
        meta = TrainingMeta(**json.loads(reader.take(meta_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"checkpoint 元数据损坏: {exc}") from exc

    (count,) = reader.unpack("I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (ndim,) = reader.unpack("B")
        shape = reader.unpack(f"{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if not reader.exhausted:
        raise CheckpointFormatError("checkpoint 末尾存在多余数据")
    try:
        params = TestModelParams.from_arrays(arrays, num_classes, lrn_cfg, arch)
    except ValueError as exc:
        raise CheckpointFormatError(f"checkpoint 参数与网络结构不一致: {exc}") from exc
    if params.dense2.weight.shape[0] != num_classes:
        raise CheckpointFormatError("输出层宽度与记录的类别数不一致")
    return Checkpoint(params, hp, meta)


def save_checkpoint(m: TestModelParams, hp: Hyperparams, meta: TrainingMeta, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(encode_checkpoint(m, hp, meta))
    logger.info("checkpoint saved to %s (%d classes)", path, m.num_classes)


def load_checkpoint(path: str | Path, expected_classes: Optional[int] = None) -> Checkpoint:
    path = Path(path)
    checkpoint = decode_checkpoint(path.read_bytes(), expected_classes)
    logger.info("checkpoint loaded from %s (%d classes)", path, checkpoint.params.num_classes)
    return checkpoint
