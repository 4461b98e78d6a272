"""The TEST classifier: conv -> pool -> LRN twice, dense, 3-layer LSTM, dense, softmax."""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from typing import IO, Optional

import numpy as np
import numpy.typing as npt

from .config import Hyperparams, LrnConfig
from .errors import ArgumentError, NonFiniteError, ShapeError
from .nn import (
    AdamState,
    Conv1dParams,
    DenseParams,
    LstmParams,
    Tensor,
    adam_step,
    conv1d,
    conv1d_backward,
    cross_entropy,
    dense,
    dense_backward,
    dropout,
    dropout_backward,
    l1_penalty,
    lrn,
    lrn_backward,
    lstm_sequence,
    lstm_sequence_backward,
    maxpool1d,
    maxpool1d_backward,
    pooled_length,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy_backward,
)
from .preprocess import GRAPH_BYTES, TrafficGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Architecture:
    input_len: int = GRAPH_BYTES
    conv1_filters: int = 32
    conv2_filters: int = 64
    kernel_width: int = 25
    pool_size: int = 3
    pool_stride: int = 3
    dense_units: int = 1024
    timesteps: int = 32
    lstm_hidden: int = 256
    lstm_layers: int = 3

    def __post_init__(self) -> None:
        if min(asdict(self).values()) < 1:
            raise ArgumentError(f"网络结构参数必须为正: {self}")
        if self.dense_units % self.timesteps:
            raise ArgumentError(f"dense_units={self.dense_units} 无法整形为 {self.timesteps} 个时间步")
        if self.pool2_len < 1:
            raise ArgumentError("输入长度不足以完成两次池化")

    @property
    def pool1_len(self) -> int:
        return pooled_length(self.input_len, self.pool_size, self.pool_stride)

    @property
    def pool2_len(self) -> int:
        if self.pool1_len < self.pool_size:
            return 0
        return pooled_length(self.pool1_len, self.pool_size, self.pool_stride)

    @property
    def flat_len(self) -> int:
        return self.conv2_filters * self.pool2_len

    @property
    def lstm_input(self) -> int:
        return self.dense_units // self.timesteps

    def shape_trace(self, num_classes: int) -> list[tuple[int, ...]]:
        return [
            (self.input_len,),
            (self.conv1_filters, self.input_len),
            (self.conv1_filters, self.pool1_len),
            (self.conv2_filters, self.pool1_len),
            (self.conv2_filters, self.pool2_len),
            (self.flat_len,),
            (self.dense_units,),
            (self.timesteps, self.lstm_input),
            (self.lstm_hidden,),
            (num_classes,),
        ]


@dataclass
class TestModelParams:
    __test__ = False  # not a pytest class

    conv1: Conv1dParams
    conv2: Conv1dParams
    dense1: DenseParams
    lstm: list[LstmParams]
    dense2: DenseParams
    num_classes: int
    lrn: LrnConfig = field(default_factory=LrnConfig)
    architecture: Architecture = field(default_factory=Architecture)

    def named_arrays(self) -> dict[str, Tensor]:
        """Every learnable array, in checkpoint order. Values alias the model's storage."""
        arrays = {
            "conv1.kernels": self.conv1.kernels,
            "conv1.bias": self.conv1.bias,
            "conv2.kernels": self.conv2.kernels,
            "conv2.bias": self.conv2.bias,
            "dense1.weight": self.dense1.weight,
            "dense1.bias": self.dense1.bias,
        }
        for i, layer in enumerate(self.lstm):
            arrays[f"lstm.{i}.W"] = layer.W
            arrays[f"lstm.{i}.U"] = layer.U
            arrays[f"lstm.{i}.b"] = layer.b
        arrays["dense2.weight"] = self.dense2.weight
        arrays["dense2.bias"] = self.dense2.bias
        return arrays

    def conv_weight_names(self) -> list[str]:
        return ["conv1.kernels", "conv2.kernels", "dense1.weight", "dense2.weight"]

    def lstm_weight_names(self) -> list[str]:
        return [f"lstm.{i}.{w}" for i in range(len(self.lstm)) for w in ("W", "U")]

    @classmethod
    def from_arrays(
        cls,
        arrays: dict[str, Tensor],
        num_classes: int,
        lrn_cfg: LrnConfig,
        architecture: Architecture,
    ) -> "TestModelParams":
        try:
            return cls(
                conv1=Conv1dParams(arrays["conv1.kernels"], arrays["conv1.bias"]),
                conv2=Conv1dParams(arrays["conv2.kernels"], arrays["conv2.bias"]),
                dense1=DenseParams(arrays["dense1.weight"], arrays["dense1.bias"]),
                lstm=[
                    LstmParams(arrays[f"lstm.{i}.W"], arrays[f"lstm.{i}.U"], arrays[f"lstm.{i}.b"])
                    for i in range(architecture.lstm_layers)
                ],
                dense2=DenseParams(arrays["dense2.weight"], arrays["dense2.bias"]),
                num_classes=num_classes,
                lrn=lrn_cfg,
                architecture=architecture,
            )
        except KeyError as exc:
            raise ShapeError(f"缺少参数 {exc}") from exc


def build(
    num_classes: int,
    seed: int,
    architecture: Optional[Architecture] = None,
    lrn_cfg: Optional[LrnConfig] = None,
) -> TestModelParams:
    if num_classes < 2:
        raise ArgumentError(f"num_classes 至少为 2，当前为 {num_classes}")
    arch = architecture or Architecture()
    rng = np.random.default_rng(seed)
    lstm_layers = []
    input_size = arch.lstm_input
    for _ in range(arch.lstm_layers):
        lstm_layers.append(LstmParams.init(rng, input_size, arch.lstm_hidden))
        input_size = arch.lstm_hidden
    return TestModelParams(
        conv1=Conv1dParams.init(rng, arch.conv1_filters, 1, arch.kernel_width),
        conv2=Conv1dParams.init(rng, arch.conv2_filters, arch.conv1_filters, arch.kernel_width),
        dense1=DenseParams.init(rng, arch.flat_len, arch.dense_units),
        lstm=lstm_layers,
        dense2=DenseParams.init(rng, arch.lstm_hidden, num_classes),
        num_classes=num_classes,
        lrn=lrn_cfg or LrnConfig(),
        architecture=arch,
    )


def as_batch(graphs: npt.ArrayLike | Sequence[TrafficGraph], input_len: int = GRAPH_BYTES) -> Tensor:
    """Stack graphs (or a ``[B, 784]`` pixel array) into a float batch scaled to [0, 1]."""
    if isinstance(graphs, Sequence) and graphs and isinstance(graphs[0], TrafficGraph):
        pixels = np.stack([g.pixels.reshape(-1) for g in graphs])
    else:
        pixels = np.asarray(graphs)
    if pixels.ndim == 1:
        pixels = pixels[None, :]
    if pixels.ndim != 2 or pixels.shape[1] != input_len:
        raise ShapeError(f"模型输入应为 [B, {input_len}]，实际为 {pixels.shape}")
    return pixels.astype(np.float64) / 255.0


@dataclass
class _ForwardCache:
    conv1: object = None
    relu1: object = None
    pool1: object = None
    lrn1: object = None
    conv2: object = None
    relu2: object = None
    pool2: object = None
    lrn2: object = None
    pooled_shape: tuple[int, ...] = ()
    dense1: object = None
    relu3: object = None
    drop: Optional[Tensor] = None
    lstm: object = None
    dense2: object = None


def _check_finite(name: str, value: Tensor) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{name} 出现 NaN/Inf")
    return value


def forward(
    m: TestModelParams,
    batch: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_p: float = 0.0,
    trace: Optional[list[tuple[int, ...]]] = None,
) -> tuple[Tensor, _ForwardCache]:
    """Logits ``[B, num_classes]`` for a scaled batch ``[B, input_len]``.

    ``trace``, when given, receives the per-sample shape after every stage.
    """
    arch = m.architecture
    if batch.ndim != 2 or batch.shape[1] != arch.input_len:
        raise ShapeError(f"模型输入应为 [B, {arch.input_len}]，实际为 {batch.shape}")
    lrn_args = (m.lrn.k, m.lrn.n, m.lrn.alpha, m.lrn.beta)
    pool_args = (arch.pool_size, arch.pool_stride)
    cache = _ForwardCache()
    record = trace.append if trace is not None else (lambda shape: None)

    x = batch[:, None, :]
    record(batch.shape[1:])
    x, cache.conv1 = conv1d(x, m.conv1)
    record(x.shape[1:])
    x, cache.relu1 = relu(x)
    x, cache.pool1 = maxpool1d(x, *pool_args)
    record(x.shape[1:])
    x, cache.lrn1 = lrn(x, *lrn_args)
    x, cache.conv2 = conv1d(x, m.conv2)
    record(x.shape[1:])
    x, cache.relu2 = relu(x)
    x, cache.pool2 = maxpool1d(x, *pool_args)
    record(x.shape[1:])
    x, cache.lrn2 = lrn(x, *lrn_args)
    cache.pooled_shape = x.shape
    x = x.reshape(x.shape[0], -1)
    record(x.shape[1:])
    x, cache.dense1 = dense(x, m.dense1)
    x, cache.relu3 = relu(x)
    x, cache.drop = dropout(x, dropout_p, rng, training)
    record(x.shape[1:])
    x = x.reshape(x.shape[0], arch.timesteps, arch.lstm_input)  # rows are time steps
    record(x.shape[1:])
    x, cache.lstm = lstm_sequence(x, m.lstm, dropout_p, rng, training)
    record(x.shape[1:])
    logits, cache.dense2 = dense(x, m.dense2)
    record(logits.shape[1:])
    return _check_finite("logits", logits), cache


def backward(m: TestModelParams, dlogits: Tensor, cache: _ForwardCache) -> dict[str, Tensor]:
    grads: dict[str, Tensor] = {}
    dx, g = dense_backward(dlogits, cache.dense2)
    grads["dense2.weight"], grads["dense2.bias"] = g.weight, g.bias
    dx, lstm_grads = lstm_sequence_backward(dx, cache.lstm)
    for i, lg in enumerate(lstm_grads):
        grads[f"lstm.{i}.W"], grads[f"lstm.{i}.U"], grads[f"lstm.{i}.b"] = lg.W, lg.U, lg.b
    dx = dx.reshape(dx.shape[0], -1)
    dx = dropout_backward(dx, cache.drop)
    dx = relu_backward(dx, cache.relu3)
    dx, g = dense_backward(dx, cache.dense1)
    grads["dense1.weight"], grads["dense1.bias"] = g.weight, g.bias
    dx = dx.reshape(cache.pooled_shape)
    dx = lrn_backward(dx, cache.lrn2)
    dx = maxpool1d_backward(dx, cache.pool2)
    dx = relu_backward(dx, cache.relu2)
    dx, g = conv1d_backward(dx, cache.conv2)
    grads["conv2.kernels"], grads["conv2.bias"] = g.kernels, g.bias
    dx = lrn_backward(dx, cache.lrn1)
    dx = maxpool1d_backward(dx, cache.pool1)
    dx = relu_backward(dx, cache.relu1)
    _, g = conv1d_backward(dx, cache.conv1)
    grads["conv1.kernels"], grads["conv1.bias"] = g.kernels, g.bias
    return {name: grads[name] for name in m.named_arrays()}


def _objective(
    m: TestModelParams,
    batch: Tensor,
    labels: npt.ArrayLike,
    hp: Hyperparams,
    training: bool,
    rng: Optional[np.random.Generator],
) -> tuple[float, dict[str, Tensor], Tensor]:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (batch.shape[0],):
        raise ArgumentError("批数据与标签数量不一致")
    logits, cache = forward(m, batch, training=training, rng=rng, dropout_p=hp.dropout)
    probs = softmax(logits)
    value = cross_entropy(probs, labels)
    grads = backward(m, softmax_cross_entropy_backward(probs, labels), cache)
    arrays = m.named_arrays()
    for lam, names in ((hp.lambda_conv, m.conv_weight_names()), (hp.lambda_lstm, m.lstm_weight_names())):
        penalty, penalty_grads = l1_penalty({n: arrays[n] for n in names}, lam)
        value += penalty
        for name, pg in penalty_grads.items():
            grads[name] = grads[name] + pg
    return _check_finite("loss", np.float64(value)).item(), grads, probs


def loss(
    m: TestModelParams,
    batch: Tensor,
    labels: npt.ArrayLike,
    hp: Hyperparams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, dict[str, Tensor]]:
    """Mean cross-entropy plus both L1 terms, and the gradient of every parameter."""
    value, grads, _ = _objective(m, batch, labels, hp, training, rng)
    return value, grads


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    optimizer_steps: int = 0
    seed: int = 0

    @property
    def final_loss(self) -> float:
        return self.records[-1].mean_loss if self.records else float("nan")


EpochCallback = Callable[[EpochRecord], None]


class JsonlHistoryWriter:
    """Epoch callback that appends one JSON object per line to a text stream."""

    def __init__(self, stream: IO[str]) -> None:
        self._stream = stream

    def __call__(self, record: EpochRecord) -> None:
        self._stream.write(record.to_json() + "\n")
        self._stream.flush()


def train(
    m: TestModelParams,
    pixels: npt.ArrayLike,
    labels: npt.ArrayLike,
    hp: Hyperparams,
    seed: int,
    callbacks: Iterable[EpochCallback] = (),
) -> tuple[TestModelParams, TrainingHistory]:
    """Mini-batch Adam over ``hp.epoch`` full passes; the final short batch is kept."""
    X = as_batch(pixels, m.architecture.input_len)
    y = np.asarray(labels, dtype=np.intp)
    if X.shape[0] == 0:
        raise ArgumentError("训练集为空")
    if y.shape != (X.shape[0],):
        raise ArgumentError("训练样本与标签数量不一致")
    if y.min() < 0 or y.max() >= m.num_classes:
        raise ArgumentError(f"标签越界：模型类别数为 {m.num_classes}")
    callbacks = list(callbacks)
    rng = np.random.default_rng(seed)
    state = AdamState()
    params = m.named_arrays()
    history = TrainingHistory(seed=seed)
    n = X.shape[0]

    for epoch in range(1, hp.epoch + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, hp.batchsize):
            idx = order[start : start + hp.batchsize]
            value, grads, probs = _objective(m, X[idx], y[idx], hp, True, rng)
            adam_step(params, grads, state, hp.learn_rate)
            total_loss += value * idx.size
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
        record = EpochRecord(epoch=epoch, mean_loss=total_loss / n, train_accuracy=correct / n)
        history.records.append(record)
        logger.info("epoch %d: loss=%.6f acc=%.4f", epoch, record.mean_loss, record.train_accuracy)
        for callback in callbacks:
            callback(record)
    history.optimizer_steps = state.t
    return m, history


@dataclass(frozen=True)
class Prediction:
    label: int
    probabilities: npt.NDArray[np.float64]

    @property
    def confidence(self) -> float:
        return float(self.probabilities[self.label])


def predict_batch(m: TestModelParams, graphs: npt.ArrayLike | Sequence[TrafficGraph], chunk: int = 64) -> list[Prediction]:
    if isinstance(graphs, Sequence) and len(graphs) == 0:
        return []
    X = as_batch(graphs, m.architecture.input_len)
    predictions = []
    for start in range(0, X.shape[0], chunk):
        logits, _ = forward(m, X[start : start + chunk], training=False)
        for probs in softmax(logits):
            predictions.append(Prediction(int(np.argmax(probs)), probs))
    return predictions


def predict(m: TestModelParams, graph: TrafficGraph | npt.ArrayLike) -> Prediction:
    batch = [graph] if isinstance(graph, TrafficGraph) else graph
    return predict_batch(m, batch)[0]
