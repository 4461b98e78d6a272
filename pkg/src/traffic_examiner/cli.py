"""Command-line entry: preprocess, train, eval, run, gradcheck, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import ExitStack
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, framework, verification
from .alerts import StreamSink, parse_sink_spec
from .checkpoint import TrainingMeta, load_checkpoint, save_checkpoint
from .config import TRANSPORT_CHOICES, AppConfig, ConfigManager
from .dataset import LabeledGraph, balance, load_dataset, load_pools, split, write_npy
from .errors import EXIT_IO, EXIT_OK, TrafficExaminerError, UndersizedPoolError
from .labels import (
    ALL_LABELS,
    EIGHT_CLASS_NAMES,
    TASKS,
    ClassLabel,
    eight_class_index,
    task_class_names,
    task_index,
    task_num_classes,
)
from .metrics import accuracy, confusion, report
from .model import Architecture, JsonlHistoryWriter, build, predict_batch, train
from .preprocess import preprocess_capture, write_pngs
from .synth import default_synth_spec, synth_capture, synth_generate

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

Handler = Callable[[argparse.Namespace, AppConfig], int]


def configure_logging(level: str | int) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


# ---- Config overlay ---------------------------------------------------


def _overrides(args: argparse.Namespace, mapping: dict[str, str]) -> dict:
    return {field: getattr(args, dest) for dest, field in mapping.items() if getattr(args, dest, None) is not None}


def _apply_preprocess_flags(args: argparse.Namespace, config: AppConfig) -> AppConfig:
    changes = _overrides(args, {"time_unit": "time_unit_secs", "transport": "include_transport", "workers": "workers"})
    if getattr(args, "no_anonymize", False):
        changes["anonymize"] = False
    if getattr(args, "no_dedupe", False):
        changes["dedupe"] = False
    return replace(config, preprocess=replace(config.preprocess, **changes))


def _add_preprocess_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("预处理")
    group.add_argument("--time-unit", type=float, help="时间单元长度（秒），默认 60")
    group.add_argument("--transport", choices=TRANSPORT_CHOICES, help="保留的传输层协议，默认 tcp+udp")
    group.add_argument("--workers", type=int, help="并行净化的线程数，默认 1")
    group.add_argument("--no-anonymize", action="store_true", help="保留原始 IP 地址")
    group.add_argument("--no-dedupe", action="store_true", help="不去除时间单元内的重复载荷")


def _write_or_print(text: str, path: Optional[str]) -> None:
    if path and path != "-":
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


# ---- Subcommands ------------------------------------------------------


def cmd_preprocess(args: argparse.Namespace, config: AppConfig) -> int:
    config = _apply_preprocess_flags(args, config)
    label = ClassLabel.parse(args.label)
    graphs: list[LabeledGraph] = []
    for pcap in args.pcaps:
        result = preprocess_capture(pcap, config.preprocess)
        graphs.extend(LabeledGraph(g, label) for g in result.graphs)
        if args.png_dir:
            write_pngs(result.graphs, args.png_dir, Path(pcap).stem)
        sys.stdout.write(json.dumps({"file": pcap, **asdict(result.summary)}) + "\n")
    manifest = write_npy(
        graphs,
        args.out,
        classes=[label],
        sources=[Path(p).name for p in args.pcaps],
    )
    logger.info("%s: %d graphs of %s, dataset total %d", args.out, len(graphs), label, manifest.total)
    return EXIT_OK


def _architecture(args: argparse.Namespace) -> Architecture:
    fields = {
        "conv1_filters": args.conv1_filters,
        "conv2_filters": args.conv2_filters,
        "kernel_width": args.kernel_width,
        "dense_units": args.dense_units,
        "timesteps": args.timesteps,
        "lstm_hidden": args.lstm_hidden,
        "lstm_layers": args.lstm_layers,
    }
    return Architecture(**{k: v for k, v in fields.items() if v is not None})


def cmd_train(args: argparse.Namespace, config: AppConfig) -> int:
    hp = replace(
        config.training,
        **_overrides(
            args,
            {
                "epochs": "epoch",
                "batchsize": "batchsize",
                "learn_rate": "learn_rate",
                "dropout": "dropout",
                "lambda_conv": "lambda_conv",
                "lambda_lstm": "lambda_lstm",
            },
        ),
    )
    seed = args.seed if args.seed is not None else config.seed
    pools = load_pools(args.dataset, args.task)
    for key, pool in pools.items():
        if not pool:
            raise UndersizedPoolError(key.display, 0, 1)
    per_class = args.per_class if args.per_class is not None else min(len(p) for p in pools.values())
    samples = balance(pools, per_class, seed)
    held_out: list[LabeledGraph] = []
    if args.test_fraction is not None:
        samples, held_out = split(samples, args.test_fraction, seed, key=lambda item: task_index(item.label, args.task))

    pixels = np.stack([item.graph.pixels.reshape(-1) for item in samples])
    labels = np.array([task_index(item.label, args.task) for item in samples], dtype=np.intp)
    model = build(task_num_classes(args.task), seed, _architecture(args), config.lrn)
    logger.info(
        "training %s on %d samples (%d per class), %d epochs, seed %d",
        args.task, len(samples), per_class, hp.epoch, seed,
    )
    with ExitStack() as stack:
        callbacks = []
        if args.history == "-":
            callbacks.append(JsonlHistoryWriter(sys.stdout))
        elif args.history:
            callbacks.append(JsonlHistoryWriter(stack.enter_context(open(args.history, "w", encoding="utf-8"))))
        model, history = train(model, pixels, labels, hp, seed, callbacks)

    meta = TrainingMeta(epochs_completed=hp.epoch, final_loss=history.final_loss, seed=seed, task=args.task)
    save_checkpoint(model, hp, meta, args.out)
    if held_out:
        preds = [p.label for p in predict_batch(model, [item.graph for item in held_out], config.run.batch)]
        truths = [task_index(item.label, args.task) for item in held_out]
        cm = confusion(preds, truths, model.num_classes)
        logger.info("held-out accuracy %.4f on %d samples", accuracy(cm), len(held_out))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: AppConfig) -> int:
    if args.s_checkpoint:
        g_model = load_checkpoint(args.checkpoint, task_num_classes("3class")).params
        s_model = load_checkpoint(args.s_checkpoint, task_num_classes("6class")).params
        dataset = load_dataset(args.dataset)
        items = [item for label in ALL_LABELS for item in dataset.get(label, [])]
        preds = framework.joint_predict(g_model, s_model, [item.graph for item in items], config.run.batch)
        truths = [eight_class_index(item.label) for item in items]
        names: Sequence[str] = EIGHT_CLASS_NAMES
    else:
        checkpoint = load_checkpoint(args.checkpoint, task_num_classes(args.task) if args.task else None)
        task = args.task or checkpoint.meta.task or ("3class" if checkpoint.params.num_classes == 3 else "6class")
        pools = load_pools(args.dataset, task)
        items = [item for pool in pools.values() for item in pool]
        preds = [p.label for p in predict_batch(checkpoint.params, [item.graph for item in items], config.run.batch)]
        truths = [task_index(item.label, task) for item in items]
        names = task_class_names(task)

    result = report(confusion(preds, truths, len(names)), names)
    sys.stdout.write(result.to_text())
    if args.json_out:
        Path(args.json_out).write_text(result.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_run(args: argparse.Namespace, config: AppConfig) -> int:
    config = _apply_preprocess_flags(args, config)
    if args.batch is not None:
        config = replace(config, run=replace(config.run, batch=args.batch))
    g_model = load_checkpoint(args.g_checkpoint, task_num_classes("3class")).params
    s_model = load_checkpoint(args.s_checkpoint, task_num_classes("6class")).params
    sink = parse_sink_spec(args.sink or config.run.sink, config.run.tcp_timeout)
    if isinstance(sink, StreamSink) and not args.report:
        # stdout carries the report
        logger.info("未指定 --report，告警改写到 stderr")
        sink = StreamSink(sys.stderr)
    try:
        result = framework.run(args.pcap, g_model, s_model, config.preprocess, sink, config.run.batch)
    finally:
        sink.close()
    _write_or_print(result.to_json(include_timing=False), args.report)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, config: AppConfig) -> int:
    seed = args.seed if args.seed is not None else config.seed
    cases = verification.GRADCHECK_CASES
    if args.op:
        unknown = sorted(set(args.op) - set(cases))
        if unknown:
            raise TrafficExaminerError(f"未知算子 {', '.join(unknown)}，可选：{', '.join(cases)}")
        cases = {name: case for name, case in cases.items() if name in args.op}
    results = verification.run_suite(seed, args.seeds, cases)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "OK" if r.passed else "FAIL"
        sys.stdout.write(f"{r.name:<{width}}  {r.max_error:.3e}  {status}\n")
    sys.stdout.flush()
    verification.require_passing(results)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, config: AppConfig) -> int:
    seed = args.seed if args.seed is not None else config.seed
    spec = default_synth_spec(ALL_LABELS, args.per_class, seed)
    manifest = write_npy(synth_generate(spec), args.out, classes=list(ALL_LABELS), seed=seed, append=False)
    sys.stdout.write(manifest.to_json())
    if args.capture:
        count = synth_capture(args.capture, args.packets, seed)
        logger.info("%s: synthetic capture with %d packets", args.capture, count)
    return EXIT_OK


# ---- Parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traffic-examiner",
        description="基于 traffic-graph 与 CNN+LSTM 的分层流量检测框架",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-c", "--config", help="INI 配置文件路径（默认使用仓库根目录下的 config.ini）")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="仅输出 WARNING 及以上日志")
    sub = parser.add_subparsers(dest="command", required=True, metavar="<command>")

    p = sub.add_parser("preprocess", help="pcap -> traffic-graph NPY 数据集")
    p.add_argument("pcaps", nargs="+", help="输入 pcap 文件")
    p.add_argument("--out", required=True, help="数据集输出目录")
    p.add_argument("--label", required=True, help="类别标签，如 Benign、Malware、Encrypted/Chat")
    p.add_argument("--png-dir", help="同时把每张 traffic-graph 渲染为灰度 PNG 写入该目录")
    _add_preprocess_flags(p)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train", help="在 NPY 数据集上训练 TEST 模型")
    p.add_argument("--dataset", required=True, help="数据集目录")
    p.add_argument("--task", choices=TASKS, default="3class", help="3class（G 层）或 6class（S 层），默认 3class")
    p.add_argument("--out", required=True, help="checkpoint 输出路径")
    p.add_argument("--seed", type=int, help="随机种子，默认 20200")
    p.add_argument("--per-class", type=int, help="每类均衡采样数，默认取最小类别的样本数")
    p.add_argument("--test-fraction", type=float, help="留出测试集比例，例如 0.2")
    p.add_argument("--history", help="训练历史 JSON Lines 输出路径，'-' 表示标准输出")
    hp = p.add_argument_group("超参数")
    hp.add_argument("--epochs", type=int, help="训练轮数，默认 5000")
    hp.add_argument("--batchsize", type=int, help="批大小，默认 200")
    hp.add_argument("--learn-rate", type=float, help="Adam 学习率，默认 0.0006")
    hp.add_argument("--dropout", type=float, help="dropout 概率，默认 0.5")
    hp.add_argument("--lambda-conv", type=float, help="卷积/全连接层 L1 系数，默认 0.0005")
    hp.add_argument("--lambda-lstm", type=float, help="LSTM 层 L1 系数，默认 0.00009")
    arch = p.add_argument_group("网络结构")
    arch.add_argument("--conv1-filters", type=int, help="第一层卷积核数，默认 32")
    arch.add_argument("--conv2-filters", type=int, help="第二层卷积核数，默认 64")
    arch.add_argument("--kernel-width", type=int, help="卷积核宽度，默认 25")
    arch.add_argument("--dense-units", type=int, help="全连接层宽度，默认 1024")
    arch.add_argument("--timesteps", type=int, help="LSTM 时间步数，默认 32")
    arch.add_argument("--lstm-hidden", type=int, help="LSTM 隐藏单元数，默认 256")
    arch.add_argument("--lstm-layers", type=int, help="LSTM 层数，默认 3")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="评估 checkpoint，输出混淆矩阵指标")
    p.add_argument("--checkpoint", required=True, help="待评估的 checkpoint（联合评估时为 G 层模型）")
    p.add_argument("--dataset", required=True, help="数据集目录")
    p.add_argument("--task", choices=TASKS, help="评估任务，默认读取 checkpoint 中记录的任务")
    p.add_argument("--s-checkpoint", help="S 层 6 分类 checkpoint；提供时按 8 类联合评估")
    p.add_argument("--json-out", help="JSON 报告输出路径")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("run", help="对 pcap 运行完整的 G/S 分层框架")
    p.add_argument("pcap", help="输入 pcap 文件")
    p.add_argument("--g-checkpoint", required=True, help="G 层 3 分类 checkpoint")
    p.add_argument("--s-checkpoint", required=True, help="S 层 6 分类 checkpoint")
    p.add_argument("--sink", help="告警输出：stdout、file:<路径> 或 tcp:<主机>:<端口>")
    p.add_argument("--report", help="运行报告 JSON 输出路径，默认标准输出")
    p.add_argument("--batch", type=int, help="每次前向推理的 traffic-graph 数量，默认 64")
    _add_preprocess_flags(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("gradcheck", help="有限差分梯度校验")
    p.add_argument("--seed", type=int, help="随机种子，默认 20200")
    p.add_argument("--seeds", type=int, default=verification.DEFAULT_SEEDS, help="每个算子的随机实例数，默认 20")
    p.add_argument("--op", action="append", help="只校验指定算子，可重复")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("synth", help="生成合成的 8 类数据集（以及可选的合成 pcap）")
    p.add_argument("--out", required=True, help="数据集输出目录")
    p.add_argument("--per-class", type=int, default=40, help="每类样本数，默认 40")
    p.add_argument("--seed", type=int, help="随机种子，默认 20200")
    p.add_argument("--capture", help="额外写出一个合成 pcap 到该路径")
    p.add_argument("--packets", type=int, default=100, help="合成 pcap 的数据包数，默认 100")
    p.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manager = ConfigManager(Path(args.config)) if args.config else ConfigManager()
        if args.config and not Path(args.config).exists():
            raise FileNotFoundError(f"配置文件不存在: {args.config}")
        config = manager.load()
        level = "DEBUG" if args.verbose else "WARNING" if args.quiet else config.logging.level.upper()
        configure_logging(level)
        handler: Handler = args.handler
        return handler(args, config)
    except TrafficExaminerError as exc:
        logger.debug("command failed", exc_info=True)
        sys.stderr.write(f"错误: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"I/O 错误: {exc}\n")
        return EXIT_IO


def run(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(main(argv))


if __name__ == "__main__":
    run()
