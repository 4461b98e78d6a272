import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from traffic_examiner.capture import LinkType, RawPacket, write_capture  # noqa: E402
from traffic_examiner.model import Architecture, TestModelParams, build  # noqa: E402
from traffic_examiner.synth import ipv4_frame  # noqa: E402

# Full 784-byte input, every hidden width shrunk.
TINY_ARCHITECTURE = Architecture(
    conv1_filters=2,
    conv2_filters=3,
    kernel_width=5,
    dense_units=8,
    timesteps=4,
    lstm_hidden=6,
    lstm_layers=2,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tcp_frame(payload: bytes = b"hello", sport: int = 40000, dport: int = 80, **kwargs) -> bytes:
    return ipv4_frame("10.0.0.1", "192.0.2.7", sport, dport, payload, **kwargs)


def hardwired(num_classes: int, favored: int, architecture: Architecture = TINY_ARCHITECTURE) -> TestModelParams:
    """A model that answers ``favored`` for every input: all weights zero, one large output bias."""
    m = build(num_classes, 0, architecture)
    for array in m.named_arrays().values():
        array[...] = 0.0
    m.dense2.bias[favored] = 20.0
    return m


@pytest.fixture
def write_pcap(tmp_path) -> Callable[..., Path]:
    def _write(
        frames: Sequence[bytes],
        name: str = "capture.pcap",
        start: float = 1_600_000_000.0,
        step: float = 1.0,
        link_type: LinkType = LinkType.ETHERNET,
    ) -> Path:
        path = tmp_path / name
        packets = [RawPacket(start + i * step, link_type, frame) for i, frame in enumerate(frames)]
        write_capture(path, packets, link_type)
        return path

    return _write


@pytest.fixture
def tiny_arch() -> Architecture:
    return TINY_ARCHITECTURE


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
