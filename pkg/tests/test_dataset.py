import json
import struct
from collections import Counter

import numpy as np
import pytest

from traffic_examiner.dataset import (
    MANIFEST_NAME,
    LabeledGraph,
    balance,
    balanced_manifest,
    label_path,
    load_dataset,
    load_pools,
    read_npy,
    read_npy_array,
    split,
    write_npy,
)
from traffic_examiner.errors import ArgumentError, DatasetFormatError, UndersizedPoolError
from traffic_examiner.labels import ALL_LABELS, ClassLabel, EncryptedClass, TopClass
from traffic_examiner.preprocess import TrafficGraph
from traffic_examiner.synth import default_synth_spec, synth_generate

BENIGN = ClassLabel(TopClass.BENIGN)
MALWARE = ClassLabel(TopClass.MALWARE)
CHAT = ClassLabel(TopClass.ENCRYPTED, EncryptedClass.CHAT)


def _graph(value: int) -> TrafficGraph:
    return TrafficGraph.from_flat(np.full(784, value, dtype=np.uint8))


def test_single_graph_npy_layout(tmp_path):
    write_npy([LabeledGraph(_graph(7), BENIGN)], tmp_path)
    raw = label_path(tmp_path, BENIGN).read_bytes()

    assert len(raw) == 128 + 784
    assert raw[:8] == b"\x93NUMPY\x01\x00"
    (header_len,) = struct.unpack("<H", raw[8:10])
    assert 10 + header_len == 128
    header = raw[10:128].decode("latin1")
    assert header.endswith("\n")
    assert "'shape': (1, 784)" in header
    assert "'descr': '|u1'" in header
    assert raw[128:] == bytes([7]) * 784


def test_layout_and_empty_class(tmp_path):
    write_npy([LabeledGraph(_graph(1), CHAT)], tmp_path, classes=[CHAT, MALWARE])

    assert (tmp_path / "Encrypted" / "Chat.npy").exists()
    assert read_npy_array(tmp_path / "Malware" / "Malware.npy").shape == (0, 784)
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert list(manifest) == ["total", "seed", "sources", "classes", "top_level"]
    assert manifest["total"] == 1


def test_roundtrip_and_determinism(tmp_path):
    graphs = synth_generate(default_synth_spec(ALL_LABELS, 5, seed=3))
    write_npy(graphs, tmp_path / "a", seed=3)
    write_npy(graphs, tmp_path / "b", seed=3)

    for label in ALL_LABELS:
        a = label_path(tmp_path / "a", label).read_bytes()
        assert a == label_path(tmp_path / "b", label).read_bytes()
        expected = [g.graph.flatten() for g in graphs if g.label == label]
        assert [g.flatten() for g in read_npy(label_path(tmp_path / "a", label))] == expected
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()


def test_rewrite_keeps_other_classes_and_sources(tmp_path):
    write_npy([LabeledGraph(_graph(1), BENIGN)], tmp_path, sources=["benign.pcap"])
    manifest = write_npy([LabeledGraph(_graph(2), MALWARE)] * 3, tmp_path, sources=["malware.pcap"])

    assert manifest.count(BENIGN) == 1
    assert manifest.count(MALWARE) == 3
    assert manifest.sources == ["benign.pcap", "malware.pcap"]


def test_append_merges_and_replace_overwrites(tmp_path):
    write_npy([LabeledGraph(_graph(1), BENIGN)] * 2, tmp_path)
    manifest = write_npy([LabeledGraph(_graph(2), BENIGN)], tmp_path)

    rows = read_npy_array(label_path(tmp_path, BENIGN))
    assert manifest.count(BENIGN) == 3
    assert rows[:, 0].tolist() == [1, 1, 2]

    manifest = write_npy([LabeledGraph(_graph(5), BENIGN)], tmp_path, append=False)
    assert manifest.count(BENIGN) == 1
    assert read_npy_array(label_path(tmp_path, BENIGN))[:, 0].tolist() == [5]


def test_read_npy_accepts_square_graphs(tmp_path):
    pixels = np.arange(2 * 784, dtype=np.int64).reshape(2, 28, 28) % 256
    path = tmp_path / "square.npy"
    np.save(path, pixels.astype(np.uint8))

    graphs = read_npy(path)

    assert len(graphs) == 2
    assert graphs[1].flatten() == (np.arange(784, 1568) % 256).astype(np.uint8).tobytes()


@pytest.mark.parametrize("array", [np.zeros((3, 100), dtype=np.uint8), np.zeros((2, 784), dtype=np.float32)])
def test_read_npy_rejects_wrong_shape_or_dtype(tmp_path, array):
    path = tmp_path / "bad.npy"
    np.save(path, array)
    with pytest.raises(DatasetFormatError):
        read_npy(path)


def test_balanced_manifest_totals():
    manifest = balanced_manifest()
    assert manifest.total == 78687
    shares = manifest.top_level()
    for top in TopClass:
        assert shares[top][0] == 26229
        assert shares[top][1] == pytest.approx(100 / 3, abs=0.01)
    assert sum(e.percentage for e in manifest.entries) == pytest.approx(100.0, abs=0.01)


def test_balance_full_dataset_sizes():
    pools = {top: [(top, i) for i in range(26229)] for top in TopClass}
    picked = balance(pools, 20984, seed=1)
    assert len(picked) == 62952
    assert Counter(top for top, _ in picked) == {top: 20984 for top in TopClass}
    assert len(set(picked)) == len(picked)

    subs = {sub: [(sub, i) for i in range(1022)] for sub in EncryptedClass}
    assert len(balance(subs, 818, seed=1)) == 4908


def test_balance_is_seeded_and_rejects_small_pools():
    pools = {"a": list(range(10)), "b": list(range(10, 20))}
    assert balance(pools, 4, seed=9) == balance(pools, 4, seed=9)
    assert balance(pools, 0, seed=9) == []
    with pytest.raises(UndersizedPoolError) as info:
        balance({"a": [1, 2], "b": [3]}, 2, seed=0)
    assert info.value.class_name == "b"
    assert info.value.shortfall == 1


def test_split_is_stratified_and_order_preserving():
    data = [LabeledGraph(_graph(i % 256), label) for label in (BENIGN, MALWARE) for i in range(100)]
    train, test = split(data, 0.2, seed=5)

    assert Counter(item.label for item in test) == {BENIGN: 20, MALWARE: 20}
    assert Counter(item.label for item in train) == {BENIGN: 80, MALWARE: 80}
    positions = {id(item): i for i, item in enumerate(data)}
    assert [positions[id(x)] for x in train] == sorted(positions[id(x)] for x in train)
    assert {id(x) for x in train}.isdisjoint(id(x) for x in test)
    again = split(data, 0.2, seed=5)
    assert [id(x) for x in again[1]] == [id(x) for x in test]


def test_split_rejects_degenerate_partitions():
    pair = [LabeledGraph(_graph(0), BENIGN), LabeledGraph(_graph(1), BENIGN)]
    with pytest.raises(ArgumentError):
        split(pair, 0.999, seed=0)
    with pytest.raises(ArgumentError):
        split(pair, 1.0, seed=0)


def test_load_pools_by_task(tmp_path):
    graphs = synth_generate(default_synth_spec(ALL_LABELS, 3, seed=0))
    write_npy(graphs, tmp_path)

    three = load_pools(tmp_path, "3class")
    assert {k: len(v) for k, v in three.items()} == {
        TopClass.ENCRYPTED: 18,
        TopClass.BENIGN: 3,
        TopClass.MALWARE: 3,
    }
    six = load_pools(tmp_path, "6class")
    assert list(six) == list(EncryptedClass)
    assert all(len(v) == 3 for v in six.values())
    assert len(load_dataset(tmp_path)) == 8


def test_load_dataset_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")
