import struct

import dpkt
import numpy as np
import pytest

from traffic_examiner.capture import open_capture
from traffic_examiner.config import PreprocessConfig
from traffic_examiner.errors import ArgumentError
from traffic_examiner.labels import ALL_LABELS, ClassLabel, TopClass
from traffic_examiner.preprocess import preprocess_capture
from traffic_examiner.synth import ClassSynth, SynthSpec, default_synth_spec, ipv4_frame, synth_capture, synth_generate

BENIGN = ClassLabel(TopClass.BENIGN)
MALWARE = ClassLabel(TopClass.MALWARE)


def test_counts_and_markers():
    spec = SynthSpec(
        classes=(
            ClassSynth(BENIGN, mean=60, std=20, markers={0: 0xAA}),
            ClassSynth(MALWARE, mean=90, std=20, markers={0: 0x55}),
        ),
        samples_per_class=10,
        seed=4,
    )
    graphs = synth_generate(spec)

    assert len(graphs) == 20
    assert all(g.graph.pixels[0, 0] == 170 for g in graphs if g.label == BENIGN)
    assert all(g.graph.pixels[0, 0] == 0x55 for g in graphs if g.label == MALWARE)


def test_same_seed_same_bytes():
    a = synth_generate(default_synth_spec(ALL_LABELS, 4, seed=11))
    b = synth_generate(default_synth_spec(ALL_LABELS, 4, seed=11))
    c = synth_generate(default_synth_spec(ALL_LABELS, 4, seed=12))
    assert [g.graph.flatten() for g in a] == [g.graph.flatten() for g in b]
    assert [g.graph.flatten() for g in a] != [g.graph.flatten() for g in c]


def test_default_spec_classes_are_distinguishable():
    spec = default_synth_spec(ALL_LABELS, 2, seed=0)
    first_bytes = {c.markers[0] for c in spec.classes}
    assert len(first_bytes) == len(ALL_LABELS)


def test_indistinguishable_classes_rejected():
    with pytest.raises(ArgumentError):
        SynthSpec((ClassSynth(BENIGN, 1, 1, {0: 1}), ClassSynth(MALWARE, 1, 1, {0: 1})), 1, 0)
    with pytest.raises(ArgumentError):
        SynthSpec((ClassSynth(BENIGN, 1, 1),), 1, 0)


def test_ipv4_frame_checksum_and_lengths():
    frame = ipv4_frame("10.1.2.3", "10.4.5.6", 1234, 80, b"abc")
    ip = frame[14:]
    words = struct.unpack("!10H", ip[:20])
    total = sum(words)
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    assert total == 0xFFFF
    assert struct.unpack("!H", ip[2:4])[0] == len(ip) == 43

    decoded = dpkt.ethernet.Ethernet(frame).data
    assert isinstance(decoded.data, dpkt.tcp.TCP)
    assert (decoded.data.sport, decoded.data.dport, decoded.data.data) == (1234, 80, b"abc")
    assert decoded.df


def test_udp_frame_length_field():
    udp = dpkt.ip.IP(ipv4_frame("10.1.2.3", "10.4.5.6", 5353, 53, b"query", proto="UDP", ethernet=False)).data
    assert isinstance(udp, dpkt.udp.UDP)
    assert udp.ulen == 8 + 5
    with pytest.raises(ArgumentError):
        ipv4_frame("10.1.2.3", "10.4.5.6", 1, 2, proto="ICMP")


def test_synth_capture_preprocesses_to_one_graph_per_packet(tmp_path):
    path = tmp_path / "s.pcap"
    assert synth_capture(path, 25, seed=2) == 25
    assert len(open_capture(path)) == 25

    result = preprocess_capture(path, PreprocessConfig())

    assert len(result.graphs) == 25
    assert np.all([g.flatten()[12:20] == bytes(8) for g in result.graphs])
