from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcigrasp.bridge import (
    LinkConfig,
    MalformedFrame,
    SimulatedLink,
    Snapshot,
    SnapshotBuffer,
    TargetMessage,
    decode_osc_target,
    encode_osc_target,
)

GOLDEN = bytes.fromhex(
    "2f6263692f746172676574002c6969000000000300000007"
)


class TestOscCodec:
    def test_golden_frame_3_7(self):
        frame = encode_osc_target(TargetMessage(3, 7))
        assert len(frame) == 24
        assert frame == GOLDEN

    def test_golden_file(self):
        path = Path(__file__).parent / "golden" / "osc_target_3_7.bin"
        assert encode_osc_target(TargetMessage(3, 7)) == path.read_bytes()

    def test_zero_payload(self):
        frame = encode_osc_target(TargetMessage(0, 0))
        assert len(frame) == 24
        assert frame[:16] == GOLDEN[:16]
        assert frame[16:] == b"\x00" * 8

    def test_roundtrip_1000_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            msg = TargetMessage(int(rng.integers(0, 2**31)), int(rng.integers(0, 2**31)))
            assert decode_osc_target(encode_osc_target(msg)) == msg

    def test_truncated_rejected(self):
        with pytest.raises(MalformedFrame):
            decode_osc_target(GOLDEN[:20])

    def test_unaligned_rejected(self):
        with pytest.raises(MalformedFrame):
            decode_osc_target(GOLDEN + b"\x00")

    def test_wrong_address_rejected(self):
        bad = b"/foo\x00\x00\x00\x00" + GOLDEN[12:]
        with pytest.raises(MalformedFrame):
            decode_osc_target(bad)

    def test_wrong_typetag_rejected(self):
        bad = GOLDEN[:12] + b",if\x00" + GOLDEN[16:]
        with pytest.raises(MalformedFrame):
            decode_osc_target(bad)

    def test_negative_ids_rejected_at_construction(self):
        with pytest.raises(ValueError):
            TargetMessage(-1, 0)


class TestSimulatedLink:
    def test_lossless_in_order_complete(self):
        link = SimulatedLink(LinkConfig(latency_s=0.0, jitter_s=0.0, loss_probability=0.0))
        payloads = [bytes([i]) for i in range(50)]
        for p in payloads:
            assert link.send(p, t_now=0.0)
        assert link.deliver(0.0) == payloads

    def test_latency_holds_packets(self):
        link = SimulatedLink(LinkConfig(latency_s=0.1))
        link.send(b"x", t_now=1.0)
        assert link.deliver(1.05) == []
        assert link.deliver(1.1) == [b"x"]

    def test_loss_rate_statistical(self):
        link = SimulatedLink(LinkConfig(loss_probability=0.3), seed=1)
        sent = sum(link.send(b"p", 0.0) for _ in range(2000))
        assert sent == pytest.approx(1400, abs=100)

    def test_seeded_determinism(self):
        a = SimulatedLink(LinkConfig(jitter_s=0.05, loss_probability=0.2), seed=9)
        b = SimulatedLink(LinkConfig(jitter_s=0.05, loss_probability=0.2), seed=9)
        res_a = [a.send(bytes([i]), 0.0) for i in range(100)]
        res_b = [b.send(bytes([i]), 0.0) for i in range(100)]
        assert res_a == res_b
        assert a.deliver(10.0) == b.deliver(10.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LinkConfig(loss_probability=1.0)
        with pytest.raises(ValueError):
            LinkConfig(latency_s=-0.1)


class TestSnapshot:
    def test_json_roundtrip(self):
        snap = Snapshot(
            tick=5, t=0.25, s_t=-0.43, command="left", cursor=1, sway_x=-0.1,
            condition="neurofeedback", phase="decide",
            joints=[0.1, -0.2, 0.3, 0, 0.5, 0], gripper="open",
            metrics={"itr": 12.5, "sci": 0.4},
        )
        back = Snapshot.from_json(snap.to_json())
        assert back == snap

    def test_buffer_drops_oldest(self):
        buf = SnapshotBuffer(capacity=4)
        for i in range(10):
            buf.push(Snapshot(i, i * 0.05, 0, "neutral", 1, 0, "static", "prepare",
                              [0] * 6, "open"))
        assert buf.dropped == 6
        ticks = [s.tick for s in buf.drain()]
        assert ticks == [6, 7, 8, 9]
        assert len(buf) == 0


@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
@settings(max_examples=200, deadline=None)
def test_codec_roundtrip_property(tid, mid):
    msg = TargetMessage(tid, mid)
    frame = encode_osc_target(msg)
    assert len(frame) % 4 == 0
    assert decode_osc_target(frame) == msg
