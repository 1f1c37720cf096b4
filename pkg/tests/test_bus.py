import numpy as np
import pytest

from fusionsim import bus
from fusionsim.bus import (
    BadMagic,
    BadVersion,
    BusFrame,
    LinkParams,
    NetworkModel,
    PayloadTooLong,
    TopicTooLong,
    Truncated,
    UnknownType,
    canonical_dumps,
    decode,
    decode_stream,
    deliver,
    encode,
    link_key,
    topic_matches,
)

GOLDEN_HEARTBEAT_HEX = (
    "46425553"        # magic "FBUS"
    "01"              # version
    "05"              # HEARTBEAT
    "0000000000000000"  # timestamp_ns
    "0200"            # topic_len = 2
    "6862"            # "hb"
    "00000000"        # payload_len = 0
)


class TestWireFormat:
    def test_golden_heartbeat_encodes_exactly(self):
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        data = encode(frame)
        assert data.hex() == GOLDEN_HEARTBEAT_HEX
        assert len(data) == 22

    def test_golden_heartbeat_decodes_exactly(self):
        frame, used = decode(bytes.fromhex(GOLDEN_HEARTBEAT_HEX))
        assert used == 22
        assert frame == BusFrame(bus.MSG_HEARTBEAT, 0, "hb")

    def test_golden_vector_file(self, golden_dir):
        data = (golden_dir / "heartbeat_frame.hex").read_text().strip()
        assert data == GOLDEN_HEARTBEAT_HEX

    def test_empty_topic_empty_payload_length(self):
        frame = BusFrame(bus.MSG_CLOCK, 0, "")
        assert len(encode(frame)) == 20

    def test_topic_too_long(self):
        with pytest.raises(TopicTooLong):
            encode(BusFrame(bus.MSG_HEARTBEAT, 0, "x" * 65536))

    def test_topic_at_limit_ok(self):
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "x" * 65535)
        out, _ = decode(encode(frame))
        assert out == frame

    def test_payload_too_long(self):
        class FakeBytes(bytes):
            def __len__(self):
                return 2**32

        with pytest.raises(PayloadTooLong):
            encode(BusFrame(bus.MSG_HEARTBEAT, 0, "t", FakeBytes()))

    def test_round_trip_fuzz(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            msg_type = int(rng.integers(1, 7))
            ts = int(rng.integers(0, 2**63))
            topic_len = int(rng.integers(0, 40))
            topic = "".join(chr(int(c)) for c in rng.integers(32, 0x2FFF, size=topic_len))
            payload = rng.bytes(int(rng.integers(0, 200)))
            frame = BusFrame(msg_type, ts, topic, payload)
            data = encode(frame)
            out, used = decode(data)
            assert used == len(data)
            assert out == frame

    def test_stream_parsing(self):
        frames = [BusFrame(bus.MSG_HEARTBEAT, i, f"hb/{i}", bytes([i])) for i in range(20)]
        blob = b"".join(encode(f) for f in frames)
        assert decode_stream(blob) == frames

    def test_bad_magic(self):
        data = bytearray(bytes.fromhex(GOLDEN_HEARTBEAT_HEX))
        data[0] ^= 0xFF
        with pytest.raises(BadMagic):
            decode(bytes(data))

    def test_bad_version(self):
        data = bytearray(bytes.fromhex(GOLDEN_HEARTBEAT_HEX))
        data[4] = 9
        with pytest.raises(BadVersion):
            decode(bytes(data))

    def test_unknown_type(self):
        data = bytearray(bytes.fromhex(GOLDEN_HEARTBEAT_HEX))
        data[5] = 99
        with pytest.raises(UnknownType):
            decode(bytes(data))

    def test_truncations_name_the_field(self):
        frame = BusFrame(bus.MSG_TRACKS, 123456789, "tracks/ego", b"payload!")
        data = encode(frame)
        cases = {
            3: "magic",
            10: "header",
            15: "topic_len",
            18: "topic",
            26: "payload_len",
            len(data) - 1: "payload",
        }
        for cut, name in cases.items():
            with pytest.raises(Truncated) as exc:
                decode(data[:cut])
            assert name in str(exc.value)


class TestTopics:
    @pytest.mark.parametrize("sub,topic,expect", [
        ("tracks/", "tracks/ego", True),
        ("tracks/", "tracks/", True),
        ("tracks/ego", "tracks/ego", True),
        ("tracks/ego", "tracks/ego2", True),   # prefix semantics, like ZMQ SUB
        ("tracks/rsu", "tracks/ego", False),
        ("", "anything", True),
        ("tasks/edge", "tasks/edge", True),
        ("hb/", "tracks/ego", False),
    ])
    def test_table(self, sub, topic, expect):
        assert topic_matches(sub, topic) is expect


class TestNetworkModel:
    def test_always_drop(self):
        net = NetworkModel(default=LinkParams(drop_prob=1.0))
        rng = np.random.default_rng(0)
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        assert deliver(net, "a->b", 0.0, frame, rng) is None

    def test_fixed_latency(self):
        net = NetworkModel(default=LinkParams(base_latency=0.05, jitter=0.0, drop_prob=0.0))
        rng = np.random.default_rng(0)
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        assert deliver(net, "a->b", 1.0, frame, rng) == 1.05

    def test_empirical_drop_rate(self):
        net = NetworkModel(default=LinkParams(base_latency=0.05, drop_prob=0.1))
        rng = np.random.default_rng(42)
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        drops = sum(deliver(net, "a->b", 0.0, frame, rng) is None for _ in range(10_000))
        assert abs(drops / 10_000 - 0.1) <= 0.01

    def test_jitter_bounds_delay(self):
        net = NetworkModel(default=LinkParams(base_latency=0.05, jitter=0.02))
        rng = np.random.default_rng(1)
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        for _ in range(1000):
            at = deliver(net, "a->b", 0.0, frame, rng)
            assert 0.03 <= at <= 0.07

    def test_deterministic_given_seed(self):
        net = NetworkModel(default=LinkParams(base_latency=0.05, jitter=0.02, drop_prob=0.3))
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            outs.append([deliver(net, "a->b", 0.0, frame, rng) for _ in range(500)])
        assert outs[0] == outs[1]

    def test_per_link_override(self):
        net = NetworkModel(default=LinkParams(base_latency=0.05),
                           links={link_key("ego", "rsu1"): LinkParams(base_latency=0.2)})
        rng = np.random.default_rng(0)
        frame = BusFrame(bus.MSG_HEARTBEAT, 0, "hb")
        assert deliver(net, "ego->rsu1", 0.0, frame, rng) == 0.2
        assert deliver(net, "ego->other", 0.0, frame, rng) == 0.05

    def test_unknown_link_without_default(self):
        net = NetworkModel(default=None)
        rng = np.random.default_rng(0)
        with pytest.raises(bus.UnknownLink):
            deliver(net, "a->b", 0.0, BusFrame(bus.MSG_HEARTBEAT, 0, "hb"), rng)

    def test_invalid_params(self):
        with pytest.raises(bus.BusError):
            LinkParams(base_latency=0.01, jitter=0.02)
        with pytest.raises(bus.BusError):
            LinkParams(drop_prob=1.5)


def test_canonical_json_is_sorted_and_compact():
    data = canonical_dumps({"b": 1.5, "a": [1, 2], "c": None})
    assert data == b'{"a":[1,2],"b":1.5,"c":null}'


def test_canonical_json_shortest_float():
    assert canonical_dumps({"x": 0.1}) == b'{"x":0.1}'
    assert canonical_dumps({"x": 1e-9}) == b'{"x":1e-09}'
