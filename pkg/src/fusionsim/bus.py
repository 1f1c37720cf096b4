"""Framed pub/sub transport: wire format, topic matching, link impairments.

Wire layout (normative, little-endian):

    magic   4 bytes  0x46 0x42 0x55 0x53 ("FBUS")
    version u8       always 1
    msg_type u8      see MSG_* constants
    timestamp_ns u64
    topic_len u16    then topic bytes (UTF-8)
    payload_len u32  then payload bytes

Payloads are canonical JSON: UTF-8, keys sorted, no insignificant
whitespace, floats in shortest round-trip form.  Canonical bytes are what
the determinism contract hashes and diffs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FBUS"
VERSION = 1

MSG_DETECTIONS = 1
MSG_TRACKS = 2
MSG_TASK_REQ = 3
MSG_TASK_RESP = 4
MSG_HEARTBEAT = 5
MSG_CLOCK = 6

MSG_TYPES = {
    MSG_DETECTIONS: "DETECTIONS",
    MSG_TRACKS: "TRACKS",
    MSG_TASK_REQ: "TASK_REQ",
    MSG_TASK_RESP: "TASK_RESP",
    MSG_HEARTBEAT: "HEARTBEAT",
    MSG_CLOCK: "CLOCK",
}

MAX_TOPIC = 0xFFFF
MAX_PAYLOAD = 0xFFFFFFFF

_HEADER = struct.Struct("<4sBBQ")  # magic, version, msg_type, timestamp_ns


class BusError(Exception):
    pass


class TopicTooLong(BusError):
    pass


class PayloadTooLong(BusError):
    pass


class BadMagic(BusError):
    pass


class BadVersion(BusError):
    pass


class UnknownType(BusError):
    pass


class Truncated(BusError):
    pass


class UnknownLink(BusError):
    pass


@dataclass(frozen=True)
class BusFrame:
    msg_type: int
    timestamp_ns: int
    topic: str
    payload: bytes = b""
    version: int = VERSION

    def __post_init__(self):
        if self.msg_type not in MSG_TYPES:
            raise UnknownType(f"msg_type {self.msg_type} not in {sorted(MSG_TYPES)}")
        if not 0 <= self.timestamp_ns < 2**64:
            raise BusError("timestamp_ns must fit in u64")


def canonical_dumps(obj) -> bytes:
    """Canonical JSON bytes: sorted keys, compact, shortest-repr floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False).encode("utf-8")


def canonical_loads(data: bytes):
    return json.loads(data.decode("utf-8"))


def encode(frame: BusFrame) -> bytes:
    topic = frame.topic.encode("utf-8")
    if len(topic) > MAX_TOPIC:
        raise TopicTooLong(f"topic is {len(topic)} bytes, limit {MAX_TOPIC}")
    if len(frame.payload) > MAX_PAYLOAD:
        raise PayloadTooLong(f"payload is {len(frame.payload)} bytes, limit {MAX_PAYLOAD}")
    parts = [
        _HEADER.pack(MAGIC, frame.version, frame.msg_type, frame.timestamp_ns),
        struct.pack("<H", len(topic)),
        topic,
        struct.pack("<I", len(frame.payload)),
        frame.payload,
    ]
    return b"".join(parts)


def decode(data: bytes) -> tuple[BusFrame, int]:
    """Decode one frame from the head of ``data``.

    Returns (frame, bytes consumed); callers parsing a stream continue at
    the consumed offset.
    """
    if len(data) < 4:
        raise Truncated("magic: fewer than 4 bytes available")
    if data[:4] != MAGIC:
        raise BadMagic(f"magic bytes {data[:4]!r} != {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise Truncated("header: buffer ends before timestamp_ns")
    _, version, msg_type, timestamp_ns = _HEADER.unpack_from(data)
    if version != VERSION:
        raise BadVersion(f"version {version} unsupported (expect {VERSION})")
    if msg_type not in MSG_TYPES:
        raise UnknownType(f"msg_type {msg_type} unknown")
    off = _HEADER.size
    if len(data) < off + 2:
        raise Truncated("topic_len: buffer ends inside field")
    (topic_len,) = struct.unpack_from("<H", data, off)
    off += 2
    if len(data) < off + topic_len:
        raise Truncated("topic: buffer ends inside topic bytes")
    try:
        topic = data[off:off + topic_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise BusError(f"topic is not valid UTF-8: {e}") from e
    off += topic_len
    if len(data) < off + 4:
        raise Truncated("payload_len: buffer ends inside field")
    (payload_len,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + payload_len:
        raise Truncated("payload: buffer ends inside payload bytes")
    payload = bytes(data[off:off + payload_len])
    off += payload_len
    return BusFrame(msg_type, timestamp_ns, topic, payload, version=version), off


def decode_stream(data: bytes) -> list[BusFrame]:
    """Decode a concatenation of frames; raises on any malformed remainder."""
    frames = []
    off = 0
    while off < len(data):
        frame, used = decode(data[off:])
        frames.append(frame)
        off += used
    return frames


def topic_matches(subscription: str, topic: str) -> bool:
    """Prefix subscription semantics: "tracks/" matches "tracks/ego"."""
    return topic.startswith(subscription)


@dataclass(frozen=True)
class LinkParams:
    base_latency: float = 0.02
    jitter: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if not (self.base_latency >= self.jitter >= 0.0):
            raise BusError("require base_latency >= jitter >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise BusError("drop_prob must be in [0, 1]")


@dataclass
class NetworkModel:
    """Per-link stochastic impairments; unknown links fall back to default."""

    default: LinkParams | None = field(default_factory=LinkParams)
    links: dict[str, LinkParams] = field(default_factory=dict)

    def params(self, link: str) -> LinkParams:
        p = self.links.get(link, self.default)
        if p is None:
            raise UnknownLink(f"link {link!r} not configured and no default set")
        return p


def link_key(src: str, dst: str) -> str:
    return f"{src}->{dst}"


def deliver(net: NetworkModel, link: str, send_time: float, frame: BusFrame,
            rng: np.random.Generator) -> float | None:
    """Delivery time for a frame on a link, or None when dropped.

    Draw order is fixed: one uniform for the drop decision, then one for
    jitter when the frame survives and jitter > 0.  Reordering emerges
    naturally when jitter windows of consecutive sends overlap.
    """
    p = net.params(link)
    if rng.uniform() < p.drop_prob:
        return None
    delay = p.base_latency
    if p.jitter > 0.0:
        delay += rng.uniform(-p.jitter, p.jitter)
    return send_time + delay
