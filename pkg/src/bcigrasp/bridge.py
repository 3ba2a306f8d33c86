"""Wire formats and transport for the selection-to-robot hand-off.

Target confirmations travel two ways: an OSC 1.0 datagram (address
"/bci/target" with two big-endian int32 arguments) for datagram
consumers, and an HTTP POST for the confirm path of record. A seeded
in-process link simulates datagram latency, jitter and loss.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

OSC_ADDRESS = "/bci/target"


class MalformedFrame(Exception):
    pass


class Unreachable(Exception):
    pass


class Rejected(Exception):
    pass


@dataclass(frozen=True)
class TargetMessage:
    target_id: int
    marker_id: int

    def __post_init__(self):
        if self.target_id < 0 or self.marker_id < 0:
            raise ValueError("ids must be non-negative")
        if self.target_id > 0x7FFFFFFF or self.marker_id > 0x7FFFFFFF:
            raise ValueError("ids must fit int32")


def _pad4(b: bytes) -> bytes:
    return b + b"\x00" * (4 - len(b) % 4 if len(b) % 4 else 4)


def encode_osc_target(msg: TargetMessage) -> bytes:
    """OSC 1.0 frame: null-padded address, ",ii" type tag, two int32 BE."""
    out = _pad4(OSC_ADDRESS.encode("ascii"))
    out += _pad4(b",ii")
    out += struct.pack(">ii", msg.target_id, msg.marker_id)
    assert len(out) % 4 == 0
    return out


def decode_osc_target(frame: bytes) -> TargetMessage:
    if len(frame) % 4 != 0 or len(frame) < 24:
        raise MalformedFrame(f"frame length {len(frame)} invalid")
    nul = frame.find(b"\x00")
    if nul < 0:
        raise MalformedFrame("unterminated address")
    address = frame[:nul].decode("ascii", errors="replace")
    if address != OSC_ADDRESS:
        raise MalformedFrame(f"unexpected address {address!r}")
    off = len(_pad4(OSC_ADDRESS.encode("ascii")))
    tag = frame[off : off + 4]
    if tag != b",ii\x00":
        raise MalformedFrame(f"unexpected type tag {tag!r}")
    off += 4
    if len(frame) != off + 8:
        raise MalformedFrame("payload size mismatch")
    target_id, marker_id = struct.unpack(">ii", frame[off : off + 8])
    if target_id < 0 or marker_id < 0:
        raise MalformedFrame("negative id")
    return TargetMessage(target_id, marker_id)


@dataclass(frozen=True)
class LinkConfig:
    latency_s: float = 0.0
    jitter_s: float = 0.0
    loss_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss_probability < 1.0:
            raise ValueError("loss probability must be in [0,1)")
        if self.latency_s < 0 or self.jitter_s < 0:
            raise ValueError("latency and jitter must be >= 0")


class SimulatedLink:
    """Seeded datagram link: per-packet delay latency+U(0,jitter), packets
    dropped with the configured probability. Delivery order follows arrival
    time with FIFO tie-breaking."""

    def __init__(self, config: LinkConfig | None = None, seed: int = 0):
        self.config = config or LinkConfig()
        self.rng = np.random.default_rng(seed)
        self._queue: list[tuple[float, int, bytes]] = []
        self._counter = 0

    def send(self, payload: bytes, t_now: float = 0.0) -> bool:
        """Queue a datagram; returns False when the packet is dropped."""
        if self.config.loss_probability > 0 and self.rng.random() < self.config.loss_probability:
            return False
        delay = self.config.latency_s
        if self.config.jitter_s > 0:
            delay += self.rng.uniform(0.0, self.config.jitter_s)
        self._queue.append((t_now + delay, self._counter, payload))
        self._counter += 1
        return True

    def deliver(self, t_now: float) -> list[bytes]:
        """Pop every datagram whose arrival time has passed."""
        ready = sorted(p for p in self._queue if p[0] <= t_now)
        self._queue = [p for p in self._queue if p[0] > t_now]
        return [payload for _, _, payload in ready]


@dataclass
class Snapshot:
    """One console-facing state sample; serialized as a JSON text record."""

    tick: int
    t: float
    s_t: float
    command: str
    cursor: int
    sway_x: float
    condition: str
    phase: str
    joints: list[float]
    gripper: str
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "tick": self.tick,
                "t": round(self.t, 6),
                "s_t": round(self.s_t, 6),
                "command": self.command,
                "cursor": self.cursor,
                "sway_x": round(self.sway_x, 6),
                "condition": self.condition,
                "phase": self.phase,
                "joints": [round(q, 6) for q in self.joints],
                "gripper": self.gripper,
                "metrics": self.metrics,
            },
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(text: str) -> "Snapshot":
        d = json.loads(text)
        return Snapshot(
            d["tick"], d["t"], d["s_t"], d["command"], d["cursor"], d["sway_x"],
            d["condition"], d["phase"], d["joints"], d["gripper"], d.get("metrics", {}),
        )


class SnapshotBuffer:
    """Per-subscriber bounded queue; drops the oldest beyond the capacity so
    the producer never blocks."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._items: list[Snapshot] = []
        self.dropped = 0

    def push(self, snap: Snapshot):
        self._items.append(snap)
        while len(self._items) > self.capacity:
            self._items.pop(0)
            self.dropped += 1

    def drain(self) -> list[Snapshot]:
        out, self._items = self._items, []
        return out

    def __len__(self):
        return len(self._items)


def http_confirm(base_url: str, msg: TargetMessage, timeout_s: float = 5.0) -> dict:
    """POST the confirmation to the session service; idempotent per
    (session, target). Raises Unreachable / Rejected."""
    import httpx

    try:
        resp = httpx.post(
            base_url.rstrip("/") + "/target",
            json={"target_id": msg.target_id, "marker_id": msg.marker_id},
            timeout=timeout_s,
        )
    except httpx.HTTPError as exc:
        raise Unreachable(str(exc)) from exc
    if resp.status_code == 409:
        raise Rejected(resp.text)
    if resp.status_code != 200:
        raise Unreachable(f"unexpected status {resp.status_code}")
    return resp.json()
