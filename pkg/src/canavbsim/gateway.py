"""CAN to Ethernet-AVB gateway: FIFO queueing, periodic packing, classification.

Wire format of a packed payload (all integers little-endian):

    offset 0: record_count  u16
    then per record:
        can_id      u32  (11 significant bits)
        dlc         u8
        created_at  u64  (ns)
        data        dlc bytes

A record is 13 + dlc bytes; a payload of n records is 2 + sum(13 + dlc_i)
bytes and must fit the configured MTU payload.  Records appear in CAN
arrival (FIFO) order.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .canbus import CAN_MAX_DLC, CAN_MAX_ID, CanMessage
from .core import Event, SimulationError, Simulator
from .ethernet import (
    ETHERTYPE_CAN_TUNNEL,
    MAX_PAYLOAD,
    MIN_PAYLOAD,
    AVB_PCP,
    EgressPort,
    EthFrame,
)

_COUNT = struct.Struct("<H")
_RECORD = struct.Struct("<IBQ")
RECORD_OVERHEAD = _RECORD.size  # 13 bytes before the data field
COUNT_SIZE = _COUNT.size

CAN_DERIVED = "can_derived"
OTHER = "other"


class GatewayError(SimulationError):
    pass


class PayloadOverflow(GatewayError):
    pass


class MalformedPayload(GatewayError):
    pass


def packed_size(messages: Iterable[CanMessage]) -> int:
    return COUNT_SIZE + sum(RECORD_OVERHEAD + m.dlc for m in messages)


def pack(messages: list[CanMessage], limit: int = MAX_PAYLOAD) -> bytes:
    """Serialize messages into one payload; raises PayloadOverflow past limit."""
    if len(messages) > 0xFFFF:
        raise PayloadOverflow(f"{len(messages)} records exceed the 16-bit count field")
    size = packed_size(messages)
    if size > limit:
        raise PayloadOverflow(f"{size} bytes exceed the {limit}-byte payload limit")
    parts = [_COUNT.pack(len(messages))]
    for m in messages:
        parts.append(_RECORD.pack(m.can_id, m.dlc, m.created_at))
        parts.append(m.payload)
    return b"".join(parts)


def unpack(payload: bytes) -> list[CanMessage]:
    """Exact inverse of pack; rejects any truncated or inconsistent buffer."""
    if len(payload) < COUNT_SIZE:
        raise MalformedPayload("payload shorter than the record count field")
    (count,) = _COUNT.unpack_from(payload, 0)
    offset = COUNT_SIZE
    messages = []
    for i in range(count):
        if offset + RECORD_OVERHEAD > len(payload):
            raise MalformedPayload(f"record {i} truncated at offset {offset}")
        can_id, dlc, created_at = _RECORD.unpack_from(payload, offset)
        offset += RECORD_OVERHEAD
        if can_id > CAN_MAX_ID:
            raise MalformedPayload(f"record {i} can_id {can_id:#x} outside 11-bit range")
        if dlc > CAN_MAX_DLC:
            raise MalformedPayload(f"record {i} dlc {dlc} exceeds 8")
        if offset + dlc > len(payload):
            raise MalformedPayload(f"record {i} data truncated")
        messages.append(CanMessage(can_id, payload[offset : offset + dlc], created_at))
        offset += dlc
    if offset != len(payload):
        raise MalformedPayload(f"{len(payload) - offset} trailing bytes after {count} records")
    return messages


@dataclass
class GwConfig:
    """Gateway parameters; the defaults match the reference scenario."""

    pack_period: int = 500_000
    mtu_payload: int = MAX_PAYLOAD
    class_for_can: int = AVB_PCP
    be_pcp: int = 0
    queue_cap: int | None = None

    def __post_init__(self):
        if self.pack_period <= 0:
            raise GatewayError(f"pack_period must be positive, got {self.pack_period}")
        if self.class_for_can == self.be_pcp:
            raise GatewayError("class_for_can must differ from be_pcp")
        if not COUNT_SIZE + RECORD_OVERHEAD <= self.mtu_payload <= MAX_PAYLOAD:
            raise GatewayError(f"mtu_payload {self.mtu_payload} cannot hold a record")

    def classify(self, origin: str) -> int:
        """pcp for a frame of the given origin: CAN-bearing frames ride the
        configured class, everything else is best-effort."""
        if origin == CAN_DERIVED:
            return self.class_for_can
        if origin == OTHER:
            return self.be_pcp
        raise GatewayError(f"unknown frame origin {origin!r}")


class Gateway:
    """The CAN-side FIFO plus the periodic packer feeding the Ethernet port.

    Every pack tick drains as many head-of-FIFO records as fit one MTU
    payload into a single frame for the configured listener; an empty FIFO
    emits nothing.  Leftover messages wait for the next tick.
    """

    def __init__(self, sim: Simulator, name: str, cfg: GwConfig, dst: str):
        self.sim = sim
        self.name = name
        self.cfg = cfg
        self.dst = dst
        self.fifo: deque[CanMessage] = deque()
        self.overflow_drops = 0
        self.frames_sent = 0
        self.messages_packed = 0
        self.ignored_eth_frames = 0
        self.eth_port: EgressPort | None = None
        sim.register(name, self._handle)

    def start(self) -> None:
        """Schedule the first pack tick at t=0."""
        self.sim.schedule(self.name, "pack", 0)

    def on_can_received(self, msg: CanMessage, now: int) -> None:
        if self.cfg.queue_cap is not None and len(self.fifo) >= self.cfg.queue_cap:
            self.overflow_drops += 1
            return
        self.fifo.append(msg)

    def on_frame_received(self, frame: EthFrame, now: int) -> None:
        # Ethernet-to-CAN conversion is out of scope; count and drop.
        self.ignored_eth_frames += 1

    def _handle(self, ev: Event) -> None:
        if ev.kind != "pack":
            raise GatewayError(f"unexpected event kind {ev.kind!r}")
        frame = self.on_pack_timer(ev.fire_at)
        if frame is not None:
            self.eth_port.enqueue(frame, ev.fire_at)
        self.sim.schedule(self.name, "pack", ev.fire_at + self.cfg.pack_period)

    def on_pack_timer(self, now: int) -> EthFrame | None:
        """Build the tick's frame, or None when the FIFO is empty."""
        if not self.fifo:
            return None
        batch = []
        size = COUNT_SIZE
        while self.fifo and size + RECORD_OVERHEAD + self.fifo[0].dlc <= self.cfg.mtu_payload:
            msg = self.fifo.popleft()
            size += RECORD_OVERHEAD + msg.dlc
            batch.append(msg)
        payload = pack(batch, self.cfg.mtu_payload)
        self.frames_sent += 1
        self.messages_packed += len(batch)
        return EthFrame(
            src=self.name,
            dst=self.dst,
            pcp=self.cfg.classify(CAN_DERIVED),
            payload_len=max(MIN_PAYLOAD, len(payload)),
            payload=payload,
            ethertype=ETHERTYPE_CAN_TUNNEL,
        )
