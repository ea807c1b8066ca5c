"""Traffic actors: periodic CAN sender, jamming talker, listening sink."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any

from .canbus import CanBus, CanMessage
from .core import Event, SimulationError, Simulator, uniform_draw
from .ethernet import (
    ETHERTYPE_CAN_TUNNEL,
    ETHERTYPE_FILLER,
    FCS_BYTES,
    HEADER_BYTES,
    MAX_PAYLOAD,
    MIN_PAYLOAD,
    VLAN_TAG_BYTES,
    AVB_PCP,
    EthFrame,
)
from .gateway import unpack
from .metrics import LatencyRecorder, LatencyRecord


class TrafficError(SimulationError):
    pass


@dataclass
class PeriodicCanSenderCfg:
    can_id: int = 0x100
    dlc: int = 8
    period: int = 3_000_000
    start: int = 0
    count_limit: int | None = None

    def __post_init__(self):
        if self.period <= 0:
            raise TrafficError(f"sender period must be positive, got {self.period}")
        if not 0 <= self.dlc <= 8:
            raise TrafficError(f"sender dlc must be 0..8, got {self.dlc}")


class PeriodicCanSender:
    """Requests one fixed-ID CAN message every period; the payload carries a
    little-endian sequence number for order and loss checks."""

    def __init__(self, sim: Simulator, name: str, cfg: PeriodicCanSenderCfg, bus: CanBus):
        self.sim = sim
        self.name = name
        self.cfg = cfg
        self.bus = bus
        self.created = 0
        bus.attach(name)
        sim.register(name, self._handle)

    def start(self) -> None:
        self.sim.schedule(self.name, "tick", self.cfg.start)

    def _handle(self, ev: Event) -> None:
        if ev.kind != "tick":
            raise TrafficError(f"unexpected event kind {ev.kind!r}")
        seq = self.created
        payload = (seq % (1 << (8 * self.cfg.dlc)) if self.cfg.dlc else 0).to_bytes(
            self.cfg.dlc, "little"
        )
        msg = CanMessage(self.cfg.can_id, payload, created_at=ev.fire_at, source=self.name)
        self.bus.transmit_request(self.name, msg)
        self.created += 1
        if self.cfg.count_limit is None or self.created < self.cfg.count_limit:
            self.sim.schedule(self.name, "tick", ev.fire_at + self.cfg.period)


@dataclass
class JammingTalkerCfg:
    """Background best-effort source.

    frame_total_bytes is the on-wire MAC frame size including header and
    FCS (and VLAN tag when the pcp maps to the shaped class); the payload
    is derived from it.  link_rate None means an ideal attachment: frames
    reach the switch at emission time with no access-link serialization.
    """

    frame_total_bytes: int = 1470
    period_lo: int = 1_000
    period_hi: int = 25_000
    dst: str = "listener"
    pcp: int = 0
    link_rate: int | None = None

    def __post_init__(self):
        if self.period_lo > self.period_hi:
            raise TrafficError(
                f"jammer period_lo {self.period_lo} exceeds period_hi {self.period_hi}"
            )
        if self.period_lo < 0:
            raise TrafficError("jammer periods must be non-negative")
        overhead = HEADER_BYTES + FCS_BYTES + (VLAN_TAG_BYTES if self.pcp == AVB_PCP else 0)
        payload = self.frame_total_bytes - overhead
        if not MIN_PAYLOAD <= payload <= MAX_PAYLOAD:
            raise TrafficError(
                f"frame_total_bytes {self.frame_total_bytes} implies payload {payload}, "
                f"outside {MIN_PAYLOAD}..{MAX_PAYLOAD}"
            )
        self.payload_len = payload


class JammingTalker:
    """Emits filler frames with uniformly random inter-emission gaps.

    ``egress`` is either an EgressPort (finite access link; frames queue
    there while the link is busy) or any receiver with on_frame_received
    (ideal attachment, used when cfg.link_rate is None).
    """

    def __init__(self, sim: Simulator, name: str, cfg: JammingTalkerCfg, rng: random.Random, egress: Any):
        self.sim = sim
        self.name = name
        self.cfg = cfg
        self.rng = rng
        self.egress = egress
        self.emitted = 0
        sim.register(name, self._handle)

    def start(self) -> None:
        self.sim.schedule(self.name, "tick", self.sim.now)

    def _handle(self, ev: Event) -> None:
        if ev.kind != "tick":
            raise TrafficError(f"unexpected event kind {ev.kind!r}")
        frame = EthFrame(
            src=self.name,
            dst=self.cfg.dst,
            pcp=self.cfg.pcp,
            payload_len=self.cfg.payload_len,
            ethertype=ETHERTYPE_FILLER,
        )
        if hasattr(self.egress, "enqueue"):
            self.egress.enqueue(frame, ev.fire_at)
        else:
            self.egress.on_frame_received(frame, ev.fire_at)
        self.emitted += 1
        gap = uniform_draw(self.rng, self.cfg.period_lo, self.cfg.period_hi)
        self.sim.schedule(self.name, "tick", ev.fire_at + gap)


class Listener:
    """Terminal Ethernet node: unpacks CAN-bearing frames into latency
    records and counts everything else as jamming traffic."""

    def __init__(self, name: str, recorder: LatencyRecorder, arm: str = ""):
        self.name = name
        self.recorder = recorder
        self.arm = arm
        self.jam_frames = 0
        self.records_received = 0

    def on_frame_received(self, frame: EthFrame, now: int) -> list[LatencyRecord]:
        if frame.ethertype != ETHERTYPE_CAN_TUNNEL:
            self.jam_frames += 1
            return []
        records = []
        for msg in unpack(frame.payload):
            rec = LatencyRecord(
                seq=int.from_bytes(msg.payload, "little"),
                can_id=msg.can_id,
                created_at=msg.created_at,
                delivered_at=now,
                arm=self.arm,
            )
            self.recorder.record(rec)
            records.append(rec)
        self.records_received += len(records)
        return records
