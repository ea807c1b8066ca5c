"""100-Mbps full-duplex Ethernet with store-and-forward switches.

Every egress port owns two FIFO queues (one shaped AVB queue, one
best-effort queue) plus credit-based shaper state.  A frame classified into
the AVB queue may start transmitting only while credit >= 0; best-effort
frames fill the remaining bandwidth.  Transmission is never preempted.

Credit unit: the shaper integrates slope (bits/s) over elapsed time (ns),
so credit is stored as an exact signed integer in units of 1e-9 bits.
Dividing a credit deficit by idle_slope therefore yields whole nanoseconds.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .core import Event, SimulationError, Simulator

PREAMBLE_BYTES = 8  # preamble + start-of-frame delimiter
HEADER_BYTES = 14
VLAN_TAG_BYTES = 4
FCS_BYTES = 4
IFG_BYTES = 12
MIN_PAYLOAD = 46
MAX_PAYLOAD = 1500

# Priority code point mapped to the shaped queue; everything else is
# best-effort.  One AVB class only.
AVB_PCP = 3

# EtherType-style discriminators so the listener can tell packed-CAN frames
# from background traffic regardless of priority class.
ETHERTYPE_CAN_TUNNEL = 0x88B5
ETHERTYPE_FILLER = 0x0800


class EthError(SimulationError):
    pass


class InvalidPayloadLen(EthError):
    pass


class ClockRegression(EthError):
    """Credit update asked to integrate backwards in time."""


class InvalidSlope(EthError):
    pass


def wire_bits(payload_len: int, tagged: bool) -> int:
    """Bits occupied on the wire including preamble and interframe gap."""
    if not MIN_PAYLOAD <= payload_len <= MAX_PAYLOAD:
        raise InvalidPayloadLen(f"payload_len {payload_len} outside {MIN_PAYLOAD}..{MAX_PAYLOAD}")
    octets = PREAMBLE_BYTES + HEADER_BYTES + payload_len + FCS_BYTES + IFG_BYTES
    if tagged:
        octets += VLAN_TAG_BYTES
    return 8 * octets


def eth_wire_time(payload_len: int, tagged: bool, rate: int) -> int:
    """Serialization time in ns, rounded up so wire time is never understated."""
    if rate <= 0:
        raise EthError(f"link rate must be positive, got {rate}")
    return -(-wire_bits(payload_len, tagged) * 1_000_000_000 // rate)


@dataclass(eq=False)
class EthFrame:
    """A tagged Ethernet frame; payload may be a packed-CAN byte string.

    ``payload_len`` is the padded on-wire payload size; ``payload`` holds
    only the meaningful bytes (padding never reaches the decoder, as on a
    real MAC where the length field strips it).  ``hops`` collects
    per-port [port, enqueued_ns, dequeued_ns] entries for diagnostics.
    """

    src: str
    dst: str
    pcp: int
    payload_len: int
    payload: bytes = b""
    ethertype: int = ETHERTYPE_FILLER
    hops: list[list] = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.pcp <= 7:
            raise EthError(f"pcp {self.pcp} outside 0..7")
        if not MIN_PAYLOAD <= self.payload_len <= MAX_PAYLOAD:
            raise InvalidPayloadLen(
                f"payload_len {self.payload_len} outside {MIN_PAYLOAD}..{MAX_PAYLOAD}"
            )
        if len(self.payload) > self.payload_len:
            raise InvalidPayloadLen("payload bytes exceed declared payload_len")


class CreditState:
    """802.1Qav-style credit accumulator for one shaped port.

    Piecewise-linear and exact: callers must invoke update() at every
    boundary where the transmit/queue state changes, and the integration
    between boundaries uses whichever single rate applied throughout.
    """

    def __init__(self, idle_slope: int, link_rate: int):
        if not 0 < idle_slope < link_rate:
            raise InvalidSlope(f"need 0 < idle_slope < link rate, got {idle_slope}/{link_rate}")
        self.idle_slope = idle_slope
        self.send_slope = idle_slope - link_rate
        self.credit = 0
        self.last_update = 0

    def update(self, now: int, transmitting_avb: bool, avb_q_empty: bool) -> None:
        if now < self.last_update:
            raise ClockRegression(f"credit update at {now} before {self.last_update}")
        dt = now - self.last_update
        self.last_update = now
        if transmitting_avb:
            self.credit += self.send_slope * dt
        elif not avb_q_empty or self.credit < 0:
            self.credit += self.idle_slope * dt
        if avb_q_empty and not transmitting_avb and self.credit > 0:
            self.credit = 0

    def replenish_delay(self) -> int:
        """ns until credit reaches zero at idle_slope (0 if already eligible)."""
        if self.credit >= 0:
            return 0
        return -(-(-self.credit) // self.idle_slope)


class PortQueueSet:
    """The AVB and best-effort FIFOs of one egress port, with counters."""

    def __init__(self, avb_cap: int | None = None, be_cap: int | None = None, avb_pcp: int = AVB_PCP):
        self.avb_q: deque[EthFrame] = deque()
        self.be_q: deque[EthFrame] = deque()
        self.avb_cap = avb_cap
        self.be_cap = be_cap
        self.avb_pcp = avb_pcp
        self.offered = 0
        self.dropped = 0

    def is_avb(self, frame: EthFrame) -> bool:
        return frame.pcp == self.avb_pcp

    def enqueue(self, frame: EthFrame) -> bool:
        """Classify by pcp and append; returns False on tail drop."""
        self.offered += 1
        if self.is_avb(frame):
            q, cap = self.avb_q, self.avb_cap
        else:
            q, cap = self.be_q, self.be_cap
        if cap is not None and len(q) >= cap:
            self.dropped += 1
            return False
        q.append(frame)
        return True


def select_next_frame(pq: PortQueueSet, cs: CreditState) -> EthFrame | None:
    """Head frame eligible to transmit now, or None.

    AVB has strict priority while credit >= 0; negative credit gates the
    AVB queue and lets best-effort through.
    """
    if pq.avb_q and cs.credit >= 0:
        return pq.avb_q[0]
    if pq.be_q:
        return pq.be_q[0]
    return None


class EgressPort:
    """One transmit direction of a full-duplex link, with shaped queues.

    ``peer`` is any object with on_frame_received(frame, now); delivery
    happens when serialization completes (zero propagation delay).  AVB
    frames carry a VLAN tag on the wire; best-effort frames do not.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str,
        rate: int,
        idle_slope: int,
        peer: Any = None,
        avb_cap: int | None = None,
        be_cap: int | None = None,
        avb_pcp: int = AVB_PCP,
        depth_trace: Callable[[int, str, int, int, int], None] | None = None,
    ):
        self.sim = sim
        self.name = name
        self.rate = rate
        self.peer = peer
        self.queues = PortQueueSet(avb_cap, be_cap, avb_pcp)
        self.credit = CreditState(idle_slope, rate)
        self.depth_trace = depth_trace
        self.on_drop: Callable[[EthFrame], None] | None = None
        self.transmitted = 0
        self.tx_log: list[tuple[int, int, bool]] = []  # (start_ns, wire bits, is_avb)
        self._tx_frame: EthFrame | None = None
        self._tx_is_avb = False
        self._wakeup: Event | None = None
        sim.register(name, self._handle)

    @property
    def busy(self) -> bool:
        return self._tx_frame is not None

    def in_service(self) -> EthFrame | None:
        return self._tx_frame

    def queued_frames(self) -> int:
        return len(self.queues.avb_q) + len(self.queues.be_q)

    def enqueue(self, frame: EthFrame, now: int) -> bool:
        self._update_credit(now)
        accepted = self.queues.enqueue(frame)
        if accepted:
            frame.hops.append([self.name, now, None])
            self._trace_depth(now)
            self.kick(now)
        elif self.on_drop is not None:
            self.on_drop(frame)
        return accepted

    def kick(self, now: int) -> None:
        """Start a transmission if the link is idle and a frame is eligible."""
        if self.busy:
            return
        self._update_credit(now)
        frame = select_next_frame(self.queues, self.credit)
        if frame is None:
            if self.queues.avb_q and self._wakeup is None:
                # AVB gated on negative credit with nothing else to send:
                # wake exactly when credit reaches zero.
                self._wakeup = self.sim.schedule(
                    self.name, "credit_ready", now + self.credit.replenish_delay()
                )
            return
        is_avb = self.queues.is_avb(frame)
        (self.queues.avb_q if is_avb else self.queues.be_q).popleft()
        if self._wakeup is not None:
            self.sim.cancel(self._wakeup)
            self._wakeup = None
        for hop in reversed(frame.hops):
            if hop[0] == self.name and hop[2] is None:
                hop[2] = now
                break
        self._tx_frame = frame
        self._tx_is_avb = is_avb
        bits = wire_bits(frame.payload_len, tagged=is_avb)
        self.tx_log.append((now, bits, is_avb))
        self.sim.schedule(self.name, "tx_complete", now + eth_wire_time(frame.payload_len, is_avb, self.rate))
        self._trace_depth(now)

    def _handle(self, ev: Event) -> None:
        if ev.kind == "tx_complete":
            # Integrate credit over the transmit window before clearing the
            # transmit state, or the send-slope drain would be lost.
            self._update_credit(ev.fire_at)
            frame = self._tx_frame
            self._tx_frame = None
            self._tx_is_avb = False
            self.transmitted += 1
            self._trace_depth(ev.fire_at)
            if self.peer is not None:
                self.peer.on_frame_received(frame, ev.fire_at)
            self.kick(ev.fire_at)
        elif ev.kind == "credit_ready":
            self._wakeup = None
            self.kick(ev.fire_at)
        else:
            raise EthError(f"unexpected event kind {ev.kind!r}")

    def _update_credit(self, now: int) -> None:
        self.credit.update(now, self._tx_is_avb and self.busy, not self.queues.avb_q)

    def _trace_depth(self, now: int) -> None:
        if self.depth_trace is not None:
            self.depth_trace(now, self.name, len(self.queues.avb_q), len(self.queues.be_q), self.credit.credit)

    def accounting(self) -> dict[str, int]:
        """Exact frame conservation figures for this port."""
        return {
            "offered": self.queues.offered,
            "transmitted": self.transmitted,
            "queued": self.queued_frames(),
            "in_service": 1 if self.busy else 0,
            "dropped": self.queues.dropped,
        }


class Switch:
    """Store-and-forward switch: fixed per-frame processing delay, static
    destination-to-port forwarding table, one shaped EgressPort per neighbor."""

    def __init__(self, sim: Simulator, name: str, forwarding_latency: int):
        self.sim = sim
        self.name = name
        self.forwarding_latency = forwarding_latency
        self.ports: dict[str, EgressPort] = {}
        self.routes: dict[str, str] = {}  # dst node -> port name
        self.unknown_dst_drops = 0
        self.pending: set[EthFrame] = set()  # received, not yet enqueued at egress
        sim.register(name, self._handle)

    def add_port(self, port: EgressPort) -> None:
        self.ports[port.name] = port

    def set_route(self, dst: str, port_name: str) -> None:
        if port_name not in self.ports:
            raise EthError(f"switch {self.name!r} has no port {port_name!r}")
        self.routes[dst] = port_name

    def on_frame_received(self, frame: EthFrame, now: int) -> None:
        # Eligible for egress only after full reception; the processing
        # delay then covers lookup and internal transfer.
        self.pending.add(frame)
        self.sim.schedule(self.name, "forward", now + self.forwarding_latency, payload=frame)

    def _handle(self, ev: Event) -> None:
        if ev.kind != "forward":
            raise EthError(f"unexpected event kind {ev.kind!r}")
        frame: EthFrame = ev.payload
        self.pending.discard(frame)
        port_name = self.routes.get(frame.dst)
        if port_name is None:
            self.unknown_dst_drops += 1
            return
        self.ports[port_name].enqueue(frame, ev.fire_at)
