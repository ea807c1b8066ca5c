"""1-Mbps CAN bus model: min-ID arbitration, frame wire time, broadcast delivery.

The bus is non-preemptive: one frame occupies the wire at a time, and the
3-bit interframe space is folded into the frame time.  Error frames and
retransmission are not modeled.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .core import Event, SimulationError, Simulator

CAN_MAX_ID = 0x7FF
CAN_MAX_DLC = 8

# Standard-format data frame: SOF + 11-bit ID + RTR + control + CRC + ACK + EOF
# = 47 bits around the payload, plus the 3-bit interframe space.
FRAME_OVERHEAD_BITS = 47
INTERFRAME_BITS = 3
# Bits subject to stuffing (SOF through CRC sequence).
STUFFABLE_OVERHEAD_BITS = 34

STUFFING_NONE = "none"
STUFFING_WORST_CASE = "worst_case"
STUFFING_MODELS = (STUFFING_NONE, STUFFING_WORST_CASE)


class CanError(SimulationError):
    pass


class InvalidDlc(CanError):
    pass


class InvalidCanId(CanError):
    pass


class DuplicateIdContention(CanError):
    """Two distinct nodes contend for the bus with the same identifier."""


@dataclass(frozen=True)
class CanMessage:
    """One 11-bit-ID CAN data frame request.

    ``created_at`` is stamped when the sender requested transmission, so
    end-to-end latency includes CAN queueing and arbitration.  ``source`` is
    provenance only and excluded from equality (it is not carried on the
    packed Ethernet wire format).
    """

    can_id: int
    payload: bytes
    created_at: int
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if not 0 <= self.can_id <= CAN_MAX_ID:
            raise InvalidCanId(f"can_id {self.can_id:#x} outside 11-bit range")
        if len(self.payload) > CAN_MAX_DLC:
            raise InvalidDlc(f"payload of {len(self.payload)} bytes exceeds dlc 8")
        if self.created_at < 0:
            raise CanError("created_at must be a non-negative timestamp")

    @property
    def dlc(self) -> int:
        return len(self.payload)


def worst_case_stuff_bits(dlc: int) -> int:
    return (STUFFABLE_OVERHEAD_BITS + 8 * dlc - 1) // 4


def can_frame_time(dlc: int, bitrate: int, stuffing_model: str = STUFFING_NONE) -> int:
    """Wire time in ns of one data frame plus interframe space, rounded up."""
    if not 0 <= dlc <= CAN_MAX_DLC:
        raise InvalidDlc(f"dlc must be 0..8, got {dlc}")
    if bitrate <= 0:
        raise CanError(f"bitrate must be positive, got {bitrate}")
    if stuffing_model not in STUFFING_MODELS:
        raise CanError(f"unknown stuffing model {stuffing_model!r}")
    bits = FRAME_OVERHEAD_BITS + 8 * dlc + INTERFRAME_BITS
    if stuffing_model == STUFFING_WORST_CASE:
        bits += worst_case_stuff_bits(dlc)
    return -(-bits * 1_000_000_000 // bitrate)


def arbitrate(pending: list[CanMessage] | set[CanMessage]) -> CanMessage:
    """Pick and remove the winner (numerically smallest can_id) from pending.

    Raises DuplicateIdContention when two distinct nodes hold the winning
    identifier; that situation is undefined on a real bus.
    """
    if not pending:
        raise CanError("arbitrate called with no contenders")
    winner = min(pending, key=lambda m: m.can_id)
    rivals = [m for m in pending if m.can_id == winner.can_id]
    if len({m.source for m in rivals}) > 1:
        raise DuplicateIdContention(
            f"nodes {sorted(m.source for m in rivals)} contend with id {winner.can_id:#x}"
        )
    pending.remove(winner)
    return winner


class CanBus:
    """Broadcast bus entity.  Attach nodes, then call transmit_request.

    Each node has a FIFO transmit queue; only the head message takes part in
    arbitration.  On completion the frame is delivered to every *other*
    attached node's receive callback.
    """

    def __init__(
        self,
        sim: Simulator,
        name: str = "canbus",
        bitrate: int = 1_000_000,
        stuffing_model: str = STUFFING_NONE,
        node_queue_cap: int | None = None,
    ):
        if stuffing_model not in STUFFING_MODELS:
            raise CanError(f"unknown stuffing model {stuffing_model!r}")
        self.sim = sim
        self.name = name
        self.bitrate = bitrate
        self.stuffing_model = stuffing_model
        self.node_queue_cap = node_queue_cap
        self.busy_until = 0
        self.busy_ns = 0
        self.frames_delivered = 0
        self.overflows: dict[str, int] = {}
        self._queues: dict[str, deque[CanMessage]] = {}
        self._receivers: dict[str, Callable[[CanMessage, int], None] | None] = {}
        self._transmitting: CanMessage | None = None
        self._arb_scheduled = False
        sim.register(name, self._handle)

    def attach(self, node_id: str, on_receive: Callable[[CanMessage, int], None] | None = None) -> None:
        if node_id in self._queues:
            raise CanError(f"node {node_id!r} attached twice")
        self._queues[node_id] = deque()
        self._receivers[node_id] = on_receive
        self.overflows[node_id] = 0

    def transmit_request(self, node_id: str, msg: CanMessage) -> bool:
        """Queue msg at the node; returns False if the node cap dropped it."""
        if node_id not in self._queues:
            raise CanError(f"node {node_id!r} not attached to bus {self.name!r}")
        if msg.source != node_id:
            raise CanError(f"message source {msg.source!r} does not match node {node_id!r}")
        q = self._queues[node_id]
        if self.node_queue_cap is not None and len(q) >= self.node_queue_cap:
            self.overflows[node_id] += 1
            return False
        q.append(msg)
        self._schedule_arbitration()
        return True

    def pending_heads(self) -> list[CanMessage]:
        # A list, not a set: messages with equal content from different nodes
        # must both contend (equality ignores source).
        return [q[0] for q in self._queues.values() if q]

    def queued_messages(self) -> int:
        n = sum(len(q) for q in self._queues.values())
        return n + (1 if self._transmitting is not None else 0)

    def _schedule_arbitration(self) -> None:
        # Arbitration runs as a same-timestamp event so that every request
        # landing at this instant contends, matching SOF behavior.
        if self._arb_scheduled or self._transmitting is not None:
            return
        self._arb_scheduled = True
        self.sim.schedule(self.name, "arbitrate", max(self.sim.now, self.busy_until))

    def _handle(self, ev: Event) -> None:
        if ev.kind == "arbitrate":
            self._arb_scheduled = False
            self._start_transmission(ev.fire_at)
        elif ev.kind == "tx_complete":
            self._complete_transmission(ev.fire_at)
        else:
            raise CanError(f"unexpected event kind {ev.kind!r}")

    def _start_transmission(self, now: int) -> None:
        if self._transmitting is not None:
            return
        heads = self.pending_heads()
        if not heads:
            return
        winner = arbitrate(heads)
        self._queues[winner.source].popleft()
        self._transmitting = winner
        duration = can_frame_time(winner.dlc, self.bitrate, self.stuffing_model)
        self.busy_until = now + duration
        self.sim.schedule(self.name, "tx_complete", self.busy_until)

    def _complete_transmission(self, now: int) -> None:
        msg = self._transmitting
        self._transmitting = None
        self.frames_delivered += 1
        self.busy_ns += can_frame_time(msg.dlc, self.bitrate, self.stuffing_model)
        for node_id, receiver in self._receivers.items():
            if node_id != msg.source and receiver is not None:
                receiver(msg, now)
        # Receivers may have queued replies at this same instant; arbitrate
        # among everything pending now.
        self._schedule_arbitration()
