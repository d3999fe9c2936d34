"""
Deterministic discrete-event engine and the single-bottleneck flow world.

One bulk TCP sender pushes packets into the queue under study, which feeds a
link of fixed rate. Packets reach the receiver and ACKs travel back with no
reverse queuing. The queue is the only buffer on the path. Time is kept in
integer microsecond ticks; events with equal timestamps fire in insertion
order.

A SimState owns every piece of mutable state (clock, event heap, RNG, sender,
receiver, queue, feature bank, trace), so deep-copying it forks the world.
"""

import copy
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from lfq.config import DEFAULT_SAMPLE_INTERVAL, PACKET_SIZE_BYTES, TICKS_PER_SECOND, FeatureParams, TcpParams
from lfq.errors import SimulationError
from lfq.features import EwmaBank
from lfq.qdisc import EnqueueResult, QdiscKind, QueueState, round_cap
from lfq.transport import Cca, Packet, Receiver, SenderState

logger = structlog.get_logger(__name__)

Controller = Callable[[np.ndarray], float]


def to_ticks(seconds: float) -> int:
    """Convert seconds to integer microsecond ticks."""
    return int(round(seconds * TICKS_PER_SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


class EventKind(str, Enum):
    PACKET_ARRIVAL = "packet-arrival-at-queue"
    LINK_TX_COMPLETE = "link-transmit-complete"
    ACK_DELIVERY = "ack-delivery"
    FLOW_END = "flow-end"
    INFERENCE_DUE = "inference-due"
    RETRANSMIT_GUARD = "retransmit-guard"


@dataclass(frozen=True)
class Event:
    fire_at: int
    kind: EventKind
    payload: Any = None


class FlowConfig(BaseModel):
    """One training or evaluation episode."""
    model_config = ConfigDict(frozen=True)

    bandwidth_mbps: float = Field(..., gt=0.0)
    delay_ms: float = Field(..., gt=0.0)
    duration_s: float = Field(..., gt=0.0)
    cca: Cca = Cca.NEW_RENO
    seed: int = 0
    alpha: float = Field(0.01, ge=0.0)
    sample_interval: int = Field(DEFAULT_SAMPLE_INTERVAL, ge=1)
    flow_id: int = 0

    @property
    def service_ticks(self) -> int:
        """Link transmission time of one packet."""
        return max(1, int(round(PACKET_SIZE_BYTES * 8 / (self.bandwidth_mbps * 1e6) * TICKS_PER_SECOND)))

    @property
    def rtt_propagation_ticks(self) -> int:
        """`delay` is the round-trip propagation delay."""
        return to_ticks(self.delay_ms / 1000.0)

    @property
    def duration_ticks(self) -> int:
        return to_ticks(self.duration_s)

    @property
    def bdp_packets(self) -> float:
        """Bandwidth x round-trip propagation delay, in packets."""
        return self.bandwidth_mbps * 1e6 * self.delay_ms / 1000.0 / 8 / PACKET_SIZE_BYTES


@dataclass
class TraceSink:
    """In-memory trace rows: (ticks, event, queue_len, cap, cwnd, delivered_bytes)."""
    rows: List[Tuple[int, str, int, Optional[int], float, int]] = field(default_factory=list)

    def record(self, now: int, event: str, queue_len: int, cap: Optional[int],
               cwnd: float, delivered_bytes: int) -> None:
        self.rows.append((now, event, queue_len, cap, cwnd, delivered_bytes))


@dataclass(frozen=True)
class WindowMark:
    time: int
    delivered_bytes: int
    queue_area: int
    cap_area: int
    drops: int


@dataclass(frozen=True)
class WindowStats:
    """Link and queue measurements between a mark and the current clock."""
    start: int
    end: int
    throughput_mbps: float
    avg_queue: float
    max_queue: int
    drops: int
    mean_cap: Optional[float]


@dataclass
class Measurements:
    """Running integrals of queue length and cap over time."""
    delivered_bytes: int = 0
    delivered_packets: int = 0
    queue_area: int = 0
    cap_area: int = 0
    last_update: int = 0
    window_max_queue: int = 0

    def advance(self, now: int, queue_len: int, cap: Optional[int]) -> None:
        elapsed = now - self.last_update
        if elapsed > 0:
            self.queue_area += queue_len * elapsed
            self.cap_area += (cap or 0) * elapsed
            self.last_update = now


class SimState:
    """Complete, clonable simulation world of one flow."""

    def __init__(self, config: FlowConfig, qdisc: QdiscKind,
                 controller: Optional[Controller] = None,
                 tcp: Optional[TcpParams] = None,
                 feature_params: Optional[FeatureParams] = None,
                 collect_features: Optional[bool] = None,
                 trace: bool = False,
                 record_events: bool = False):
        self.config = config
        self.qdisc = qdisc
        self.clock = 0
        self.events: List[Tuple[int, int, EventKind, Any]] = []
        self.next_event_seq = 0
        self.cancelled: Set[int] = set()
        self.rng = np.random.Generator(np.random.PCG64(config.seed))

        base_rtt = config.rtt_propagation_ticks + config.service_ticks
        self.sender = SenderState.create(config.cca, tcp or TcpParams(), float(base_rtt))
        self.receiver = Receiver()
        self.queue = QueueState.create(qdisc)
        self.link_packet: Optional[Packet] = None
        self.pending_arrivals = 0
        self.flow_ended = False
        self.guard_pending = False

        if collect_features is None:
            collect_features = qdisc.is_learned
        self.features = EwmaBank(start_time=0, params=feature_params or FeatureParams()) \
            if collect_features else None
        self.controller = controller
        self.arrivals = 0
        self.last_output: Optional[float] = None
        self.inferences = 0

        self.measurements = Measurements()
        self.trace = TraceSink() if trace else None
        self.event_log: Optional[List[Tuple[int, str]]] = [] if record_events else None

        self._handlers: Dict[EventKind, Callable[[Any], None]] = {
            EventKind.PACKET_ARRIVAL: self._on_packet_arrival,
            EventKind.LINK_TX_COMPLETE: self._on_link_tx_complete,
            EventKind.ACK_DELIVERY: self._on_ack_delivery,
            EventKind.FLOW_END: self._on_flow_end,
            EventKind.INFERENCE_DUE: self._on_inference_due,
            EventKind.RETRANSMIT_GUARD: self._on_retransmit_guard,
        }

    # ------------------------------------------------------------------
    # Engine

    def schedule(self, event: Event) -> int:
        """Insert an event; returns its sequence number (usable with cancel)."""
        if event.fire_at < self.clock:
            raise SimulationError(
                f"cannot schedule {event.kind.value} at {event.fire_at} before clock {self.clock}",
                sim_time=to_seconds(self.clock),
            )
        seq = self.next_event_seq
        self.next_event_seq += 1
        heapq.heappush(self.events, (event.fire_at, seq, event.kind, event.payload))
        return seq

    def cancel(self, event_seq: int) -> None:
        self.cancelled.add(event_seq)

    def run_until(self, t_stop: int) -> None:
        """Fire every event with fire_at <= t_stop in order, then set the clock to t_stop."""
        if t_stop < self.clock:
            raise SimulationError(
                f"run_until({t_stop}) is before the clock {self.clock}",
                sim_time=to_seconds(self.clock),
            )
        events = self.events
        while events and events[0][0] <= t_stop:
            fire_at, seq, kind, payload = heapq.heappop(events)
            if seq in self.cancelled:
                self.cancelled.discard(seq)
                continue
            self.clock = fire_at
            if self.event_log is not None:
                self.event_log.append((fire_at, kind.value))
            self._handlers[kind](payload)
        self.clock = t_stop

    def _after(self, delay: int, kind: EventKind, payload: Any = None) -> int:
        return self.schedule(Event(self.clock + delay, kind, payload))

    # ------------------------------------------------------------------
    # Flow

    def start(self) -> None:
        """Schedule the end of the flow and the sender's initial window."""
        self.schedule(Event(self.config.duration_ticks, EventKind.FLOW_END, self.config.flow_id))
        self._transmit(self.sender.start())

    def set_cap(self, new_cap: int, event: str = "cap_change") -> None:
        """Move the queue cap, keeping the cap integral and the trace up to date."""
        if new_cap == self.queue.cap:
            return
        self._advance_measurements()
        self.queue.set_cap(new_cap)
        self._trace(event)

    def mark(self) -> WindowMark:
        """Start a measurement window at the current clock."""
        self._advance_measurements()
        self.measurements.window_max_queue = len(self.queue)
        return WindowMark(
            time=self.clock,
            delivered_bytes=self.measurements.delivered_bytes,
            queue_area=self.measurements.queue_area,
            cap_area=self.measurements.cap_area,
            drops=self.queue.drops,
        )

    def window_stats(self, mark: WindowMark) -> WindowStats:
        self._advance_measurements()
        m = self.measurements
        ticks = self.clock - mark.time
        if ticks <= 0:
            raise SimulationError("measurement window is empty", sim_time=to_seconds(self.clock))
        seconds = to_seconds(ticks)
        mean_cap = None
        if self.queue.cap is not None:
            mean_cap = (m.cap_area - mark.cap_area) / ticks
        return WindowStats(
            start=mark.time,
            end=self.clock,
            throughput_mbps=(m.delivered_bytes - mark.delivered_bytes) * 8 / seconds / 1e6,
            avg_queue=(m.queue_area - mark.queue_area) / ticks,
            max_queue=m.window_max_queue,
            drops=self.queue.drops - mark.drops,
            mean_cap=mean_cap,
        )

    def network_packets(self) -> int:
        """Packets currently between the sender and the receiver."""
        return self.pending_arrivals + len(self.queue) + (1 if self.link_packet is not None else 0)

    def _transmit(self, seqs: List[int]) -> None:
        for seq in seqs:
            self.pending_arrivals += 1
            self._after(0, EventKind.PACKET_ARRIVAL, Packet(seq=seq, sent_at=self.clock,
                                                             flow_id=self.config.flow_id))
        if not self.guard_pending and self.sender.outstanding > 0:
            self.guard_pending = True
            self._after(int(math.ceil(self.sender.guard_interval)), EventKind.RETRANSMIT_GUARD)

    def _on_packet_arrival(self, packet: Packet) -> None:
        self.pending_arrivals -= 1
        now = self.clock
        self._advance_measurements()
        result = self.queue.enqueue(packet, now)
        self.arrivals += 1

        if result == EnqueueResult.DROPPED:
            if self.features is not None:
                self.features.update_on_drop(now)
            self._trace("drop")
        else:
            self._trace("enqueue")
        if self.features is not None:
            self.features.update_on_enqueue(now, len(self.queue), self.queue.cap)

        if self.link_packet is None:
            self._start_transmission()
        if len(self.queue) > self.measurements.window_max_queue:
            self.measurements.window_max_queue = len(self.queue)

        if self.controller is not None and (self.arrivals - 1) % self.config.sample_interval == 0:
            self._after(0, EventKind.INFERENCE_DUE, self.arrivals)

    def _start_transmission(self) -> None:
        now = self.clock
        self._advance_measurements()
        packet, dropped = self.queue.dequeue(now)
        for _ in dropped:
            if self.features is not None:
                self.features.update_on_drop(now)
            self._trace("drop")
        if packet is None:
            return
        self.link_packet = packet
        if self.features is not None:
            self.features.update_on_dequeue(now)
        self._trace("dequeue")
        self._after(self.config.service_ticks, EventKind.LINK_TX_COMPLETE, packet)

    def _on_link_tx_complete(self, packet: Packet) -> None:
        self.link_packet = None
        self.measurements.delivered_bytes += packet.size
        self.measurements.delivered_packets += 1
        ack = self.receiver.on_packet(packet.seq, packet.size)
        self._after(self.config.rtt_propagation_ticks, EventKind.ACK_DELIVERY, (ack, packet.sent_at))
        self._start_transmission()

    def _on_ack_delivery(self, payload: Tuple[int, int]) -> None:
        if self.flow_ended:
            return
        ack, echo = payload
        self._transmit(self.sender.on_ack(ack, self.clock, echo))

    def _on_retransmit_guard(self, _payload: Any) -> None:
        self.guard_pending = False
        if self.flow_ended:
            return
        self._transmit(self.sender.on_guard(self.clock))
        if not self.guard_pending and self.sender.outstanding > 0:
            fire_at = max(self.clock + 1,
                          self.sender.last_progress + int(math.ceil(self.sender.guard_interval)))
            self.guard_pending = True
            self.schedule(Event(fire_at, EventKind.RETRANSMIT_GUARD))

    def _on_inference_due(self, _payload: Any) -> None:
        if self.controller is None:
            return
        output = float(self.controller(self.features.snapshot(self.clock)))
        self.last_output = output
        self.inferences += 1
        self._trace("inference", cap=round_cap(output))
        self.set_cap(round_cap(output))

    def _on_flow_end(self, _payload: Any) -> None:
        self.flow_ended = True

    def _advance_measurements(self) -> None:
        self.measurements.advance(self.clock, len(self.queue), self.queue.cap)

    def _trace(self, event: str, cap: Optional[int] = None) -> None:
        if self.trace is None:
            return
        self.trace.record(
            self.clock, event, len(self.queue),
            cap if cap is not None else self.queue.cap,
            self.sender.cwnd, self.measurements.delivered_bytes,
        )


def build_simulation(config: FlowConfig, qdisc: QdiscKind, **kwargs: Any) -> SimState:
    """Create a SimState with its initial events scheduled."""
    state = SimState(config, qdisc, **kwargs)
    state.start()
    return state


def schedule(state: SimState, event: Event) -> SimState:
    state.schedule(event)
    return state


def run_until(state: SimState, t_stop: int) -> SimState:
    state.run_until(t_stop)
    return state


def fork(state: SimState) -> Tuple[SimState, SimState]:
    """
    Clone a world twice. The controller and the flow config are shared
    read-only; everything else is copied.
    """
    shared = {id(state.config): state.config}
    if state.controller is not None:
        shared[id(state.controller)] = state.controller
    first = copy.deepcopy(state, dict(shared))
    second = copy.deepcopy(state, dict(shared))
    return first, second
