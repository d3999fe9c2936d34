"""
Packet-level TCP senders (New Reno, BIC) and a cumulative-ACK receiver.

The sender always has data to send (bulk transfer). Windows and sequence
numbers count fixed-size packets; sequence numbers start at 1 and an ACK
carries the highest in-order sequence number seen by the receiver.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Set

from lfq.config import PACKET_SIZE_BYTES, TcpParams

# Gain of the smoothed RTT estimator
SRTT_GAIN = 1 / 8
GUARD_RTT_MULTIPLIER = 2


class Cca(str, Enum):
    """Congestion control algorithm of a flow."""
    NEW_RENO = "NewReno"
    BIC = "BIC"


class Phase(str, Enum):
    SLOW_START = "SlowStart"
    CONGESTION_AVOIDANCE = "CongestionAvoidance"
    FAST_RECOVERY = "FastRecovery"


@dataclass(slots=True)
class Packet:
    """A data packet travelling from the sender through the bottleneck queue."""
    seq: int
    sent_at: int
    size: int = PACKET_SIZE_BYTES
    enqueue_time: int = 0
    flow_id: int = 0


@dataclass
class BicState:
    w_max: float = 0.0
    w_min: float = 0.0
    s_max: float = 32.0
    s_min: float = 0.01
    beta: float = 0.7


@dataclass
class SenderState:
    """
    Congestion control state of one bulk TCP sender.

    cwnd keeps the exact post-decrease value during fast recovery; the extra
    packets allowed by duplicate ACKs are tracked separately in `inflation`.
    """
    cca: Cca
    params: TcpParams = field(default_factory=TcpParams)
    base_rtt: float = 0.0
    cwnd: float = 10.0
    ssthresh: float = math.inf
    phase: Phase = Phase.SLOW_START
    next_seq: int = 1
    high_ack: int = 0
    dup_acks: int = 0
    recover: int = 0
    inflation: float = 0.0
    bic: BicState = field(default_factory=BicState)
    round_end: int = 0
    bic_step: float = 0.0
    srtt: Optional[float] = None
    last_progress: int = 0
    packets_sent: int = 0
    retransmits: int = 0
    loss_events: int = 0

    @classmethod
    def create(cls, cca: Cca, params: TcpParams, base_rtt: float) -> 'SenderState':
        """Build a sender in slow start with the configured initial window."""
        return cls(
            cca=Cca(cca),
            params=params,
            base_rtt=base_rtt,
            cwnd=params.initial_cwnd,
            bic=BicState(s_max=params.bic_s_max, s_min=params.bic_s_min, beta=params.bic_beta),
        )

    @property
    def outstanding(self) -> int:
        """Packets sent but not cumulatively acknowledged."""
        return self.next_seq - 1 - self.high_ack

    @property
    def in_flight(self) -> float:
        """Sender's estimate of packets still in the network."""
        return max(self.outstanding - self.inflation, 0.0)

    @property
    def guard_interval(self) -> float:
        rtt = self.srtt if self.srtt is not None else self.base_rtt
        return GUARD_RTT_MULTIPLIER * max(rtt, self.base_rtt)

    def start(self) -> List[int]:
        """Initial burst at flow start."""
        return self._send_new_data()

    def on_ack(self, acked_seq: int, now: int, echo_sent_at: Optional[int] = None) -> List[int]:
        """
        Process one cumulative ACK.

        Args:
            acked_seq: Highest in-order sequence number at the receiver
            now: Current simulation time in ticks
            echo_sent_at: Send time of the packet that triggered the ACK

        Returns:
            Sequence numbers to transmit, retransmissions first
        """
        if echo_sent_at is not None:
            sample = now - echo_sent_at
            if self.srtt is None:
                self.srtt = float(sample)
            else:
                self.srtt += SRTT_GAIN * (sample - self.srtt)

        sends: List[int] = []
        if acked_seq > self.high_ack:
            newly_acked = acked_seq - self.high_ack
            self.high_ack = acked_seq
            self.dup_acks = 0
            self.last_progress = now

            if self.phase == Phase.FAST_RECOVERY:
                if acked_seq >= self.recover:
                    self.cwnd = max(self.ssthresh, 1.0)
                    self.inflation = 0.0
                    self.phase = Phase.CONGESTION_AVOIDANCE
                    self.round_end = self.high_ack
                else:
                    # Partial ACK: the next hole is lost as well
                    sends.append(self.high_ack + 1)
                    self.retransmits += 1
                    self.inflation = max(self.inflation - newly_acked + 1, 0.0)
            else:
                self._grow(newly_acked)

        elif acked_seq == self.high_ack and self.outstanding > 0:
            self.dup_acks += 1
            if self.phase == Phase.FAST_RECOVERY:
                self.inflation += 1
            elif self.dup_acks == self.params.dupack_threshold and self.high_ack >= self.recover:
                self.on_loss_detected()
                self.recover = self.next_seq - 1
                self.inflation = float(self.dup_acks)
                sends.append(self.high_ack + 1)
                self.retransmits += 1

        self.packets_sent += len(sends)
        sends.extend(self._send_new_data())
        return sends

    def on_loss_detected(self) -> None:
        """Apply the multiplicative decrease and enter fast recovery."""
        self.loss_events += 1
        if self.cca == Cca.BIC:
            self.bic.w_max = self.cwnd
            self.cwnd = max(self.cwnd * self.bic.beta, 1.0)
            self.bic.w_min = self.cwnd
            self.ssthresh = self.cwnd
        else:
            self.ssthresh = self.cwnd * self.params.reno_beta
            self.cwnd = max(self.ssthresh, 1.0)
        self.phase = Phase.FAST_RECOVERY

    def on_guard(self, now: int) -> List[int]:
        """Retransmit the lowest unacknowledged packet after a stall of 2 RTTs."""
        if self.outstanding <= 0 or now - self.last_progress < self.guard_interval:
            return []
        self.last_progress = now
        self.retransmits += 1
        self.packets_sent += 1
        return [self.high_ack + 1]

    def _grow(self, newly_acked: int) -> None:
        if self.cca == Cca.BIC and self.phase == Phase.CONGESTION_AVOIDANCE:
            if self.high_ack > self.round_end:
                self._begin_bic_round()
            self.cwnd += self.bic_step * newly_acked
            return

        for _ in range(newly_acked):
            if self.phase == Phase.SLOW_START:
                self.cwnd += 1.0
                if self.cwnd >= self.ssthresh:
                    self.phase = Phase.CONGESTION_AVOIDANCE
                    self.round_end = self.high_ack
                    if self.cca == Cca.BIC:
                        return
            else:
                self.cwnd += 1.0 / self.cwnd

    def _begin_bic_round(self) -> None:
        """Fix this RTT's BIC increment and spread it over the round's ACKs."""
        self.round_end = self.next_seq - 1
        self.bic.w_min = self.cwnd
        self.bic_step = bic_increment(self.cwnd, self.bic) / max(self.cwnd, 1.0)

    def _send_new_data(self) -> List[int]:
        window = math.floor(self.cwnd + self.inflation)
        sends = []
        while self.outstanding < window:
            sends.append(self.next_seq)
            self.next_seq += 1
        self.packets_sent += len(sends)
        return sends


def bic_increment(cwnd: float, bic: BicState) -> float:
    """Per-RTT window increase of BIC: binary search below w_max, max probing above."""
    if cwnd < bic.w_max:
        increment = min((bic.w_max - cwnd) / 2.0, bic.s_max)
    else:
        increment = min(cwnd - bic.w_max, bic.s_max)
    return max(increment, bic.s_min)


@dataclass
class Receiver:
    """Cumulative-ACK receiver; no delayed ACKs."""
    cumulative: int = 0
    out_of_order: Set[int] = field(default_factory=set)
    packets_received: int = 0
    bytes_received: int = 0

    def on_packet(self, seq: int, size: int = PACKET_SIZE_BYTES) -> int:
        """Accept a packet and return the ACK number to send back."""
        self.packets_received += 1
        self.bytes_received += size
        if seq == self.cumulative + 1:
            self.cumulative = seq
            while self.cumulative + 1 in self.out_of_order:
                self.cumulative += 1
                self.out_of_order.discard(self.cumulative)
        elif seq > self.cumulative + 1:
            self.out_of_order.add(seq)
        return self.cumulative
