"""
Per-flow queue disciplines at the bottleneck.

Three flavours share one QueueState: a tail-drop queue whose cap is moved by
the learned controller (LFQ), a fixed-cap FIFO and an unbounded queue managed
by the CoDel control law on dequeue. All times are integer microsecond ticks.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, List, Optional, Tuple

from lfq.errors import ConfigurationError
from lfq.transport import Packet

# CoDel constants (ticks)
CODEL_TARGET = 5_000
CODEL_INTERVAL = 100_000
CODEL_REENTRY_WINDOW = 16 * CODEL_INTERVAL

# Cap the learned controller starts from before its first inference
LFQ_INITIAL_CAP = 1


class EnqueueResult(str, Enum):
    ACCEPTED = "Accepted"
    DROPPED = "Dropped"


@dataclass(frozen=True)
class QdiscKind:
    """Which queue discipline runs at the bottleneck."""
    name: str
    cap: Optional[int] = None

    LFQ = "lfq"
    FIFO = "fifo"
    FQ_CODEL = "fq-codel"

    @classmethod
    def from_flag(cls, text: str) -> 'QdiscKind':
        """
        Parse a --qdisc flag value.

        Args:
            text: one of lfq, fifo:<cap>, fq-codel

        Returns:
            QdiscKind instance

        Raises:
            ConfigurationError: If the value cannot be parsed
        """
        value = text.strip().lower()
        if value == cls.LFQ:
            return cls(cls.LFQ)
        if value == cls.FQ_CODEL:
            return cls(cls.FQ_CODEL)
        if value.startswith(f"{cls.FIFO}:"):
            _, _, cap_text = value.partition(":")
            try:
                cap = int(cap_text)
            except ValueError:
                raise ConfigurationError(f"FIFO qdisc needs an integer cap, e.g. fifo:100 (got '{text}')")
            if cap < 1:
                raise ConfigurationError(f"FIFO cap must be positive (got {cap})")
            return cls(cls.FIFO, cap)
        raise ConfigurationError(f"Unknown qdisc '{text}' (expected lfq, fifo:<cap> or fq-codel)")

    @property
    def label(self) -> str:
        return f"{self.name}:{self.cap}" if self.name == self.FIFO else self.name

    @property
    def is_codel(self) -> bool:
        return self.name == self.FQ_CODEL

    @property
    def is_learned(self) -> bool:
        return self.name == self.LFQ


@dataclass
class CodelState:
    first_above_time: int = 0
    drop_next: int = 0
    drop_count: int = 0
    last_count: int = 0
    dropping: bool = False


@dataclass
class QueueState:
    """Packets waiting in front of the bottleneck link."""
    kind: QdiscKind
    cap: Optional[int] = None
    packets: Deque[Packet] = field(default_factory=deque)
    drops: int = 0
    enqueue_drops: int = 0
    codel_drops: int = 0
    last_drop_time: int = 0
    codel: CodelState = field(default_factory=CodelState)

    @classmethod
    def create(cls, kind: QdiscKind) -> 'QueueState':
        if kind.is_learned:
            return cls(kind=kind, cap=LFQ_INITIAL_CAP)
        if kind.is_codel:
            return cls(kind=kind, cap=None)
        return cls(kind=kind, cap=kind.cap)

    def __len__(self) -> int:
        return len(self.packets)

    def enqueue(self, packet: Packet, now: int) -> EnqueueResult:
        """Tail-drop admission against the current cap."""
        if self.cap is not None and len(self.packets) >= self.cap:
            self._record_drop(now)
            self.enqueue_drops += 1
            return EnqueueResult.DROPPED
        packet.enqueue_time = now
        self.packets.append(packet)
        return EnqueueResult.ACCEPTED

    def set_cap(self, new_cap: int) -> None:
        """Change the cap; already queued packets are never evicted."""
        if new_cap < 1:
            raise ValueError(f"cap must be >= 1, got {new_cap}")
        self.cap = int(new_cap)

    def dequeue(self, now: int) -> Tuple[Optional[Packet], List[Packet]]:
        """
        Take the next packet for the link.

        Returns:
            The packet to transmit (or None) and the packets CoDel dropped
        """
        if self.kind.is_codel:
            return self.dequeue_codel(now)
        if not self.packets:
            return None, []
        return self.packets.popleft(), []

    def dequeue_codel(self, now: int) -> Tuple[Optional[Packet], List[Packet]]:
        """CoDel control law: drop while the sojourn stays above target for an interval."""
        state = self.codel
        dropped: List[Packet] = []
        packet, ok_to_drop = self._codel_head(now)

        if packet is None:
            state.dropping = False
            return None, dropped

        if state.dropping:
            if not ok_to_drop:
                state.dropping = False
            else:
                while now >= state.drop_next and state.dropping:
                    dropped.append(packet)
                    self._record_drop(now)
                    self.codel_drops += 1
                    state.drop_count += 1
                    packet, ok_to_drop = self._codel_head(now)
                    if not ok_to_drop:
                        state.dropping = False
                    else:
                        state.drop_next = codel_control_law(state.drop_next, state.drop_count)
        elif ok_to_drop:
            dropped.append(packet)
            self._record_drop(now)
            self.codel_drops += 1
            packet, ok_to_drop = self._codel_head(now)
            state.dropping = True
            delta = state.drop_count - state.last_count
            state.drop_count = 1
            if delta > 1 and now - state.drop_next < CODEL_REENTRY_WINDOW:
                state.drop_count = delta
            state.drop_next = codel_control_law(now, state.drop_count)
            state.last_count = state.drop_count

        return packet, dropped

    def _codel_head(self, now: int) -> Tuple[Optional[Packet], bool]:
        if not self.packets:
            self.codel.first_above_time = 0
            return None, False

        packet = self.packets.popleft()
        sojourn = now - packet.enqueue_time
        if sojourn < CODEL_TARGET or len(self.packets) < 2:
            self.codel.first_above_time = 0
            return packet, False

        if self.codel.first_above_time == 0:
            self.codel.first_above_time = now + CODEL_INTERVAL
            return packet, False
        return packet, now >= self.codel.first_above_time

    def _record_drop(self, now: int) -> None:
        self.drops += 1
        self.last_drop_time = now


def codel_control_law(t: int, count: int) -> int:
    """Next drop time: interval / sqrt(count) after t."""
    return t + int(CODEL_INTERVAL / math.sqrt(max(count, 1)))


def round_cap(controller_output: float) -> int:
    """Round a real-valued controller output to an integer cap of at least 1."""
    return max(1, int(math.floor(controller_output + 0.5)))
