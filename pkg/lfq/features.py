"""
Streaming controller inputs: six queue signals, each smoothed by ten EWMAs.

Weights are 2^-k for k = 4..13. Units are picked so that every input has a
comparable magnitude: packets for queue sizes and caps, packets per
millisecond for rates and seconds for the time since the last loss.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from lfq.config import TICKS_PER_MS, TICKS_PER_SECOND, FeatureParams

WEIGHT_EXPONENTS = np.arange(4, 14)
WEIGHTS = 2.0 ** -WEIGHT_EXPONENTS
NUM_WEIGHTS = len(WEIGHTS)

BASE_SIGNALS = (
    "queue_size",
    "queue_size_std",
    "max_buffer_size",
    "rate_in",
    "rate_out",
    "time_since_last_loss",
)
FEATURE_NAMES: List[str] = [f"{signal}_k{k}" for signal in BASE_SIGNALS for k in WEIGHT_EXPONENTS]
NUM_FEATURES = len(FEATURE_NAMES)


def warmup_thresholds(rule: str) -> np.ndarray:
    """Samples needed before the average with weight 2^-k may be used."""
    if rule == "exponential":
        return 2 ** WEIGHT_EXPONENTS
    return WEIGHT_EXPONENTS.copy()


@dataclass
class EwmaSet:
    """
    Ten exponentially weighted averages of one signal.

    The means start at zero and follow m <- (1 - w) m + w x. Readers use
    corrected(), which divides out the weight still resting on the zero start,
    so a constant input reads back unbiased from the first sample on.
    """
    mean: np.ndarray = field(default_factory=lambda: np.zeros(NUM_WEIGHTS))
    var: np.ndarray = field(default_factory=lambda: np.zeros(NUM_WEIGHTS))
    count: int = 0

    def push(self, x: float) -> None:
        diff = x - self.corrected() if self.count else np.zeros(NUM_WEIGHTS)
        self.mean += WEIGHTS * (x - self.mean)
        self.var = (1.0 - WEIGHTS) * (self.var + WEIGHTS * diff * diff)
        self.count += 1

    def corrected(self) -> np.ndarray:
        """Means normalized by the accumulated weight 1 - (1 - w)^count; zero before any sample."""
        if self.count == 0:
            return np.zeros(NUM_WEIGHTS)
        return self.mean / -np.expm1(self.count * np.log1p(-WEIGHTS))


@dataclass
class EwmaBank:
    """Feature state of one flow's queue."""
    start_time: int = 0
    params: FeatureParams = field(default_factory=FeatureParams)
    queue: EwmaSet = field(default_factory=EwmaSet)
    cap: EwmaSet = field(default_factory=EwmaSet)
    interarrival: EwmaSet = field(default_factory=EwmaSet)
    interdeparture: EwmaSet = field(default_factory=EwmaSet)
    loss_age: EwmaSet = field(default_factory=EwmaSet)
    last_arrival: Optional[int] = None
    last_departure: Optional[int] = None
    last_drop_time: Optional[int] = None

    def __post_init__(self) -> None:
        if self.last_drop_time is None:
            self.last_drop_time = self.start_time
        self._thresholds = warmup_thresholds(self.params.warmup)

    def update_on_enqueue(self, now: int, queue_len: int, cap: Optional[int]) -> None:
        """Sample the arrival side; called for every packet reaching the queue."""
        self.queue.push(float(queue_len))
        self.cap.push(float(cap if cap is not None else queue_len))
        if self.last_arrival is not None:
            self.interarrival.push((now - self.last_arrival) / TICKS_PER_MS)
        self.last_arrival = now
        self.loss_age.push((now - self.last_drop_time) / TICKS_PER_SECOND)

    def update_on_dequeue(self, now: int) -> None:
        if self.last_departure is not None:
            self.interdeparture.push((now - self.last_departure) / TICKS_PER_MS)
        self.last_departure = now

    def update_on_drop(self, now: int) -> None:
        self.last_drop_time = now

    def snapshot(self, now: int) -> np.ndarray:
        """The 60-entry feature vector, base-signal-major, k ascending."""
        return np.concatenate([
            self.queue.corrected(),
            np.sqrt(np.maximum(self.queue.var, 0.0)),
            self.cap.corrected(),
            self._rate(self.interarrival),
            self._rate(self.interdeparture),
            self.loss_age.corrected(),
        ])

    def _rate(self, ewma: EwmaSet) -> np.ndarray:
        mean = ewma.corrected()
        usable = (ewma.count >= self._thresholds) & (mean > 0.0)
        rates = np.zeros(NUM_WEIGHTS)
        np.divide(1.0, mean, out=rates, where=usable)
        return rates
