"""Shared fixtures for the LFQ test suites."""

import pytest

from lfq.config import FlowRanges, TrainingConfig
from lfq.mlp import Mlp
from lfq.sim_core import FlowConfig
from lfq.transport import Cca

# Small network so controller-driven simulations stay fast
SMALL_SIZES = (60, 8, 8, 8, 1)


@pytest.fixture
def reno_flow() -> FlowConfig:
    return FlowConfig(bandwidth_mbps=10.0, delay_ms=10.0, duration_s=1.0, cca=Cca.NEW_RENO, seed=11)


@pytest.fixture
def bic_flow() -> FlowConfig:
    return FlowConfig(bandwidth_mbps=10.0, delay_ms=10.0, duration_s=1.0, cca=Cca.BIC, seed=12)


@pytest.fixture
def small_actor() -> Mlp:
    return Mlp.create(seed=3, sizes=SMALL_SIZES)


@pytest.fixture
def short_ranges() -> FlowRanges:
    return FlowRanges(bandwidth_mbps=(5.0, 10.0), delay_ms=(5.0, 10.0), duration_s=(0.4, 0.6))


@pytest.fixture
def offline_config(short_ranges) -> TrainingConfig:
    return TrainingConfig(mode="offline", flows=4, batch=2, seed=5, ranges=short_ranges)


@pytest.fixture
def online_config(short_ranges) -> TrainingConfig:
    return TrainingConfig(mode="online", flows=4, batch=2, seed=6, ranges=short_ranges, eval_every=1)
