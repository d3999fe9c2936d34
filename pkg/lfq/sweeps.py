"""
Evaluation experiments: parameter sweeps, qdisc comparisons and the
brute-force cap oracle.

Every experiment is an independent single-flow simulation, so grids run in a
process pool. Results are always returned in grid order.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, TypeVar

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lfq.config import FeatureParams, SweepConfig, TcpParams
from lfq.csvio import COMPARE_COLUMNS, ORACLE_COLUMNS, SWEEP_COLUMNS, write_rows
from lfq.errors import ConfigurationError
from lfq.mlp import Mlp
from lfq.qdisc import QdiscKind
from lfq.sim_core import FlowConfig, build_simulation, to_ticks
from lfq.trainer import EpisodeOutcome, RewardParams, compute_reward
from lfq.transport import Cca

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

BOTH_CCAS: Tuple[Cca, ...] = (Cca.NEW_RENO, Cca.BIC)
AGGREGATE_ROW = "aggregate"
ALL_CCAS = "all"


def map_ordered(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Apply fn to every item, in a process pool when workers > 1; output keeps input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation coefficient; NaN when either series is constant or too short."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"series lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        return float("nan")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class ControlledRun:
    """One evaluated flow."""
    config: FlowConfig
    qdisc: str
    outcome: EpisodeOutcome
    mean_cap: Optional[float]
    trace: Optional[list] = None


def run_controlled_flow(config: FlowConfig, qdisc: QdiscKind, actor: Optional[Mlp] = None,
                        tcp: TcpParams = TcpParams(), feature_params: FeatureParams = FeatureParams(),
                        measure_from_s: float = 0.0, trace: bool = False) -> ControlledRun:
    """
    Run a whole flow with the given queue discipline.

    Throughput and queue statistics cover [measure_from_s, end]; mean_cap is
    the time-weighted cap over the second half of the flow (or over the
    measured window when that starts later).

    Raises:
        ConfigurationError: If a learned queue is requested without an actor
    """
    if qdisc.is_learned and actor is None:
        raise ConfigurationError("the lfq qdisc needs --weights")
    controller = actor.predict if qdisc.is_learned else None
    state = build_simulation(config, qdisc, controller=controller, tcp=tcp,
                             feature_params=feature_params, trace=trace)
    end = config.duration_ticks
    measure_at = min(to_ticks(measure_from_s), end - 1)
    half = end // 2

    state.run_until(measure_at)
    start_mark = state.mark()
    first_max = 0
    if half > measure_at:
        state.run_until(half)
        first_max = state.window_stats(start_mark).max_queue
        cap_mark = state.mark()
    else:
        cap_mark = start_mark
    state.run_until(end)
    second = state.window_stats(cap_mark)
    total = state.window_stats(start_mark)

    params = RewardParams(alpha=config.alpha)
    outcome = EpisodeOutcome(
        throughput=total.throughput_mbps,
        avg_queue=total.avg_queue,
        max_queue=max(first_max, second.max_queue),
        reward=compute_reward(total.throughput_mbps, total.avg_queue, params),
        drops=total.drops,
    )
    return ControlledRun(
        config=config,
        qdisc=qdisc.label,
        outcome=outcome,
        mean_cap=second.mean_cap,
        trace=state.trace.rows if state.trace is not None else None,
    )


def experiment_seed(seed: int, index: int) -> int:
    """Flow seed of grid point index; equal across qdiscs so comparisons share randomness."""
    return int(np.random.default_rng([seed, index]).integers(0, 2 ** 63 - 1))


class SweepSpec(BaseModel):
    """A one-dimensional grid over bandwidth or delay, run for each CCA."""
    model_config = ConfigDict(frozen=True)

    vary: Literal["bandwidth", "delay"]
    points: int = Field(100, ge=2)
    low: float = Field(..., gt=0.0)
    high: float = Field(..., gt=0.0)
    fixed: float = Field(15.0, gt=0.0)
    ccas: Tuple[Cca, ...] = BOTH_CCAS
    qdisc: str = "lfq"
    weights: Optional[str] = None

    @model_validator(mode="after")
    def _check_range(self) -> "SweepSpec":
        if self.high < self.low:
            raise ValueError(f"sweep range is empty: ({self.low}, {self.high})")
        if not self.ccas:
            raise ValueError("at least one CCA is needed")
        return self

    @classmethod
    def from_config(cls, config: SweepConfig, vary: str, qdisc: str = "lfq",
                    weights: Optional[str] = None,
                    ccas: Sequence[Cca] = BOTH_CCAS) -> 'SweepSpec':
        """Take the grid bounds from the configured flow ranges."""
        if vary == "bandwidth":
            low, high = config.ranges.bandwidth_mbps
            fixed = config.fixed_delay_ms
        elif vary == "delay":
            low, high = config.ranges.delay_ms
            fixed = config.fixed_bandwidth_mbps
        else:
            raise ConfigurationError(f"--vary must be bandwidth or delay (got '{vary}')")
        return cls(vary=vary, points=config.points, low=low, high=high, fixed=fixed,
                   ccas=tuple(ccas), qdisc=qdisc, weights=weights)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.low, self.high, self.points)

    def flow_configs(self, config: SweepConfig) -> List[FlowConfig]:
        """Grid flows ordered CCA-major, then by grid point."""
        flows = []
        for cca in self.ccas:
            for i, value in enumerate(self.values):
                bandwidth, delay = (value, self.fixed) if self.vary == "bandwidth" else (self.fixed, value)
                flows.append(FlowConfig(
                    bandwidth_mbps=float(bandwidth),
                    delay_ms=float(delay),
                    duration_s=config.duration_s,
                    cca=cca,
                    seed=experiment_seed(config.seed, i),
                    alpha=config.alpha,
                    sample_interval=config.sample_interval,
                    flow_id=len(flows),
                ))
        return flows


@dataclass
class SweepResult:
    spec: SweepSpec
    runs: List[ControlledRun]

    def varied_value(self, run: ControlledRun) -> float:
        return run.config.bandwidth_mbps if self.spec.vary == "bandwidth" else run.config.delay_ms

    def runs_for(self, cca: Optional[Cca] = None) -> List[ControlledRun]:
        return [r for r in self.runs if cca is None or r.config.cca == cca]

    def correlation(self, cca: Optional[Cca] = None) -> float:
        """Correlation of the mean cap with the varied parameter."""
        runs = [r for r in self.runs_for(cca) if r.mean_cap is not None]
        if not runs:
            return float("nan")
        return pearson([self.varied_value(r) for r in runs], [r.mean_cap for r in runs])

    def mean_cap(self, cca: Optional[Cca] = None) -> float:
        caps = [r.mean_cap for r in self.runs_for(cca) if r.mean_cap is not None]
        return float(np.mean(caps)) if caps else float("nan")

    def rows(self) -> Iterator[Dict[str, object]]:
        for i, run in enumerate(self.runs):
            yield {
                "row": i,
                "cca": run.config.cca.value,
                "qdisc": run.qdisc,
                "bandwidth_mbps": run.config.bandwidth_mbps,
                "delay_ms": run.config.delay_ms,
                "duration_s": run.config.duration_s,
                "seed": run.config.seed,
                "throughput_mbps": run.outcome.throughput,
                "avg_queue": run.outcome.avg_queue,
                "max_queue": run.outcome.max_queue,
                "drops": run.outcome.drops,
                "reward": run.outcome.reward,
                "mean_cap": run.mean_cap,
            }
        groups: List[Tuple[str, Optional[Cca]]] = [(cca.value, cca) for cca in self.spec.ccas]
        groups.append((ALL_CCAS, None))
        for name, cca in groups:
            yield dict(aggregate_row(self.runs_for(cca)), cca=name, qdisc=self.spec.qdisc,
                       mean_cap=_nan_to_none(self.mean_cap(cca)),
                       cap_correlation=_nan_to_none(self.correlation(cca)))

    def write_csv(self, path: str) -> int:
        return write_rows(path, SWEEP_COLUMNS, self.rows())


def _nan_to_none(value: float) -> Optional[float]:
    return None if np.isnan(value) else value


def aggregate_row(runs: Sequence[ControlledRun]) -> Dict[str, object]:
    """Averages over a group of experiments, in sweep CSV column names."""
    return {
        "row": AGGREGATE_ROW,
        "throughput_mbps": float(np.mean([r.outcome.throughput for r in runs])),
        "avg_queue": float(np.mean([r.outcome.avg_queue for r in runs])),
        "max_queue": float(np.mean([r.outcome.max_queue for r in runs])),
        "drops": float(np.mean([r.outcome.drops for r in runs])),
        "reward": float(np.mean([r.outcome.reward for r in runs])),
    }


def run_sweep(spec: SweepSpec, config: SweepConfig, actor: Optional[Mlp] = None) -> SweepResult:
    """Run every grid flow of the sweep and collect the results in grid order."""
    qdisc = QdiscKind.from_flag(spec.qdisc)
    if qdisc.is_learned and actor is None:
        raise ConfigurationError("the lfq qdisc needs --weights")
    flows = spec.flow_configs(config)
    logger.info("sweep_started", vary=spec.vary, points=spec.points, qdisc=qdisc.label,
                experiments=len(flows), workers=config.workers)
    task = partial(run_controlled_flow, qdisc=qdisc, actor=actor, tcp=config.tcp,
                   feature_params=config.features, measure_from_s=config.measure_from_s)
    result = SweepResult(spec=spec, runs=map_ordered(task, flows, config.workers))
    for cca in spec.ccas:
        logger.info("sweep_summary", cca=cca.value, mean_cap=result.mean_cap(cca),
                    correlation=result.correlation(cca))
    return result


@dataclass(frozen=True)
class CompareEntry:
    """A queue discipline under comparison, with its controller when learned."""
    label: str
    qdisc: str
    actor: Optional[Mlp] = None


@dataclass(frozen=True)
class CompareRow:
    qdisc: str
    experiments: int
    avg_throughput_mbps: float
    avg_max_queue: float
    avg_queue: float


def run_compare(entries: Sequence[CompareEntry], config: SweepConfig,
                axes: Sequence[str] = ("bandwidth", "delay")) -> List[CompareRow]:
    """Run the bandwidth and delay sweeps for both CCAs under every entry."""
    if not entries:
        raise ConfigurationError("compare needs at least one --qdisc")
    rows = []
    for entry in entries:
        runs: List[ControlledRun] = []
        for axis in axes:
            spec = SweepSpec.from_config(config, axis, qdisc=entry.qdisc)
            runs.extend(run_sweep(spec, config, entry.actor).runs)
        agg = aggregate_row(runs)
        row = CompareRow(
            qdisc=entry.label,
            experiments=len(runs),
            avg_throughput_mbps=agg["throughput_mbps"],
            avg_max_queue=agg["max_queue"],
            avg_queue=agg["avg_queue"],
        )
        logger.info("compare_row", **row.__dict__)
        rows.append(row)
    return rows


def write_compare(path: str, rows: Sequence[CompareRow]) -> int:
    return write_rows(path, COMPARE_COLUMNS, (row.__dict__ for row in rows))


@dataclass(frozen=True)
class OracleResult:
    best_cap: int
    curve: List[Tuple[int, EpisodeOutcome]]

    @property
    def best_outcome(self) -> EpisodeOutcome:
        return dict(self.curve)[self.best_cap]

    def rows(self) -> Iterator[Dict[str, object]]:
        for cap, outcome in self.curve:
            yield {
                "cap": cap,
                "throughput_mbps": outcome.throughput,
                "avg_queue": outcome.avg_queue,
                "max_queue": outcome.max_queue,
                "drops": outcome.drops,
                "reward": outcome.reward,
                "best": int(cap == self.best_cap),
            }

    def write_csv(self, path: str) -> int:
        return write_rows(path, ORACLE_COLUMNS, self.rows())


def _run_fixed_cap(cap: int, config: FlowConfig, tcp: TcpParams, measure_from_s: float) -> EpisodeOutcome:
    run = run_controlled_flow(config, QdiscKind(QdiscKind.FIFO, cap), tcp=tcp,
                              measure_from_s=measure_from_s)
    return run.outcome


def oracle_optimal_cap(config: FlowConfig, params: RewardParams, cap_range: Tuple[int, int],
                       tcp: TcpParams = TcpParams(), measure_from_s: float = 0.0,
                       workers: int = 1) -> OracleResult:
    """
    Simulate the flow once per fixed cap in cap_range (inclusive) and pick the
    cap with the highest reward; ties go to the smaller cap.

    Raises:
        ConfigurationError: If the range is empty or starts below 1
    """
    low, high = cap_range
    if low < 1 or high < low:
        raise ConfigurationError(f"cap range must satisfy 1 <= low <= high, got ({low}, {high})")
    caps = list(range(low, high + 1))
    flow = config.model_copy(update={"alpha": params.alpha})
    task = partial(_run_fixed_cap, config=flow, tcp=tcp, measure_from_s=measure_from_s)
    outcomes = map_ordered(task, caps, workers)

    best_cap, best_reward = caps[0], outcomes[0].reward
    for cap, outcome in zip(caps[1:], outcomes[1:]):
        if outcome.reward > best_reward:
            best_cap, best_reward = cap, outcome.reward
    logger.info("oracle_finished", cca=config.cca.value, bandwidth=config.bandwidth_mbps,
                delay=config.delay_ms, best_cap=best_cap, reward=best_reward,
                bdp=config.bdp_packets)
    return OracleResult(best_cap=best_cap, curve=list(zip(caps, outcomes)))


def default_output(out: Optional[str], name: str) -> str:
    """Output path for a command: out itself when it names a file, else out/name."""
    if out is None:
        return name
    path = Path(out)
    if path.suffix:
        return str(path)
    return str(path / name)
