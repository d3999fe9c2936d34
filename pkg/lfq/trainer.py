"""
Learning procedures for the queue-cap controller.

Offline training forks every flow at its experiment time and runs the two
children with the controller's cap +1 and -1; the better child labels the
snapshot. Online training cannot fork: each flow runs once with a random +-1
perturbation and a critic network's reward prediction tells whether the
perturbation was better than expected.

Reward (per flow, from the experiment time to the end of the flow):
    reward = throughput [Mbit/s] - alpha * time-averaged queue [packets]
"""

import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from lfq.config import FeatureParams, FlowRanges, TcpParams, TrainingConfig
from lfq.csvio import FEATURE_DUMP_COLUMNS, TRAINING_LOG_COLUMNS, CsvAppender, feature_dump_row
from lfq.errors import ConfigurationError, LfqError, TrainingError
from lfq.mlp import LossKind, Mlp, TrainStep, WeightsMetadata
from lfq.qdisc import QdiscKind, round_cap
from lfq.sim_core import FlowConfig, SimState, WindowStats, build_simulation, fork, to_seconds, to_ticks
from lfq.transport import Cca

logger = structlog.get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ACTOR_FILE = "actor.weights"
CRITIC_FILE = "critic.weights"
TRAINING_LOG_FILE = "training_log.csv"
FEATURE_DUMP_FILE = "features.csv"
CHECKPOINT_DIR = "checkpoints"
HELDOUT_SEED_OFFSET = 0x5EED


class RewardParams(BaseModel):
    """Tradeoff between throughput and queue length."""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.01, ge=0.0)


@dataclass(frozen=True)
class EpisodeOutcome:
    """What a flow achieved over its reward window."""
    throughput: float
    avg_queue: float
    max_queue: int
    reward: float
    drops: int

    @classmethod
    def from_window(cls, stats: WindowStats, params: RewardParams) -> 'EpisodeOutcome':
        return cls(
            throughput=stats.throughput_mbps,
            avg_queue=stats.avg_queue,
            max_queue=stats.max_queue,
            reward=compute_reward(stats.throughput_mbps, stats.avg_queue, params),
            drops=stats.drops,
        )


@dataclass(frozen=True)
class ExperimentRecord:
    """State of a flow at the moment its experiment starts."""
    flow_id: int
    t_exp: int
    snapshot_features: np.ndarray
    actor_output: float
    base_cap: int
    direction: Optional[int] = None
    critic_prediction: Optional[float] = None


@dataclass(frozen=True)
class OfflineFlowResult:
    record: ExperimentRecord
    cap_plus: int
    cap_minus: int
    outcome_plus: EpisodeOutcome
    outcome_minus: EpisodeOutcome
    target: int

    @property
    def best_reward(self) -> float:
        return self.outcome_minus.reward if self.target == self.cap_minus else self.outcome_plus.reward


@dataclass(frozen=True)
class OnlineFlowResult:
    record: ExperimentRecord
    chosen_cap: int
    outcome: EpisodeOutcome
    target: int


@dataclass(frozen=True)
class BatchStats:
    batch_index: int
    flows_seen: int
    mean_actor_output: float
    mean_reward: float
    actor_loss: float
    critic_loss: Optional[float] = None
    heldout_critic_mse: Optional[float] = None

    def as_log_row(self) -> dict:
        row = asdict(self)
        row["batch"] = row.pop("batch_index")
        return row


def compute_reward(throughput_mbps: float, avg_queue: float, params: RewardParams) -> float:
    """Throughput minus alpha times the time-averaged queue."""
    return throughput_mbps - params.alpha * avg_queue


def offline_target(base_cap: int, reward_plus: float, reward_minus: float) -> Tuple[int, int, int]:
    """Caps of the two children and the better one; ties prefer the smaller buffer."""
    cap_plus = base_cap + 1
    cap_minus = max(base_cap - 1, 1)
    target = cap_plus if reward_plus > reward_minus else cap_minus
    return cap_plus, cap_minus, target


def online_target(base_cap: int, direction: int, reward: float, critic_prediction: float) -> int:
    """Keep the tried cap when it met the critic's expectation, else take the opposite one."""
    chosen = max(base_cap + direction, 1)
    opposite = max(base_cap - direction, 1)
    return chosen if reward >= critic_prediction else opposite


def draw_flow_configs(n: int, rng: np.random.Generator, ranges: FlowRanges = FlowRanges(),
                      alpha: float = 0.01, sample_interval: int = 10,
                      first_flow_id: int = 0) -> List[FlowConfig]:
    """Independent uniform draws of bandwidth, delay and duration plus a fair CCA coin."""
    configs = []
    for i in range(n):
        bandwidth = rng.uniform(*ranges.bandwidth_mbps)
        delay = rng.uniform(*ranges.delay_ms)
        duration = rng.uniform(*ranges.duration_s)
        cca = Cca.NEW_RENO if rng.random() < 0.5 else Cca.BIC
        seed = int(rng.integers(0, 2 ** 63 - 1))
        configs.append(FlowConfig(
            bandwidth_mbps=float(bandwidth),
            delay_ms=float(delay),
            duration_s=float(duration),
            cca=cca,
            seed=seed,
            alpha=alpha,
            sample_interval=sample_interval,
            flow_id=first_flow_id + i,
        ))
    return configs


def _start_experiment(config: FlowConfig, actor: Mlp, tcp: TcpParams,
                      feature_params: FeatureParams, trace: bool = False) -> Tuple[SimState, ExperimentRecord]:
    """Run a flow under actor control up to a random experiment time and freeze its cap there."""
    state = build_simulation(config, QdiscKind(QdiscKind.LFQ), controller=actor.predict,
                             tcp=tcp, feature_params=feature_params, trace=trace)
    t_exp = to_ticks(state.rng.uniform(0.0, config.duration_s / 2.0))
    state.run_until(t_exp)

    features = state.features.snapshot(state.clock)
    output = actor.forward(features)
    base_cap = round_cap(output)
    state.controller = None
    record = ExperimentRecord(
        flow_id=config.flow_id,
        t_exp=t_exp,
        snapshot_features=features,
        actor_output=output,
        base_cap=base_cap,
    )
    return state, record


def _finish_with_cap(state: SimState, cap: int, params: RewardParams) -> EpisodeOutcome:
    state.set_cap(cap)
    mark = state.mark()
    state.run_until(state.config.duration_ticks)
    return EpisodeOutcome.from_window(state.window_stats(mark), params)


def run_offline_flow(config: FlowConfig, actor: Mlp, tcp: TcpParams = TcpParams(),
                     feature_params: FeatureParams = FeatureParams()) -> OfflineFlowResult:
    """Fork A/B experiment of one flow: two simulations, cap +1 and cap -1."""
    params = RewardParams(alpha=config.alpha)
    state, record = _start_experiment(config, actor, tcp, feature_params)
    plus, minus = fork(state)
    cap_plus, cap_minus, _ = offline_target(record.base_cap, 0.0, 0.0)
    outcome_plus = _finish_with_cap(plus, cap_plus, params)
    outcome_minus = _finish_with_cap(minus, cap_minus, params)
    _, _, target = offline_target(record.base_cap, outcome_plus.reward, outcome_minus.reward)
    return OfflineFlowResult(record, cap_plus, cap_minus, outcome_plus, outcome_minus, target)


def run_online_flow(config: FlowConfig, actor: Mlp, critic: Mlp, tcp: TcpParams = TcpParams(),
                    feature_params: FeatureParams = FeatureParams()) -> OnlineFlowResult:
    """One simulation with a random +-1 perturbation judged against the critic."""
    params = RewardParams(alpha=config.alpha)
    state, record = _start_experiment(config, actor, tcp, feature_params)
    prediction = critic.forward(record.snapshot_features)
    direction = 1 if state.rng.random() < 0.5 else -1
    record = ExperimentRecord(
        flow_id=record.flow_id,
        t_exp=record.t_exp,
        snapshot_features=record.snapshot_features,
        actor_output=record.actor_output,
        base_cap=record.base_cap,
        direction=direction,
        critic_prediction=prediction,
    )
    chosen = max(record.base_cap + direction, 1)
    outcome = _finish_with_cap(state, chosen, params)
    target = online_target(record.base_cap, direction, outcome.reward, prediction)
    return OnlineFlowResult(record, chosen, outcome, target)


class Trainer:
    """
    Runs batches of flows and applies the gradient updates between them.

    Flows of a batch run in a process pool when workers > 1; results are
    consumed in batch order so training is deterministic for a fixed seed.
    """

    def __init__(self, config: TrainingConfig, actor: Optional[Mlp] = None,
                 critic: Optional[Mlp] = None):
        self.config = config
        self.actor = actor if actor is not None else Mlp.create(config.seed)
        self.critic = critic
        if config.mode == "online" and self.critic is None:
            self.critic = Mlp.create(config.seed + 1)
        self.rng = np.random.default_rng(config.seed)
        self.flows_seen = 0
        self.batches_done = 0
        self._executor: Optional[Executor] = None
        self._heldout: Optional[List[FlowConfig]] = None
        self.logger = structlog.get_logger(__name__).bind(mode=config.mode, alpha=config.alpha)

    def __enter__(self) -> 'Trainer':
        if self.config.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.config.workers)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        if self._executor is None:
            return [fn(item) for item in items]
        return list(self._executor.map(fn, items))

    def next_configs(self) -> List[FlowConfig]:
        configs = draw_flow_configs(
            self.config.batch_size, self.rng, self.config.ranges,
            alpha=self.config.alpha, sample_interval=self.config.sample_interval,
            first_flow_id=self.flows_seen,
        )
        return configs

    def run_offline_batch(self, configs: Sequence[FlowConfig]) -> Tuple[BatchStats, List[OfflineFlowResult]]:
        """Simulate every flow of the batch, then take one MAE step toward the A/B winners."""
        batch_index = self.batches_done
        task = partial(run_offline_flow, actor=self.actor, tcp=self.config.tcp,
                       feature_params=self.config.features)
        results = self._run_batch(task, configs, batch_index)

        inputs = np.stack([r.record.snapshot_features for r in results])
        targets = np.array([r.target for r in results], dtype=np.float64)
        actor_loss, = self._step(batch_index, (self.actor, inputs, targets, LossKind.MAE))

        for r in results:
            self.logger.debug("offline_flow", flow=r.record.flow_id, t_exp=to_seconds(r.record.t_exp),
                              base_cap=r.record.base_cap, reward_plus=r.outcome_plus.reward,
                              reward_minus=r.outcome_minus.reward, target=r.target)

        stats = self._finish_batch(
            batch_index, len(configs),
            mean_actor_output=float(np.mean([r.record.actor_output for r in results])),
            mean_reward=float(np.mean([r.best_reward for r in results])),
            actor_loss=actor_loss,
        )
        return stats, results

    def run_online_batch(self, configs: Sequence[FlowConfig]) -> Tuple[BatchStats, List[OnlineFlowResult]]:
        """Simulate every flow once, then step the actor (MAE) and the critic (MSE)."""
        if self.critic is None or self.critic.sizes != self.actor.sizes:
            raise TrainingError("online training needs a critic with the actor's architecture",
                                batch_index=self.batches_done)
        batch_index = self.batches_done
        task = partial(run_online_flow, actor=self.actor, critic=self.critic,
                       tcp=self.config.tcp, feature_params=self.config.features)
        results = self._run_batch(task, configs, batch_index)

        inputs = np.stack([r.record.snapshot_features for r in results])
        targets = np.array([r.target for r in results], dtype=np.float64)
        rewards = np.array([r.outcome.reward for r in results], dtype=np.float64)
        actor_loss, critic_loss = self._step(
            batch_index,
            (self.actor, inputs, targets, LossKind.MAE),
            (self.critic, inputs, rewards, LossKind.MSE),
        )

        for r in results:
            self.logger.debug("online_flow", flow=r.record.flow_id, t_exp=to_seconds(r.record.t_exp),
                              base_cap=r.record.base_cap, direction=r.record.direction,
                              prediction=r.record.critic_prediction, reward=r.outcome.reward,
                              target=r.target)

        heldout = None
        if self.config.eval_every and (batch_index + 1) % self.config.eval_every == 0:
            heldout = self.evaluate_critic()

        stats = self._finish_batch(
            batch_index, len(configs),
            mean_actor_output=float(np.mean([r.record.actor_output for r in results])),
            mean_reward=float(np.mean(rewards)),
            actor_loss=actor_loss,
            critic_loss=critic_loss,
            heldout_critic_mse=heldout,
        )
        return stats, results

    def heldout_configs(self) -> List[FlowConfig]:
        """A fixed scenario batch, independent of the training stream."""
        if self._heldout is None:
            rng = np.random.default_rng(self.config.seed + HELDOUT_SEED_OFFSET)
            self._heldout = draw_flow_configs(
                self.config.batch_size, rng, self.config.ranges,
                alpha=self.config.alpha, sample_interval=self.config.sample_interval,
                first_flow_id=-self.config.batch_size,
            )
        return self._heldout

    def evaluate_critic(self) -> float:
        """MSE between critic predictions and achieved rewards on the held-out batch."""
        task = partial(run_online_flow, actor=self.actor, critic=self.critic,
                       tcp=self.config.tcp, feature_params=self.config.features)
        results = self._run_batch(task, self.heldout_configs(), self.batches_done)
        errors = [(r.record.critic_prediction - r.outcome.reward) ** 2 for r in results]
        return float(np.mean(errors))

    def train(self, out_dir: str, dump_features: bool = False) -> List[BatchStats]:
        """
        Run ceil(flows / batch) batches, writing the training log, periodic
        checkpoints and the final weights into out_dir.
        """
        if self.config.flows <= 0:
            raise ConfigurationError("nothing to train (flows must be positive)")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_batches = math.ceil(self.config.flows / self.config.batch_size)
        self.logger.info("training_started", batches=n_batches, batch_size=self.config.batch_size,
                         workers=self.config.workers, out=str(out))

        history: List[BatchStats] = []
        dump = CsvAppender(str(out / FEATURE_DUMP_FILE), FEATURE_DUMP_COLUMNS) if dump_features else None
        try:
            with CsvAppender(str(out / TRAINING_LOG_FILE), TRAINING_LOG_COLUMNS) as log:
                for _ in range(n_batches):
                    configs = self.next_configs()
                    if self.config.mode == "offline":
                        stats, results = self.run_offline_batch(configs)
                    else:
                        stats, results = self.run_online_batch(configs)
                    log.write(stats.as_log_row())
                    history.append(stats)
                    if dump is not None:
                        for r in results:
                            dump.write(feature_dump_row(r.record.flow_id, to_seconds(r.record.t_exp),
                                                        r.target, r.record.snapshot_features))
                    if self.config.checkpoint_every and self.batches_done % self.config.checkpoint_every == 0:
                        self.save(str(out / CHECKPOINT_DIR), suffix=f"-b{self.batches_done}")
        finally:
            if dump is not None:
                dump.close()

        self.save(str(out))
        self.logger.info("training_finished", flows=self.flows_seen, out=str(out))
        return history

    def save(self, out_dir: str, suffix: str = "") -> List[Path]:
        """Write actor (and critic) weights with metadata sidecars."""
        out = Path(out_dir)
        written = []
        nets = [("actor", ACTOR_FILE, self.actor)]
        if self.critic is not None:
            nets.append(("critic", CRITIC_FILE, self.critic))
        for role, filename, net in nets:
            stem, ext = filename.split(".")
            path = out / f"{stem}{suffix}.{ext}"
            net.save(str(path), WeightsMetadata(
                role=role, mode=self.config.mode, seed=self.config.seed,
                alpha=self.config.alpha, flows=self.flows_seen,
            ))
            written.append(path)
        return written

    def _run_batch(self, task: Callable[[FlowConfig], R], configs: Iterable[FlowConfig],
                   batch_index: int) -> List[R]:
        try:
            return self._map(task, list(configs))
        except LfqError as e:
            raise TrainingError(f"batch {batch_index} voided: {e}", batch_index=batch_index)
        except Exception as e:
            raise TrainingError(f"batch {batch_index} voided by unexpected error: {e}",
                                batch_index=batch_index)

    def _step(self, batch_index: int, *updates: Tuple[Mlp, np.ndarray, np.ndarray, LossKind]) -> List[float]:
        """Update every net of the batch, or none of them when any step is not finite."""
        checked = []
        for net, inputs, targets, loss_kind in updates:
            step = TrainStep(inputs, targets, loss_kind, self.config.learning_rate)
            try:
                checked.append((net, net.checked_gradients(step)))
            except LfqError as e:
                raise TrainingError(f"training diverged at batch {batch_index}: {e}", batch_index=batch_index)
        for net, (_, grad_w, grad_b) in checked:
            net.apply_gradients(grad_w, grad_b, self.config.learning_rate)
        return [loss for _, (loss, _, _) in checked]

    def _finish_batch(self, batch_index: int, n_flows: int, **values) -> BatchStats:
        self.flows_seen += n_flows
        self.batches_done += 1
        stats = BatchStats(batch_index=batch_index, flows_seen=self.flows_seen, **values)
        self.logger.info("batch_complete", **stats.as_log_row())
        return stats
