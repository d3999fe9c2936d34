import math

import pytest

from lfq.config import SweepConfig
from lfq.csvio import COMPARE_COLUMNS, ORACLE_COLUMNS, SWEEP_COLUMNS, read_rows, read_sweep
from lfq.errors import ConfigurationError
from lfq.qdisc import QdiscKind
from lfq.sim_core import FlowConfig
from lfq.sweeps import (ALL_CCAS, CompareEntry, ControlledRun, SweepResult, SweepSpec, default_output,
                        experiment_seed, oracle_optimal_cap, pearson, run_compare, run_controlled_flow,
                        run_sweep, write_compare)
from lfq.trainer import EpisodeOutcome, RewardParams
from lfq.transport import Cca


@pytest.fixture
def tiny_sweep() -> SweepConfig:
    return SweepConfig(points=2, duration_s=0.4, seed=3)


def outcome(throughput: float = 10.0) -> EpisodeOutcome:
    return EpisodeOutcome(throughput=throughput, avg_queue=1.0, max_queue=2, reward=throughput, drops=0)


def test_pearson_of_exact_lines():
    x = [5.0, 10.0, 15.0, 20.0]
    assert pearson(x, [2 * v + 1 for v in x]) == pytest.approx(1.0)
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)


def test_pearson_undefined_for_constant_or_short_series():
    assert math.isnan(pearson([1.0, 2.0, 3.0], [4.0, 4.0, 4.0]))
    assert math.isnan(pearson([1.0], [2.0]))
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0])


def test_experiment_seed_depends_on_grid_index_only():
    assert experiment_seed(7, 3) == experiment_seed(7, 3)
    assert experiment_seed(7, 3) != experiment_seed(7, 4)
    assert experiment_seed(7, 3) != experiment_seed(8, 3)


def test_spec_from_config_uses_flow_ranges():
    config = SweepConfig(points=5)
    spec = SweepSpec.from_config(config, "bandwidth")
    assert (spec.low, spec.high) == (5.0, 25.0)
    assert spec.fixed == config.fixed_delay_ms
    assert list(spec.values) == [5.0, 10.0, 15.0, 20.0, 25.0]

    flows = spec.flow_configs(config)
    assert len(flows) == 10
    assert [f.cca for f in flows[:5]] == [Cca.NEW_RENO] * 5
    assert [f.bandwidth_mbps for f in flows[5:]] == [5.0, 10.0, 15.0, 20.0, 25.0]
    assert all(f.delay_ms == 15.0 for f in flows)
    # same randomness for both CCAs at a grid point
    assert flows[0].seed == flows[5].seed


def test_spec_rejects_unknown_axis_and_empty_range():
    with pytest.raises(ConfigurationError):
        SweepSpec.from_config(SweepConfig(), "loss")
    with pytest.raises(ValueError):
        SweepSpec(vary="delay", low=20.0, high=10.0)


def test_linear_synthetic_caps_correlate_perfectly():
    spec = SweepSpec(vary="bandwidth", points=4, low=5.0, high=20.0, ccas=(Cca.NEW_RENO,))
    runs = []
    for bw in spec.values:
        config = FlowConfig(bandwidth_mbps=float(bw), delay_ms=15.0, duration_s=1.0)
        runs.append(ControlledRun(config=config, qdisc="lfq", outcome=outcome(), mean_cap=1.5 * bw + 2.0))
    result = SweepResult(spec=spec, runs=runs)
    assert result.correlation(Cca.NEW_RENO) == pytest.approx(1.0)
    assert math.isnan(result.correlation(Cca.BIC))
    assert result.mean_cap() == pytest.approx(1.5 * 12.5 + 2.0)


def test_controlled_flow_measures_the_whole_flow(reno_flow):
    run = run_controlled_flow(reno_flow, QdiscKind(QdiscKind.FIFO, 10))
    assert run.outcome.max_queue == 10
    assert run.outcome.drops > 0
    assert run.mean_cap == pytest.approx(10.0)
    assert run.qdisc == "fifo:10"
    assert run.trace is None


def test_controlled_flow_late_window(reno_flow):
    run = run_controlled_flow(reno_flow, QdiscKind(QdiscKind.FIFO, 10), measure_from_s=0.8, trace=True)
    assert 0.0 < run.outcome.throughput <= reno_flow.bandwidth_mbps
    assert run.trace


def test_codel_has_no_cap(reno_flow):
    run = run_controlled_flow(reno_flow, QdiscKind(QdiscKind.FQ_CODEL))
    assert run.mean_cap is None


def test_learned_queue_needs_an_actor(reno_flow, tiny_sweep):
    with pytest.raises(ConfigurationError, match="needs --weights"):
        run_controlled_flow(reno_flow, QdiscKind(QdiscKind.LFQ))
    with pytest.raises(ConfigurationError):
        run_sweep(SweepSpec.from_config(tiny_sweep, "delay"), tiny_sweep)


def test_learned_sweep_reports_caps(tiny_sweep, small_actor):
    spec = SweepSpec.from_config(tiny_sweep, "delay")
    result = run_sweep(spec, tiny_sweep, small_actor)
    assert len(result.runs) == 4
    assert all(r.mean_cap is not None and r.mean_cap >= 1.0 for r in result.runs)


def test_sweep_csv(tiny_sweep, tmp_path):
    spec = SweepSpec.from_config(tiny_sweep, "bandwidth", qdisc="fifo:30")
    result = run_sweep(spec, tiny_sweep)
    path = tmp_path / "sweep.csv"
    assert result.write_csv(str(path)) == 4 + 3

    assert list(read_rows(str(path))[0].keys()) == SWEEP_COLUMNS
    rows = read_sweep(str(path))
    experiments = [r for r in rows if r["row"] != "aggregate"]
    aggregates = {r["cca"]: r for r in rows if r["row"] == "aggregate"}
    assert [r["row"] for r in experiments] == ["0", "1", "2", "3"]
    assert set(aggregates) == {"NewReno", "BIC", ALL_CCAS}
    overall = aggregates[ALL_CCAS]
    assert overall["throughput_mbps"] == pytest.approx(
        sum(r["throughput_mbps"] for r in experiments) / 4)
    assert overall["mean_cap"] == pytest.approx(30.0)
    # a fixed cap does not vary with the link
    assert overall["cap_correlation"] is None
    assert overall["seed"] is None


def test_sweep_is_independent_of_worker_count(tiny_sweep):
    spec = SweepSpec.from_config(tiny_sweep, "delay", qdisc="fifo:20")
    serial = run_sweep(spec, tiny_sweep)
    parallel = run_sweep(spec, tiny_sweep.model_copy(update={"workers": 2}))
    assert list(serial.rows()) == list(parallel.rows())


def test_compare_bigger_buffers_hold_longer_queues(tmp_path):
    config = SweepConfig(points=2, duration_s=0.5, seed=4)
    entries = [CompareEntry("fifo:1000", "fifo:1000"), CompareEntry("fifo:20", "fifo:20")]
    rows = run_compare(entries, config)
    assert [r.experiments for r in rows] == [8, 8]
    assert rows[1].avg_max_queue <= 20
    assert rows[0].avg_max_queue > rows[1].avg_max_queue

    path = tmp_path / "compare.csv"
    write_compare(str(path), rows)
    written = read_rows(str(path))
    assert list(written[0].keys()) == COMPARE_COLUMNS
    assert [r["qdisc"] for r in written] == ["fifo:1000", "fifo:20"]


def test_compare_needs_entries():
    with pytest.raises(ConfigurationError):
        run_compare([], SweepConfig(points=2))


def test_oracle_single_cap_range(reno_flow):
    result = oracle_optimal_cap(reno_flow, RewardParams(alpha=0.01), (7, 7))
    assert result.best_cap == 7
    assert [cap for cap, _ in result.curve] == [7]


def test_oracle_ties_go_to_the_smaller_cap():
    # too short for any of these caps to fill
    config = FlowConfig(bandwidth_mbps=10.0, delay_ms=10.0, duration_s=0.05, seed=5)
    result = oracle_optimal_cap(config, RewardParams(alpha=0.0), (200, 202))
    rewards = {outcome.reward for _, outcome in result.curve}
    assert len(rewards) == 1
    assert result.best_cap == 200


def test_oracle_rejects_bad_ranges(reno_flow):
    for cap_range in ((0, 5), (6, 5)):
        with pytest.raises(ConfigurationError):
            oracle_optimal_cap(reno_flow, RewardParams(), cap_range)


def test_oracle_csv_marks_one_best_row(reno_flow, tmp_path):
    result = oracle_optimal_cap(reno_flow, RewardParams(alpha=0.01), (4, 8))
    path = tmp_path / "oracle.csv"
    result.write_csv(str(path))
    rows = read_rows(str(path))
    assert list(rows[0].keys()) == ORACLE_COLUMNS
    assert [r["best"] for r in rows].count("1") == 1
    assert result.best_outcome.reward == max(o.reward for _, o in result.curve)


@pytest.mark.parametrize("out, name, expected", [
    (None, "trace.csv", "trace.csv"),
    ("runs", "trace.csv", "runs/trace.csv"),
    ("runs/flow.csv", "trace.csv", "runs/flow.csv"),
])
def test_default_output(out, name, expected):
    assert default_output(out, name) == expected


@pytest.mark.slow
def test_reno_oracle_lands_near_the_bdp():
    config = FlowConfig(bandwidth_mbps=15.0, delay_ms=15.0, duration_s=8.0, cca=Cca.NEW_RENO, seed=9)
    result = oracle_optimal_cap(config, RewardParams(alpha=0.01), (5, 40), measure_from_s=3.0, workers=4)
    assert 0.8 * config.bdp_packets <= result.best_cap <= 1.2 * config.bdp_packets


@pytest.mark.slow
def test_bic_oracle_lands_near_its_decrease_headroom():
    config = FlowConfig(bandwidth_mbps=15.0, delay_ms=15.0, duration_s=8.0, cca=Cca.BIC, seed=9)
    result = oracle_optimal_cap(config, RewardParams(alpha=0.01), (2, 30), measure_from_s=3.0, workers=4)
    headroom = (1 / 0.7 - 1) * config.bdp_packets
    assert 0.7 * headroom <= result.best_cap <= 1.3 * headroom


@pytest.mark.slow
@pytest.mark.parametrize("bandwidth", [10.0, 15.0, 20.0])
@pytest.mark.parametrize("delay", [10.0, 15.0, 20.0])
def test_bic_needs_a_smaller_buffer_than_reno(bandwidth, delay):
    best = {}
    for cca in (Cca.NEW_RENO, Cca.BIC):
        config = FlowConfig(bandwidth_mbps=bandwidth, delay_ms=delay, duration_s=8.0, cca=cca, seed=9)
        cap_max = math.ceil(1.5 * config.bdp_packets)
        result = oracle_optimal_cap(config, RewardParams(alpha=0.01), (1, cap_max), measure_from_s=3.0,
                                    workers=4)
        best[cca] = result.best_cap
    assert best[Cca.BIC] < best[Cca.NEW_RENO]


@pytest.mark.slow
def test_bic_fills_the_link_with_a_smaller_buffer_than_reno():
    def smallest_full_cap(cca: Cca) -> int:
        config = FlowConfig(bandwidth_mbps=25.0, delay_ms=25.0, duration_s=8.0, cca=cca, seed=10)
        result = oracle_optimal_cap(config, RewardParams(alpha=0.0), (1, 60), measure_from_s=3.0, workers=4)
        return min(cap for cap, o in result.curve if o.throughput >= 0.95 * config.bandwidth_mbps)

    assert smallest_full_cap(Cca.BIC) < smallest_full_cap(Cca.NEW_RENO)
