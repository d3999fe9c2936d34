#!/usr/bin/env python3
"""
LFQ command line front end.

Subcommands:
    train    Train the cap controller offline (fork A/B) or online (actor-critic)
    sweep    Vary bandwidth or delay over a grid and record the controller's caps
    trace    Export the per-event trace of one flow (CSV, optional SVG)
    compare  Compare queue disciplines over the bandwidth and delay grids
    oracle   Brute-force the best fixed cap of one flow

Optional environment variables:
    LFQ_LOG_LEVEL: Log level when --log-level is not given
    LFQ_WORKERS: Default worker process count
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import structlog

from lfq.charts import oracle_chart, trace_chart
from lfq.config import (SweepConfig, TrainingConfig, build_model, default_workers, load_config_file,
                        merge_settings)
from lfq.csvio import write_trace
from lfq.errors import ConfigurationError, LfqError
from lfq.logging_config import LOG_LEVELS, configure_logging
from lfq.mlp import Mlp
from lfq.qdisc import QdiscKind
from lfq.sim_core import FlowConfig
from lfq.sweeps import (BOTH_CCAS, CompareEntry, SweepSpec, default_output, oracle_optimal_cap,
                        run_compare, run_controlled_flow, run_sweep, write_compare)
from lfq.trainer import RewardParams, Trainer
from lfq.transport import Cca

logger = structlog.get_logger(__name__)

DEFAULT_COMPARE_QDISCS = ["lfq", "fifo:100", "fifo:1000", "fq-codel"]
CCA_ALIASES = {
    "newreno": Cca.NEW_RENO,
    "new-reno": Cca.NEW_RENO,
    "reno": Cca.NEW_RENO,
    "bic": Cca.BIC,
}

# Flag names that differ from the pydantic field they feed
SWEEP_FLAG_FIELDS = {
    "bandwidth": "fixed_bandwidth_mbps",
    "delay": "fixed_delay_ms",
    "duration": "duration_s",
    "measure_from": "measure_from_s",
}


def parse_cca(text: str) -> Cca:
    try:
        return CCA_ALIASES[text.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"Unknown CCA '{text}' (expected NewReno or BIC)")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--seed', type=int, help='Master random seed')
    shared.add_argument('--alpha', type=float, help='Reward tradeoff: throughput - alpha * queue')
    shared.add_argument('--flows', type=int, help='Number of training flows')
    shared.add_argument('--batch', type=int, help='Flows per batch (default 20 offline, 40 online)')
    shared.add_argument('--sample-interval', type=int, help='Packets between controller inferences (default 10)')
    shared.add_argument('--qdisc', action='append', help='lfq, fifo:<cap> or fq-codel (repeatable for compare)')
    shared.add_argument('--weights', action='append', help='Actor weight file (repeatable for compare)')
    shared.add_argument('--out', help='Output directory or file')
    shared.add_argument('--workers', type=int, help='Worker processes (default $LFQ_WORKERS or 1)')
    shared.add_argument('--checkpoint-every', type=int, help='Save weights every N batches')
    shared.add_argument('--config', help='JSON file with default flag values')
    shared.add_argument(
        '--log-level',
        choices=list(LOG_LEVELS),
        default=None,
        help='Set the logging level (default $LFQ_LOG_LEVEL or INFO)'
    )

    flow = argparse.ArgumentParser(add_help=False)
    flow.add_argument('--bandwidth', type=float, help='Link rate in Mbit/s (default 15)')
    flow.add_argument('--delay', type=float, help='Propagation delay in ms (default 15)')
    flow.add_argument('--cca', help='NewReno or BIC (default: both for sweeps, NewReno otherwise)')
    flow.add_argument('--duration', type=float, help='Flow duration in seconds')
    flow.add_argument('--measure-from', type=float, help='Start of the measured window in seconds')

    parser = argparse.ArgumentParser(prog='lfq', description='Learned per-flow queue sizing laboratory')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', parents=[shared], help='Train the cap controller')
    train.add_argument('--mode', choices=['offline', 'online'], help='Learning procedure (default offline)')
    train.add_argument('--eval-every', type=int, help='Held-out critic evaluation every N batches (online)')
    train.add_argument('--warmup', choices=['linear', 'exponential'], help='Rate feature warm-up rule')
    train.add_argument('--dump-features', action='store_true', help='Write experiment-time features to CSV')

    sweep = sub.add_parser('sweep', parents=[shared, flow], help='Sweep bandwidth or delay')
    sweep.add_argument('--vary', choices=['bandwidth', 'delay'], required=True, help='Parameter to vary')
    sweep.add_argument('--points', type=int, help='Grid points (default 100)')

    trace = sub.add_parser('trace', parents=[shared, flow], help='Export one flow trace')
    trace.add_argument('--svg', action='store_true', help='Also render queue and cap as SVG')

    compare = sub.add_parser('compare', parents=[shared, flow], help='Compare queue disciplines')
    compare.add_argument('--points', type=int, help='Grid points per axis (default 100)')

    oracle = sub.add_parser('oracle', parents=[shared, flow], help='Best fixed cap of one flow')
    oracle.add_argument('--cap-min', type=int, default=1, help='Smallest cap tried')
    oracle.add_argument('--cap-max', type=int, help='Largest cap tried (default 3 x BDP)')
    oracle.add_argument('--svg', action='store_true', help='Also render the reward curve as SVG')
    return parser


def _settings(args: argparse.Namespace, renames: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Config file values overlaid with the flags the user passed."""
    flags = {key: value for key, value in vars(args).items() if key not in ('config', 'command')}
    for flag, field_name in (renames or {}).items():
        if flag in flags:
            flags[field_name] = flags.pop(flag)
    merged = merge_settings(load_config_file(args.config), flags)
    if merged.get('workers') is None:
        merged['workers'] = default_workers()
    return merged


def _last(values: Optional[List[str]], default: Optional[str] = None) -> Optional[str]:
    return values[-1] if values else default


def _load_actor(weights: Optional[str]) -> Mlp:
    if not weights:
        raise ConfigurationError("the lfq qdisc needs --weights")
    return Mlp.load(weights)


def _single_flow(settings: SweepConfig, args: argparse.Namespace) -> FlowConfig:
    return FlowConfig(
        bandwidth_mbps=settings.fixed_bandwidth_mbps,
        delay_ms=settings.fixed_delay_ms,
        duration_s=settings.duration_s,
        cca=parse_cca(args.cca) if args.cca else Cca.NEW_RENO,
        seed=settings.seed,
        alpha=settings.alpha,
        sample_interval=settings.sample_interval,
    )


def cmd_train(args: argparse.Namespace) -> None:
    values = _settings(args)
    if values.get('warmup'):
        values['features'] = {'warmup': values['warmup']}
    config = build_model(TrainingConfig, values)
    actor = Mlp.load(_last(args.weights)) if args.weights else None
    out = args.out or 'lfq-run'
    with Trainer(config, actor=actor) as trainer:
        history = trainer.train(out, dump_features=args.dump_features)
    if history:
        last = history[-1]
        logger.info("train_complete", batches=len(history), flows=last.flows_seen,
                    mean_actor_output=last.mean_actor_output, out=out)


def cmd_sweep(args: argparse.Namespace) -> None:
    settings = build_model(SweepConfig, _settings(args, SWEEP_FLAG_FIELDS))
    qdisc = _last(args.qdisc, QdiscKind.LFQ)
    actor = _load_actor(_last(args.weights)) if QdiscKind.from_flag(qdisc).is_learned else None
    ccas = (parse_cca(args.cca),) if args.cca else BOTH_CCAS
    spec = SweepSpec.from_config(settings, args.vary, qdisc=qdisc, weights=_last(args.weights), ccas=ccas)
    result = run_sweep(spec, settings, actor)
    path = default_output(args.out, f"sweep_{args.vary}.csv")
    rows = result.write_csv(path)
    logger.info("sweep_written", path=path, rows=rows)


def cmd_trace(args: argparse.Namespace) -> None:
    settings = build_model(SweepConfig, _settings(args, SWEEP_FLAG_FIELDS))
    qdisc = QdiscKind.from_flag(_last(args.qdisc, QdiscKind.LFQ))
    actor = _load_actor(_last(args.weights)) if qdisc.is_learned else None
    flow = _single_flow(settings, args)
    run = run_controlled_flow(flow, qdisc, actor=actor, tcp=settings.tcp,
                              feature_params=settings.features,
                              measure_from_s=settings.measure_from_s, trace=True)
    path = default_output(args.out, "trace.csv")
    rows = write_trace(path, run.trace)
    logger.info("trace_written", path=path, rows=rows, throughput=run.outcome.throughput,
                avg_queue=run.outcome.avg_queue, mean_cap=run.mean_cap)
    if args.svg:
        title = f"{flow.cca.value} {flow.bandwidth_mbps:g} Mbit/s {flow.delay_ms:g} ms ({qdisc.label})"
        trace_chart(str(Path(path).with_suffix('.svg')), run.trace, title=title)


def compare_entries(qdiscs: Sequence[str], weights: Sequence[str]) -> List[CompareEntry]:
    """Pair every lfq entry with the next weights file, in flag order."""
    remaining = list(weights)
    learned = sum(1 for q in qdiscs if QdiscKind.from_flag(q).is_learned)
    if learned > len(remaining):
        raise ConfigurationError(f"{learned} lfq entries but only {len(remaining)} --weights given")
    entries = []
    for q in qdiscs:
        kind = QdiscKind.from_flag(q)
        if kind.is_learned:
            path = remaining.pop(0)
            label = kind.label if learned == 1 else f"{kind.label}:{path}"
            entries.append(CompareEntry(label=label, qdisc=q, actor=Mlp.load(path)))
        else:
            entries.append(CompareEntry(label=kind.label, qdisc=q))
    return entries


def cmd_compare(args: argparse.Namespace) -> None:
    settings = build_model(SweepConfig, _settings(args, SWEEP_FLAG_FIELDS))
    entries = compare_entries(args.qdisc or DEFAULT_COMPARE_QDISCS, args.weights or [])
    rows = run_compare(entries, settings)
    path = default_output(args.out, "compare.csv")
    write_compare(path, rows)
    logger.info("compare_written", path=path, rows=len(rows))


def cmd_oracle(args: argparse.Namespace) -> None:
    settings = build_model(SweepConfig, _settings(args, SWEEP_FLAG_FIELDS))
    flow = _single_flow(settings, args)
    cap_max = args.cap_max if args.cap_max is not None else max(args.cap_min, math.ceil(3 * flow.bdp_packets))
    result = oracle_optimal_cap(flow, RewardParams(alpha=settings.alpha), (args.cap_min, cap_max),
                                tcp=settings.tcp, measure_from_s=settings.measure_from_s,
                                workers=settings.workers)
    path = default_output(args.out, "oracle.csv")
    result.write_csv(path)
    logger.info("oracle_written", path=path, best_cap=result.best_cap, bdp=flow.bdp_packets)
    if args.svg:
        caps = [cap for cap, _ in result.curve]
        rewards = [outcome.reward for _, outcome in result.curve]
        oracle_chart(str(Path(path).with_suffix('.svg')), caps, rewards, result.best_cap,
                     bdp_packets=flow.bdp_packets,
                     title=f"{flow.cca.value} {flow.bandwidth_mbps:g} Mbit/s {flow.delay_ms:g} ms")


COMMANDS = {
    'train': cmd_train,
    'sweep': cmd_sweep,
    'trace': cmd_trace,
    'compare': cmd_compare,
    'oracle': cmd_oracle,
}


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Main function to run the LFQ command line."""
    parser = build_parser()
    args = parser.parse_args(argv)

    configure_logging(args.log_level)

    try:
        COMMANDS[args.command](args)
    except ConfigurationError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        logger.error(str(e))
        sys.exit(1)
    except LfqError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.error(str(e))
        sys.exit(1)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        logger.error(f"I/O error: {e}")
        sys.exit(1)
    except Exception as e:
        print(f"error: Unexpected error: {e}", file=sys.stderr)
        logger.error(f"Unexpected error: {str(e)}")
        logger.debug("Exception details:", exc_info=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
