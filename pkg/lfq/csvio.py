"""CSV writers and parsers for traces, training logs, sweeps and feature dumps."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import structlog

from lfq.config import TICKS_PER_SECOND
from lfq.features import FEATURE_NAMES

logger = structlog.get_logger(__name__)

TRACE_COLUMNS = ["time_s", "event", "queue_len_pkts", "cap_pkts", "cwnd_pkts", "delivered_bytes"]
TRACE_EVENTS = ("enqueue", "dequeue", "drop", "cap_change", "inference")
TRAINING_LOG_COLUMNS = [
    "batch", "flows_seen", "mean_actor_output", "mean_reward",
    "actor_loss", "critic_loss", "heldout_critic_mse",
]
FEATURE_DUMP_COLUMNS = ["flow_id", "t_exp_s", "target_cap"] + FEATURE_NAMES
SWEEP_COLUMNS = [
    "row", "cca", "qdisc", "bandwidth_mbps", "delay_ms", "duration_s", "seed",
    "throughput_mbps", "avg_queue", "max_queue", "drops", "reward", "mean_cap", "cap_correlation",
]
COMPARE_COLUMNS = ["qdisc", "experiments", "avg_throughput_mbps", "avg_max_queue", "avg_queue"]
ORACLE_COLUMNS = ["cap", "throughput_mbps", "avg_queue", "max_queue", "drops", "reward", "best"]


@dataclass(frozen=True)
class TraceRow:
    ticks: int
    event: str
    queue_len: int
    cap: Optional[int]
    cwnd: float
    delivered_bytes: int

    @property
    def time_s(self) -> float:
        return self.ticks / TICKS_PER_SECOND


def format_value(value: Any) -> str:
    """Lossless text form: repr for floats, empty string for None."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_optional_int(text: str) -> Optional[int]:
    return int(text) if text != "" else None


def parse_optional_float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> int:
    """Write dictionaries as CSV; returns the number of rows written."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(target, 'w', newline='') as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=list(columns), extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({name: format_value(row.get(name)) for name in columns})
            count += 1
    logger.debug("csv_written", path=str(target), rows=count)
    return count


def read_rows(path: str) -> List[Dict[str, str]]:
    with open(path, newline='') as csvfile:
        return list(csv.DictReader(csvfile))


def read_typed_rows(path: str, parsers: Dict[str, Callable[[str], Any]]) -> List[Dict[str, Any]]:
    """Read a CSV converting the listed columns; other columns stay text."""
    typed = []
    for row in read_rows(path):
        typed.append({name: parsers.get(name, str)(value) for name, value in row.items()})
    return typed


def write_trace(path: str, rows: Iterable[Tuple[int, str, int, Optional[int], float, int]]) -> int:
    """Write simulator trace tuples with the fixed trace column contract."""
    return write_rows(path, TRACE_COLUMNS, (
        {
            "time_s": f"{ticks / TICKS_PER_SECOND:.6f}",
            "event": event,
            "queue_len_pkts": queue_len,
            "cap_pkts": cap,
            "cwnd_pkts": float(cwnd),
            "delivered_bytes": delivered,
        }
        for ticks, event, queue_len, cap, cwnd, delivered in rows
    ))


def read_trace(path: str) -> List[TraceRow]:
    rows = read_rows(path)
    if rows and list(rows[0].keys()) != TRACE_COLUMNS:
        raise ValueError(f"'{path}' does not have the trace columns {TRACE_COLUMNS}")
    return [
        TraceRow(
            ticks=int(round(float(row["time_s"]) * TICKS_PER_SECOND)),
            event=row["event"],
            queue_len=int(row["queue_len_pkts"]),
            cap=parse_optional_int(row["cap_pkts"]),
            cwnd=float(row["cwnd_pkts"]),
            delivered_bytes=int(row["delivered_bytes"]),
        )
        for row in rows
    ]


def trace_tuples(rows: Iterable[TraceRow]) -> List[Tuple[int, str, int, Optional[int], float, int]]:
    return [(r.ticks, r.event, r.queue_len, r.cap, r.cwnd, r.delivered_bytes) for r in rows]


class CsvAppender:
    """Streams rows to a CSV file, flushing after each row."""

    def __init__(self, path: str, columns: Sequence[str]):
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        self._file = open(target, 'w', newline='')
        self._writer = csv.DictWriter(self._file, fieldnames=self.columns, extrasaction='ignore')
        self._writer.writeheader()

    def write(self, row: Dict[str, Any]) -> None:
        self._writer.writerow({name: format_value(row.get(name)) for name in self.columns})
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> 'CsvAppender':
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()


def read_training_log(path: str) -> List[Dict[str, Any]]:
    return read_typed_rows(path, {
        "batch": int,
        "flows_seen": int,
        "mean_actor_output": float,
        "mean_reward": float,
        "actor_loss": float,
        "critic_loss": parse_optional_float,
        "heldout_critic_mse": parse_optional_float,
    })


def feature_dump_row(flow_id: int, t_exp_s: float, target_cap: int,
                     features: Sequence[float]) -> Dict[str, Any]:
    row: Dict[str, Any] = {"flow_id": flow_id, "t_exp_s": float(t_exp_s), "target_cap": target_cap}
    row.update({name: float(value) for name, value in zip(FEATURE_NAMES, features)})
    return row


def read_sweep(path: str) -> List[Dict[str, Any]]:
    """Sweep rows with numeric columns parsed; aggregate rows leave per-flow columns empty."""
    return read_typed_rows(path, {
        "bandwidth_mbps": parse_optional_float,
        "delay_ms": parse_optional_float,
        "duration_s": parse_optional_float,
        "seed": parse_optional_int,
        "throughput_mbps": float,
        "avg_queue": float,
        "max_queue": float,
        "drops": float,
        "reward": float,
        "mean_cap": parse_optional_float,
        "cap_correlation": parse_optional_float,
    })
