"""Static SVG line charts of traces and oracle curves."""

from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import structlog  # noqa: E402

from lfq.config import TICKS_PER_SECOND  # noqa: E402

logger = structlog.get_logger(__name__)

# Fixed ids and no date so equal inputs give byte-identical files
plt.rcParams["svg.hashsalt"] = "lfq"
SVG_METADATA = {"Date": None}


def _save(fig: plt.Figure, path: str) -> str:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(target, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.debug("chart_written", path=str(target))
    return str(target)


def trace_chart(path: str, rows: Sequence[Tuple[int, str, int, Optional[int], float, int]],
                title: str = "") -> str:
    """Queue length and cap against time."""
    times = [r[0] / TICKS_PER_SECOND for r in rows]
    queue = [r[2] for r in rows]
    cap_points = [(t, r[3]) for t, r in zip(times, rows) if r[3] is not None]

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(times, queue, label="queue length", linewidth=0.8)
    if cap_points:
        cap_t, cap_v = zip(*cap_points)
        ax.step(cap_t, cap_v, where="post", label="cap", linewidth=1.2)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("packets")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def oracle_chart(path: str, caps: Sequence[int], rewards: Sequence[float], best_cap: int,
                 bdp_packets: Optional[float] = None, title: str = "") -> str:
    """Reward against fixed cap, with the best cap and the BDP marked."""
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(caps, rewards, marker=".", label="reward")
    ax.axvline(best_cap, color="g", linestyle="dashed", label=f"best cap {best_cap}")
    if bdp_packets is not None:
        ax.axvline(bdp_packets, color="gray", linestyle="dotted", label=f"BDP {bdp_packets:.1f}")
    ax.set_xlabel("cap [packets]")
    ax.set_ylabel("reward")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
