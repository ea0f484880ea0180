"""Single-workflow testbed replay.

A 30 Mbit/s cell shared by one inspection workflow and a competing 20 Mbit/s
flow, with an injected capacity drop and recovery. The scenario ships as
``wfqos/data/testbed.yaml``.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import ticks_to_seconds
from .scenario import Mode, ScenarioConfig, bundled_config
from .simulator import RunResult, run

logger = logging.getLogger(__name__)

WORKFLOW_ID = "inspection-drone"


@dataclass
class ReplayResult:
    """One replay: the run plus the workflow's delivered-rate timeline."""

    result: RunResult
    throughput: np.ndarray
    capacity: np.ndarray

    @property
    def metrics(self):
        return self.result.metrics


def run_testbed_replay(
    mode: Union[str, Mode], config: Optional[ScenarioConfig] = None
) -> ReplayResult:
    """Replay the testbed scenario in one operating mode.

    Parameters
    ----------
    mode : str | Mode
        ``"coordinated"`` or ``"baseline"``.
    config : ScenarioConfig | None
        Scenario to replay; the bundled ``testbed`` config when None.

    Returns
    -------
    ReplayResult
        Metrics, event log and the per-tick delivered rate (kbit/s) of the
        inspection workflow.
    """
    config = (config or bundled_config("testbed")).with_mode(mode)
    result = run(config)
    util = result.utilization
    n = len(util.capacity)
    throughput = util.per_flow.get(WORKFLOW_ID, np.zeros(n, dtype=np.int64))
    return ReplayResult(result, throughput, util.capacity)


def comparison(coordinated: ReplayResult, baseline: ReplayResult) -> dict:
    """Side-by-side summary of both replays."""
    out = {}
    for key, rep in (("coordinated", coordinated), ("baseline", baseline)):
        m = rep.metrics
        out[key] = {
            "stream_interruptions": m.stream_interruptions,
            "interruption_starts_s": [
                round(ticks_to_seconds(s, m.tick_ms), 6) for s, _ in m.interruptions
            ],
            "interruption_durations_s": [
                round(ticks_to_seconds(d, m.tick_ms), 6) for _, d in m.interruptions
            ],
            "mean_active_throughput_mbps": round(m.mean_active_throughput, 6),
            "stage2_rounds": m.stage2_rounds,
            "adaptation_times_s": [
                round(ticks_to_seconds(t, m.tick_ms), 6) for t in m.adaptation_times
            ],
            "hard_rejections": m.hard_rejections,
            "outcome": (
                "completed_optimal"
                if m.completed_optimal
                else "completed_degraded"
                if m.completed_degraded
                else "failed"
            ),
        }
    out["interruptions"] = {
        "coordinated": coordinated.metrics.stream_interruptions,
        "baseline": baseline.metrics.stream_interruptions,
    }
    base = baseline.metrics.mean_active_throughput
    out["throughput_ratio"] = (
        round(coordinated.metrics.mean_active_throughput / base, 6) if base else None
    )
    return out


def throughput_rows(coordinated: ReplayResult, baseline: ReplayResult, tick_ms: int):
    """Per-tick rows ``(time_s, capacity, coordinated, baseline)`` in Mbit/s."""
    n = max(len(coordinated.throughput), len(baseline.throughput))

    def padded(a):
        return np.pad(a, (0, n - len(a)))

    cap = padded(coordinated.capacity)
    co = padded(coordinated.throughput)
    bl = padded(baseline.throughput)
    for t in range(n):
        yield (
            round(ticks_to_seconds(t, tick_ms), 6),
            cap[t] / 1000.0,
            co[t] / 1000.0,
            bl[t] / 1000.0,
        )
