"""Run metrics."""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .model import DEFAULT_TICK_MS, ticks_to_seconds


@dataclass
class RunMetrics:
    """Outcome of one simulation run.

    Tick-valued fields (``interruptions``, ``adaptation_times``,
    ``end_tick``) are converted to seconds by :meth:`to_dict`.
    ``utilization_series`` holds delivered/capacity per tick and is written
    to CSV rather than the metrics document.
    """

    name: str = ""
    mode: str = "coordinated"
    seed: int = 0
    agent_count: int = 0
    total_workflows: int = 0
    completed_optimal: int = 0
    completed_degraded: int = 0
    failed: int = 0
    hard_rejections: int = 0
    # (start_tick, duration_ticks)
    interruptions: List[Tuple[int, int]] = field(default_factory=list)
    mean_active_throughput: float = 0.0
    utilization: float = 0.0
    utilization_series: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=float), repr=False
    )
    adaptation_times: List[int] = field(default_factory=list)
    stage2_rounds: int = 0
    end_tick: int = 0
    tick_ms: int = DEFAULT_TICK_MS

    @property
    def completed(self) -> int:
        return self.completed_optimal + self.completed_degraded

    @property
    def completion_rate(self) -> float:
        if self.total_workflows == 0:
            return 0.0
        return self.completed / self.total_workflows

    @property
    def stream_interruptions(self) -> int:
        return len(self.interruptions)

    def is_conserved(self) -> bool:
        return self.completed + self.failed == self.total_workflows

    def _s(self, ticks) -> float:
        return round(ticks_to_seconds(ticks, self.tick_ms), 6)

    def to_dict(self) -> dict:
        """Machine-readable metrics document (seconds and Mbit/s)."""
        return {
            "name": self.name,
            "mode": self.mode,
            "seed": self.seed,
            "agent_count": self.agent_count,
            "total_workflows": self.total_workflows,
            "completed_optimal": self.completed_optimal,
            "completed_degraded": self.completed_degraded,
            "failed": self.failed,
            "completion_rate": round(self.completion_rate, 6),
            "hard_rejections": self.hard_rejections,
            "stream_interruptions": {
                "count": self.stream_interruptions,
                "starts_s": [self._s(s) for s, _ in self.interruptions],
                "durations_s": [self._s(d) for _, d in self.interruptions],
            },
            "mean_active_throughput_mbps": round(self.mean_active_throughput, 6),
            "utilization": round(self.utilization, 6),
            "stage2_rounds": self.stage2_rounds,
            "adaptation_times_s": [self._s(t) for t in self.adaptation_times],
            "duration_s": self._s(self.end_tick),
        }
