"""Seeded Poisson workload for the multi-agent scenario."""

import logging
from typing import List

import numpy as np

from .model import Criticality, PhaseSpec, WorkflowClass, WorkflowSpec

logger = logging.getLogger(__name__)

_CRITICALITY = {
    WorkflowClass.CRITICAL_INSPECTION: Criticality.CRITICAL,
    WorkflowClass.ROUTINE_MONITORING: Criticality.ROUTINE,
    WorkflowClass.BACKGROUND_SENSING: Criticality.BACKGROUND,
}


def agent_id(index: int) -> str:
    return f"agent-{index:03d}"


def agent_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 substream of agent ``index`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def generate_workload(config) -> List[WorkflowSpec]:
    """Draw every agent's workflows for a scenario.

    Each agent has its own substream, so adding agents leaves the workload
    of the others unchanged. Arrivals are Poisson (exponential gaps) and
    stop at the scenario duration.

    Parameters
    ----------
    config : ScenarioConfig
        Scenario; ``agent_count`` agents are generated.

    Returns
    -------
    list of WorkflowSpec
        Workflows sorted by release tick, then identifier.
    """
    w = config.workload
    catalog = config.catalog
    classes = [c for c, _ in w.class_mix]
    probs = np.array([p for _, p in w.class_mix], dtype=float)
    probs = probs / probs.sum()
    out: List[WorkflowSpec] = []
    for i in range(config.agent_count):
        rng = agent_rng(config.seed, i)
        aid = agent_id(i)
        t = 0.0
        n = 0
        while True:
            t += rng.exponential(w.mean_interarrival)
            release = int(t)
            if release >= config.duration:
                break
            cls = classes[int(rng.choice(len(classes), p=probs))]
            preferred = w.lookup(w.preferred_profiles, cls)
            fraction = w.lookup(w.deferrable_fraction, cls, 0.0)
            phases = []
            count = int(rng.integers(w.phase_count[0], w.phase_count[1], endpoint=True))
            for k in range(count):
                lo, hi = w.phase_duration
                duration = int(rng.integers(lo, hi, endpoint=True))
                pref = preferred[int(rng.integers(len(preferred)))]
                deferrable = bool(rng.random() < fraction)
                phases.append(
                    PhaseSpec(
                        phase_id=f"p{k}",
                        order_index=k,
                        duration=duration,
                        preferred_profile=pref,
                        min_acceptable_profile=catalog.levels_below(
                            pref, w.min_acceptable_levels_below
                        ).profile_id,
                        deferrable=deferrable,
                        max_deferral=w.max_deferral if deferrable else 0,
                        criticality=_CRITICALITY[cls],
                    )
                )
            out.append(
                WorkflowSpec(
                    workflow_id=f"{aid}/wf-{n:03d}",
                    agent_id=aid,
                    workflow_class=cls,
                    priority=w.lookup(w.priorities, cls, 1),
                    phases=tuple(phases),
                    release_tick=release,
                )
            )
            n += 1
    out.sort(key=lambda s: (s.release_tick, s.workflow_id))
    logger.debug("generated %d workflows for %d agents", len(out), config.agent_count)
    return out
