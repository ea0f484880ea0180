"""Capability disclosure payloads: envelopes, verdicts and notifications."""

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _intervals
from .model import Interval, PlanningWindow, ProfileCatalog

# availability outside the disclosed window (not assessed by the network)
UNBOUNDED = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class EnvelopeEntry:
    """Validity of one profile over the planning window.

    Parameters
    ----------
    profile_id : str
        Profile identifier.
    rate_kbps : int
        Guaranteed rate of the profile.
    validity : tuple of Interval
        Normalized ticks at which the profile is sustainable.
    headroom_kbps : int | None
        Minimum residual over ``validity``; None when validity is empty.
    """

    profile_id: str
    rate_kbps: int
    validity: Tuple[Interval, ...] = ()
    headroom_kbps: Optional[int] = None

    def covers(self, start: int, end: int) -> bool:
        return _intervals.covers([iv.as_tuple() for iv in self.validity], start, end)

    def validity_mask(self, start: int, end: int) -> np.ndarray:
        return _intervals.intervals_to_mask(
            [iv.as_tuple() for iv in self.validity], start, end
        )


@dataclass(frozen=True)
class CapabilityEnvelope:
    """Scoped, time-bounded capability disclosure (M1 payload)."""

    window: PlanningWindow
    entries: Tuple[EnvelopeEntry, ...]
    scope_agent_id: str

    def entry(self, profile_id: str) -> Optional[EnvelopeEntry]:
        for e in self.entries:
            if e.profile_id == profile_id:
                return e
        return None

    def availability(self, start: int, end: int) -> np.ndarray:
        """Lower bound of the residual seen by the scoped agent.

        At tick ``t`` inside the window the bound is the largest headroom of
        an entry valid at ``t`` (0 if none); outside the window it is
        :data:`UNBOUNDED` because the network does not assess those ticks.

        Returns
        -------
        array of int64
            Per-tick bound over ``[start, end)``.
        """
        out = np.zeros(max(end - start, 0), dtype=np.int64)
        for e in self.entries:
            if e.headroom_kbps is None:
                continue
            mask = e.validity_mask(start, end)
            out[mask] = np.maximum(out[mask], e.headroom_kbps)
        ticks = np.arange(start, end)
        out[(ticks < self.window.start) | (ticks >= self.window.end)] = UNBOUNDED
        return out


@dataclass(frozen=True)
class ConflictSegment:
    """A maximal violating interval and the fastest profile that fits it."""

    interval: Interval
    max_profile_id: Optional[str] = None
    max_kbps: Optional[int] = None


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Accept (no conflicts) or Conflict (list of violating intervals)."""

    conflicts: Tuple[ConflictSegment, ...] = ()

    @property
    def accepted(self) -> bool:
        return not self.conflicts


ACCEPT = FeasibilityVerdict()


class Direction(str, enum.Enum):
    DEGRADATION = "degradation"
    IMPROVEMENT = "improvement"


@dataclass(frozen=True)
class ProfileOption:
    """A profile offered as admissible alternative."""

    profile_id: str
    rate_kbps: int


@dataclass(frozen=True)
class AffectedSegment:
    """An affected interval with its admissible alternatives (fastest first)."""

    interval: Interval
    alternatives: Tuple[ProfileOption, ...] = ()

    def best_within(self, low_kbps: int, high_kbps: int) -> Optional[ProfileOption]:
        for alt in self.alternatives:
            if low_kbps <= alt.rate_kbps <= high_kbps:
                return alt
        return None


@dataclass(frozen=True)
class CapabilityNotification:
    """Stage-2 capability notification (M3 payload)."""

    workflow_id: str
    affected: Tuple[AffectedSegment, ...] = ()
    direction: Direction = Direction.DEGRADATION
    admission_seq: Optional[int] = None

    @property
    def is_empty(self) -> bool:
        return not self.affected

    @classmethod
    def from_verdict(
        cls, workflow_id: str, verdict: FeasibilityVerdict, catalog: ProfileCatalog
    ):
        """Turn a Stage-1 Conflict into a degradation notification."""
        affected = []
        for c in verdict.conflicts:
            ceiling = c.max_kbps if c.max_kbps is not None else 0
            affected.append(
                AffectedSegment(
                    c.interval,
                    tuple(
                        ProfileOption(p.profile_id, p.rate_kbps)
                        for p in catalog.admissible(ceiling)
                    ),
                )
            )
        return cls(workflow_id, tuple(affected), Direction.DEGRADATION)
