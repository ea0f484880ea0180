"""Domain types and time/capacity arithmetic shared by both agents.

Time is an integer tick axis (``tick_ms`` milliseconds per tick, 100 ms by
default) and rates are integer kilobits per second. Intervals are half-open
``[start, end)`` everywhere.
"""

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import _intervals

DEFAULT_TICK_MS = 100
DEFAULT_WINDOW_TICKS = 2000


class MalformedTrajectory(ValueError):
    """A demand trajectory violates its structural invariants."""


def mbps_to_kbps(mbps: float) -> int:
    """Convert Mbit/s to integer kbit/s."""
    return int(round(float(mbps) * 1000))


def kbps_to_mbps(kbps: int) -> float:
    """Convert kbit/s to Mbit/s."""
    return kbps / 1000.0


def seconds_to_ticks(seconds: float, tick_ms: int = DEFAULT_TICK_MS) -> int:
    """Convert seconds to a whole number of ticks (rounded to nearest)."""
    return int(round(float(seconds) * 1000.0 / tick_ms))


def ticks_to_seconds(ticks: int, tick_ms: int = DEFAULT_TICK_MS) -> float:
    """Convert ticks to seconds."""
    return ticks * tick_ms / 1000.0


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open tick interval ``[start_tick, end_tick)``."""

    start_tick: int
    end_tick: int

    def __post_init__(self):
        if self.start_tick < 0:
            raise ValueError(f"Interval start must be >= 0, got {self.start_tick}")
        if self.start_tick >= self.end_tick:
            raise ValueError(
                f"Interval needs start < end, got [{self.start_tick}, {self.end_tick})"
            )

    @property
    def duration(self) -> int:
        return self.end_tick - self.start_tick

    def contains(self, t: int) -> bool:
        return self.start_tick <= t < self.end_tick

    def as_tuple(self) -> Tuple[int, int]:
        return (self.start_tick, self.end_tick)


def normalize_intervals(intervals: Iterable[Interval]) -> Tuple[Interval, ...]:
    """Return the normalized (sorted, disjoint, non-adjacent) interval set."""
    return tuple(
        Interval(s, e)
        for s, e in _intervals.normalize(iv.as_tuple() for iv in intervals)
    )


def intervals_from_tuples(pairs) -> Tuple[Interval, ...]:
    return tuple(Interval(int(s), int(e)) for s, e in pairs)


@dataclass(frozen=True)
class QoSProfile:
    """Named guaranteed-bit-rate level the network can enforce.

    Parameters
    ----------
    profile_id : str
        Opaque identifier.
    rate_kbps : int
        Guaranteed rate in kbit/s, positive.
    qos_class_label : str
        Informational class label, e.g. ``"5QI=4"``.
    """

    profile_id: str
    rate_kbps: int
    qos_class_label: str = ""

    def __post_init__(self):
        if self.rate_kbps <= 0:
            raise ValueError(
                f"Profile {self.profile_id!r} needs a positive rate, "
                f"got {self.rate_kbps} kbps"
            )

    @property
    def guaranteed_rate(self) -> float:
        """Guaranteed rate in Mbit/s."""
        return kbps_to_mbps(self.rate_kbps)


class ProfileCatalog:
    """Ordered set of QoS profiles, ascending by rate.

    Parameters
    ----------
    profiles : sequence of QoSProfile
        Profiles with unique identifiers. Order does not matter.
    """

    def __init__(self, profiles: Sequence[QoSProfile]):
        ids = [p.profile_id for p in profiles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Duplicate profile identifiers in catalog: {ids}")
        if len(profiles) == 0:
            raise ValueError("A profile catalog needs at least one profile")
        self.profiles: Tuple[QoSProfile, ...] = tuple(
            sorted(profiles, key=lambda p: (p.rate_kbps, p.profile_id))
        )
        self._by_id: Dict[str, QoSProfile] = {p.profile_id: p for p in self.profiles}

    @classmethod
    def from_mbps(cls, rates, label: str = "5QI=4", prefix: str = "gbr-"):
        """Build a catalog with ids ``gbr-<rate>`` from Mbit/s values."""
        return cls(
            [
                QoSProfile(f"{prefix}{float(r):g}", mbps_to_kbps(r), label)
                for r in rates
            ]
        )

    def __iter__(self):
        return iter(self.profiles)

    def __len__(self):
        return len(self.profiles)

    def __contains__(self, profile_id):
        return profile_id in self._by_id

    def __eq__(self, other):
        return isinstance(other, ProfileCatalog) and self.profiles == other.profiles

    def __repr__(self):
        return f"ProfileCatalog({[p.profile_id for p in self.profiles]})"

    def get(self, profile_id: str) -> QoSProfile:
        try:
            return self._by_id[profile_id]
        except KeyError:
            raise KeyError(f"Unknown QoS profile {profile_id!r}") from None

    def rate_of(self, profile_id: str) -> int:
        return self.get(profile_id).rate_kbps

    def index_of(self, profile_id: str) -> int:
        return self.profiles.index(self.get(profile_id))

    def highest_at_most(self, kbps) -> Optional[QoSProfile]:
        """Return the fastest profile whose rate is <= ``kbps`` (or None)."""
        best = None
        for p in self.profiles:
            if p.rate_kbps <= kbps:
                best = p
        return best

    def admissible(self, kbps) -> Tuple[QoSProfile, ...]:
        """Return profiles with rate <= ``kbps``, fastest first."""
        return tuple(p for p in reversed(self.profiles) if p.rate_kbps <= kbps)

    def levels_below(self, profile_id: str, levels: int) -> QoSProfile:
        """Return the profile ``levels`` catalog steps slower (floored)."""
        return self.profiles[max(self.index_of(profile_id) - levels, 0)]

    def between(self, low_id: str, high_id: str) -> Tuple[QoSProfile, ...]:
        """Return profiles with rates in ``[rate(low), rate(high)]``, ascending."""
        lo, hi = self.rate_of(low_id), self.rate_of(high_id)
        return tuple(p for p in self.profiles if lo <= p.rate_kbps <= hi)


@dataclass(frozen=True)
class CapacitySchedule:
    """Piecewise-constant capacity; the last epoch extends forever.

    Parameters
    ----------
    epochs : tuple of (int, int)
        ``(start_tick, capacity_kbps)`` pairs, strictly increasing starts,
        first start at tick 0, capacities >= 0.
    """

    epochs: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        epochs = tuple((int(s), int(c)) for s, c in self.epochs)
        object.__setattr__(self, "epochs", epochs)
        if not epochs or epochs[0][0] != 0:
            raise ValueError("Capacity schedule must start with an epoch at tick 0")
        starts = [s for s, _ in epochs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"Epoch starts must be strictly increasing: {starts}")
        if any(c < 0 for _, c in epochs):
            raise ValueError("Epoch capacities must be >= 0")

    @classmethod
    def constant(cls, kbps: int):
        return cls(((0, kbps),))

    @classmethod
    def from_mbps(cls, epochs, tick_ms: int = DEFAULT_TICK_MS):
        """Build from ``(start_seconds, capacity_mbps)`` pairs."""
        return cls(
            tuple(
                (seconds_to_ticks(s, tick_ms), mbps_to_kbps(c)) for s, c in epochs
            )
        )

    def capacity_at(self, t: int) -> int:
        cap = self.epochs[0][1]
        for s, c in self.epochs:
            if s > t:
                break
            cap = c
        return cap

    def as_array(self, start: int, end: int) -> np.ndarray:
        """Per-tick capacity over ``[start, end)`` as an int64 array."""
        out = np.zeros(max(end - start, 0), dtype=np.int64)
        for i, (s, c) in enumerate(self.epochs):
            # last epoch open-ended
            e = self.epochs[i + 1][0] if i + 1 < len(self.epochs) else max(end, s)
            lo, hi = max(s, start), min(e, end)
            if lo < hi:
                out[lo - start : hi - start] = c
        return out

    def epoch_index(self, t: int) -> int:
        idx = 0
        for i, (s, _) in enumerate(self.epochs):
            if s <= t:
                idx = i
        return idx

    def with_change(self, tick: int, kbps: int):
        """Return a schedule where capacity is ``kbps`` from ``tick`` onward."""
        kept = [(s, c) for s, c in self.epochs if s < tick]
        return CapacitySchedule(tuple(kept) + ((tick, kbps),))


@dataclass(frozen=True)
class PlanningWindow:
    """Rolling window ``[start, start + length)``."""

    start: int
    length: int = DEFAULT_WINDOW_TICKS

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"Planning window length must be > 0, got {self.length}")
        if self.start < 0:
            raise ValueError(f"Planning window start must be >= 0, got {self.start}")

    @property
    def end(self) -> int:
        return self.start + self.length

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end

    def slide(self, new_start: int):
        return PlanningWindow(new_start, self.length)


class Criticality(str, enum.Enum):
    CRITICAL = "critical"
    ROUTINE = "routine"
    BACKGROUND = "background"


class WorkflowClass(str, enum.Enum):
    CRITICAL_INSPECTION = "critical_inspection"
    ROUTINE_MONITORING = "routine_monitoring"
    BACKGROUND_SENSING = "background_sensing"


@dataclass(frozen=True)
class PhaseSpec:
    """One workflow phase and its adaptation bounds."""

    phase_id: str
    order_index: int
    duration: int
    preferred_profile: str
    min_acceptable_profile: str
    deferrable: bool = False
    max_deferral: int = 0
    criticality: Criticality = Criticality.ROUTINE

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"Phase {self.phase_id!r} needs duration > 0")
        if not self.deferrable and self.max_deferral != 0:
            raise ValueError(
                f"Phase {self.phase_id!r} is not deferrable but max_deferral="
                f"{self.max_deferral}"
            )
        if self.max_deferral < 0:
            raise ValueError(f"Phase {self.phase_id!r} has negative max_deferral")

    def check_catalog(self, catalog: ProfileCatalog):
        if catalog.rate_of(self.min_acceptable_profile) > catalog.rate_of(
            self.preferred_profile
        ):
            raise ValueError(
                f"Phase {self.phase_id!r}: min_acceptable_profile is faster than "
                "preferred_profile"
            )


@dataclass(frozen=True)
class WorkflowSpec:
    """Multi-phase industrial workflow."""

    workflow_id: str
    agent_id: str
    workflow_class: WorkflowClass
    priority: int
    phases: Tuple[PhaseSpec, ...]
    release_tick: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError(f"Workflow {self.workflow_id!r} has no phases")
        if [p.order_index for p in self.phases] != list(range(len(self.phases))):
            raise ValueError(
                f"Workflow {self.workflow_id!r}: phase order_index must be 0..n-1"
            )

    @property
    def total_duration(self) -> int:
        return sum(p.duration for p in self.phases)

    def phase(self, phase_id: str) -> PhaseSpec:
        for p in self.phases:
            if p.phase_id == phase_id:
                return p
        raise KeyError(f"Workflow {self.workflow_id!r} has no phase {phase_id!r}")

    def check_catalog(self, catalog: ProfileCatalog):
        for p in self.phases:
            p.check_catalog(catalog)


@dataclass(frozen=True, order=True)
class SegmentAssignment:
    """A profile assigned to part of one phase."""

    interval: Interval
    phase_id: str
    profile_id: str
    rate_kbps: int


@dataclass(frozen=True)
class PhaseBounds:
    """Adaptation range of one phase as disclosed in M2."""

    phase_id: str
    order_index: int
    duration: int
    preferred_profile: str
    preferred_kbps: int
    min_profile: str
    min_kbps: int
    max_deferral: int = 0


@dataclass(frozen=True)
class AdaptationPermissions:
    allow_downgrade: bool = True
    allow_defer: bool = False
    allow_replan: bool = True


@dataclass(frozen=True)
class DemandTrajectory:
    """Phase-ordered profile schedule submitted in M2 and M4.

    A trajectory without segments is a withdrawal.
    """

    workflow_id: str
    agent_id: str
    priority: int
    segments: Tuple[SegmentAssignment, ...] = ()
    permissions: AdaptationPermissions = field(default_factory=AdaptationPermissions)
    phase_bounds: Tuple[PhaseBounds, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "phase_bounds", tuple(self.phase_bounds))

    @property
    def is_empty(self) -> bool:
        return not self.segments

    @property
    def start(self) -> Optional[int]:
        return self.segments[0].interval.start_tick if self.segments else None

    @property
    def horizon(self) -> Optional[int]:
        """End tick of the last segment."""
        return self.segments[-1].interval.end_tick if self.segments else None

    def demand_at(self, t: int) -> int:
        for seg in self.segments:
            if seg.interval.contains(t):
                return seg.rate_kbps
        return 0

    def demand_array(self, start: int, end: int) -> np.ndarray:
        """Per-tick demand over ``[start, end)`` in kbit/s."""
        out = np.zeros(max(end - start, 0), dtype=np.int64)
        for seg in self.segments:
            lo = max(seg.interval.start_tick, start)
            hi = min(seg.interval.end_tick, end)
            if lo < hi:
                out[lo - start : hi - start] = seg.rate_kbps
        return out

    def bounds_for(self, phase_id: str) -> Optional[PhaseBounds]:
        for b in self.phase_bounds:
            if b.phase_id == phase_id:
                return b
        return None

    def phase_ids(self) -> List[str]:
        """Phase identifiers in the order they appear."""
        seen = []
        for seg in self.segments:
            if seg.phase_id not in seen:
                seen.append(seg.phase_id)
        return seen

    def phase_segments(self, phase_id: str) -> Tuple[SegmentAssignment, ...]:
        return tuple(s for s in self.segments if s.phase_id == phase_id)

    def phase_span(self, phase_id: str) -> Optional[Interval]:
        segs = self.phase_segments(phase_id)
        if not segs:
            return None
        return Interval(segs[0].interval.start_tick, segs[-1].interval.end_tick)

    def with_segments(self, segments: Iterable[SegmentAssignment]):
        """Return a copy with new (merged, sorted) segments."""
        return replace(self, segments=merge_segments(segments))

    def validate(self):
        """Check the structural invariants.

        Raises
        ------
        MalformedTrajectory
            If segments overlap or are unordered, a phase has internal gaps,
            phases are out of order, or a phase disagrees with its bounds.
        """
        segs = self.segments
        for a, b in zip(segs, segs[1:]):
            if b.interval.start_tick < a.interval.end_tick:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: segments overlap or are unordered at "
                    f"tick {b.interval.start_tick}"
                )
        for s in segs:
            if s.rate_kbps <= 0:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: segment rate must be positive"
                )
        order = self.phase_ids()
        # a phase is one contiguous run of segments
        runs = [segs[0].phase_id] if segs else []
        for a, b in zip(segs, segs[1:]):
            if b.phase_id != a.phase_id:
                runs.append(b.phase_id)
            elif b.interval.start_tick != a.interval.end_tick:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: gap inside phase {a.phase_id!r}"
                )
        if len(runs) != len(order):
            raise MalformedTrajectory(
                f"{self.workflow_id}: phase segments are interleaved"
            )
        if not self.phase_bounds:
            return
        known = {b.phase_id: b for b in self.phase_bounds}
        prev_end = None
        prev_index = None
        for pid in order:
            b = known.get(pid)
            if b is None:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: phase {pid!r} missing from phase bounds"
                )
            if prev_index is not None and b.order_index <= prev_index:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: phase {pid!r} violates phase order"
                )
            span = self.phase_span(pid)
            if span.duration != b.duration:
                raise MalformedTrajectory(
                    f"{self.workflow_id}: phase {pid!r} lasts {span.duration} "
                    f"ticks, expected {b.duration}"
                )
            if (
                prev_end is not None
                and prev_index == b.order_index - 1
                and span.start_tick - prev_end > b.max_deferral
            ):
                raise MalformedTrajectory(
                    f"{self.workflow_id}: phase {pid!r} deferred beyond "
                    f"{b.max_deferral} ticks"
                )
            for s in self.phase_segments(pid):
                if not b.min_kbps <= s.rate_kbps <= b.preferred_kbps:
                    raise MalformedTrajectory(
                        f"{self.workflow_id}: phase {pid!r} segment rate "
                        f"{s.rate_kbps} outside [{b.min_kbps}, {b.preferred_kbps}]"
                    )
            prev_end = span.end_tick
            prev_index = b.order_index


def merge_segments(
    segments: Iterable[SegmentAssignment],
) -> Tuple[SegmentAssignment, ...]:
    """Sort segments and merge adjacent ones of the same phase and profile."""
    out: List[SegmentAssignment] = []
    for seg in sorted(segments):
        if (
            out
            and out[-1].phase_id == seg.phase_id
            and out[-1].profile_id == seg.profile_id
            and out[-1].interval.end_tick == seg.interval.start_tick
        ):
            prev = out.pop()
            seg = replace(
                prev, interval=Interval(prev.interval.start_tick, seg.interval.end_tick)
            )
        out.append(seg)
    return tuple(out)


def reassign(
    trajectory: DemandTrajectory,
    start: int,
    end: int,
    profile: QoSProfile,
    phase_id: Optional[str] = None,
) -> DemandTrajectory:
    """Assign ``profile`` to every segment portion inside ``[start, end)``.

    Parameters
    ----------
    trajectory : DemandTrajectory
        Trajectory to modify.
    start, end : int
        Affected tick range.
    profile : QoSProfile
        Profile for the overlapped portions.
    phase_id : str | None
        Restrict the change to one phase.

    Returns
    -------
    DemandTrajectory
        Copy with the portions split out and reassigned.
    """
    out = []
    for seg in trajectory.segments:
        s, e = seg.interval.start_tick, seg.interval.end_tick
        lo, hi = max(s, start), min(e, end)
        if lo >= hi or (phase_id is not None and seg.phase_id != phase_id):
            out.append(seg)
            continue
        if s < lo:
            out.append(replace(seg, interval=Interval(s, lo)))
        out.append(
            replace(
                seg,
                interval=Interval(lo, hi),
                profile_id=profile.profile_id,
                rate_kbps=profile.rate_kbps,
            )
        )
        if hi < e:
            out.append(replace(seg, interval=Interval(hi, e)))
    return trajectory.with_segments(out)


class CommitmentState(str, enum.Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True)
class Commitment:
    """An admitted demand trajectory."""

    admission_seq: int
    trajectory: DemandTrajectory
    state: CommitmentState = CommitmentState.ACTIVE

    @property
    def is_active(self) -> bool:
        return self.state == CommitmentState.ACTIVE


def demand_at(trajectory: DemandTrajectory, t: int) -> int:
    """Rate (kbit/s) of the segment containing tick ``t``, else 0."""
    return trajectory.demand_at(t)


def residual_capacity(
    schedule: CapacitySchedule, commitments: Iterable[Commitment], t: int
) -> int:
    """Capacity at ``t`` minus the rates of active commitments at ``t``.

    Parameters
    ----------
    schedule : CapacitySchedule
        Capacity schedule.
    commitments : iterable of Commitment
        Commitments; only active ones count.
    t : int
        Tick, >= 0.

    Returns
    -------
    int
        Residual capacity in kbit/s. Negative only after an external drop.
    """
    if t < 0:
        raise ValueError(f"Tick must be >= 0, got {t}")
    used = sum(c.trajectory.demand_at(t) for c in commitments if c.is_active)
    return schedule.capacity_at(t) - used


def residual_array(
    schedule: CapacitySchedule, commitments: Iterable[Commitment], start: int, end: int
) -> np.ndarray:
    """Vectorized :func:`residual_capacity` over ``[start, end)``."""
    out = schedule.as_array(start, end)
    for c in commitments:
        if c.is_active:
            out -= c.trajectory.demand_array(start, end)
    return out
