"""Industrial agent: workflow state, trajectory construction and adaptation.

The agent only ever sees capability through its cached envelope and the
notifications it receives. Availability at tick ``t`` is the lower bound
``max{headroom(p) : t in validity(p)}`` minus the demand of the agent's
other workflows; ticks outside the envelope window are not bounded.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _intervals
from .envelope import (
    UNBOUNDED,
    CapabilityEnvelope,
    CapabilityNotification,
    Direction,
    ProfileOption,
)
from .model import (
    AdaptationPermissions,
    Criticality,
    DemandTrajectory,
    Interval,
    PhaseBounds,
    PhaseSpec,
    ProfileCatalog,
    QoSProfile,
    SegmentAssignment,
    WorkflowSpec,
    intervals_from_tuples,
    merge_segments,
    reassign,
)
from .protocol import AdmissionResult, Endpoint, Message, MessageKind, Revision

logger = logging.getLogger(__name__)


class InfeasibleWorkflow(ValueError):
    """No layout of a phase fits the disclosed capability.

    Parameters
    ----------
    phase_id : str
        The phase that cannot be placed.
    interval : Interval
        Where placement failed.
    """

    def __init__(self, phase_id: str, interval: Interval, msg: str = ""):
        super().__init__(
            msg
            or f"Phase {phase_id!r} has no admissible profile on "
            f"[{interval.start_tick}, {interval.end_tick})"
        )
        self.phase_id = phase_id
        self.interval = interval


class WorkflowStatus(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED_OPTIMAL = "completed_optimal"
    COMPLETED_DEGRADED = "completed_degraded"
    FAILED = "failed"

    @property
    def is_final(self) -> bool:
        return self in _FINAL


_FINAL = {
    WorkflowStatus.COMPLETED_OPTIMAL,
    WorkflowStatus.COMPLETED_DEGRADED,
    WorkflowStatus.FAILED,
}

_TRANSITIONS = {
    # a workflow refused before it ever ran goes straight to failed
    WorkflowStatus.PENDING: {WorkflowStatus.RUNNING, WorkflowStatus.FAILED},
    WorkflowStatus.RUNNING: _FINAL,
}


class AdaptationStrategy(str, enum.Enum):
    ACCEPT_LOWER = "accept_lower"
    DEFER = "defer"
    DOWNGRADE_NONCRITICAL = "downgrade_noncritical"
    REPLAN = "replan"


DEFAULT_STRATEGY_ORDER = (
    AdaptationStrategy.ACCEPT_LOWER,
    AdaptationStrategy.DEFER,
    AdaptationStrategy.DOWNGRADE_NONCRITICAL,
    AdaptationStrategy.REPLAN,
)


@dataclass(frozen=True)
class AdaptationPolicy:
    """Ordered adaptation strategies and the negotiation bound.

    Parameters
    ----------
    strategy_order : tuple of AdaptationStrategy
        Strategies tried in order; must be non-empty and free of repeats.
    max_rounds : int
        Revisions sent per trigger before the workflow is abandoned.
    """

    strategy_order: Tuple[AdaptationStrategy, ...] = DEFAULT_STRATEGY_ORDER
    max_rounds: int = 3

    def __post_init__(self):
        order = tuple(AdaptationStrategy(s) for s in self.strategy_order)
        object.__setattr__(self, "strategy_order", order)
        if not order:
            raise ValueError("strategy_order must not be empty")
        if len(set(order)) != len(order):
            raise ValueError(f"strategy_order has repeated entries: {order}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")

    def permitted(self, permissions: AdaptationPermissions):
        """Strategies allowed by the workflow's adaptation permissions."""
        allowed = {
            AdaptationStrategy.ACCEPT_LOWER: permissions.allow_downgrade,
            AdaptationStrategy.DOWNGRADE_NONCRITICAL: permissions.allow_downgrade,
            AdaptationStrategy.DEFER: permissions.allow_defer,
            AdaptationStrategy.REPLAN: permissions.allow_replan,
        }
        return tuple(s for s in self.strategy_order if allowed[s])


@dataclass
class WorkflowState:
    """Tracked state of one workflow.

    ``history`` lists ``(effective_tick, trajectory)`` pairs: each
    trajectory is the one in force from its tick until the next entry.
    """

    spec: WorkflowSpec
    trajectory: Optional[DemandTrajectory] = None
    cached_envelope: Optional[CapabilityEnvelope] = None
    status: WorkflowStatus = WorkflowStatus.PENDING
    current_phase_index: int = 0
    phase_start_tick: Optional[int] = None
    admission_seq: Optional[int] = None
    deferred: bool = False
    history: List[Tuple[int, DemandTrajectory]] = field(default_factory=list)
    finished_tick: Optional[int] = None

    @property
    def workflow_id(self) -> str:
        return self.spec.workflow_id

    def transition(self, status: WorkflowStatus, now: Optional[int] = None):
        if status == self.status:
            return
        if status not in _TRANSITIONS.get(self.status, ()):
            raise ValueError(
                f"{self.workflow_id}: illegal status change {self.status.value} -> "
                f"{status.value}"
            )
        self.status = status
        if status.is_final:
            self.finished_tick = now

    def record(self, trajectory: DemandTrajectory, effective_tick: int):
        """Note that ``trajectory`` is enforced from ``effective_tick`` on."""
        while self.history and self.history[-1][0] >= effective_tick:
            self.history.pop()
        self.history.append((effective_tick, trajectory))

    def executed_segments(self, until: Optional[int] = None):
        """Segments actually in force, clipped to their enforcement spans."""
        out = []
        for i, (tick, traj) in enumerate(self.history):
            nxt = self.history[i + 1][0] if i + 1 < len(self.history) else None
            end = nxt if nxt is not None else until
            for seg in traj.segments:
                lo = max(seg.interval.start_tick, tick)
                hi = seg.interval.end_tick
                if end is not None:
                    hi = min(hi, end)
                if lo < hi:
                    out.append(replace(seg, interval=Interval(lo, hi)))
        return out

    def ran_degraded(self, catalog: ProfileCatalog) -> bool:
        """Whether some executed segment ran below preferred or a phase slipped."""
        if self.deferred:
            return True
        for seg in self.executed_segments(self.finished_tick):
            pref = catalog.rate_of(self.spec.phase(seg.phase_id).preferred_profile)
            if seg.rate_kbps < pref:
                return True
        return False


def phase_bounds(
    spec: WorkflowSpec, catalog: ProfileCatalog
) -> Tuple[PhaseBounds, ...]:
    return tuple(
        PhaseBounds(
            phase_id=p.phase_id,
            order_index=p.order_index,
            duration=p.duration,
            preferred_profile=p.preferred_profile,
            preferred_kbps=catalog.rate_of(p.preferred_profile),
            min_profile=p.min_acceptable_profile,
            min_kbps=catalog.rate_of(p.min_acceptable_profile),
            max_deferral=p.max_deferral,
        )
        for p in spec.phases
    )


def permissions_for(
    spec: WorkflowSpec, catalog: ProfileCatalog
) -> AdaptationPermissions:
    return AdaptationPermissions(
        allow_downgrade=any(
            catalog.rate_of(p.min_acceptable_profile)
            < catalog.rate_of(p.preferred_profile)
            for p in spec.phases
        ),
        allow_defer=any(p.deferrable for p in spec.phases),
        allow_replan=True,
    )


def local_availability(
    envelope: Optional[CapabilityEnvelope],
    start: int,
    end: int,
    reserved: Sequence[DemandTrajectory] = (),
) -> np.ndarray:
    """Agent-local lower bound of residual capacity over ``[start, end)``."""
    if envelope is None:
        out = np.full(max(end - start, 0), UNBOUNDED, dtype=np.int64)
    else:
        out = envelope.availability(start, end)
    for traj in reserved:
        out = out - traj.demand_array(start, end)
    return out


def _notification_caps(notification, start, end) -> np.ndarray:
    """Per-tick ceiling implied by a degradation notification."""
    caps = np.full(max(end - start, 0), UNBOUNDED, dtype=np.int64)
    if notification is None or notification.direction != Direction.DEGRADATION:
        return caps
    for a in notification.affected:
        lo = max(a.interval.start_tick, start)
        hi = min(a.interval.end_tick, end)
        if lo < hi:
            best = max((o.rate_kbps for o in a.alternatives), default=0)
            window = slice(lo - start, hi - start)
            caps[window] = np.minimum(caps[window], best)
    return caps


class _Availability:
    """Lazily extended availability array starting at ``origin``."""

    def __init__(self, envelope, origin, reserved=(), notification=None):
        self.envelope = envelope
        self.origin = origin
        self.reserved = tuple(reserved)
        self.notification = notification
        self._arr = np.zeros(0, dtype=np.int64)

    def __call__(self, start: int, end: int) -> np.ndarray:
        need = end - self.origin
        if need > len(self._arr):
            size = max(need, 2 * len(self._arr), 256)
            end_tick = self.origin + size
            arr = local_availability(
                self.envelope, self.origin, end_tick, self.reserved
            )
            caps = _notification_caps(self.notification, self.origin, end_tick)
            arr = np.minimum(arr, caps)
            self._arr = arr
        return self._arr[start - self.origin : end - self.origin]


def _candidates(phase: PhaseSpec, catalog: ProfileCatalog, envelope):
    """Profiles in ``[min_acceptable, preferred]`` visible to the agent, ascending."""
    profiles = catalog.between(phase.min_acceptable_profile, phase.preferred_profile)
    if envelope is not None:
        profiles = tuple(
            p for p in profiles if envelope.entry(p.profile_id) is not None
        )
    return profiles


def _assign(phase, profiles, avail, start, duration, clamp=False):
    """Highest candidate per tick; None where even the lowest does not fit.

    With ``clamp`` such ticks get the lowest candidate instead.
    """
    rates = np.array([p.rate_kbps for p in profiles], dtype=np.int64)
    a = avail(start, start + duration)
    idx = np.searchsorted(rates, a, side="right") - 1
    if clamp:
        idx = np.maximum(idx, 0)
    if np.any(idx < 0):
        return None
    segs = []
    change = np.flatnonzero(np.diff(idx)) + 1
    bounds = np.concatenate(([0], change, [duration]))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        p = profiles[int(idx[lo])]
        segs.append(
            SegmentAssignment(
                Interval(start + int(lo), start + int(hi)),
                phase.phase_id,
                p.profile_id,
                p.rate_kbps,
            )
        )
    return segs


def _smallest_shift(phase, profiles, avail, start, duration, max_shift):
    """Smallest shift in ``[0, max_shift]`` making the phase placeable."""
    if not profiles:
        return None
    a = avail(start, start + max_shift + duration)
    bad = (a < profiles[0].rate_kbps).astype(np.int64)
    csum = np.concatenate(([0], np.cumsum(bad)))
    shifts = np.arange(max_shift + 1)
    clean = (csum[shifts + duration] - csum[shifts]) == 0
    hits = np.flatnonzero(clean)
    return int(hits[0]) if hits.size else None


def _lay_phases(
    spec: WorkflowSpec,
    catalog: ProfileCatalog,
    envelope,
    avail,
    start_tick: int,
    first_phase: int = 0,
    first_remaining: Optional[int] = None,
    first_budget: Optional[int] = None,
    horizon_end: Optional[int] = None,
    clamp: bool = False,
):
    """Lay out phases ``first_phase..`` back to back from ``start_tick``.

    ``first_remaining`` shortens the first phase (it is already running) and
    ``first_budget`` caps its deferral (0 forbids it). With ``clamp``, ticks
    below a phase's minimum request that minimum rather than failing.

    Returns
    -------
    segments : list of SegmentAssignment
        The laid-out segments.
    deferred : bool
        Whether some phase had to be shifted.
    """
    segs: List[SegmentAssignment] = []
    deferred = False
    t = start_tick
    for k, phase in enumerate(spec.phases[first_phase:]):
        if horizon_end is not None and t >= horizon_end and segs:
            break
        duration = first_remaining if (k == 0 and first_remaining) else phase.duration
        budget = phase.max_deferral
        if k == 0 and first_budget is not None:
            budget = first_budget
        profiles = _candidates(phase, catalog, envelope)
        placed = (
            _assign(phase, profiles, avail, t, duration, clamp) if profiles else None
        )
        if placed is None:
            shift = (
                _smallest_shift(phase, profiles, avail, t, duration, budget)
                if phase.deferrable and budget > 0
                else None
            )
            if shift is None:
                a = avail(t, t + duration)
                floor = profiles[0].rate_kbps if profiles else np.iinfo(np.int64).max
                bad = _intervals.mask_to_intervals(a < floor, t)
                s, e = bad[0] if bad else (t, t + duration)
                raise InfeasibleWorkflow(phase.phase_id, Interval(s, e))
            t += shift
            deferred = deferred or shift > 0
            placed = _assign(phase, profiles, avail, t, duration)
        segs.extend(placed)
        t += duration
    return segs, deferred


def construct_trajectory(
    spec: WorkflowSpec,
    envelope: Optional[CapabilityEnvelope],
    start_tick: int,
    catalog: ProfileCatalog,
    reserved: Sequence[DemandTrajectory] = (),
    horizon_end: Optional[int] = None,
) -> DemandTrajectory:
    """Build a demand trajectory for a workflow from a cached envelope.

    Phases are laid out back to back from ``start_tick``. Each tick gets the
    fastest profile in ``[min_acceptable, preferred]`` that the local
    availability admits, so a phase splits exactly at capability boundaries.
    A phase that does not fit anywhere is deferred by the smallest shift
    within ``max_deferral`` when deferrable.

    Parameters
    ----------
    spec : WorkflowSpec
        The workflow.
    envelope : CapabilityEnvelope | None
        Cached envelope; None means unconstrained.
    start_tick : int
        Start of the first phase.
    catalog : ProfileCatalog
        Profile catalog used to resolve rates.
    reserved : sequence of DemandTrajectory
        Other trajectories of the same agent sharing the envelope.
    horizon_end : int | None
        Lay out only phases starting before this tick.

    Returns
    -------
    DemandTrajectory
        The trajectory, carrying priority, permissions and phase bounds.

    Raises
    ------
    InfeasibleWorkflow
        If some phase admits no profile >= its minimum within its deferral
        budget.
    """
    traj, _ = _construct(spec, envelope, start_tick, catalog, reserved, horizon_end)
    return traj


def _construct(
    spec, envelope, start_tick, catalog, reserved=(), horizon_end=None, clamp=False
):
    avail = _Availability(envelope, start_tick, reserved)
    segs, deferred = _lay_phases(
        spec, catalog, envelope, avail, start_tick, horizon_end=horizon_end, clamp=clamp
    )
    return _trajectory(spec, catalog, segs), deferred


def _trajectory(spec, catalog, segments) -> DemandTrajectory:
    return DemandTrajectory(
        workflow_id=spec.workflow_id,
        agent_id=spec.agent_id,
        priority=spec.priority,
        segments=merge_segments(segments),
        permissions=permissions_for(spec, catalog),
        phase_bounds=phase_bounds(spec, catalog),
    )


@dataclass(frozen=True)
class LocalValidation:
    conflicts: Tuple[Interval, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.conflicts


def validate_locally(
    trajectory: DemandTrajectory,
    envelope: Optional[CapabilityEnvelope],
    reserved: Sequence[DemandTrajectory] = (),
    since: Optional[int] = None,
) -> LocalValidation:
    """Check a draft trajectory against the cached envelope.

    Every in-window part of a segment must lie in the validity of its
    profile, and the summed demand of this trajectory and the agent's other
    trajectories must stay within the local availability bound. Ticks
    before ``since`` have already been enforced and are not checked.
    """
    if envelope is None or trajectory.is_empty:
        return LocalValidation()
    ws, we = envelope.window.start, envelope.window.end
    if since is not None:
        ws = min(max(ws, since), we)
    if ws >= we:
        return LocalValidation()
    bad = np.zeros(we - ws, dtype=bool)
    for seg in trajectory.segments:
        lo = max(seg.interval.start_tick, ws)
        hi = min(seg.interval.end_tick, we)
        if lo >= hi:
            continue
        entry = envelope.entry(seg.profile_id)
        valid = (
            entry.validity_mask(lo, hi)
            if entry is not None
            else np.zeros(hi - lo, dtype=bool)
        )
        bad[lo - ws : hi - ws] |= ~valid
    if reserved:
        total = trajectory.demand_array(ws, we)
        for other in reserved:
            total += other.demand_array(ws, we)
        bad |= (total > 0) & (total > envelope.availability(ws, we))
    return LocalValidation(intervals_from_tuples(_intervals.mask_to_intervals(bad, ws)))


def abstract_for_submission(state: WorkflowState) -> DemandTrajectory:
    """Strip a workflow to the fields disclosed in M2/M4.

    Criticality labels and other workflow-internal structure never leave
    the agent; the result carries phase order, durations, selected
    profiles, priority and adaptation ranges only.

    Raises
    ------
    MalformedTrajectory
        If the state's trajectory is structurally invalid.
    """
    traj = state.trajectory
    out = DemandTrajectory(
        workflow_id=traj.workflow_id,
        agent_id=traj.agent_id,
        priority=traj.priority,
        segments=merge_segments(traj.segments),
        permissions=traj.permissions,
        phase_bounds=traj.phase_bounds,
    )
    out.validate()
    return out


@dataclass(frozen=True)
class Revised:
    """Adaptation outcome: a revised trajectory.

    ``companions`` are revisions of the agent's other workflows that must be
    submitted first (downgrades freeing headroom).
    """

    trajectory: DemandTrajectory
    strategy: Optional[AdaptationStrategy] = None
    deferred: bool = False
    companions: Tuple[Tuple[str, DemandTrajectory], ...] = ()


@dataclass(frozen=True)
class AbandonWorkflow:
    """Adaptation outcome: no permitted strategy works."""

    reason: str = ""


AdaptationOutcome = Union[Revised, AbandonWorkflow]


def _accept_lower(traj, notification, now):
    for a in notification.affected:
        lo_a = max(a.interval.start_tick, now)
        for seg in list(traj.segments):
            lo = max(seg.interval.start_tick, lo_a)
            hi = min(seg.interval.end_tick, a.interval.end_tick)
            if lo >= hi:
                continue
            b = traj.bounds_for(seg.phase_id)
            low, high = (b.min_kbps, b.preferred_kbps) if b else (0, seg.rate_kbps)
            alt = a.best_within(low, min(high, seg.rate_kbps))
            if alt is None:
                return None
            if alt.rate_kbps != seg.rate_kbps:
                traj = reassign(traj, lo, hi, _profile(alt), seg.phase_id)
    return traj


def _profile(option: ProfileOption) -> QoSProfile:
    return QoSProfile(option.profile_id, option.rate_kbps)


def _affected_phase_index(state, notification, now):
    """Index of the earliest phase overlapping the affected intervals."""
    traj = state.trajectory
    first = None
    for a in notification.affected:
        for seg in traj.segments:
            if seg.interval.end_tick <= max(a.interval.start_tick, now):
                continue
            if seg.interval.start_tick >= a.interval.end_tick:
                continue
            idx = state.spec.phase(seg.phase_id).order_index
            first = idx if first is None else min(first, idx)
    return first


def _first_budget(spec, traj, idx, start):
    """Deferral left to phase ``idx`` when it is laid out from ``start``."""
    if idx == 0:
        return None
    prev = traj.phase_span(spec.phases[idx - 1].phase_id)
    if prev is None:
        return None
    return max(spec.phases[idx].max_deferral - (start - prev.end_tick), 0)


def _defer(state, notification, catalog, now, reserved):
    traj = state.trajectory
    idx = _affected_phase_index(state, notification, now)
    if idx is None:
        return None
    phase = state.spec.phases[idx]
    span = traj.phase_span(phase.phase_id)
    if not phase.deferrable or span is None or span.start_tick < now:
        return None
    prev = traj.phase_span(state.spec.phases[idx - 1].phase_id) if idx > 0 else None
    start = max(prev.end_tick, now) if prev is not None else span.start_tick
    avail = _Availability(state.cached_envelope, start, reserved, notification)
    try:
        segs, deferred = _lay_phases(
            state.spec,
            catalog,
            state.cached_envelope,
            avail,
            start,
            first_phase=idx,
            first_budget=_first_budget(state.spec, traj, idx, start),
        )
    except InfeasibleWorkflow:
        return None
    kept = [s for s in traj.segments if state.spec.phase(s.phase_id).order_index < idx]
    return _trajectory(state.spec, catalog, kept + segs), deferred


def _split_at(traj: DemandTrajectory, now: int):
    """Segments of ``traj`` before ``now`` (cut at ``now``)."""
    out = []
    for seg in traj.segments:
        if seg.interval.start_tick >= now:
            continue
        if seg.interval.end_tick > now:
            seg = replace(seg, interval=Interval(seg.interval.start_tick, now))
        out.append(seg)
    return out


def _replan(state, notification, catalog, now, reserved):
    traj = state.trajectory
    start = max(now, traj.start)
    past = _split_at(traj, start)
    done: Dict[str, int] = {}
    for s in past:
        done[s.phase_id] = done.get(s.phase_id, 0) + s.interval.duration
    first, remaining = 0, None
    for p in state.spec.phases:
        ran = done.get(p.phase_id, 0)
        if ran >= p.duration:
            first = p.order_index + 1
            continue
        if ran > 0:
            remaining = p.duration - ran
        break
    if first >= len(state.spec.phases):
        return None
    avail = _Availability(state.cached_envelope, start, reserved, notification)
    try:
        segs, deferred = _lay_phases(
            state.spec,
            catalog,
            state.cached_envelope,
            avail,
            start,
            first_phase=first,
            first_remaining=remaining,
            first_budget=(
                0 if remaining else _first_budget(state.spec, traj, first, start)
            ),
        )
    except InfeasibleWorkflow:
        return None
    return _trajectory(state.spec, catalog, past + segs), deferred


def _downgrade_noncritical(state, notification, catalog, now, siblings):
    """Lower concurrent non-critical sibling phases to protect a critical one."""
    traj = state.trajectory
    revised: Dict[str, DemandTrajectory] = {}
    live = [s for s in siblings if s.trajectory is not None and not s.status.is_final]
    for a in notification.affected:
        lo_a = max(a.interval.start_tick, now)
        hi_a = a.interval.end_tick
        if lo_a >= hi_a:
            continue
        critical = any(
            state.spec.phase(s.phase_id).criticality == Criticality.CRITICAL
            for s in traj.segments
            if s.interval.start_tick < hi_a and s.interval.end_tick > lo_a
        )
        if not critical:
            return None
        freed = np.zeros(hi_a - lo_a, dtype=np.int64)
        for sib in live:
            new = revised.get(sib.workflow_id, sib.trajectory)
            for seg in new.segments:
                phase = sib.spec.phase(seg.phase_id)
                lo = max(seg.interval.start_tick, lo_a)
                hi = min(seg.interval.end_tick, hi_a)
                if lo >= hi or phase.criticality == Criticality.CRITICAL:
                    continue
                low = catalog.get(phase.min_acceptable_profile)
                if low.rate_kbps < seg.rate_kbps:
                    new = reassign(new, lo, hi, low, seg.phase_id)
                    freed[lo - lo_a : hi - lo_a] += seg.rate_kbps - low.rate_kbps
            if new != sib.trajectory:
                revised[sib.workflow_id] = new
        if not freed.any():
            return None
        top = max((o.rate_kbps for o in a.alternatives), default=0)
        ceiling = top + int(freed.min())
        for seg in list(traj.segments):
            lo = max(seg.interval.start_tick, lo_a)
            hi = min(seg.interval.end_tick, hi_a)
            if lo >= hi:
                continue
            b = traj.bounds_for(seg.phase_id)
            best = catalog.highest_at_most(min(ceiling, seg.rate_kbps))
            if best is None or (b is not None and best.rate_kbps < b.min_kbps):
                return None
            if best.rate_kbps != seg.rate_kbps:
                traj = reassign(traj, lo, hi, best, seg.phase_id)
    if not revised:
        return None
    return traj, tuple(revised.items())


def _improve(traj: DemandTrajectory, notification, now):
    for a in notification.affected:
        lo_a = max(a.interval.start_tick, now)
        for seg in list(traj.segments):
            lo = max(seg.interval.start_tick, lo_a)
            hi = min(seg.interval.end_tick, a.interval.end_tick)
            if lo >= hi:
                continue
            b = traj.bounds_for(seg.phase_id)
            high = b.preferred_kbps if b else seg.rate_kbps
            alt = a.best_within(seg.rate_kbps + 1, high)
            if alt is not None:
                traj = reassign(traj, lo, hi, _profile(alt), seg.phase_id)
    return traj


def adapt(
    state: WorkflowState,
    notification: CapabilityNotification,
    policy: AdaptationPolicy,
    catalog: ProfileCatalog,
    now: int = 0,
    siblings: Sequence[WorkflowState] = (),
) -> AdaptationOutcome:
    """Respond to a capability notification.

    Parameters
    ----------
    state : WorkflowState
        Workflow with an active trajectory.
    notification : CapabilityNotification
        Degradation or improvement.
    policy : AdaptationPolicy
        Strategy order.
    catalog : ProfileCatalog
        Profile catalog.
    now : int
        Current tick; the past is never revised.
    siblings : sequence of WorkflowState
        Other workflows of the same agent.

    Returns
    -------
    Revised | AbandonWorkflow
        The first strategy result that also passes local validation, or
        AbandonWorkflow when every permitted strategy fails.
    """
    traj = state.trajectory
    if notification.is_empty:
        return Revised(traj)
    if notification.direction == Direction.IMPROVEMENT:
        return Revised(_improve(traj, notification, now))
    reserved = tuple(
        s.trajectory
        for s in siblings
        if s.trajectory is not None and not s.status.is_final
    )
    for strategy in policy.permitted(traj.permissions):
        companions = ()
        deferred = False
        if strategy == AdaptationStrategy.ACCEPT_LOWER:
            candidate = _accept_lower(traj, notification, now)
        elif strategy == AdaptationStrategy.DEFER:
            res = _defer(state, notification, catalog, now, reserved)
            candidate, deferred = res if res else (None, False)
        elif strategy == AdaptationStrategy.REPLAN:
            res = _replan(state, notification, catalog, now, reserved)
            candidate, deferred = res if res else (None, False)
        else:
            res = _downgrade_noncritical(state, notification, catalog, now, siblings)
            candidate, companions = res if res else (None, ())
        if candidate is None:
            continue
        others = {
            s.workflow_id: s.trajectory
            for s in siblings
            if s.trajectory is not None and not s.status.is_final
        }
        others.update(companions)
        check = validate_locally(
            candidate, state.cached_envelope, tuple(others.values()), since=now
        )
        if not check.ok:
            logger.debug(
                "%s: %s result conflicts with cached envelope on %s",
                state.workflow_id,
                strategy.value,
                check.conflicts[0],
            )
            continue
        return Revised(candidate, strategy, deferred, companions)
    return AbandonWorkflow(f"no permitted strategy resolves {state.workflow_id}")


def on_phase_boundary(
    state: WorkflowState,
    now: int,
    catalog: ProfileCatalog,
    horizon_end: Optional[int] = None,
    reserved: Sequence[DemandTrajectory] = (),
) -> Optional[DemandTrajectory]:
    """Advance the workflow past the phase ending at ``now``.

    Returns
    -------
    DemandTrajectory | None
        An extended trajectory to resubmit when the current one does not
        cover the remaining phases, else None.
    """
    traj = state.trajectory
    if state.status == WorkflowStatus.PENDING:
        state.transition(WorkflowStatus.RUNNING, now)
    state.current_phase_index += 1
    state.phase_start_tick = now
    if state.current_phase_index >= len(state.spec.phases):
        state.finished_tick = now
        done = (
            WorkflowStatus.COMPLETED_DEGRADED
            if state.ran_degraded(catalog)
            else WorkflowStatus.COMPLETED_OPTIMAL
        )
        state.transition(done, now)
        logger.debug("%s completed (%s)", state.workflow_id, done.value)
        return None
    laid = set(traj.phase_ids())
    if state.spec.phases[state.current_phase_index].phase_id in laid:
        return None
    # rolling layout: extend with the phases not laid out yet
    avail = _Availability(state.cached_envelope, now, reserved)
    segs, deferred = _lay_phases(
        state.spec,
        catalog,
        state.cached_envelope,
        avail,
        now,
        first_phase=state.current_phase_index,
        horizon_end=horizon_end,
    )
    state.deferred = state.deferred or deferred
    return _trajectory(state.spec, catalog, list(traj.segments) + segs)


def phase_end(state: WorkflowState) -> Optional[int]:
    """End tick of the current phase in the active trajectory."""
    if state.trajectory is None or state.current_phase_index >= len(state.spec.phases):
        return None
    phase = state.spec.phases[state.current_phase_index]
    span = state.trajectory.phase_span(phase.phase_id)
    return None if span is None else span.end_tick


@dataclass(frozen=True)
class _Proposal:
    workflow_id: str
    trajectory: DemandTrajectory
    deferred: bool = False


class IndustrialAgent:
    """Industrial coordination actor managing one or more workflows.

    The agent is transport-agnostic: it consumes messages through
    :meth:`on_message` and returns the messages to send. A workflow's
    ``trajectory`` is its admitted trajectory; revisions in flight are kept
    aside until their acknowledgment.

    Parameters
    ----------
    agent_id : str
        Agent identifier.
    catalog : ProfileCatalog
        Profile catalog.
    policy : AdaptationPolicy | None
        Adaptation policy; the default order when None.
    network_id : str
        Identifier of the network agent.
    horizon_ticks : int | None
        Rolling layout length; phases starting later are laid out at phase
        boundaries.
    floor_requests : bool, default=False
        When the envelope cannot hold a workflow, submit it at its minimum
        acceptable profiles where needed and let the network decide, instead
        of failing it locally.
    """

    def __init__(
        self,
        agent_id: str,
        catalog: ProfileCatalog,
        policy: Optional[AdaptationPolicy] = None,
        network_id: str = "network",
        horizon_ticks: Optional[int] = None,
        floor_requests: bool = False,
    ):
        self.agent_id = agent_id
        self.floor_requests = floor_requests
        self.catalog = catalog
        self.policy = policy or AdaptationPolicy()
        self.network_id = network_id
        self.horizon_ticks = horizon_ticks
        self.endpoint = Endpoint(agent_id)
        self.envelope: Optional[CapabilityEnvelope] = None
        self.workflows: Dict[str, WorkflowState] = {}
        self.rounds: Dict[str, int] = {}
        # (tick, workflow_id, direction) of every notification acted upon
        self.stage2_rounds: List[Tuple[int, str, Direction]] = []
        self._awaiting: Dict[int, _Proposal] = {}
        self._waiting_envelope: List[str] = []
        self._held: Dict[str, List[CapabilityNotification]] = {}

    def _siblings(self, workflow_id):
        return [
            s
            for wid, s in self.workflows.items()
            if wid != workflow_id and not s.status.is_final
        ]

    def _reserved(self, workflow_id):
        return tuple(
            s.trajectory
            for s in self._siblings(workflow_id)
            if s.trajectory is not None
        )

    def _in_flight(self, workflow_id) -> bool:
        return any(p.workflow_id == workflow_id for p in self._awaiting.values())

    def _propose(self, kind, workflow_id, trajectory, payload, deferred=False):
        msg = self.endpoint.make(kind, self.network_id, payload)
        self._awaiting[msg.seq] = _Proposal(workflow_id, trajectory, deferred)
        return msg

    def _revise(self, state, trajectory, supersedes, deferred=False):
        return self._propose(
            MessageKind.M4_REVISION,
            state.workflow_id,
            trajectory,
            Revision(trajectory, supersedes),
            deferred,
        )

    def _fail(self, state, now, reason) -> List[Message]:
        logger.info("%s abandoned at tick %d: %s", state.workflow_id, now, reason)
        out = []
        if state.trajectory is not None:
            empty = replace(state.trajectory, segments=())
            if state.admission_seq is not None:
                out.append(self._revise(state, empty, state.admission_seq))
            state.record(empty, now)
        state.admission_seq = None
        state.transition(WorkflowStatus.FAILED, now)
        return out

    # -- workflow entry -------------------------------------------------

    def submit(self, spec: WorkflowSpec, now: int) -> List[Message]:
        """Start coordinating a new workflow (M2), or wait for an envelope."""
        spec.check_catalog(self.catalog)
        self.workflows[spec.workflow_id] = WorkflowState(spec)
        if self.envelope is None:
            self._waiting_envelope.append(spec.workflow_id)
            return []
        return self._submit_m2(self.workflows[spec.workflow_id], now)

    def _submit_m2(self, state: WorkflowState, now: int) -> List[Message]:
        start = max(now, state.spec.release_tick)
        horizon = None if self.horizon_ticks is None else start + self.horizon_ticks
        state.cached_envelope = self.envelope
        try:
            traj, deferred = _construct(
                state.spec,
                self.envelope,
                start,
                self.catalog,
                self._reserved(state.workflow_id),
                horizon,
            )
        except InfeasibleWorkflow as exc:
            if not self.floor_requests:
                logger.info("%s infeasible: %s", state.workflow_id, exc)
                state.transition(WorkflowStatus.FAILED, now)
                return []
            logger.debug("%s requesting floors: %s", state.workflow_id, exc)
            traj, deferred = _construct(
                state.spec,
                self.envelope,
                start,
                self.catalog,
                self._reserved(state.workflow_id),
                horizon,
                clamp=True,
            )
        # the draft stands in for the trajectory until admission
        state.trajectory = traj
        state.deferred = deferred
        state.phase_start_tick = traj.start
        self.rounds[state.workflow_id] = 0
        return [
            self._propose(
                MessageKind.M2_TRAJECTORY,
                state.workflow_id,
                traj,
                abstract_for_submission(state),
                deferred,
            )
        ]

    # -- inbound --------------------------------------------------------

    def on_message(self, msg: Message, now: int) -> List[Message]:
        """Handle one inbound message; return the messages to send."""
        if msg.kind == MessageKind.M1_ENVELOPE:
            self.envelope = msg.payload
            for s in self.workflows.values():
                if not s.status.is_final:
                    s.cached_envelope = msg.payload
            waiting, self._waiting_envelope = self._waiting_envelope, []
            out = []
            for wid in waiting:
                out.extend(self._submit_m2(self.workflows[wid], now))
            return out
        if msg.kind in (MessageKind.M2_ACK, MessageKind.M4_ACK):
            return self._on_ack(msg, now)
        if msg.kind == MessageKind.M3_NOTIFICATION:
            return self._on_notification(msg.payload, now)
        logger.warning("%s ignores message kind %s", self.agent_id, msg.kind)
        return []

    def _on_ack(self, msg: Message, now: int) -> List[Message]:
        result: AdmissionResult = msg.payload
        if msg.answers is None:
            return self._on_enforced(result, now)
        proposal = self._awaiting.pop(msg.answers, None)
        if proposal is None:
            return []
        wid = proposal.workflow_id
        state = self.workflows[wid]
        if state.status.is_final:
            if result.accepted and result.admission_seq is not None:
                # admitted after the workflow gave up: release it again
                empty = replace(proposal.trajectory, segments=())
                return [self._revise(state, empty, result.admission_seq)]
            return []
        if result.accepted:
            if result.admission_seq is not None:
                state.admission_seq = result.admission_seq
                state.trajectory = proposal.trajectory
                state.deferred = state.deferred or proposal.deferred
                state.record(proposal.trajectory, result.effective_tick)
                if state.status == WorkflowStatus.PENDING:
                    state.transition(WorkflowStatus.RUNNING, now)
            self.rounds[wid] = 0
            return self._release_held(state, now)
        # Conflict (Stage 1) or Reject (Stage 2): renegotiate within bounds
        self.rounds[wid] = self.rounds.get(wid, 0) + 1
        if self.rounds[wid] > self.policy.max_rounds:
            return self._fail(state, now, "negotiation bound reached")
        note = CapabilityNotification.from_verdict(wid, result.verdict, self.catalog)
        return self._respond(state, note, now, base=proposal.trajectory)

    def _on_enforced(self, result: AdmissionResult, now: int) -> List[Message]:
        enforced = result.enforced
        if enforced is None:
            return []
        state = self.workflows.get(enforced.workflow_id)
        if state is None or state.status.is_final:
            return []
        logger.warning("%s: network enforced a revision", state.workflow_id)
        if not result.accepted or enforced.is_empty:
            state.admission_seq = None
            state.record(replace(enforced, segments=()), now)
            state.transition(WorkflowStatus.FAILED, now)
            return []
        state.trajectory = enforced
        state.admission_seq = result.admission_seq
        state.record(enforced, result.effective_tick)
        return []

    def _on_notification(self, note: CapabilityNotification, now: int):
        state = self.workflows.get(note.workflow_id)
        if state is None or state.status.is_final:
            return []
        if self._in_flight(state.workflow_id):
            self._held.setdefault(state.workflow_id, []).append(note)
            return []
        if note.admission_seq is not None and note.admission_seq != state.admission_seq:
            return []
        self.stage2_rounds.append((now, state.workflow_id, note.direction))
        logger.debug(
            "%s: M3 %s at tick %d", state.workflow_id, note.direction.value, now
        )
        return self._respond(state, note, now)

    def _release_held(self, state, now):
        held = self._held.pop(state.workflow_id, [])
        out = []
        for i, note in enumerate(held):
            out.extend(self._on_notification(note, now))
            if self._in_flight(state.workflow_id):
                self._held.setdefault(state.workflow_id, []).extend(held[i + 1 :])
                break
        return out

    def _respond(self, state, note, now, base=None) -> List[Message]:
        state.cached_envelope = self.envelope
        view = state if base is None else replace(state, trajectory=base)
        siblings = self._siblings(state.workflow_id)
        outcome = adapt(view, note, self.policy, self.catalog, now, siblings)
        if isinstance(outcome, AbandonWorkflow):
            return self._fail(state, now, outcome.reason)
        if (
            note.direction == Direction.IMPROVEMENT
            and outcome.trajectory == state.trajectory
        ):
            return []
        out = []
        for wid, traj in outcome.companions:
            sib = self.workflows[wid]
            if sib.admission_seq is None or self._in_flight(wid):
                continue
            out.append(self._revise(sib, traj, sib.admission_seq))
        out.append(
            self._revise(
                state, outcome.trajectory, state.admission_seq, outcome.deferred
            )
        )
        return out

    # -- progress -------------------------------------------------------

    def next_boundary(self, workflow_id: str) -> Optional[int]:
        """Tick at which the workflow's current phase ends, if admitted."""
        state = self.workflows[workflow_id]
        if state.status.is_final or state.admission_seq is None:
            return None
        return phase_end(state)

    def on_phase_boundary(self, workflow_id: str, now: int) -> List[Message]:
        """Advance a workflow through every phase that ended by ``now``."""
        state = self.workflows[workflow_id]
        out: List[Message] = []
        while True:
            end = self.next_boundary(workflow_id)
            if end is None or end > now:
                return out
            try:
                ext = on_phase_boundary(
                    state,
                    end,
                    self.catalog,
                    None if self.horizon_ticks is None else end + self.horizon_ticks,
                    self._reserved(workflow_id),
                )
            except InfeasibleWorkflow as exc:
                return out + self._fail(state, now, str(exc))
            if state.status.is_final:
                state.admission_seq = None
                return out
            if ext is not None and not self._in_flight(workflow_id):
                out.append(self._revise(state, ext, state.admission_seq))
                return out
