"""Network agent: capability timeline, envelopes, admission and Stage 2.

The network agent owns a :class:`CapabilityTimeline` (capacity schedule plus
admitted commitments) and is the only writer of it. Envelopes, feasibility
verdicts and capability notifications are all derived from the same
planning residual, so disclosure stays consistent with admission.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

from . import _intervals
from .envelope import (
    ACCEPT,
    AffectedSegment,
    CapabilityEnvelope,
    CapabilityNotification,
    ConflictSegment,
    Direction,
    EnvelopeEntry,
    FeasibilityVerdict,
    ProfileOption,
)
from .model import (
    DEFAULT_WINDOW_TICKS,
    CapacitySchedule,
    Commitment,
    CommitmentState,
    DemandTrajectory,
    Interval,
    MalformedTrajectory,
    PlanningWindow,
    ProfileCatalog,
    intervals_from_tuples,
    reassign,
    residual_capacity,
)
from .protocol import AdmissionResult

logger = logging.getLogger(__name__)


class PreconditionViolated(ValueError):
    """An operation was called outside its precondition."""


class UnknownCommitment(ValueError):
    """An M4 references no active commitment of the same workflow."""


class EnforcementHook:
    """Outbound QoS enforcement (a policy-control client in a deployment).

    Parameters
    ----------
    latency_ticks : int
        Ticks between the call and the new QoS treatment taking effect.
    """

    def __init__(self, latency_ticks: int = 20):
        self.latency_ticks = int(latency_ticks)

    def apply_qos(self, workflow_id: str, segments, now: int) -> int:
        """Install a profile schedule; return the tick it becomes effective."""
        raise NotImplementedError


class StubEnforcement(EnforcementHook):
    """Records every ``apply_qos`` call and applies it after a fixed latency."""

    def __init__(self, latency_ticks: int = 20):
        super().__init__(latency_ticks)
        self.applied: List[Tuple[int, str, tuple]] = []

    def apply_qos(self, workflow_id, segments, now):
        effective = now + self.latency_ticks
        self.applied.append((effective, workflow_id, tuple(segments)))
        logger.debug("apply_qos %s effective at tick %d", workflow_id, effective)
        return effective


@dataclass
class CapabilityTimeline:
    """Capacity schedule plus admitted commitments.

    ``grants`` holds, for commitments notified in an open Stage-2 round, the
    per-tick level they were granted; until their M4 arrives they count at
    that level in the planning residual.
    """

    schedule: CapacitySchedule
    window: PlanningWindow
    commitments: Dict[int, Commitment] = field(default_factory=dict)
    next_admission_seq: int = 1
    grants: Dict[int, Tuple[int, np.ndarray]] = field(default_factory=dict)

    def active(self) -> List[Commitment]:
        return [c for _, c in sorted(self.commitments.items()) if c.is_active]

    def residual_at(self, t: int) -> int:
        """Plain residual (capacity minus active committed rates) at ``t``."""
        return residual_capacity(self.schedule, self.commitments.values(), t)

    def effective_load(self, c: Commitment, start: int, end: int) -> np.ndarray:
        d = c.trajectory.demand_array(start, end)
        if c.admission_seq in self.grants:
            g_start, g = self.grants[c.admission_seq]
            lo, hi = max(start, g_start), min(end, g_start + len(g))
            if lo < hi:
                d[lo - start : hi - start] = np.minimum(
                    d[lo - start : hi - start], g[lo - g_start : hi - g_start]
                )
        return d

    def planning_residual(
        self,
        start: int,
        end: int,
        exclude_seqs: Iterable[int] = (),
        exclude_agent: Optional[str] = None,
    ) -> np.ndarray:
        """Capacity minus the effective load of active commitments.

        Parameters
        ----------
        start, end : int
            Tick range.
        exclude_seqs : iterable of int
            Commitments left out (e.g. the one an M4 supersedes).
        exclude_agent : str | None
            Leave out every commitment of this agent.

        Returns
        -------
        array of int64
            Per-tick residual in kbit/s.
        """
        skip = set(exclude_seqs)
        out = self.schedule.as_array(start, end)
        for c in self.active():
            if c.admission_seq in skip:
                continue
            if exclude_agent is not None and c.trajectory.agent_id == exclude_agent:
                continue
            out -= self.effective_load(c, start, end)
        return out

    def committed_load(self, start: int, end: int) -> np.ndarray:
        """Sum of committed (not effective) rates over ``[start, end)``."""
        out = np.zeros(max(end - start, 0), dtype=np.int64)
        for c in self.active():
            out += c.trajectory.demand_array(start, end)
        return out

    def is_overcommitted(self, start: Optional[int] = None, end=None) -> bool:
        start = self.window.start if start is None else start
        end = self.window.end if end is None else end
        return bool(
            np.any(self.committed_load(start, end) > self.schedule.as_array(start, end))
        )


def floor_array(trajectory: DemandTrajectory, start: int, end: int) -> np.ndarray:
    """Per-tick minimum acceptable rate of a trajectory over ``[start, end)``.

    Segments without phase bounds cannot be degraded; their floor is their
    rate.
    """
    out = np.zeros(max(end - start, 0), dtype=np.int64)
    for seg in trajectory.segments:
        lo = max(seg.interval.start_tick, start)
        hi = min(seg.interval.end_tick, end)
        if lo >= hi:
            continue
        b = trajectory.bounds_for(seg.phase_id)
        floor = seg.rate_kbps if b is None else min(b.min_kbps, seg.rate_kbps)
        out[lo - start : hi - start] = floor
    return out


def _allocate(ordered: List[Commitment], start: int, end: int, capacity):
    """Grant capacity floors first, then the remainder in the given order.

    Returns
    -------
    demands, floors, grants : dict of int to array of int64
        Per-commitment arrays over ``[start, end)``, keyed by admission
        sequence.
    """
    available = capacity.copy()
    demands, floors, grants = {}, {}, {}
    for c in ordered:
        seq = c.admission_seq
        demands[seq] = c.trajectory.demand_array(start, end)
        floors[seq] = floor_array(c.trajectory, start, end)
        grants[seq] = np.minimum(floors[seq], np.maximum(available, 0))
        available -= grants[seq]
    for c in ordered:
        seq = c.admission_seq
        extra = np.minimum(demands[seq] - grants[seq], np.maximum(available, 0))
        grants[seq] = grants[seq] + extra
        available -= extra
    return demands, floors, grants


@dataclass
class WindowRefresh:
    """Outcome of a window slide."""

    envelopes: List[Tuple[str, CapabilityEnvelope]]
    notifications: List[Tuple[str, CapabilityNotification]]
    completed: List[int]


class NetworkAgent:
    """Network-side coordination actor.

    Parameters
    ----------
    schedule : CapacitySchedule
        Initial (projected) capacity schedule.
    catalog : ProfileCatalog
        QoS profiles the network can enforce.
    window_length : int, default=2000
        Planning window length in ticks.
    now : int, default=0
        Start of the first planning window.
    enforcement : EnforcementHook | None
        QoS enforcement binding; a :class:`StubEnforcement` without latency
        when None.
    visibility : mapping of str to set of str | None
        Profiles visible to each agent; agents not listed see the whole
        catalog.
    m4_timeout : int | None
        Ticks an agent has to answer a degradation before the network clamps
        its commitment. None disables the timeout.
    priority_admission : bool, default=False
        Admit a trajectory the residual cannot hold when degrading commitments
        of equal or lower priority toward their minimum acceptable profiles
        makes room. The degradation notifications are queued in
        :attr:`outbox`.
    """

    def __init__(
        self,
        schedule: CapacitySchedule,
        catalog: ProfileCatalog,
        window_length: int = DEFAULT_WINDOW_TICKS,
        now: int = 0,
        enforcement: Optional[EnforcementHook] = None,
        visibility: Optional[Mapping[str, Set[str]]] = None,
        m4_timeout: Optional[int] = None,
        priority_admission: bool = False,
    ):
        self.timeline = CapabilityTimeline(
            schedule, PlanningWindow(now, window_length)
        )
        self.catalog = catalog
        if enforcement is None:
            enforcement = StubEnforcement(0)
        self.enforcement = enforcement
        self.visibility = dict(visibility or {})
        self.m4_timeout = m4_timeout
        self.priority_admission = priority_admission
        self.outbox: List[Tuple[str, CapabilityNotification]] = []
        self.sessions: List[str] = []
        self.capability_epoch = 0
        self.last_effective_tick: Optional[int] = None
        self._deadlines: Dict[int, int] = {}
        self._improvements_offered: Set[Tuple[int, int]] = set()

    # ------------------------------------------------------------------
    # sessions and scoping

    def register_agent(self, agent_id: str):
        """Open a coordination session for ``agent_id``."""
        if agent_id not in self.sessions:
            self.sessions.append(agent_id)

    def catalog_for(self, agent_id: str) -> ProfileCatalog:
        visible = self.visibility.get(agent_id)
        if visible is None:
            return self.catalog
        return ProfileCatalog([p for p in self.catalog if p.profile_id in visible])

    @property
    def window(self) -> PlanningWindow:
        return self.timeline.window

    def _span(self, now: Optional[int] = None) -> Tuple[int, int]:
        start = self.window.start if now is None else max(now, self.window.start)
        return start, self.window.end

    # ------------------------------------------------------------------
    # Stage 1

    def derive_envelope(self, scope_agent_id: str) -> CapabilityEnvelope:
        """Derive the scoped capability envelope for one agent.

        The residual excludes the scoped agent's own commitments; an entry's
        validity is exactly the set of window ticks where that residual is at
        least the profile rate, and its headroom is the minimum residual over
        that set.
        """
        ws, we = self.window.start, self.window.end
        residual = self.timeline.planning_residual(ws, we, exclude_agent=scope_agent_id)
        return self._envelope_from_residual(scope_agent_id, residual)

    def _envelope_from_residual(self, agent_id, residual) -> CapabilityEnvelope:
        ws = self.window.start
        entries = []
        for p in self.catalog_for(agent_id):
            mask = residual >= p.rate_kbps
            validity = intervals_from_tuples(_intervals.mask_to_intervals(mask, ws))
            headroom = int(residual[mask].min()) if mask.any() else None
            entries.append(EnvelopeEntry(p.profile_id, p.rate_kbps, validity, headroom))
        return CapabilityEnvelope(self.window, tuple(entries), agent_id)

    def _check_structure(self, trajectory: DemandTrajectory):
        trajectory.validate()
        for seg in trajectory.segments:
            if seg.profile_id not in self.catalog:
                raise MalformedTrajectory(
                    f"{trajectory.workflow_id}: unknown profile {seg.profile_id!r}"
                )
            if self.catalog.rate_of(seg.profile_id) != seg.rate_kbps:
                raise MalformedTrajectory(
                    f"{trajectory.workflow_id}: rate of {seg.profile_id!r} does not "
                    "match the catalog"
                )

    def assess_feasibility(
        self,
        trajectory: DemandTrajectory,
        exclude_seq: Optional[int] = None,
        now: Optional[int] = None,
    ) -> FeasibilityVerdict:
        """Check a trajectory against the planning residual of the window.

        Parameters
        ----------
        trajectory : DemandTrajectory
            Candidate trajectory.
        exclude_seq : int | None
            Commitment left out of the residual (the one being replaced).
        now : int | None
            Current tick; ticks before it are not assessed. The window start
            when None.

        Returns
        -------
        FeasibilityVerdict
            Accept, or the maximal violating intervals, each with the fastest
            profile fitting the residual over the whole interval.

        Raises
        ------
        MalformedTrajectory
            If the trajectory breaks its structural invariants.
        """
        self._check_structure(trajectory)
        ws, we = self._span(now)
        if ws >= we:
            return ACCEPT
        exclude = () if exclude_seq is None else (exclude_seq,)
        residual = self.timeline.planning_residual(ws, we, exclude_seqs=exclude)
        demand = trajectory.demand_array(ws, we)
        violating = (demand > 0) & (residual < demand)
        if not violating.any():
            return ACCEPT
        conflicts = []
        for s, e in _intervals.mask_to_intervals(violating, ws):
            floor = int(residual[s - ws : e - ws].min())
            best = self.catalog_for(trajectory.agent_id).highest_at_most(floor)
            conflicts.append(
                ConflictSegment(
                    Interval(s, e),
                    best.profile_id if best else None,
                    best.rate_kbps if best else None,
                )
            )
        return FeasibilityVerdict(tuple(conflicts))

    def commit(self, trajectory: DemandTrajectory, now: Optional[int] = None) -> int:
        """Record an accepted trajectory and apply its QoS treatment.

        Returns
        -------
        int
            The fresh admission sequence number.

        Raises
        ------
        PreconditionViolated
            If the trajectory is not accepted by :meth:`assess_feasibility`.
        """
        if not self.assess_feasibility(trajectory, now=now).accepted:
            raise PreconditionViolated(
                f"commit of {trajectory.workflow_id} without an Accept verdict"
            )
        return self._store(trajectory, now)

    def _store(self, trajectory: DemandTrajectory, now: Optional[int]) -> int:
        tl = self.timeline
        seq = tl.next_admission_seq
        tl.next_admission_seq += 1
        tl.commitments[seq] = Commitment(seq, trajectory)
        now = self.window.start if now is None else now
        self.last_effective_tick = self.enforcement.apply_qos(
            trajectory.workflow_id, trajectory.segments, now
        )
        logger.debug(
            "admitted %s as #%d (agent %s)", trajectory.workflow_id, seq,
            trajectory.agent_id,
        )
        return seq

    def handle_m2(self, trajectory: DemandTrajectory, now: Optional[int] = None):
        """Stage-1 assessment of a submitted trajectory (M2 -> M2_ACK)."""
        verdict = self.assess_feasibility(trajectory, now=now)
        if not verdict.accepted:
            seq = None
            if self.priority_admission:
                seq = self._admit_displacing(trajectory, now)
            if seq is None:
                return AdmissionResult(False, verdict=verdict)
            return AdmissionResult(True, seq, effective_tick=self.last_effective_tick)
        seq = self._store(trajectory, now)
        return AdmissionResult(True, seq, effective_tick=self.last_effective_tick)

    def _admit_displacing(self, trajectory: DemandTrajectory, now: Optional[int]):
        """Admit ``trajectory`` by degrading less important commitments.

        The trajectory is admitted when, with it included, every active
        commitment still gets its floor over ``[now, window end)``, the
        newcomer gets its full demand, and no commitment of higher priority
        than the newcomer loses capacity. The resulting degradation
        notifications go to :attr:`outbox`.

        Returns
        -------
        int | None
            The admission sequence, or None when no room can be made.
        """
        tl = self.timeline
        ws, we = self._span(now)
        if ws >= we:
            return None
        capacity = tl.schedule.as_array(ws, we)
        current = sorted(tl.active(), key=self._importance)
        _, _, before = _allocate(current, ws, we, capacity)
        newcomer = Commitment(tl.next_admission_seq, trajectory)
        ordered = sorted(current + [newcomer], key=self._importance)
        demands, floors, grants = _allocate(ordered, ws, we, capacity)
        if np.any(grants[newcomer.admission_seq] < demands[newcomer.admission_seq]):
            return None
        for c in current:
            seq = c.admission_seq
            if np.any(grants[seq] < floors[seq]):
                return None
            if c.trajectory.priority > trajectory.priority and np.any(
                grants[seq] < before[seq]
            ):
                return None
        seq = self._store(trajectory, now)
        self.outbox.extend(self.reassess(ws, changed=False))
        logger.debug("admitted %s by degrading others", trajectory.workflow_id)
        return seq

    def take_notifications(self) -> List[Tuple[str, CapabilityNotification]]:
        """Return and clear the notifications queued by admissions."""
        out, self.outbox = self.outbox, []
        return out

    def reserve_exogenous(self, trajectory: DemandTrajectory, now=None) -> int:
        """Record scripted background load without admission control."""
        self._check_structure(trajectory)
        return self._store(trajectory, now)

    # ------------------------------------------------------------------
    # Stage 2

    def handle_m4(
        self,
        revised: DemandTrajectory,
        supersedes: Optional[int],
        now: Optional[int] = None,
    ) -> AdmissionResult:
        """Assess a revised trajectory replacing an active commitment.

        Feasibility is evaluated with the superseded commitment left out; on
        Accept the old commitment is superseded and the new one recorded in
        one step, on Reject nothing changes. An empty trajectory withdraws
        the commitment. ``supersedes=None`` admits the revision as a fresh
        trajectory (the answer to a Stage-1 Conflict).

        Raises
        ------
        UnknownCommitment
            If ``supersedes`` is not an active commitment of the workflow.
        MalformedTrajectory
            If the revision breaks its structural invariants.
        """
        if supersedes is None:
            if revised.is_empty:
                return AdmissionResult(True)
            return self.handle_m2(revised, now)
        old = self.timeline.commitments.get(supersedes)
        if (
            old is None
            or not old.is_active
            or old.trajectory.workflow_id != revised.workflow_id
        ):
            raise UnknownCommitment(
                f"M4 for {revised.workflow_id} references unknown commitment "
                f"#{supersedes}"
            )
        if revised.is_empty:
            self.withdraw(supersedes, now)
            return AdmissionResult(True, None, supersedes)
        verdict = self.assess_feasibility(revised, exclude_seq=supersedes, now=now)
        if not verdict.accepted:
            return AdmissionResult(False, None, supersedes, verdict)
        self._close(supersedes, CommitmentState.SUPERSEDED)
        seq = self._store(revised, now)
        return AdmissionResult(
            True, seq, supersedes, effective_tick=self.last_effective_tick
        )

    def _close(self, seq: int, state: CommitmentState):
        tl = self.timeline
        tl.commitments[seq] = replace(tl.commitments[seq], state=state)
        tl.grants.pop(seq, None)
        self._deadlines.pop(seq, None)

    def withdraw(
        self, seq: int, now: Optional[int] = None, state=CommitmentState.FAILED
    ):
        """Release an active commitment (abandoned or network-cancelled).

        The freed capacity is offered to others by the next :meth:`reassess`.
        """
        c = self.timeline.commitments.get(seq)
        if c is None or not c.is_active:
            raise UnknownCommitment(f"No active commitment #{seq}")
        self._close(seq, state)
        logger.debug("released #%d (%s)", seq, state.value)

    def on_capacity_change(
        self, new_schedule: CapacitySchedule, now: int
    ) -> List[Tuple[str, CapabilityNotification]]:
        """Replace the capacity schedule and re-assess all commitments.

        Returns
        -------
        list of (str, CapabilityNotification)
            One notification per affected commitment, least important first
            (ascending priority, ties by descending admission sequence).
        """
        self.timeline.schedule = new_schedule
        logger.info("capacity change at tick %d", now)
        return self.reassess(now)

    @staticmethod
    def _importance(c: Commitment):
        return (-c.trajectory.priority, c.admission_seq)

    def reassess(self, now: int, changed: bool = True):
        """Re-assess active commitments over ``[now, window end)``.

        Minimum acceptable levels are granted first, in importance order,
        and the remaining capacity then tops commitments up in the same
        order. Commitments whose demand exceeds their grant receive a
        degradation notification and count at the granted level until their
        M4. Remaining room is offered (once per capability epoch) to
        commitments running below their preferred profile.
        """
        if changed:
            self.capability_epoch += 1
        tl = self.timeline
        ws, we = self._span(now)
        if ws >= we:
            return []
        capacity = tl.schedule.as_array(ws, we)
        ordered = sorted(tl.active(), key=self._importance)
        demands, _, grants = _allocate(ordered, ws, we, capacity)
        affected = [
            c
            for c in ordered
            if np.any(grants[c.admission_seq] < demands[c.admission_seq])
        ]
        affected_seqs = {c.admission_seq for c in affected}
        for c in ordered:
            if c.admission_seq not in affected_seqs:
                tl.grants.pop(c.admission_seq, None)
                self._deadlines.pop(c.admission_seq, None)
        eff = {
            s: (grants[s] if s in affected_seqs else demands[s]) for s in demands
        }
        total = np.zeros(we - ws, dtype=np.int64)
        for v in eff.values():
            total += v
        out: List[Tuple[Commitment, CapabilityNotification]] = []
        already_notified = set(tl.grants)
        for c in affected:
            seq = c.admission_seq
            if seq in already_notified and not changed:
                tl.grants[seq] = (ws, grants[seq])
                continue
            allowance = capacity - (total - eff[seq])
            short = grants[seq] < demands[seq]
            segs = []
            catalog = self.catalog_for(c.trajectory.agent_id)
            for s, e in _intervals.mask_to_intervals(short, ws):
                ceiling = int(allowance[s - ws : e - ws].min())
                segs.append(
                    AffectedSegment(
                        Interval(s, e),
                        tuple(
                            ProfileOption(p.profile_id, p.rate_kbps)
                            for p in catalog.admissible(ceiling)
                        ),
                    )
                )
            tl.grants[seq] = (ws, grants[seq])
            if self.m4_timeout is not None:
                self._deadlines[seq] = now + self.m4_timeout
            out.append(
                (
                    c,
                    CapabilityNotification(
                        c.trajectory.workflow_id,
                        tuple(segs),
                        Direction.DEGRADATION,
                        seq,
                    ),
                )
            )
        reserved = np.zeros(we - ws, dtype=np.int64)
        for c in ordered:
            seq = c.admission_seq
            if seq in affected_seqs or seq in tl.grants:
                continue
            if (seq, self.capability_epoch) in self._improvements_offered:
                continue
            allowance = capacity - (total - eff[seq]) - reserved
            note = self._improvement(c, allowance, ws, we, reserved)
            if note is not None:
                self._improvements_offered.add((seq, self.capability_epoch))
                out.append((c, note))
        out.sort(key=lambda item: (item[0].trajectory.priority, -item[0].admission_seq))
        for c, note in out:
            logger.debug(
                "M3 %s for #%d (%s, %d segments)",
                note.direction.value,
                c.admission_seq,
                c.trajectory.workflow_id,
                len(note.affected),
            )
        return [(c.trajectory.agent_id, note) for c, note in out]

    def _improvement(self, c: Commitment, allowance, ws, we, reserved):
        """Offer faster profiles where a downgraded segment fits again."""
        traj = c.trajectory
        catalog = self.catalog_for(traj.agent_id)
        segs = []
        for seg in traj.segments:
            bounds = traj.bounds_for(seg.phase_id)
            if bounds is None or seg.rate_kbps >= bounds.preferred_kbps:
                continue
            lo = max(seg.interval.start_tick, ws)
            hi = min(seg.interval.end_tick, we)
            if lo >= hi:
                continue
            faster = [
                p
                for p in catalog
                if seg.rate_kbps < p.rate_kbps <= bounds.preferred_kbps
            ]
            if not faster:
                continue
            room = allowance[lo - ws : hi - ws]
            fits = room >= faster[0].rate_kbps
            for s, e in _intervals.mask_to_intervals(fits, lo):
                ceiling = int(allowance[s - ws : e - ws].min())
                alts = tuple(
                    ProfileOption(p.profile_id, p.rate_kbps)
                    for p in reversed(faster)
                    if p.rate_kbps <= ceiling
                )
                if not alts:
                    continue
                reserved[s - ws : e - ws] += alts[0].rate_kbps - seg.rate_kbps
                allowance[s - ws : e - ws] -= alts[0].rate_kbps - seg.rate_kbps
                segs.append(AffectedSegment(Interval(s, e), alts))
        if not segs:
            return None
        segs.sort(key=lambda a: a.interval)
        return CapabilityNotification(
            traj.workflow_id, tuple(segs), Direction.IMPROVEMENT, c.admission_seq
        )

    def pending_rounds(self) -> List[int]:
        """Admission sequences still awaiting their Stage-2 M4."""
        return sorted(self.timeline.grants)

    def expire_pending(self, now: int) -> List[Tuple[str, AdmissionResult]]:
        """Clamp commitments whose Stage-2 answer is overdue.

        Each affected portion is set to the fastest profile within its grant;
        a commitment whose grant admits no profile is cancelled. The owner
        receives an unsolicited M4_ACK carrying the enforced trajectory.
        """
        out = []
        for seq, deadline in sorted(self._deadlines.items()):
            if deadline > now:
                continue
            c = self.timeline.commitments[seq]
            g_start, g = self.timeline.grants[seq]
            d = c.trajectory.demand_array(g_start, g_start + len(g))
            traj = c.trajectory
            cancelled = False
            for s, e in _intervals.mask_to_intervals(g < d, g_start):
                level = int(g[s - g_start : e - g_start].min())
                p = self.catalog.highest_at_most(level)
                if p is None:
                    cancelled = True
                    break
                traj = reassign(traj, s, e, p)
            logger.warning("Stage-2 answer for #%d overdue, clamping", seq)
            if cancelled:
                self.withdraw(seq, now)
                enforced = replace(traj, segments=())
                result = AdmissionResult(False, None, seq, enforced=enforced)
                out.append((traj.agent_id, result))
                continue
            self._close(seq, CommitmentState.SUPERSEDED)
            new_seq = self._store(traj, now)
            out.append(
                (
                    traj.agent_id,
                    AdmissionResult(
                        True,
                        new_seq,
                        seq,
                        effective_tick=self.last_effective_tick,
                        enforced=traj,
                    ),
                )
            )
        return out

    # ------------------------------------------------------------------
    # rolling window

    def advance_window(self, new_now: int) -> WindowRefresh:
        """Slide the window to ``[new_now, new_now + length)``.

        Commitments whose last segment has ended are marked completed, newly
        appended capability is re-checked against provisional segments, and
        a fresh scoped envelope is produced for every agent with an active
        commitment or an open session.
        """
        tl = self.timeline
        if new_now < tl.window.start:
            raise PreconditionViolated(
                f"window cannot move back from {tl.window.start} to {new_now}"
            )
        moved = new_now != tl.window.start
        tl.window = tl.window.slide(new_now)
        completed = []
        for c in tl.active():
            if c.trajectory.horizon is not None and c.trajectory.horizon <= new_now:
                self._close(c.admission_seq, CommitmentState.COMPLETED)
                completed.append(c.admission_seq)
        # completions are releases; a plain slide keeps the capability epoch
        notes = self.reassess(new_now, changed=bool(completed)) if moved else []
        return WindowRefresh(self.refresh_envelopes(), notes, completed)

    def refresh_envelopes(self) -> List[Tuple[str, CapabilityEnvelope]]:
        """Scoped envelopes for every session and commitment holder."""
        tl = self.timeline
        agents = list(self.sessions)
        for c in tl.active():
            if c.trajectory.agent_id not in agents:
                agents.append(c.trajectory.agent_id)
        ws, we = tl.window.start, tl.window.end
        shared = tl.planning_residual(ws, we)
        own: Dict[str, np.ndarray] = {}
        for c in tl.active():
            a = c.trajectory.agent_id
            own.setdefault(a, np.zeros(we - ws, dtype=np.int64))
            own[a] += tl.effective_load(c, ws, we)
        out = []
        for a in agents:
            residual = shared + own[a] if a in own else shared
            out.append((a, self._envelope_from_residual(a, residual)))
        return out
