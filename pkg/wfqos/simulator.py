"""Seeded discrete-event simulation of coordinated and request-driven operation.

One network agent and N industrial agents are interleaved by a single event
queue ordered by ``(tick, actor rank, insertion seq)``: rank 0 is the network
(and scripted scenario events), agents follow in identifier order and the
overrun monitor runs last in a tick. Given a config and seed, the event log
is byte-identical across runs.
"""

import enum
import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import orjson
import psutil

from ._workload import generate_workload
from .industrial_agent import IndustrialAgent, WorkflowState, WorkflowStatus
from .metrics import RunMetrics
from .model import (
    CapacitySchedule,
    CommitmentState,
    Criticality,
    DemandTrajectory,
    Interval,
    MalformedTrajectory,
    SegmentAssignment,
    WorkflowSpec,
)
from .network_agent import (
    CapabilityTimeline,
    NetworkAgent,
    StubEnforcement,
    UnknownCommitment,
)
from .protocol import (
    AdmissionResult,
    Endpoint,
    InProcessTransport,
    Message,
    MessageKind,
)
from .scenario import BackgroundFlow, CapacityKind, ConfigError, Mode, ScenarioConfig

logger = logging.getLogger(__name__)

NETWORK_ID = "network"
_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_APPEND_NEWLINE


class InvariantViolation(AssertionError):
    """A runtime self-check of the simulation failed."""


class Admission(str, enum.Enum):
    GRANTED = "granted"
    REJECTED = "rejected"


def baseline_admit(timeline: CapabilityTimeline, rate_kbps: int, now: int) -> Admission:
    """Request-driven admission against the instantaneous residual.

    Granted iff ``residual(now) >= rate_kbps``; there is no look-ahead and
    no trajectory.
    """
    if timeline.residual_at(now) >= rate_kbps:
        return Admission.GRANTED
    return Admission.REJECTED


# ---------------------------------------------------------------------------
# event log and delivered-rate model


class EventLog:
    """Tick-stamped event records, serialized as sorted-key NDJSON."""

    def __init__(self):
        self._records: List[dict] = []

    def emit(self, tick: int, kind: str, **fields):
        record = {"tick": int(tick), "type": kind}
        record.update(fields)
        self._records.append(record)

    def __len__(self):
        return len(self._records)

    @property
    def records(self) -> List[dict]:
        """Records ordered by tick (emission order within a tick)."""
        return sorted(self._records, key=lambda r: r["tick"])

    def to_ndjson(self) -> bytes:
        return b"".join(orjson.dumps(r, option=_OPTIONS) for r in self.records)

    def write(self, path):
        Path(path).write_bytes(self.to_ndjson())


def read_events(path) -> List[dict]:
    """Load an NDJSON event log written by :meth:`EventLog.write`."""
    with open(path, "rb") as fid:
        return [orjson.loads(line) for line in fid if line.strip()]


def _allocate(capacity, rates: Sequence):
    """Serve ``rates`` in order from ``capacity``; scalars or per-tick arrays."""
    remaining = capacity
    out = []
    for r in rates:
        d = np.minimum(r, np.maximum(remaining, 0))
        remaining = remaining - d
        out.append(d)
    return out


def _flow_order(flow_id: str, priority: int):
    return (-priority, flow_id)


@dataclass
class Utilization:
    """Delivered rate per tick against capacity."""

    capacity: np.ndarray
    delivered: np.ndarray
    per_flow: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def series(self) -> np.ndarray:
        """Delivered/capacity per tick; 0 where capacity is 0."""
        cap = self.capacity.astype(float)
        out = np.zeros_like(cap)
        np.divide(self.delivered, cap, out=out, where=cap > 0)
        return out

    @property
    def scalar(self) -> float:
        total = float(self.capacity.sum())
        return float(self.delivered.sum()) / total if total > 0 else 0.0


def compute_utilization(
    events: Iterable[Mapping], schedule: CapacitySchedule, end_tick: int
) -> Utilization:
    """Rebuild delivered rates from an event log.

    ``enforce`` records replace a flow's rate schedule from their tick on and
    ``interruption`` records silence a flow over ``[tick, end)``. Capacity is
    shared in priority order (ties by flow identifier) and each flow gets at
    most what is left.

    Parameters
    ----------
    events : iterable of dict
        Records ordered by tick.
    schedule : CapacitySchedule
        Actual capacity.
    end_tick : int
        End of the evaluated range ``[0, end_tick)``.

    Returns
    -------
    Utilization
        Capacity, total delivered rate and per-flow delivered rate.
    """
    n = max(int(end_tick), 0)
    rates: Dict[str, np.ndarray] = {}
    priority: Dict[str, int] = {}
    silent: List[Tuple[str, int, int]] = []
    for rec in events:
        if rec["type"] == "enforce":
            flow = rec["flow"]
            arr = rates.setdefault(flow, np.zeros(n, dtype=np.int64))
            priority[flow] = rec["priority"]
            tick = min(rec["tick"], n)
            arr[tick:] = 0
            for s, e, r in rec["segments"]:
                lo, hi = max(s, tick), min(e, n)
                if lo < hi:
                    arr[lo:hi] = r
        elif rec["type"] == "interruption":
            silent.append((rec["flow"], rec["tick"], rec["end"]))
    for flow, s, e in silent:
        if flow in rates:
            rates[flow][max(s, 0) : min(e, n)] = 0
    capacity = schedule.as_array(0, n)
    order = sorted(rates, key=lambda f: _flow_order(f, priority[f]))
    per_flow = dict(zip(order, _allocate(capacity, [rates[f] for f in order])))
    delivered = np.zeros(n, dtype=np.int64)
    for d in per_flow.values():
        delivered += d
    return Utilization(capacity, delivered, per_flow)


def _rate_at(history, t: int) -> int:
    for tick, traj in reversed(history):
        if tick <= t:
            return traj.demand_at(t)
    return 0


# ---------------------------------------------------------------------------
# event queue


class _Queue:
    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, tick: int, rank: int, fn: Callable, *args):
        heapq.heappush(self._heap, (int(tick), rank, self._seq, fn, args))
        self._seq += 1

    def __bool__(self):
        return bool(self._heap)

    def peek(self) -> int:
        return self._heap[0][0]

    def pop(self):
        tick, _, _, fn, args = heapq.heappop(self._heap)
        return tick, fn, args


@dataclass
class RunResult:
    """Metrics, event log and delivered-rate series of one run."""

    metrics: RunMetrics
    events: EventLog
    utilization: Utilization


class _Run:
    """State shared by both operating modes."""

    mode: Mode

    def __init__(self, config: ScenarioConfig, specs: Sequence[WorkflowSpec]):
        self.config = config
        self.catalog = config.catalog
        self.specs = list(specs)
        self.log = EventLog()
        self.queue = _Queue()
        self.now = 0
        agents = sorted({s.agent_id for s in self.specs})
        self.rank = {a: i + 1 for i, a in enumerate(agents)}
        self.monitor_rank = len(agents) + 1
        self.states: Dict[str, WorkflowState] = {}
        self.hard_rejections = 0
        self.interruptions: List[Tuple[str, int, int]] = []
        self.silenced: Dict[str, int] = {}
        self._overrun: Dict[str, int] = {}
        self.adaptation_times: List[int] = []
        self.stage2_rounds = 0
        self.spans: List[Tuple[str, int, int]] = []
        self.cap = max(2 * config.duration, config.duration + 1)
        if config.capacity_kind == CapacityKind.PROJECTED:
            self.known = config.capacity
        else:
            self.known = CapacitySchedule((config.capacity.epochs[0],))
        self.background_profiles = {
            bg.flow_id: self._background_profile(bg) for bg in config.background
        }

    def _background_profile(self, bg: BackgroundFlow):
        p = self.catalog.highest_at_most(bg.rate_kbps)
        if p is None or p.rate_kbps != bg.rate_kbps:
            raise ConfigError(
                f"background flow {bg.flow_id!r} rate {bg.rate_kbps} kbps is not a "
                "catalog profile",
                "background",
            )
        return p

    def _background_traj(self, bg: BackgroundFlow, start: int, end: int):
        p = self.background_profiles[bg.flow_id]
        return DemandTrajectory(
            bg.flow_id,
            bg.flow_id,
            bg.priority,
            (
                SegmentAssignment(
                    Interval(start, end), "background", p.profile_id, p.rate_kbps
                ),
            ),
        )

    # -- driver ---------------------------------------------------------

    def execute(self) -> RunResult:
        logger.info(
            "run %r (%s, seed %d): %d workflows",
            self.config.name,
            self.mode.value,
            self.config.seed,
            len(self.specs),
        )
        for s, c in self.config.capacity.epochs:
            self.log.emit(
                s, "capacity", kbps=c, capacity_kind=self.config.capacity_kind.value
            )
        for bg in self.config.background:
            self.log.emit(
                bg.active_start,
                "enforce",
                flow=bg.flow_id,
                priority=bg.priority,
                segments=[[bg.active_start, bg.release, bg.rate_kbps]],
            )
        for spec in self.specs:
            self.queue.push(
                spec.release_tick, self.rank[spec.agent_id], self._arrive, spec
            )
        self.setup()
        if self.config.baseline.loss_to_interrupt is not None:
            self.queue.push(0, self.monitor_rank, self._monitor)
        while self.queue and self.queue.peek() <= self.cap:
            tick, fn, args = self.queue.pop()
            self.now = tick
            fn(*args)
        return self.finish()

    def settled(self) -> bool:
        return (
            self.now >= self.config.duration
            and len(self.states) == len(self.specs)
            and all(s.status.is_final for s in self.states.values())
        )

    def _workflow_event(self, state: WorkflowState):
        self.log.emit(
            self.now,
            "workflow",
            workflow=state.workflow_id,
            status=state.status.value,
        )

    # -- overrun model --------------------------------------------------

    def _monitor(self):
        """Detect sustained overrun and interrupt the affected stream."""
        t = self.now
        flows = []
        for bg in self.config.background:
            if bg.active_start <= t < bg.release:
                flows.append((bg.flow_id, bg.priority, bg.rate_kbps))
        for wid, st in self.states.items():
            rate = 0 if self.silenced.get(wid, -1) > t else _rate_at(st.history, t)
            flows.append((wid, st.spec.priority, rate))
        flows.sort(key=lambda f: _flow_order(f[0], f[1]))
        capacity = self.config.capacity.capacity_at(t)
        delivered = _allocate(capacity, [f[2] for f in flows])
        bl = self.config.baseline
        for (fid, _, rate), d in zip(flows, delivered):
            if fid not in self.states:
                continue
            count = self._overrun.get(fid, 0) + 1 if d < rate else 0
            self._overrun[fid] = count
            if count >= bl.loss_to_interrupt:
                start, end = t + 1, t + 1 + bl.interruption
                self._overrun[fid] = 0
                self.silenced[fid] = end
                self.interruptions.append((fid, start, bl.interruption))
                self.log.emit(start, "interruption", flow=fid, end=end)
                logger.info("stream %s interrupted at tick %d", fid, start)
                st = self.states[fid]
                self.queue.push(
                    start, self.rank[st.spec.agent_id], self.on_interrupt, fid, end
                )
        if not self.settled():
            self.queue.push(t + 1, self.monitor_rank, self._monitor)

    # -- hooks ----------------------------------------------------------

    def setup(self):
        raise NotImplementedError

    def _arrive(self, spec: WorkflowSpec):
        raise NotImplementedError

    def on_interrupt(self, workflow_id: str, end: int):
        pass

    def collect_spans(self):
        pass

    # -- results --------------------------------------------------------

    def finish(self) -> RunResult:
        for st in self.states.values():
            if not st.status.is_final:
                logger.warning(
                    "%s still %s at the drain limit; counted as failed",
                    st.workflow_id, st.status.value,
                )
                if st.trajectory is not None:
                    st.record(replace(st.trajectory, segments=()), self.now)
                st.transition(WorkflowStatus.FAILED, self.now)
                self._workflow_event(st)
        missing = len(self.specs) - len(self.states)
        finished = [s.finished_tick for s in self.states.values()]
        end_tick = max([self.config.duration] + [t for t in finished if t is not None])
        self.collect_spans()
        for wid in sorted(self.states):
            st = self.states[wid]
            for tick, traj in st.history:
                self.log.emit(
                    tick,
                    "enforce",
                    flow=wid,
                    priority=st.spec.priority,
                    segments=[
                        [s.interval.start_tick, s.interval.end_tick, s.rate_kbps]
                        for s in traj.segments
                    ],
                )
        util = compute_utilization(self.log.records, self.config.capacity, end_tick)
        active_ticks = 0
        active_kbit = 0
        for flow, s, e in self.spans:
            s, e = max(s, 0), min(e, end_tick)
            if s >= e:
                continue
            active_ticks += e - s
            if flow in util.per_flow:
                active_kbit += int(util.per_flow[flow][s:e].sum())
        counts = {status: 0 for status in WorkflowStatus}
        for st in self.states.values():
            counts[st.status] += 1
        metrics = RunMetrics(
            name=self.config.name,
            mode=self.mode.value,
            seed=self.config.seed,
            agent_count=self.config.agent_count,
            total_workflows=len(self.specs),
            completed_optimal=counts[WorkflowStatus.COMPLETED_OPTIMAL],
            completed_degraded=counts[WorkflowStatus.COMPLETED_DEGRADED],
            failed=counts[WorkflowStatus.FAILED] + missing,
            hard_rejections=self.hard_rejections,
            interruptions=[(s, d) for _, s, d in self.interruptions],
            mean_active_throughput=(
                active_kbit / active_ticks / 1000.0 if active_ticks else 0.0
            ),
            utilization=util.scalar,
            utilization_series=util.series,
            adaptation_times=list(self.adaptation_times),
            stage2_rounds=self.stage2_rounds,
            end_tick=end_tick,
            tick_ms=self.config.tick_ms,
        )
        if not metrics.is_conserved():
            raise InvariantViolation(
                f"outcome counts {metrics.completed_optimal}"
                f"+{metrics.completed_degraded}+{metrics.failed} "
                f"do not add up to {metrics.total_workflows}"
            )
        logger.info(
            "run %r (%s) done: %d/%d completed",
            self.config.name,
            self.mode.value,
            metrics.completed,
            metrics.total_workflows,
        )
        return RunResult(metrics, self.log, util)


# ---------------------------------------------------------------------------
# coordinated operation


class _CoordinatedRun(_Run):
    mode = Mode.COORDINATED

    def setup(self):
        p = self.config.protocol
        self.net = NetworkAgent(
            self.known,
            self.catalog,
            window_length=p.window,
            now=0,
            enforcement=StubEnforcement(p.enforcement_latency),
            m4_timeout=p.m4_timeout,
            priority_admission=p.priority_admission,
        )
        self.endpoint = Endpoint(NETWORK_ID)
        self.transport = InProcessTransport(
            self._schedule_delivery, p.transport_delay, codec_check=p.codec_check
        )
        self.agents = {
            a: IndustrialAgent(
                a,
                self.catalog,
                p.policy,
                NETWORK_ID,
                p.horizon,
                floor_requests=p.priority_admission,
            )
            for a in self.rank
        }
        self._seen: Dict[str, WorkflowStatus] = {}
        self._wakeups = set()
        self._rounds: Dict[int, Tuple[int, int]] = {}
        self._background_seq: Dict[str, int] = {}
        for a in self.agents:
            self.net.register_agent(a)
        # session establishment hands out the first envelopes before tick 0
        for a, env in self.net.refresh_envelopes():
            if a in self.agents:
                msg = self.endpoint.make(MessageKind.M1_ENVELOPE, a, env)
                self._log_message(msg, 0)
                self.agents[a].on_message(msg, 0)
        if self.config.capacity_kind == CapacityKind.UNANTICIPATED:
            for s, c in self.config.capacity.epochs[1:]:
                self.queue.push(s, 0, self._capacity_change, s, c)
        for bg in self.config.background:
            self.queue.push(bg.admit, 0, self._reserve_background, bg)
            self.queue.push(bg.release, 0, self._release_background, bg)
        self.queue.push(p.refresh, 0, self._refresh)

    # -- messaging ------------------------------------------------------

    def _log_message(self, msg: Message, deliver: int):
        kind = msg.kind.value if isinstance(msg.kind, MessageKind) else str(msg.kind)
        self.log.emit(
            self.now,
            "message",
            msg_kind=kind,
            seq=msg.seq,
            sender=msg.sender_id,
            receiver=msg.receiver_id,
            answers=msg.answers,
            deliver=deliver,
        )

    def _send(self, msg: Message):
        self._log_message(msg, self.transport.send(msg, self.now))

    def _schedule_delivery(self, tick: int, msg: Message):
        rank = 0 if msg.receiver_id == NETWORK_ID else self.rank[msg.receiver_id]
        self.queue.push(tick, rank, self._deliver, msg)

    def _deliver(self, msg: Message):
        if msg.receiver_id == NETWORK_ID:
            self._network_receive(msg)
            return
        agent = self.agents[msg.receiver_id]
        self._after_agent(agent, agent.on_message(msg, self.now))

    def _after_agent(self, agent: IndustrialAgent, out: List[Message]):
        for m in out:
            self._send(m)
        for wid, st in agent.workflows.items():
            if self._seen.get(wid) != st.status:
                self._seen[wid] = st.status
                self._workflow_event(st)
            if st.status.is_final:
                continue
            b = agent.next_boundary(wid)
            if b is not None and (wid, b) not in self._wakeups:
                self._wakeups.add((wid, b))
                self.queue.push(
                    max(b, self.now),
                    self.rank[agent.agent_id],
                    self._boundary,
                    agent.agent_id,
                    wid,
                )

    # -- agent side -----------------------------------------------------

    def _arrive(self, spec: WorkflowSpec):
        agent = self.agents[spec.agent_id]
        self.log.emit(
            self.now, "arrival", workflow=spec.workflow_id, agent=spec.agent_id
        )
        out = agent.submit(spec, self.now)
        self.states[spec.workflow_id] = agent.workflows[spec.workflow_id]
        self._after_agent(agent, out)

    def _boundary(self, agent_id: str, workflow_id: str):
        agent = self.agents[agent_id]
        st = agent.workflows[workflow_id]
        before = st.current_phase_index
        out = agent.on_phase_boundary(workflow_id, self.now)
        last = min(st.current_phase_index, len(st.spec.phases) - 1)
        for phase in st.spec.phases[before + 1 : last + 1]:
            self.log.emit(
                self.now, "phase", workflow=workflow_id, phase=phase.phase_id
            )
        self._after_agent(agent, out)

    # -- network side ---------------------------------------------------

    def _network_receive(self, msg: Message):
        now = self.now
        if msg.kind == MessageKind.M2_TRAJECTORY:
            traj, supersedes, reply = msg.payload, None, MessageKind.M2_ACK
        elif msg.kind == MessageKind.M4_REVISION:
            traj, supersedes = msg.payload.trajectory, msg.payload.supersedes
            reply = MessageKind.M4_ACK
        else:
            logger.warning("network ignores message kind %s", msg.kind)
            return
        try:
            if reply == MessageKind.M2_ACK:
                result = self.net.handle_m2(traj, now)
            else:
                result = self.net.handle_m4(traj, supersedes, now)
        except UnknownCommitment as exc:
            logger.warning("stale revision from %s: %s", msg.sender_id, exc)
            result = AdmissionResult(False, None, supersedes)
        except MalformedTrajectory as exc:
            logger.warning("malformed trajectory from %s: %s", msg.sender_id, exc)
            result = AdmissionResult(False, None, supersedes)
        self.log.emit(
            now,
            "admission",
            workflow=traj.workflow_id,
            accepted=result.accepted,
            admission_seq=result.admission_seq,
            superseded=result.superseded_seq,
            conflicts=len(result.verdict.conflicts),
            withdrawal=traj.is_empty,
        )
        self._send(self.endpoint.make(reply, msg.sender_id, result, answers=msg.seq))
        self._dispatch(self.net.take_notifications())
        if not (result.accepted and result.superseded_seq is not None):
            return
        if result.admission_seq is not None:
            self._close_round(
                result.superseded_seq, result.effective_tick, traj.workflow_id
            )
        else:
            # a withdrawal frees capacity for the others
            self._rounds.pop(result.superseded_seq, None)
            self._dispatch(self.net.reassess(now))

    def _close_round(self, seq: int, effective: Optional[int], workflow_id: str):
        opened = self._rounds.pop(seq, None)
        if opened is None:
            return
        end = self.now if effective is None else effective
        self.adaptation_times.append(end - opened[0])
        self.log.emit(end, "adapted", workflow=workflow_id, started=opened[0])

    def _open_round(self, note):
        epoch = self.net.capability_epoch
        opened = self._rounds.get(note.admission_seq)
        if opened is not None and opened[1] == epoch:
            return
        self._rounds[note.admission_seq] = (self.now, epoch)
        self.stage2_rounds += 1
        self.log.emit(
            self.now,
            "stage2",
            workflow=note.workflow_id,
            direction=note.direction.value,
            admission_seq=note.admission_seq,
        )

    def _dispatch(self, notes, envelopes: bool = True):
        notes = [(a, n) for a, n in notes if a in self.agents]
        if not notes:
            return
        if envelopes:
            wanted = {a for a, _ in notes}
            for a, env in self.net.refresh_envelopes():
                if a in wanted:
                    self._send(self.endpoint.make(MessageKind.M1_ENVELOPE, a, env))
        for a, note in notes:
            self._open_round(note)
            self._send(self.endpoint.make(MessageKind.M3_NOTIFICATION, a, note))

    def _refresh(self):
        now = self.now
        refresh = self.net.advance_window(now)
        for a, env in refresh.envelopes:
            if a in self.agents:
                self._send(self.endpoint.make(MessageKind.M1_ENVELOPE, a, env))
        for a, result in self.net.expire_pending(now):
            wid = result.enforced.workflow_id
            self.log.emit(
                now, "clamp", workflow=wid, admission_seq=result.admission_seq
            )
            self._close_round(result.superseded_seq, result.effective_tick, wid)
            if a in self.agents:
                self._send(self.endpoint.make(MessageKind.M4_ACK, a, result))
        self._dispatch(refresh.notifications, envelopes=False)
        self._check_commitments()
        if not self.settled():
            self.queue.push(now + self.config.protocol.refresh, 0, self._refresh)

    def _check_commitments(self):
        ws, we = self.now, self.net.window.end
        residual = self.net.timeline.planning_residual(ws, we)
        if residual.size and residual.min() < 0:
            raise InvariantViolation(
                f"effective commitments exceed capacity at tick "
                f"{ws + int(np.argmin(residual))}"
            )

    def _capacity_change(self, tick: int, kbps: int):
        schedule = self.net.timeline.schedule.with_change(tick, kbps)
        self._dispatch(self.net.on_capacity_change(schedule, self.now))

    def _reserve_background(self, bg: BackgroundFlow):
        traj = self._background_traj(bg, *bg.declared)
        seq = self.net.reserve_exogenous(traj, self.now)
        self._background_seq[bg.flow_id] = seq
        self.log.emit(
            self.now,
            "background",
            flow=bg.flow_id,
            event="reserved",
            admission_seq=seq,
        )
        # exogenous load is a capability loss for everyone else
        self._dispatch(self.net.reassess(self.now))

    def _release_background(self, bg: BackgroundFlow):
        seq = self._background_seq.pop(bg.flow_id, None)
        if seq is None or not self.net.timeline.commitments[seq].is_active:
            return
        self.net.withdraw(seq, self.now, CommitmentState.COMPLETED)
        self.log.emit(
            self.now,
            "background",
            flow=bg.flow_id,
            event="released",
            admission_seq=seq,
        )
        self._dispatch(self.net.reassess(self.now))

    def collect_spans(self):
        for wid in sorted(self.states):
            st = self.states[wid]
            executed = [traj for _, traj in st.history if not traj.is_empty]
            if not executed:
                continue
            traj = executed[-1]
            limit = st.finished_tick if st.status == WorkflowStatus.FAILED else None
            for phase in st.spec.phases:
                span = traj.phase_span(phase.phase_id)
                if span is None or phase.criticality == Criticality.BACKGROUND:
                    continue
                end = span.end_tick if limit is None else min(span.end_tick, limit)
                if span.start_tick < end:
                    self.spans.append((wid, span.start_tick, end))


# ---------------------------------------------------------------------------
# request-driven operation


class _BaselineRun(_Run):
    mode = Mode.BASELINE

    def setup(self):
        self.net = NetworkAgent(
            self.known, self.catalog, window_length=max(self.config.duration, 1)
        )
        self._phase_end: Dict[str, int] = {}
        self._degraded = set()
        self._background_seq: Dict[str, int] = {}
        if self.config.capacity_kind == CapacityKind.UNANTICIPATED:
            for s, c in self.config.capacity.epochs[1:]:
                self.queue.push(s, 0, self._capacity_change, s, c)
        for bg in self.config.background:
            self.queue.push(bg.active_start, 0, self._reserve_background, bg)
            self.queue.push(bg.release, 0, self._release_background, bg)

    def _capacity_change(self, tick: int, kbps: int):
        # no re-assessment: grants stand until their phase ends
        self.net.timeline.schedule = self.net.timeline.schedule.with_change(tick, kbps)

    def _reserve_background(self, bg: BackgroundFlow):
        traj = self._background_traj(bg, bg.active_start, bg.release)
        self._background_seq[bg.flow_id] = self.net.reserve_exogenous(traj, self.now)

    def _release_background(self, bg: BackgroundFlow):
        seq = self._background_seq.pop(bg.flow_id, None)
        if seq is not None:
            self.net.withdraw(seq, self.now, CommitmentState.COMPLETED)

    def _rank(self, st: WorkflowState) -> int:
        return self.rank[st.spec.agent_id]

    def _arrive(self, spec: WorkflowSpec):
        st = WorkflowState(spec)
        self.states[spec.workflow_id] = st
        self.log.emit(
            self.now, "arrival", workflow=spec.workflow_id, agent=spec.agent_id
        )
        self._start_phase(st, 0)

    def _start_phase(self, st: WorkflowState, index: int):
        phase = st.spec.phases[index]
        st.current_phase_index = index
        st.phase_start_tick = self.now
        end = self.now + phase.duration
        self._phase_end[st.workflow_id] = end
        self.log.emit(self.now, "phase", workflow=st.workflow_id, phase=phase.phase_id)
        self.queue.push(end, self._rank(st), self._end_phase, st.workflow_id, index)
        self._request(st, phase.preferred_profile)

    def _request(self, st: WorkflowState, profile_id: str):
        phase = st.spec.phases[st.current_phase_index]
        rate = self.catalog.rate_of(profile_id)
        decision = baseline_admit(self.net.timeline, rate, self.now)
        self.log.emit(
            self.now, "request", workflow=st.workflow_id, profile=profile_id,
            decision=decision.value,
        )
        if decision == Admission.GRANTED:
            self._grant(st, profile_id)
            return
        self.hard_rejections += 1
        if self.config.baseline.fallback:
            lower = [
                p
                for p in reversed(
                    self.catalog.between(phase.min_acceptable_profile, profile_id)
                )
                if p.rate_kbps < rate
            ]
            for p in lower:
                decision = baseline_admit(self.net.timeline, p.rate_kbps, self.now)
                self.log.emit(
                    self.now, "request", workflow=st.workflow_id, profile=p.profile_id,
                    decision=decision.value, fallback=True,
                )
                if decision == Admission.GRANTED:
                    self._degraded.add(st.workflow_id)
                    self._grant(st, p.profile_id)
                    return
        self._fail(st)

    def _grant(self, st: WorkflowState, profile_id: str):
        phase = st.spec.phases[st.current_phase_index]
        p = self.catalog.get(profile_id)
        traj = DemandTrajectory(
            st.workflow_id,
            st.spec.agent_id,
            st.spec.priority,
            (
                SegmentAssignment(
                    Interval(self.now, self._phase_end[st.workflow_id]),
                    phase.phase_id,
                    p.profile_id,
                    p.rate_kbps,
                ),
            ),
        )
        st.admission_seq = self.net.reserve_exogenous(traj, self.now)
        st.trajectory = traj
        st.record(traj, self.now)
        if st.status == WorkflowStatus.PENDING:
            st.transition(WorkflowStatus.RUNNING, self.now)
            self._workflow_event(st)

    def _release(self, st: WorkflowState):
        seq = st.admission_seq
        if seq is not None and self.net.timeline.commitments[seq].is_active:
            self.net.withdraw(seq, self.now, CommitmentState.COMPLETED)
        st.admission_seq = None

    def _silence(self, st: WorkflowState):
        self._release(st)
        if st.trajectory is not None:
            st.record(replace(st.trajectory, segments=()), self.now)

    def _fail(self, st: WorkflowState):
        self._silence(st)
        st.transition(WorkflowStatus.FAILED, self.now)
        self._workflow_event(st)

    def _end_phase(self, workflow_id: str, index: int):
        st = self.states[workflow_id]
        if st.status.is_final or st.current_phase_index != index:
            return
        phase = st.spec.phases[index]
        if phase.criticality != Criticality.BACKGROUND:
            self.spans.append((workflow_id, st.phase_start_tick, self.now))
        self._release(st)
        if index + 1 < len(st.spec.phases):
            self._start_phase(st, index + 1)
            return
        st.finished_tick = self.now
        degraded = workflow_id in self._degraded or st.ran_degraded(self.catalog)
        st.transition(
            (
                WorkflowStatus.COMPLETED_DEGRADED
                if degraded
                else WorkflowStatus.COMPLETED_OPTIMAL
            ),
            self.now,
        )
        self._workflow_event(st)

    def on_interrupt(self, workflow_id: str, end: int):
        st = self.states[workflow_id]
        if st.status.is_final or st.trajectory is None:
            return
        segments = st.trajectory.segments
        profile = segments[0].profile_id if segments else None
        self._silence(st)
        self._degraded.add(workflow_id)
        if profile is not None and end < self._phase_end[workflow_id]:
            self.queue.push(
                end,
                self._rank(st),
                self._retry,
                workflow_id,
                st.current_phase_index,
                profile,
            )

    def _retry(self, workflow_id: str, index: int, profile_id: str):
        st = self.states[workflow_id]
        if st.status.is_final or st.current_phase_index != index:
            return
        self._request(st, profile_id)


# ---------------------------------------------------------------------------
# entry points


def run(
    config: ScenarioConfig, specs: Optional[Sequence[WorkflowSpec]] = None
) -> RunResult:
    """Run one scenario.

    Parameters
    ----------
    config : ScenarioConfig
        Validated scenario; ``config.mode`` selects the operating mode.
    specs : sequence of WorkflowSpec | None
        Workflows to run; the scripted workflows plus the generated Poisson
        workload when None.

    Returns
    -------
    RunResult
        Metrics, event log and delivered-rate series.

    Raises
    ------
    ConfigError
        If the scenario cannot be simulated (e.g. a background rate that is
        not a catalog profile).
    InvariantViolation
        If a runtime self-check fails.
    """
    if specs is None:
        specs = list(config.workflows) + generate_workload(config)
    ids = [s.workflow_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("workflow identifiers must be unique", "workflows")
    for s in specs:
        try:
            s.check_catalog(config.catalog)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc), "workflows") from None
    specs = sorted(specs, key=lambda s: (s.release_tick, s.workflow_id))
    runner = _CoordinatedRun if config.mode == Mode.COORDINATED else _BaselineRun
    return runner(config, specs).execute()


@dataclass(frozen=True)
class SweepPoint:
    agent_count: int
    coordinated: RunMetrics
    baseline: RunMetrics

    @property
    def gap(self) -> float:
        """Completion-rate difference, coordinated minus request-driven."""
        return self.coordinated.completion_rate - self.baseline.completion_rate


def _sweep_job(args):
    config, count, mode = args
    return run(config.with_agents(count).with_mode(mode)).metrics


def pressure_sweep(
    config: ScenarioConfig,
    agent_counts: Sequence[int],
    n_jobs: Optional[int] = None,
) -> List[SweepPoint]:
    """Run both modes at each agent count with the same seed.

    Parameters
    ----------
    config : ScenarioConfig
        Base scenario.
    agent_counts : sequence of int
        Non-empty, ascending.
    n_jobs : int | None
        Worker processes; one per physical core when None, in-process when 1.

    Returns
    -------
    list of SweepPoint
        One (coordinated, request-driven) pair per count.

    Raises
    ------
    ConfigError
        If the counts are empty or not ascending.
    """
    counts = [int(c) for c in agent_counts]
    if not counts:
        raise ConfigError("agent_counts must not be empty", "sweep.agents")
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ConfigError("agent_counts must be strictly ascending", "sweep.agents")
    jobs = [(config, c, m) for c in counts for m in (Mode.COORDINATED, Mode.BASELINE)]
    if n_jobs is None:
        n_jobs = psutil.cpu_count(logical=False) or 1
    n_jobs = max(1, min(n_jobs, len(jobs)))
    if n_jobs == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    points = []
    for i, c in enumerate(counts):
        point = SweepPoint(c, results[2 * i], results[2 * i + 1])
        logger.info(
            "sweep %d agents: coordinated %.3f, request-driven %.3f",
            c,
            point.coordinated.completion_rate,
            point.baseline.completion_rate,
        )
        points.append(point)
    return points
