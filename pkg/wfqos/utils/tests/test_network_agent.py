from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ...envelope import Direction
from ...industrial_agent import (
    AdaptationPolicy,
    AdaptationStrategy,
    Revised,
    WorkflowState,
    adapt,
    construct_trajectory,
)
from ...model import (
    CapacitySchedule,
    CommitmentState,
    PhaseSpec,
    ProfileCatalog,
    WorkflowClass,
    WorkflowSpec,
    reassign,
    residual_capacity,
)
from ...network_agent import (
    NetworkAgent,
    PreconditionViolated,
    StubEnforcement,
    UnknownCommitment,
)
from .conftest import flat_trajectory


@pytest.fixture
def network(catalog):
    """30 Mbit/s cell with a 20 Mbit/s competitor reserved on [550, 800)."""
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog, window_length=2000)
    competitor = flat_trajectory(
        "competitor", "competitor", 5, 550, 800, "gbr-20", catalog
    )
    net.reserve_exogenous(competitor, now=0)
    return net


@pytest.fixture
def admitted(network, inspection_spec, catalog):
    """Network with the inspection workflow admitted around the competitor."""
    envelope = network.derive_envelope("drone-1")
    traj = construct_trajectory(inspection_spec, envelope, 0, catalog)
    result = network.handle_m2(traj, now=0)
    assert result.accepted, f"expected admission, got {result.verdict}"
    return network, inspection_spec, traj, result.admission_seq


def _as_lists(intervals):
    return [list(iv.as_tuple()) for iv in intervals]


def test_derive_envelope(network, loaded_data):
    expected = loaded_data["expected_outcomes"]["test_network_agent"]
    envelope = network.derive_envelope("drone-1")
    assert envelope.scope_agent_id == "drone-1"
    assert envelope.window.start == 0 and envelope.window.end == 2000
    for entry in envelope.entries:
        assert (
            _as_lists(entry.validity) == expected["envelope_validity"][entry.profile_id]
        ), f"validity of {entry.profile_id} is {entry.validity}"
        assert entry.headroom_kbps == expected["envelope_headroom"][entry.profile_id]


def test_envelope_excludes_own_commitments(network):
    envelope = network.derive_envelope("competitor")
    entry = envelope.entry("gbr-30")
    assert _as_lists(entry.validity) == [[0, 2000]]
    assert entry.headroom_kbps == 30000


def test_envelope_empty_entry():
    catalog = ProfileCatalog.from_mbps([20, 30, 100])
    net = NetworkAgent(CapacitySchedule.constant(220000), catalog)
    for i in range(2):
        traj = flat_trajectory(f"w{i}", f"a{i}", 1, 0, 2000, "gbr-100", catalog)
        net.commit(traj, now=0)
    envelope = net.derive_envelope("drone-1")
    assert _as_lists(envelope.entry("gbr-20").validity) == [[0, 2000]]
    assert envelope.entry("gbr-20").headroom_kbps == 20000
    assert envelope.entry("gbr-30").validity == ()
    assert envelope.entry("gbr-30").headroom_kbps is None


def test_visibility_scopes_catalog(catalog):
    net = NetworkAgent(
        CapacitySchedule.constant(30000),
        catalog,
        visibility={"drone-1": {"gbr-1", "gbr-10"}},
    )
    scoped = [e.profile_id for e in net.derive_envelope("drone-1").entries]
    assert scoped == ["gbr-1", "gbr-10"]
    assert len(net.derive_envelope("other").entries) == len(catalog)


def test_stage1_conflict(network, inspection_spec, catalog, loaded_data):
    expected = loaded_data["expected_outcomes"]["test_network_agent"]
    preferred = construct_trajectory(inspection_spec, None, 0, catalog)
    verdict = network.assess_feasibility(preferred)
    assert not verdict.accepted
    assert [list(c.interval.as_tuple()) for c in verdict.conflicts] == expected[
        "stage1_conflicts"
    ]
    assert verdict.conflicts[0].max_profile_id == expected["stage1_ceiling"]
    assert verdict.conflicts[0].max_kbps == 10000
    with pytest.raises(PreconditionViolated):
        network.commit(preferred, now=0)
    result = network.handle_m2(preferred, now=0)
    assert not result.accepted and result.admission_seq is None


def test_assessment_ignores_the_past(network, inspection_spec, catalog):
    preferred = construct_trajectory(inspection_spec, None, 0, catalog)
    assert network.assess_feasibility(preferred, now=800).accepted


def test_admission_fills_the_cell(admitted):
    network, _, _, seq = admitted
    assert seq == 2
    assert network.timeline.residual_at(600) == 0
    assert network.timeline.residual_at(1000) == 0
    assert not network.timeline.is_overcommitted()


def test_enforcement_latency(catalog):
    hook = StubEnforcement(20)
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog, enforcement=hook)
    traj = flat_trajectory("w", "a", 1, 0, 100, "gbr-10", catalog)
    result = net.handle_m2(traj, now=5)
    assert result.effective_tick == 25
    assert hook.applied[0][:2] == (25, "w")


def test_degradation_and_accept_lower(admitted, catalog, loaded_data):
    expected = loaded_data["expected_outcomes"]["test_network_agent"]
    network, spec, traj, seq = admitted
    dropped = CapacitySchedule(((0, 30000), (1100, 10000)))
    notes = network.on_capacity_change(dropped, 1100)
    assert len(notes) == 1
    agent, note = notes[0]
    assert agent == "drone-1"
    assert note.direction == Direction.DEGRADATION
    assert note.admission_seq == seq
    assert _as_lists(a.interval for a in note.affected) == expected["drop_affected"]
    assert [o.profile_id for o in note.affected[0].alternatives] == expected[
        "drop_alternatives"
    ]
    assert network.pending_rounds() == [seq]

    state = WorkflowState(spec, traj, network.derive_envelope("drone-1"))
    state.admission_seq = seq
    outcome = adapt(state, note, AdaptationPolicy(), catalog, now=1100)
    revised = outcome.trajectory
    assert revised.demand_at(1200) == 10000
    result = network.handle_m4(revised, seq, now=1100)
    assert result.accepted
    assert result.superseded_seq == seq
    assert result.admission_seq == 3
    assert network.timeline.commitments[seq].state == CommitmentState.SUPERSEDED
    assert network.pending_rounds() == []
    assert not network.timeline.is_overcommitted(1100, 2000)


def test_improvement_offered_once(admitted, catalog, loaded_data):
    expected = loaded_data["expected_outcomes"]["test_network_agent"]
    network, _, traj, seq = admitted
    drop = CapacitySchedule(((0, 30000), (1100, 10000)))
    network.on_capacity_change(drop, 1100)
    degraded = reassign(traj, 1100, 1570, catalog.get("gbr-10"), "inspection")
    new_seq = network.handle_m4(degraded, seq, now=1100).admission_seq

    recovered = CapacitySchedule(((0, 30000), (1100, 10000), (1300, 30000)))
    notes = network.on_capacity_change(recovered, 1300)
    assert len(notes) == 1
    _, note = notes[0]
    assert note.direction == Direction.IMPROVEMENT
    assert note.admission_seq == new_seq
    assert _as_lists(a.interval for a in note.affected) == expected[
        "recovery_affected"
    ]
    assert [o.profile_id for o in note.affected[0].alternatives] == expected[
        "recovery_alternatives"
    ]
    # same capability epoch: not offered again
    assert network.reassess(1300, changed=False) == []


def test_notifications_least_important_first():
    catalog = ProfileCatalog.from_mbps([5, 10, 20])
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog)
    a = flat_trajectory("a", "a", 1, 0, 1000, "gbr-10", catalog)
    b = flat_trajectory("b", "b", 5, 0, 1000, "gbr-20", catalog)
    net.commit(a, now=0)
    net.commit(b, now=0)
    notes = net.on_capacity_change(CapacitySchedule(((0, 30000), (10, 15000))), 10)
    assert [agent for agent, _ in notes] == ["a", "b"]
    assert notes[0][1].affected[0].alternatives == ()
    assert [o.profile_id for o in notes[1][1].affected[0].alternatives] == [
        "gbr-10",
        "gbr-5",
    ]


def _plan(workflow_id, priority, preferred, minimum, catalog):
    """Single 1000-tick phase laid out at its preferred profile."""
    spec = WorkflowSpec(
        workflow_id=workflow_id,
        agent_id=workflow_id,
        workflow_class=WorkflowClass.ROUTINE_MONITORING,
        priority=priority,
        phases=(PhaseSpec("work", 0, 1000, preferred, minimum),),
    )
    return construct_trajectory(spec, None, 0, catalog)


def test_reassess_grants_floors_before_top_up(catalog):
    net = NetworkAgent(CapacitySchedule.constant(50000), catalog)
    high = _plan("high", 2, "gbr-30", "gbr-10", catalog)
    low = _plan("low", 1, "gbr-20", "gbr-10", catalog)
    net.commit(high, now=0)
    net.commit(low, now=0)
    notes = net.on_capacity_change(CapacitySchedule(((0, 50000), (100, 20000))), 100)
    # both keep their minimum instead of the high one starving the other
    assert [agent for agent, _ in notes] == ["low", "high"]
    for _, note in notes:
        assert note.affected[0].interval.as_tuple() == (100, 1000)
        assert note.affected[0].alternatives[0].profile_id == "gbr-10"
    assert net.timeline.planning_residual(100, 1000).min() == 0


def test_priority_admission_degrades_lower_priority(catalog):
    net = NetworkAgent(
        CapacitySchedule.constant(30000), catalog, priority_admission=True
    )
    low = _plan("low", 1, "gbr-30", "gbr-10", catalog)
    first = net.handle_m2(low, now=0)
    assert first.accepted
    newcomer = _plan("new", 2, "gbr-20", "gbr-20", catalog)
    assert not net.assess_feasibility(newcomer, now=0).accepted
    result = net.handle_m2(newcomer, now=0)
    assert result.accepted
    assert result.admission_seq == first.admission_seq + 1
    ((agent, note),) = net.take_notifications()
    assert agent == "low"
    assert note.direction == Direction.DEGRADATION
    assert note.admission_seq == first.admission_seq
    assert [o.profile_id for o in note.affected[0].alternatives] == [
        "gbr-10",
        "gbr-1",
    ]
    assert net.take_notifications() == []
    assert net.pending_rounds() == [first.admission_seq]
    assert net.timeline.planning_residual(0, 2000).min() >= 0


def test_priority_admission_spares_higher_priority(catalog):
    net = NetworkAgent(
        CapacitySchedule.constant(30000), catalog, priority_admission=True
    )
    high = _plan("high", 2, "gbr-30", "gbr-10", catalog)
    assert net.handle_m2(high, now=0).accepted
    newcomer = _plan("new", 1, "gbr-20", "gbr-20", catalog)
    result = net.handle_m2(newcomer, now=0)
    assert not result.accepted
    assert result.verdict.conflicts[0].interval.as_tuple() == (0, 1000)
    assert net.take_notifications() == []
    assert len(net.timeline.active()) == 1


def test_priority_admission_keeps_floors(catalog):
    net = NetworkAgent(
        CapacitySchedule.constant(30000), catalog, priority_admission=True
    )
    low = _plan("low", 1, "gbr-30", "gbr-20", catalog)
    assert net.handle_m2(low, now=0).accepted
    newcomer = _plan("new", 2, "gbr-20", "gbr-20", catalog)
    assert not net.handle_m2(newcomer, now=0).accepted
    assert net.take_notifications() == []


def test_admission_is_first_come_by_default(catalog):
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog)
    low = _plan("low", 1, "gbr-30", "gbr-10", catalog)
    assert net.handle_m2(low, now=0).accepted
    newcomer = _plan("new", 2, "gbr-20", "gbr-20", catalog)
    assert not net.handle_m2(newcomer, now=0).accepted
    assert net.take_notifications() == []


def test_zero_demand_ticks_never_conflict(catalog):
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog)
    net.commit(flat_trajectory("a", "a", 1, 0, 1000, "gbr-30", catalog), now=0)
    # overbooked on [100, 1000) until the next re-assessment
    net.timeline.schedule = CapacitySchedule(((0, 30000), (100, 10000)))
    later = flat_trajectory("b", "b", 1, 1000, 1500, "gbr-10", catalog)
    assert net.assess_feasibility(later, now=0).accepted
    overlapping = flat_trajectory("c", "c", 1, 900, 1500, "gbr-10", catalog)
    verdict = net.assess_feasibility(overlapping, now=0)
    assert [c.interval.as_tuple() for c in verdict.conflicts] == [(900, 1000)]


def test_late_notification_is_still_adapted(admitted, catalog):
    network, spec, traj, seq = admitted
    dropped = CapacitySchedule(((0, 30000), (1100, 10000)))
    ((_, note),) = network.on_capacity_change(dropped, 1100)
    state = WorkflowState(spec, traj, network.derive_envelope("drone-1"))
    state.admission_seq = seq
    # delivered one tick after the affected interval began
    outcome = adapt(state, note, AdaptationPolicy(), catalog, now=1101)
    assert isinstance(outcome, Revised)
    assert outcome.strategy == AdaptationStrategy.ACCEPT_LOWER
    revised = outcome.trajectory
    assert revised.demand_at(1101) == 10000
    assert revised.demand_at(1569) == 10000
    result = network.handle_m4(revised, seq, now=1101)
    assert result.accepted
    assert not network.timeline.is_overcommitted(1101, 2000)


def test_m4_reject_leaves_commitment():
    catalog = ProfileCatalog.from_mbps([10, 20, 30])
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog)
    net.commit(flat_trajectory("c", "c", 5, 0, 1000, "gbr-20", catalog), now=0)
    own = flat_trajectory("own", "own", 1, 0, 1000, "gbr-10", catalog)
    seq = net.commit(own, now=0)
    greedy = flat_trajectory("own", "own", 1, 0, 1000, "gbr-30", catalog)
    result = net.handle_m4(greedy, seq, now=0)
    assert not result.accepted
    assert result.superseded_seq == seq
    conflict = result.verdict.conflicts[0]
    assert conflict.interval.as_tuple() == (0, 1000)
    assert conflict.max_profile_id == "gbr-10"
    assert net.timeline.commitments[seq].is_active

    same = net.handle_m4(own, seq, now=0)
    assert same.accepted and same.admission_seq == seq + 1


def test_m4_unknown_commitment(admitted, catalog):
    network, _, traj, seq = admitted
    with pytest.raises(UnknownCommitment):
        network.handle_m4(traj, 99, now=0)
    other = flat_trajectory("other", "drone-1", 2, 0, 10, "gbr-1", catalog)
    with pytest.raises(UnknownCommitment):
        network.handle_m4(other, seq, now=0)


def test_empty_m4_withdraws(admitted):
    network, _, traj, seq = admitted
    result = network.handle_m4(replace(traj, segments=()), seq, now=10)
    assert result.accepted and result.superseded_seq == seq
    assert network.timeline.commitments[seq].state == CommitmentState.FAILED
    with pytest.raises(UnknownCommitment):
        network.withdraw(seq)


def test_overdue_answer_is_clamped(catalog):
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog, m4_timeout=10)
    seq = net.commit(flat_trajectory("w", "a", 1, 0, 1000, "gbr-30", catalog), now=0)
    net.on_capacity_change(CapacitySchedule(((0, 30000), (100, 10000))), 100)
    assert net.expire_pending(109) == []
    expired = net.expire_pending(110)
    assert len(expired) == 1
    agent, result = expired[0]
    assert agent == "a"
    assert result.accepted and result.superseded_seq == seq
    assert [
        (s.interval.as_tuple(), s.profile_id) for s in result.enforced.segments
    ] == [((0, 100), "gbr-30"), ((100, 1000), "gbr-10")]
    assert net.pending_rounds() == []


def test_overdue_answer_without_fitting_profile_cancels():
    catalog = ProfileCatalog.from_mbps([10, 20, 30])
    net = NetworkAgent(CapacitySchedule.constant(30000), catalog, m4_timeout=10)
    seq = net.commit(flat_trajectory("w", "a", 1, 0, 1000, "gbr-30", catalog), now=0)
    net.on_capacity_change(CapacitySchedule(((0, 30000), (100, 5000))), 100)
    ((_, result),) = net.expire_pending(200)
    assert not result.accepted
    assert result.enforced.is_empty
    assert net.timeline.commitments[seq].state == CommitmentState.FAILED


def test_window_slide(catalog):
    schedule = CapacitySchedule(((0, 30000), (500, 10000)))
    net = NetworkAgent(schedule, catalog, window_length=200)
    net.register_agent("x")
    before = net.refresh_envelopes()
    assert net.advance_window(0).envelopes == before
    seq = net.commit(flat_trajectory("w", "y", 1, 0, 100, "gbr-1", catalog), now=0)
    refresh = net.advance_window(400)
    assert refresh.completed == [seq]
    assert net.timeline.commitments[seq].state == CommitmentState.COMPLETED
    envelope = dict(refresh.envelopes)["x"]
    assert envelope.entry("gbr-30").validity[0].as_tuple() == (400, 500)
    assert len(envelope.entry("gbr-30").validity) == 1
    assert envelope.entry("gbr-10").validity[0].as_tuple() == (400, 600)
    with pytest.raises(PreconditionViolated):
        net.advance_window(300)


def test_refresh_matches_derived_envelopes(admitted):
    network, _, _, _ = admitted
    network.on_capacity_change(CapacitySchedule(((0, 30000), (1100, 10000))), 1100)
    for agent, envelope in network.refresh_envelopes():
        assert envelope == network.derive_envelope(agent)


_CATALOG = ProfileCatalog.from_mbps([1, 5, 10, 20])
_PROFILES = [p.profile_id for p in _CATALOG]


@st.composite
def _requests(draw, max_size=12):
    out = []
    for i in range(draw(st.integers(1, max_size))):
        start = draw(st.integers(0, 299))
        end = draw(st.integers(start + 1, 300))
        out.append(
            flat_trajectory(
                f"w{i}",
                draw(st.sampled_from(["a", "b", "c"])),
                draw(st.integers(1, 3)),
                start,
                end,
                draw(st.sampled_from(_PROFILES)),
                _CATALOG,
            )
        )
    return out


@settings(max_examples=200, deadline=None)
@given(
    capacity=st.integers(0, 60000),
    requests=_requests(),
    profile=st.sampled_from(_PROFILES),
)
def test_envelope_validity_is_sound(capacity, requests, profile):
    net = NetworkAgent(CapacitySchedule.constant(capacity), _CATALOG, window_length=300)
    for traj in requests:
        net.handle_m2(traj, now=0)
    envelope = net.derive_envelope("newcomer")
    entry = envelope.entry(profile)
    rate = _CATALOG.rate_of(profile)
    timeline = net.timeline
    residual = np.array(
        [
            residual_capacity(timeline.schedule, timeline.commitments.values(), t)
            for t in range(300)
        ]
    )
    mask = entry.validity_mask(0, 300)
    np.testing.assert_array_equal(mask, residual >= rate)
    for iv in entry.validity:
        candidate = flat_trajectory(
            "newcomer", "newcomer", 1, iv.start_tick, iv.end_tick, profile, _CATALOG
        )
        assert net.assess_feasibility(candidate).accepted


@settings(max_examples=200, deadline=None)
@given(
    capacity=st.integers(0, 60000),
    requests=_requests(),
    withdraw=st.lists(st.integers(0, 11), max_size=4),
)
def test_admission_never_overcommits(capacity, requests, withdraw):
    net = NetworkAgent(CapacitySchedule.constant(capacity), _CATALOG, window_length=300)
    admitted = []
    for i, traj in enumerate(requests):
        result = net.handle_m2(traj, now=0)
        if result.accepted:
            admitted.append(result.admission_seq)
        if i in withdraw and admitted:
            net.withdraw(admitted.pop(0), now=0)
        assert not net.timeline.is_overcommitted()
