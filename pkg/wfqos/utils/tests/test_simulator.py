from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ..._workload import agent_rng, generate_workload
from ...model import (
    CapacitySchedule,
    Commitment,
    PlanningWindow,
    ProfileCatalog,
)
from ...network_agent import CapabilityTimeline
from ...scenario import ConfigError, Mode, bundled_config, load_config
from ...simulator import (
    Admission,
    EventLog,
    baseline_admit,
    compute_utilization,
    pressure_sweep,
    read_events,
    run,
)
from .conftest import flat_trajectory, inspection_workflow

SMALL = """\
name: small
seed: 3
duration_s: 120
capacity:
  kind: projected
  epochs:
    - [0, 60]
    - [60, 25]
profiles:
  - {mbps: 1}
  - {mbps: 5}
  - {mbps: 10}
  - {mbps: 20}
  - {mbps: 30}
agent_count: 6
workload:
  mean_interarrival_s: 30
  phases: [2, 3]
  phase_duration_s: [5, 20]
  preferred_mbps:
    critical_inspection: [20, 30]
    routine_monitoring: [5, 10, 20]
    background_sensing: [1, 5]
  max_deferral_s: 10
"""


@pytest.fixture(scope="module")
def small_config():
    return load_config("small.yaml", SMALL)


@pytest.fixture(scope="module")
def heavy_results():
    config = bundled_config("heavy120")
    return {mode: run(config.with_mode(mode)).metrics for mode in Mode}


def test_baseline_admit_uses_instantaneous_residual():
    catalog = ProfileCatalog.from_mbps([10, 20])
    timeline = CapabilityTimeline(
        CapacitySchedule.constant(30000), PlanningWindow(0)
    )
    busy = flat_trajectory("b", "b", 1, 100, 200, "gbr-20", catalog)
    timeline.commitments[1] = Commitment(1, busy)
    assert baseline_admit(timeline, 20000, 50) == Admission.GRANTED
    assert baseline_admit(timeline, 20000, 150) == Admission.REJECTED
    assert baseline_admit(timeline, 10000, 150) == Admission.GRANTED


def test_event_log_is_tick_ordered(tmp_path):
    log = EventLog()
    log.emit(5, "phase", workflow="w", phase="p1")
    log.emit(1, "arrival", workflow="w")
    log.emit(5, "capacity", kbps=10)
    assert [r["type"] for r in log.records] == ["arrival", "phase", "capacity"]
    lines = log.to_ndjson().splitlines()
    assert lines[0] == b'{"tick":1,"type":"arrival","workflow":"w"}'
    path = tmp_path / "events.ndjson"
    log.write(path)
    assert read_events(path) == log.records


def test_compute_utilization_shares_by_priority():
    events = [
        {
            "tick": 0,
            "type": "enforce",
            "flow": "low",
            "priority": 1,
            "segments": [[0, 10, 20000]],
        },
        {
            "tick": 0,
            "type": "enforce",
            "flow": "high",
            "priority": 5,
            "segments": [[0, 10, 20000]],
        },
        {"tick": 5, "type": "interruption", "flow": "high", "end": 8},
    ]
    util = compute_utilization(events, CapacitySchedule.constant(30000), 10)
    np.testing.assert_array_equal(util.per_flow["high"][:5], 20000)
    np.testing.assert_array_equal(util.per_flow["high"][5:8], 0)
    np.testing.assert_array_equal(util.per_flow["low"][:5], 10000)
    np.testing.assert_array_equal(util.per_flow["low"][5:8], 20000)
    assert util.scalar == pytest.approx(sum(util.delivered) / 300000)
    assert util.series.max() <= 1.0


def test_workload_substreams_are_independent(small_config):
    few = generate_workload(small_config.with_agents(3))
    many = generate_workload(small_config.with_agents(6))
    first = {s.workflow_id for s in few}
    assert first <= {s.workflow_id for s in many}
    assert all(s.release_tick < small_config.duration for s in many)
    a = agent_rng(3, 0).random(4)
    np.testing.assert_array_equal(a, agent_rng(3, 0).random(4))
    assert not np.array_equal(a, agent_rng(3, 1).random(4))


def test_generated_phases_follow_workload(small_config):
    specs = generate_workload(small_config)
    assert specs, "expected a non-empty workload"
    for spec in specs:
        assert 2 <= len(spec.phases) <= 3
        for phase in spec.phases:
            assert 50 <= phase.duration <= 200
            spec.check_catalog(small_config.catalog)


@pytest.mark.parametrize("mode", list(Mode))
def test_run_is_deterministic(small_config, mode):
    config = small_config.with_mode(mode)
    first = run(config)
    second = run(config)
    assert first.events.to_ndjson() == second.events.to_ndjson()
    m = first.metrics
    assert m.is_conserved()
    assert m.total_workflows == len(generate_workload(config))
    assert 0.0 <= m.utilization <= 1.0


def test_scripted_workflow_completes():
    config = load_config(
        "one.yaml",
        "duration_s: 200\n"
        "capacity: {epochs: [[0, 30]]}\n"
        "profiles: [{mbps: 1}, {mbps: 10}, {mbps: 20}, {mbps: 30}]\n",
    )
    for mode in Mode:
        result = run(config.with_mode(mode), [inspection_workflow()])
        m = result.metrics
        assert m.total_workflows == 1
        assert m.completed == 1, f"{mode.value}: {m.to_dict()}"
        assert (m.failed, m.hard_rejections) == (0, 0)


def test_run_rejects_duplicate_workflows(small_config):
    spec = inspection_workflow()
    with pytest.raises(ConfigError):
        run(small_config, [spec, spec])


def test_sweep_validates_counts(small_config):
    with pytest.raises(ConfigError):
        pressure_sweep(small_config, [])
    with pytest.raises(ConfigError):
        pressure_sweep(small_config, [4, 2])


def test_small_sweep(small_config):
    points = pressure_sweep(small_config, [2, 4], n_jobs=1)
    assert [p.agent_count for p in points] == [2, 4]
    for p in points:
        assert p.coordinated.total_workflows == p.baseline.total_workflows
        assert p.gap == pytest.approx(
            p.coordinated.completion_rate - p.baseline.completion_rate
        )


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), agents=st.integers(0, 3))
def test_outcomes_are_conserved(seed, agents):
    config = load_config("small.yaml", SMALL).with_seed(seed)
    config = config.with_agents(agents)
    for mode in Mode:
        m = run(config.with_mode(mode)).metrics
        assert m.completed_optimal + m.completed_degraded + m.failed == (
            m.total_workflows
        )


def test_event_records_keep_their_type(small_config):
    records = run(small_config.with_mode(Mode.COORDINATED)).events.records
    capacity = [r for r in records if r["type"] == "capacity"]
    assert [r["tick"] for r in capacity] == [0, 600]
    assert {r["capacity_kind"] for r in capacity} == {"projected"}
    messages = [r for r in records if r["type"] == "message"]
    assert messages
    assert {r["msg_kind"] for r in messages} >= {"M1_ENVELOPE", "M2_TRAJECTORY"}


def test_equivalent_under_abundance():
    config = bundled_config("heavy120").with_agents(20)
    config = replace(config, capacity=CapacitySchedule(((0, 100_000_000),)))
    metrics = {mode: run(config.with_mode(mode)).metrics for mode in Mode}
    co, bl = metrics[Mode.COORDINATED], metrics[Mode.BASELINE]
    assert co.total_workflows == bl.total_workflows > 0
    for m in (co, bl):
        assert m.completed_optimal == m.total_workflows
        assert (m.completed_degraded, m.failed, m.hard_rejections) == (0, 0, 0)


def test_heavy_traffic_gap(heavy_results, loaded_data):
    expected = loaded_data["expected_outcomes"]["test_simulator"]
    co = heavy_results[Mode.COORDINATED]
    bl = heavy_results[Mode.BASELINE]
    assert co.total_workflows == bl.total_workflows > 0
    assert co.hard_rejections == 0
    assert bl.hard_rejections == bl.failed
    gap = co.completion_rate - bl.completion_rate
    assert gap >= expected["heavy_min_gap"], f"gap {gap:.3f}"


def test_heavy_traffic_utilization(heavy_results):
    co = heavy_results[Mode.COORDINATED]
    bl = heavy_results[Mode.BASELINE]
    assert co.utilization >= bl.utilization, (co.utilization, bl.utilization)


def test_pressure_sweep_gap_widens(loaded_data):
    counts = loaded_data["expected_outcomes"]["test_simulator"]["sweep_counts"]
    config = bundled_config("sweep")
    points = pressure_sweep(config, [counts[0], counts[-1]])
    assert points[-1].gap > points[0].gap
    for p in points:
        assert p.coordinated.completion_rate >= p.baseline.completion_rate
