import json

import pytest

from ...model import (
    Criticality,
    DemandTrajectory,
    Interval,
    PhaseSpec,
    ProfileCatalog,
    SegmentAssignment,
    WorkflowClass,
    WorkflowSpec,
)


@pytest.fixture
def loaded_data():
    """
    Load and provide the expected outcomes data from a JSON file.

    Returns:
        dict: Dictionary containing the expected outcomes data.
    """
    with open("wfqos/utils/tests/expected_outcomes.json", "r") as f:
        expected_outcomes = json.load(f)
    return expected_outcomes


@pytest.fixture
def catalog():
    return ProfileCatalog.from_mbps([1, 10, 20, 30])


def inspection_workflow():
    """Four-phase workflow: idle, patrol, inspection and cooldown."""
    return WorkflowSpec(
        workflow_id="inspection-drone",
        agent_id="drone-1",
        workflow_class=WorkflowClass.CRITICAL_INSPECTION,
        priority=2,
        phases=(
            PhaseSpec(
                "idle", 0, 100, "gbr-1", "gbr-1", criticality=Criticality.BACKGROUND
            ),
            PhaseSpec("patrol", 1, 370, "gbr-10", "gbr-10"),
            PhaseSpec(
                "inspection",
                2,
                1100,
                "gbr-30",
                "gbr-10",
                criticality=Criticality.CRITICAL,
            ),
            PhaseSpec(
                "cooldown", 3, 300, "gbr-1", "gbr-1", criticality=Criticality.BACKGROUND
            ),
        ),
    )


@pytest.fixture
def inspection_spec():
    return inspection_workflow()


def flat_trajectory(workflow_id, agent_id, priority, start, end, profile, catalog):
    """Single-segment trajectory without phase bounds."""
    return DemandTrajectory(
        workflow_id,
        agent_id,
        priority,
        (
            SegmentAssignment(
                Interval(start, end), "p0", profile, catalog.rate_of(profile)
            ),
        ),
    )
