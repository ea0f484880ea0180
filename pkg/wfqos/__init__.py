from ._version import __version__  # noqa: F401
from .envelope import CapabilityEnvelope, CapabilityNotification  # noqa: F401
from .industrial_agent import IndustrialAgent  # noqa: F401
from .metrics import RunMetrics  # noqa: F401
from .model import (  # noqa: F401
    CapacitySchedule,
    DemandTrajectory,
    PhaseSpec,
    ProfileCatalog,
    QoSProfile,
    WorkflowSpec,
)
from .network_agent import NetworkAgent  # noqa: F401
from .scenario import (  # noqa: F401
    ConfigError,
    ScenarioConfig,
    bundled_config,
    load_config,
)
from .simulator import InvariantViolation, pressure_sweep, run  # noqa: F401
from .testbed import run_testbed_replay  # noqa: F401
from .utils._config import sys_info  # noqa: F401
