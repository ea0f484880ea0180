"""Scenario configuration: YAML loading, validation and unit conversion.

Files use human units (seconds, Mbit/s); the loaded :class:`ScenarioConfig`
holds ticks and kbit/s. Validation errors name the dotted field path and the
line it was read from.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from importlib.resources import files
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import yaml

from .industrial_agent import AdaptationPolicy, AdaptationStrategy
from .model import (
    DEFAULT_TICK_MS,
    CapacitySchedule,
    Criticality,
    PhaseSpec,
    ProfileCatalog,
    QoSProfile,
    WorkflowClass,
    WorkflowSpec,
    mbps_to_kbps,
)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid scenario configuration.

    Parameters
    ----------
    msg : str
        Description.
    field : str | None
        Dotted path of the offending field.
    line : int | None
        1-based source line, when known.
    """

    def __init__(
        self, msg: str, field: Optional[str] = None, line: Optional[int] = None
    ):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.field = field
        self.line = line


class Mode(str, enum.Enum):
    COORDINATED = "coordinated"
    BASELINE = "baseline"


class CapacityKind(str, enum.Enum):
    PROJECTED = "projected"
    UNANTICIPATED = "unanticipated"


@dataclass(frozen=True)
class WorkloadConfig:
    """Poisson workload parameters (ticks and profile ids)."""

    class_mix: Tuple[Tuple[WorkflowClass, float], ...] = (
        (WorkflowClass.CRITICAL_INSPECTION, 0.1),
        (WorkflowClass.ROUTINE_MONITORING, 0.6),
        (WorkflowClass.BACKGROUND_SENSING, 0.3),
    )
    mean_interarrival: int = 1800
    phase_count: Tuple[int, int] = (2, 5)
    phase_duration: Tuple[int, int] = (100, 600)
    preferred_profiles: Tuple[Tuple[WorkflowClass, Tuple[str, ...]], ...] = ()
    min_acceptable_levels_below: int = 2
    priorities: Tuple[Tuple[WorkflowClass, int], ...] = (
        (WorkflowClass.CRITICAL_INSPECTION, 3),
        (WorkflowClass.ROUTINE_MONITORING, 2),
        (WorkflowClass.BACKGROUND_SENSING, 1),
    )
    deferrable_fraction: Tuple[Tuple[WorkflowClass, float], ...] = (
        (WorkflowClass.BACKGROUND_SENSING, 1.0),
    )
    max_deferral: int = 300

    def lookup(self, table, cls, default=None):
        for key, value in table:
            if key == cls:
                return value
        return default


@dataclass(frozen=True)
class ProtocolConfig:
    """Coordination timing (ticks)."""

    window: int = 2000
    refresh: int = 50
    transport_delay: int = 1
    enforcement_latency: int = 20
    m4_timeout: Optional[int] = 100
    policy: AdaptationPolicy = field(default_factory=AdaptationPolicy)
    horizon: Optional[int] = None
    codec_check: bool = False
    priority_admission: bool = False


@dataclass(frozen=True)
class BaselineConfig:
    """Request-driven operation.

    The overrun model is disabled when ``loss_to_interrupt`` is None. With
    ``fallback`` a refused request walks down one catalog level at a time to
    the phase minimum instead of failing the workflow.
    """

    loss_to_interrupt: Optional[int] = None
    interruption: int = 82
    fallback: bool = False


@dataclass(frozen=True)
class BackgroundFlow:
    """Scripted competing flow outside the coordinated agents.

    Under coordination the flow is declared over ``declared`` at tick
    ``admit`` and released at ``release``; it transmits on
    ``[active_start, release)``. Request-driven operation only sees the
    transmission.
    """

    flow_id: str
    priority: int
    rate_kbps: int
    declared: Tuple[int, int]
    active_start: int
    release: int
    admit: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated scenario."""

    name: str
    mode: Mode
    seed: int
    duration: int
    capacity: CapacitySchedule
    capacity_kind: CapacityKind
    catalog: ProfileCatalog
    agent_count: int = 0
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    workflows: Tuple[WorkflowSpec, ...] = ()
    background: Tuple[BackgroundFlow, ...] = ()
    tick_ms: int = DEFAULT_TICK_MS
    sweep_agents: Tuple[int, ...] = ()

    def with_mode(self, mode: Union[str, Mode]):
        return replace(self, mode=Mode(mode))

    def with_seed(self, seed: int):
        return replace(self, seed=int(seed))

    def with_agents(self, agent_count: int):
        if agent_count < 0:
            raise ConfigError("agent_count must be >= 0", "agent_count")
        return replace(self, agent_count=int(agent_count))


# ---------------------------------------------------------------------------
# YAML reading


def _node_lines(node, prefix: str = "", out: Optional[Dict[str, int]] = None):
    """Map dotted field paths to 1-based lines of a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _node_lines(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = value.start_mark.line + 1
            _node_lines(value, path, out)
    return out


class _Reader:
    """Typed access to the loaded document with located errors."""

    _MISSING = object()

    def __init__(self, data: Mapping, lines: Mapping[str, int]):
        self.data = data
        self.lines = lines
        # containers substituted for absent fields; their elements resolve here
        self.defaults: Dict[str, Any] = {}

    def error(self, path: str, msg: str):
        line = self.lines.get(path)
        if line is None and "." in path:
            line = self.lines.get(path.rsplit(".", 1)[0])
        return ConfigError(msg, path, line)

    @classmethod
    def _lookup(cls, node: Any, path: str):
        for part in path.replace("[", ".[").split("."):
            if not part:
                continue
            if part.startswith("["):
                idx = int(part[1:-1])
                if not isinstance(node, (list, tuple)) or idx >= len(node):
                    return cls._MISSING
                node = node[idx]
            else:
                if not isinstance(node, Mapping) or part not in node:
                    return cls._MISSING
                node = node[part]
        return node

    def _from_defaults(self, path: str):
        for prefix, container in self.defaults.items():
            rest = path[len(prefix) :]
            if path.startswith(prefix) and rest[:1] in (".", "["):
                return self._lookup(container, rest)
        return self._MISSING

    def raw(self, path: str, default: Any = _MISSING):
        node = self._lookup(self.data, path)
        if node is self._MISSING:
            node = self._from_defaults(path)
        if node is self._MISSING:
            if default is self._MISSING:
                raise self.error(path, "missing required field")
            if isinstance(default, (list, tuple, Mapping)):
                self.defaults[path] = default
            return default
        return node

    def number(
        self, path, default=_MISSING, minimum=None, integer=False, allow_none=False
    ):
        value = self.raw(path, default)
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected a number, got {value!r}")
        if integer and int(value) != value:
            raise self.error(path, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(path, f"must be >= {minimum}, got {value!r}")
        return int(value) if integer else value

    def text(self, path, default=_MISSING):
        value = self.raw(path, default)
        if not isinstance(value, str):
            raise self.error(path, f"expected a string, got {value!r}")
        return value

    def choice(self, path, enum_type, default=_MISSING):
        value = self.raw(path, default)
        try:
            return enum_type(value)
        except ValueError:
            options = ", ".join(e.value for e in enum_type)
            raise self.error(path, f"{value!r} is not one of: {options}") from None

    def items(self, path, default=_MISSING):
        value = self.raw(path, default)
        if not isinstance(value, list):
            raise self.error(path, f"expected a list, got {value!r}")
        return value

    def mapping(self, path, default=_MISSING):
        value = self.raw(path, default)
        if not isinstance(value, Mapping):
            raise self.error(path, f"expected a mapping, got {value!r}")
        return value

    def range_(self, path, default=_MISSING, integer=False):
        value = self.items(path, default)
        if len(value) != 2:
            raise self.error(path, "expected a [low, high] pair")
        lo = self.number(f"{path}[0]", integer=integer, minimum=0)
        hi = self.number(f"{path}[1]", integer=integer, minimum=0)
        if lo > hi:
            raise self.error(path, f"empty range [{lo}, {hi}]")
        return lo, hi


_TOP_LEVEL = {
    "name",
    "mode",
    "seed",
    "tick_ms",
    "duration_s",
    "capacity",
    "profiles",
    "agent_count",
    "workload",
    "protocol",
    "baseline",
    "workflows",
    "background",
    "sweep",
}


def load_config(source: Union[str, Path], text: Optional[str] = None) -> ScenarioConfig:
    """Load and validate a scenario file.

    Parameters
    ----------
    source : str | Path
        Path of the YAML file (or a label when ``text`` is given).
    text : str | None
        Document text; read from ``source`` when None.

    Returns
    -------
    ScenarioConfig
        The validated scenario in ticks and kbit/s.

    Raises
    ------
    ConfigError
        If the file cannot be read, is not valid YAML, or fails validation.
    """
    if text is None:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"Cannot read config {source}: {exc.strerror}") from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"Invalid YAML in {source}", None, line) from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"Config {source} must be a mapping at top level")
    reader = _Reader(data, _node_lines(node))
    unknown = sorted(set(data) - _TOP_LEVEL)
    if unknown:
        raise reader.error(unknown[0], "unknown field")
    config = _parse(reader)
    logger.debug("loaded scenario %r from %s", config.name, source)
    return config


def bundled_config(name: str) -> ScenarioConfig:
    """Load one of the scenarios shipped in ``wfqos/data``."""
    resource = files("wfqos").joinpath("data", f"{name}.yaml")
    return load_config(f"{name}.yaml", resource.read_text(encoding="utf-8"))


def _parse(r: _Reader) -> ScenarioConfig:
    tick_ms = r.number("tick_ms", DEFAULT_TICK_MS, minimum=1, integer=True)

    def ticks(seconds):
        return int(round(float(seconds) * 1000.0 / tick_ms))

    catalog = _parse_catalog(r)
    capacity_kind = r.choice("capacity.kind", CapacityKind, "projected")
    epochs = []
    for i, _ in enumerate(r.items("capacity.epochs")):
        path = f"capacity.epochs[{i}]"
        start = r.number(f"{path}[0]", minimum=0)
        mbps = r.number(f"{path}[1]", minimum=0)
        epochs.append((ticks(start), mbps_to_kbps(mbps)))
    try:
        capacity = CapacitySchedule(tuple(epochs))
    except ValueError as exc:
        raise r.error("capacity.epochs", str(exc)) from None

    workflows = tuple(
        _parse_workflow(r, f"workflows[{i}]", catalog, ticks)
        for i, _ in enumerate(r.items("workflows", []))
    )
    background = tuple(
        _parse_background(r, f"background[{i}]", ticks)
        for i, _ in enumerate(r.items("background", []))
    )
    sweep = tuple(
        r.number(f"sweep.agents[{i}]", minimum=0, integer=True)
        for i, _ in enumerate(r.items("sweep.agents", []))
    )
    if list(sweep) != sorted(sweep):
        raise r.error("sweep.agents", "agent counts must be ascending")
    agent_count = r.number("agent_count", 0, minimum=0, integer=True)

    return ScenarioConfig(
        name=r.text("name", "scenario"),
        mode=r.choice("mode", Mode, "coordinated"),
        seed=r.number("seed", 0, minimum=0, integer=True),
        duration=ticks(r.number("duration_s", minimum=0)),
        capacity=capacity,
        capacity_kind=capacity_kind,
        catalog=catalog,
        agent_count=agent_count,
        workload=_parse_workload(
            r, catalog, ticks, generated=bool(agent_count or sweep)
        ),
        protocol=_parse_protocol(r, ticks),
        baseline=_parse_baseline(r, ticks),
        workflows=workflows,
        background=background,
        tick_ms=tick_ms,
        sweep_agents=sweep,
    )


def _parse_catalog(r: _Reader) -> ProfileCatalog:
    profiles = []
    for i, _ in enumerate(r.items("profiles")):
        path = f"profiles[{i}]"
        mbps = r.number(f"{path}.mbps", minimum=0)
        pid = r.text(f"{path}.id", f"gbr-{float(mbps):g}")
        try:
            profiles.append(
                QoSProfile(pid, mbps_to_kbps(mbps), r.text(f"{path}.label", "5QI=4"))
            )
        except ValueError as exc:
            raise r.error(path, str(exc)) from None
    try:
        return ProfileCatalog(profiles)
    except ValueError as exc:
        raise r.error("profiles", str(exc)) from None


def _class_table(r: _Reader, path: str, default, convert):
    table = r.mapping(path, default)
    out = []
    for key in table:
        try:
            cls = WorkflowClass(key)
        except ValueError:
            raise r.error(f"{path}.{key}", "unknown workflow class") from None
        out.append((cls, convert(f"{path}.{key}")))
    return tuple(out)


def _parse_workload(
    r: _Reader, catalog: ProfileCatalog, ticks, generated=True
) -> WorkloadConfig:
    base = "workload"
    default = WorkloadConfig()
    mix = _class_table(
        r,
        f"{base}.class_mix",
        {c.value: v for c, v in default.class_mix},
        lambda p: r.number(p, minimum=0),
    )
    if abs(sum(v for _, v in mix) - 1.0) > 1e-9:
        raise r.error(f"{base}.class_mix", "class mix must sum to 1.0")

    def profile_list(path):
        ids = []
        for i, _ in enumerate(r.items(path)):
            value = r.raw(f"{path}[{i}]")
            pid = value if isinstance(value, str) else f"gbr-{float(value):g}"
            if pid not in catalog:
                raise r.error(f"{path}[{i}]", f"profile {pid!r} not in catalog")
            ids.append(pid)
        return tuple(ids)

    preferred = _class_table(r, f"{base}.preferred_mbps", {}, profile_list)
    missing = [cls for cls, _ in mix if not any(c == cls for c, _ in preferred)]
    if generated and missing:
        raise r.error(
            f"{base}.preferred_mbps", f"no preferred profiles for {missing[0].value}"
        )
    lo, hi = r.range_(f"{base}.phases", [2, 5], integer=True)
    if lo < 1:
        raise r.error(f"{base}.phases", "workflows need at least one phase")
    d_lo, d_hi = r.range_(f"{base}.phase_duration_s", [10, 60])
    if ticks(d_lo) < 1:
        raise r.error(f"{base}.phase_duration_s", "phase durations must be >= 1 tick")
    return WorkloadConfig(
        class_mix=mix,
        mean_interarrival=ticks(
            r.number(f"{base}.mean_interarrival_s", 180, minimum=0.1)
        ),
        phase_count=(lo, hi),
        phase_duration=(ticks(d_lo), ticks(d_hi)),
        preferred_profiles=preferred,
        min_acceptable_levels_below=r.number(
            f"{base}.min_acceptable_levels_below", 2, minimum=0, integer=True
        ),
        priorities=_class_table(
            r,
            f"{base}.priorities",
            {c.value: v for c, v in default.priorities},
            lambda p: r.number(p, integer=True),
        ),
        deferrable_fraction=_class_table(
            r,
            f"{base}.deferrable_fraction",
            {c.value: v for c, v in default.deferrable_fraction},
            lambda p: r.number(p, minimum=0),
        ),
        max_deferral=ticks(r.number(f"{base}.max_deferral_s", 30, minimum=0)),
    )


def _parse_protocol(r: _Reader, ticks) -> ProtocolConfig:
    base = "protocol"
    strategies = r.items(
        f"{base}.strategy_order", [s.value for s in AdaptationPolicy().strategy_order]
    )
    order = tuple(
        r.choice(f"{base}.strategy_order[{i}]", AdaptationStrategy)
        for i in range(len(strategies))
    )
    try:
        policy = AdaptationPolicy(
            order, r.number(f"{base}.max_rounds", 3, minimum=1, integer=True)
        )
    except ValueError as exc:
        raise r.error(f"{base}.strategy_order", str(exc)) from None
    window = ticks(r.number(f"{base}.window_s", 200, minimum=0))
    if window <= 0:
        raise r.error(f"{base}.window_s", "planning window must be positive")
    refresh = ticks(r.number(f"{base}.refresh_s", 5, minimum=0))
    if refresh <= 0:
        raise r.error(f"{base}.refresh_s", "refresh period must be positive")
    timeout = r.number(f"{base}.m4_timeout_s", 10, minimum=0, allow_none=True)
    horizon = r.number(f"{base}.horizon_s", None, minimum=0, allow_none=True)
    return ProtocolConfig(
        window=window,
        refresh=refresh,
        transport_delay=ticks(
            r.number(f"{base}.transport_delay_ms", 100, minimum=0) / 1000.0
        ),
        enforcement_latency=ticks(
            r.number(f"{base}.enforcement_latency_ms", 2000, minimum=0) / 1000.0
        ),
        m4_timeout=None if timeout is None else ticks(timeout),
        policy=policy,
        horizon=None if horizon is None else ticks(horizon),
        codec_check=bool(r.raw(f"{base}.codec_check", False)),
        priority_admission=bool(r.raw(f"{base}.priority_admission", False)),
    )


def _parse_baseline(r: _Reader, ticks) -> BaselineConfig:
    loss = r.number("baseline.loss_to_interrupt_s", None, minimum=0, allow_none=True)
    return BaselineConfig(
        loss_to_interrupt=None if loss is None else ticks(loss),
        interruption=ticks(r.number("baseline.interruption_s", 8.2, minimum=0)),
        fallback=bool(r.raw("baseline.fallback", False)),
    )


def _parse_workflow(
    r: _Reader, path: str, catalog: ProfileCatalog, ticks
) -> WorkflowSpec:
    phases = []
    for i, _ in enumerate(r.items(f"{path}.phases")):
        p = f"{path}.phases[{i}]"
        preferred = r.text(f"{p}.preferred")
        minimum = r.text(f"{p}.min", preferred)
        for key, pid in (("preferred", preferred), ("min", minimum)):
            if pid not in catalog:
                raise r.error(f"{p}.{key}", f"profile {pid!r} not in catalog")
        deferrable = bool(r.raw(f"{p}.deferrable", False))
        try:
            phase = PhaseSpec(
                phase_id=r.text(f"{p}.id"),
                order_index=i,
                duration=ticks(r.number(f"{p}.duration_s", minimum=0)),
                preferred_profile=preferred,
                min_acceptable_profile=minimum,
                deferrable=deferrable,
                max_deferral=ticks(r.number(f"{p}.max_deferral_s", 0, minimum=0)),
                criticality=r.choice(f"{p}.criticality", Criticality, "routine"),
            )
            phase.check_catalog(catalog)
        except ValueError as exc:
            raise r.error(p, str(exc)) from None
        phases.append(phase)
    try:
        return WorkflowSpec(
            workflow_id=r.text(f"{path}.id"),
            agent_id=r.text(f"{path}.agent"),
            workflow_class=r.choice(
                f"{path}.class", WorkflowClass, "critical_inspection"
            ),
            priority=r.number(f"{path}.priority", integer=True),
            phases=tuple(phases),
            release_tick=ticks(r.number(f"{path}.release_s", 0, minimum=0)),
        )
    except ValueError as exc:
        raise r.error(path, str(exc)) from None


def _parse_background(r: _Reader, path: str, ticks) -> BackgroundFlow:
    d_lo, d_hi = r.range_(f"{path}.declared_s")
    active = ticks(r.number(f"{path}.active_s", d_lo, minimum=0))
    release = ticks(r.number(f"{path}.release_s", d_hi, minimum=0))
    if not ticks(d_lo) <= active < release:
        raise r.error(path, "need declared start <= active_s < release_s")
    return BackgroundFlow(
        flow_id=r.text(f"{path}.id"),
        priority=r.number(f"{path}.priority", integer=True),
        rate_kbps=mbps_to_kbps(r.number(f"{path}.mbps", minimum=0)),
        declared=(ticks(d_lo), ticks(d_hi)),
        active_start=active,
        release=release,
        admit=ticks(r.number(f"{path}.admit_s", 0, minimum=0)),
    )
