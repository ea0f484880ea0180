"""Command-line front end.

Subcommands run a scenario, a pressure sweep, the testbed replay, check a
config file, or print the system report. Every output is plot-ready data
written to the output directory (``--out``, default ``$WFQOS_OUTPUT_DIR``
or ``./results``).
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import orjson

from .. import sys_info
from ..scenario import ConfigError, Mode, ScenarioConfig, bundled_config, load_config
from ..simulator import InvariantViolation, pressure_sweep, run
from ..testbed import comparison, run_testbed_replay, throughput_rows
from ..utils import set_log_level

logger = logging.getLogger(__name__)

OUTPUT_ENV = "WFQOS_OUTPUT_DIR"
BUNDLED = ("testbed", "heavy120", "sweep")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2

_JSON = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_APPEND_NEWLINE


def resolve_config(name_or_path: str) -> ScenarioConfig:
    """Load a config file, or a bundled scenario by name."""
    path = Path(name_or_path)
    if not path.exists() and name_or_path in BUNDLED:
        return bundled_config(name_or_path)
    return load_config(path)


def parse_agents(text: str) -> List[int]:
    """Parse ``start:stop:step`` (stop inclusive) or a comma list of counts."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            start, stop, step = parts
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected start:stop:step or a comma list, got {text!r}"
        ) from None


def _write_json(path: Path, doc):
    path.write_bytes(orjson.dumps(doc, option=_JSON))


def _write_csv(path: Path, header: Sequence[str], rows, fmt: Sequence[str]):
    data = np.asarray(list(rows), dtype=float).reshape(-1, len(header))
    np.savetxt(
        path,
        data,
        fmt=list(fmt),
        delimiter=",",
        header=",".join(header),
        comments="",
    )


def _output_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "mode", None) is not None:
        config = config.with_mode(args.mode)
    return config


def _cmd_run(args) -> int:
    config = _apply_overrides(resolve_config(args.config), args)
    result = run(config)
    out = _output_dir(args)
    _write_json(out / "metrics.json", result.metrics.to_dict())
    result.events.write(out / "events.ndjson")
    util = result.utilization
    tick_s = config.tick_ms / 1000.0
    _write_csv(
        out / "utilization.csv",
        ("time_s", "capacity_mbps", "delivered_mbps", "utilization"),
        (
            (t * tick_s, util.capacity[t] / 1000.0, util.delivered[t] / 1000.0, u)
            for t, u in enumerate(util.series)
        ),
        ("%.1f", "%.3f", "%.3f", "%.6f"),
    )
    m = result.metrics
    logger.info(
        "%s (%s): %d/%d completed, %d failed",
        config.name,
        config.mode.value,
        m.completed,
        m.total_workflows,
        m.failed,
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _apply_overrides(resolve_config(args.config), args)
    counts = args.agents or list(config.sweep_agents) or [config.agent_count]
    points = pressure_sweep(config, counts, n_jobs=args.jobs)
    out = _output_dir(args)
    header = (
        "agent_count",
        "coordinated_total",
        "coordinated_completion_rate",
        "coordinated_failed",
        "coordinated_hard_rejections",
        "coordinated_utilization",
        "baseline_total",
        "baseline_completion_rate",
        "baseline_failed",
        "baseline_hard_rejections",
        "baseline_utilization",
        "gap",
    )

    def row(p):
        values = [p.agent_count]
        for m in (p.coordinated, p.baseline):
            values += [
                m.total_workflows,
                m.completion_rate,
                m.failed,
                m.hard_rejections,
                m.utilization,
            ]
        return values + [p.gap]

    fmt = ["%d"] + ["%d", "%.6f", "%d", "%d", "%.6f"] * 2 + ["%.6f"]
    _write_csv(out / "sweep.csv", header, (row(p) for p in points), fmt)
    return EXIT_OK


def _cmd_replay(args) -> int:
    config = resolve_config(args.config) if args.config else bundled_config("testbed")
    if args.seed is not None:
        config = config.with_seed(args.seed)
    co = run_testbed_replay(Mode.COORDINATED, config)
    bl = run_testbed_replay(Mode.BASELINE, config)
    out = _output_dir(args)
    _write_json(out / "comparison.json", comparison(co, bl))
    _write_csv(
        out / "throughput.csv",
        ("time_s", "capacity_mbps", "coordinated_mbps", "baseline_mbps"),
        throughput_rows(co, bl, config.tick_ms),
        ("%.1f", "%.3f", "%.3f", "%.3f"),
    )
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = resolve_config(args.config)
    print(
        f"{args.config}: ok ({config.name}, {config.mode.value}, "
        f"{config.agent_count} agents, {len(config.workflows)} scripted workflows)"
    )
    return EXIT_OK


def _cmd_sys_info(args) -> int:
    sys_info(developer=args.developer)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=__package__.split(".")[0],
        description="Workflow-aware QoS coordination simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging")

    outputs = argparse.ArgumentParser(add_help=False)
    outputs.add_argument(
        "--out",
        default=os.environ.get(OUTPUT_ENV, "results"),
        help=f"output directory (default: ${OUTPUT_ENV} or ./results)",
    )
    outputs.add_argument("--seed", type=int, default=None, help="override the seed")

    p = sub.add_parser("run", parents=[common, outputs], help="run one scenario")
    p.add_argument("--config", required=True, help="config file or bundled name")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", parents=[common, outputs], help="pressure sweep")
    p.add_argument("--config", default="sweep", help="config file or bundled name")
    p.add_argument("--agents", type=parse_agents, default=None, help="e.g. 50:185:15")
    p.add_argument("--jobs", type=int, default=None, help="worker processes")
    p.set_defaults(func=_cmd_sweep, mode=None)

    p = sub.add_parser(
        "replay-testbed", parents=[common, outputs], help="testbed replay"
    )
    p.add_argument("--config", default=None, help="config file or bundled name")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("validate-config", parents=[common], help="check a config file")
    p.add_argument("config", help="config file or bundled name")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("sys-info", parents=[common], help="system information")
    p.add_argument(
        "--developer",
        help="display information for optional dependencies",
        action="store_true",
    )
    p.set_defaults(func=_cmd_sys_info)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run the subcommand.

    Returns
    -------
    int
        0 on success, 1 on a configuration error, 2 on a failed runtime
        self-check. Malformed flags exit through :mod:`argparse`.
    """
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_log_level(True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def run_main():
    sys.exit(main())
