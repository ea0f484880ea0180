"""Utilities module."""

from ._config import sys_info  # noqa: F401
from ._logs import logger, set_log_level  # noqa: F401
