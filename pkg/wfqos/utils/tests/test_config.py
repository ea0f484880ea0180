import logging
from io import StringIO

import pytest

from .._config import sys_info
from .._logs import logger, set_log_level


def test_sys_info():
    """Test info-showing utility."""
    out = StringIO()
    sys_info(fid=out)
    value = out.getvalue()
    out.close()
    assert "Platform:" in value
    assert "Executable:" in value
    assert "CPU:" in value
    assert "Physical cores:" in value
    assert "Logical cores" in value
    assert "RAM:" in value
    assert "SWAP:" in value

    assert "Simulation defaults" in value
    assert "Tick:" in value
    assert "PCG64" in value

    assert "numpy" in value
    assert "psutil" in value
    assert "orjson" in value

    assert "style" not in value
    assert "test" not in value

    out = StringIO()
    sys_info(fid=out, developer=True)
    value = out.getvalue()
    out.close()

    assert "build" in value
    assert "style" in value
    assert "test" in value


def test_set_log_level():
    """Test the package logger configuration."""
    out = StringIO()
    assert set_log_level("info", fid=out) == logging.INFO
    logging.getLogger("wfqos.simulator").info("sweep done")
    logging.getLogger("wfqos.simulator").debug("hidden")
    assert out.getvalue() == "INFO wfqos.simulator: sweep done\n"

    assert set_log_level(True, fid=out) == logging.DEBUG
    assert sum(getattr(h, "_wfqos", False) for h in logger.handlers) == 1
    assert set_log_level(None) == logging.WARNING
    with pytest.raises(ValueError, match="Unknown log level"):
        set_log_level("chatty")
