"""Package logger configuration."""

import logging
import sys
from typing import Optional, Union

logger = logging.getLogger("wfqos")
logger.addHandler(logging.NullHandler())

_FORMAT = "%(levelname)s %(name)s: %(message)s"


def set_log_level(verbose: Optional[Union[bool, int, str]] = None, fid=None):
    """Set the verbosity of the ``wfqos`` logger.

    Parameters
    ----------
    verbose : bool | int | str | None
        True maps to DEBUG, False and None to WARNING; ints and level names
        such as ``"INFO"`` are used as is.
    fid : file-like | None
        Stream for the handler. Defaults to :data:`sys.stderr`.
    """
    if verbose is None or verbose is False:
        level = logging.WARNING
    elif verbose is True:
        level = logging.DEBUG
    elif isinstance(verbose, str):
        level = logging.getLevelName(verbose.upper())
        if not isinstance(level, int):
            raise ValueError(f"Unknown log level {verbose!r}")
    else:
        level = int(verbose)
    logger.setLevel(level)
    for h in list(logger.handlers):
        if getattr(h, "_wfqos", False):
            logger.removeHandler(h)
    handler = logging.StreamHandler(fid if fid is not None else sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT))
    handler._wfqos = True
    logger.addHandler(handler)
    return level
