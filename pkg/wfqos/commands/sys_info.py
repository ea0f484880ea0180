import sys
from typing import Optional, Sequence

from .cli import main


def run(argv: Optional[Sequence[str]] = None):
    """Run the ``sys-info`` subcommand as a standalone script."""
    argv = sys.argv[1:] if argv is None else list(argv)
    sys.exit(main(["sys-info", *argv]))
