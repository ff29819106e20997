"""Module entry point so ``python -m vild`` matches the ``vild`` script."""

import sys

from vild.cli import main

if __name__ == "__main__":
    sys.exit(main())
