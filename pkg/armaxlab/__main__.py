"""Entry point for ``python -m armaxlab``."""

import sys

from armaxlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
