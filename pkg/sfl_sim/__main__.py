"""Run the simulator with ``python -m sfl_sim``."""

import sys

from .cli import main

sys.exit(main())
