"""``python -m fnls``."""

import sys

from .cli import main

sys.exit(main())
