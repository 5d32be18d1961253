"""Allow ``python -m featmeta``."""

import sys

from .cli import main

sys.exit(main())
