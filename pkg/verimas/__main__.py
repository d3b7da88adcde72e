"""Run the command-line interface with `python -m verimas`."""
import sys

from .cli import main

sys.exit(main())
