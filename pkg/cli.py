"""Batch entry point: ``python cli.py <command> --config experiment.json``."""

import sys

from utils.cli_utils import main

if __name__ == "__main__":
    sys.exit(main())
