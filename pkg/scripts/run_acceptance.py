#!/usr/bin/env python3
"""Run the acceptance suite and print one pass/fail line per criterion.

Usage: scripts/run_acceptance.py [extra pytest args], e.g. ``-k criterion_7``.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(pytest.main([str(ROOT / "tests" / "test_acceptance.py"), "-v", "-p", "no:cacheprovider", *sys.argv[1:]]))
