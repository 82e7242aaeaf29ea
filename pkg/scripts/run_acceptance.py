#!/usr/bin/env python3
"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

Usage: python scripts/run_acceptance.py [-k EXPR]

Takes about five minutes on one core (the telegraph runs dominate).
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    args = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"] + sys.argv[1:]
    sys.exit(pytest.main(args))
