"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all criteria, a few minutes
    python scripts/run_acceptance.py -k "not 02 and not 04 and not 12"   # skip training runs
"""

import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    sys.exit(pytest.main([os.path.join(ROOT, "tests", "test_acceptance.py"), "-q", "-p", "no:cacheprovider", *sys.argv[1:]]))
