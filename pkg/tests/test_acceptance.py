"""Acceptance criteria 1-10, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

import sys

import pytest

from dftgamma.verify import CHECKS, run_checks


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, cache, capsys):
    (result,) = run_checks([number], cache=cache)
    with capsys.disabled():
        print("\n" + "\n".join(result.lines()))
    assert result.passed, "\n".join(result.lines())


if __name__ == "__main__":
    results = run_checks()
    for r in results:
        print("\n".join(r.lines()))
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    sys.exit(0 if all(r.passed for r in results) else 1)
