"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines.
"""
import pytest

from asymcl import checks

CRITERIA = [
    # (criterion, check name, runtime limit in seconds or None)
    (1, "reductions", 30),
    (2, "oracles", 60),
    (3, "gradients", 120),
    (4, "entropy", 30),
    (5, "training", 120),
    (6, "clustering", None),
    (7, "tables", None),
    (8, "degenerate", None),
]


@pytest.mark.parametrize("number,name,limit", CRITERIA, ids=[f"criterion{c[0]}_{c[1]}" for c in CRITERIA])
def test_criterion(number, name, limit):
    (res,) = checks.run_checks([name], echo=None)
    timed_ok = limit is None or res.seconds < limit
    passed = res.passed and timed_ok
    limit_note = f" limit {limit}s" if limit else ""
    print(f"\nCRITERION {number} {'PASS' if passed else 'FAIL'}: {res.line()}{limit_note}")
    assert res.passed, res.detail
    assert timed_ok, f"took {res.seconds:.1f}s, limit {limit}s"
