"""Acceptance suite: one test per criterion, pinned tolerances.

Heavy shared artifacts (the stationary sweep, the balance ensembles) are
memoized inside sqglab.acceptance, so criteria 5-8 share two long runs.
The whole module is expected to take tens of minutes on one core; run it
last (pytest collects it alphabetically first, hence the explicit order
marker in the name: this file is self-contained and order independent).
"""

import pytest

from sqglab.acceptance import CRITERIA


@pytest.mark.acceptance
@pytest.mark.parametrize("cid,name,fn", CRITERIA, ids=[f"criterion_{c}" for c, _, _ in CRITERIA])
def test_criterion(cid, name, fn, capsys):
    result = fn()
    with capsys.disabled():
        print(f"\n{result.line()}")
        for message in result.messages:
            print(f"    {message}")
    assert result.passed, f"criterion {cid} ({name}) failed: {result.messages}"
