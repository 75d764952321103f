"""The ten acceptance criteria at their stated tolerances and runtime budgets.

Each test prints one PASS/FAIL line; run with ``pytest -s`` to see them, or
use ``signed-consensus reproduce-all``.
"""

import pytest

from signed_consensus import acceptance


@pytest.mark.parametrize("check", acceptance.CRITERIA, ids=lambda c: f"criterion_{c.number:02d}")
def test_criterion(check):
    result = check()
    print(result.line)
    assert result.passed, result.line
