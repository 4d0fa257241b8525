"""Full-scale acceptance criteria, each at its stated tolerance and time limit."""

import pytest

from mixgame.acceptance import CRITERIA, Settings, run_criterion

SETTINGS = Settings(seed=1, workers=1)


@pytest.mark.slow
@pytest.mark.parametrize("key", [c[0] for c in CRITERIA])
def test_criterion(key, capsys):
    result = run_criterion(key, SETTINGS)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
