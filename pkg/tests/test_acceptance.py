"""Acceptance gate: the ten criteria, one pass/fail line each."""
import pytest

from ahflow import verify


@pytest.mark.parametrize("number", sorted(verify.CHECKS))
def test_criterion(number, capsys):
    (r,) = verify.run_all(only={number})
    with capsys.disabled():
        print("\n" + r.line() + f" [{r.seconds:.1f}s]")
    assert r.passed, r.line()


def test_golden_linearization_constant_is_frozen():
    assert verify.LINEARIZATION_CONSTANT == 0.5
