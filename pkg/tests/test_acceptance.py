"""Acceptance criteria at their stated tolerances, one pass/fail line each (run with -s to see them)."""

from pathlib import Path

import pytest

from rosguard import acceptance as acc

FIXTURE = Path(__file__).parent / "fixtures" / "ieee14_region4.txt"


def _check(res):
    print(res.line())
    assert res.passed, res.line()


@pytest.mark.slow
def test_criterion_1_bnb_matches_bruteforce():
    _check(acc.criterion_1())


def test_criterion_2_relaxation_ordering():
    _check(acc.criterion_2())


@pytest.mark.slow
def test_criterion_3_evidence_range():
    _check(acc.criterion_3())


@pytest.mark.slow
def test_criterion_4_false_alarm_period():
    _check(acc.criterion_4())


def test_criterion_5_delay_bound():
    _check(acc.criterion_5())


def test_criterion_6_cusum_identity():
    _check(acc.criterion_6())


@pytest.mark.slow
def test_criterion_7_equalizer():
    _check(acc.criterion_7())


def test_criterion_8_batch_throughput():
    _check(acc.criterion_8())


def test_criterion_9_fixture():
    _check(acc.criterion_9(FIXTURE))
