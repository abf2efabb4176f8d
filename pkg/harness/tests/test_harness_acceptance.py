"""Acceptance: the shipped reference solutions run end-to-end through the
real runner, and runaway code is cut off by the per-case watchdog."""

import sys
import time

import pytest

from namegrader.bank import load_bank, reference_function_name
from namegrader.cli import main as namegrader_main
from namegrader.domain import TestCase, TestMode
from namegrader.execution import CaseStatus, SubprocessBackend, run_suite

RUNNER = f"{sys.executable} -m fnharness"


def test_criterion_10_harness_end_to_end(capsys):
    backend = SubprocessBackend(RUNNER)
    bank = load_bank()
    assert len(bank) == 4

    mutation_modes_seen = set()
    for question in bank:
        name = reference_function_name(question)
        result = run_suite(question.reference_solution, name, question.test_suite, backend)
        assert result.passed_all, (
            question.id,
            [(c.case_index, c.status.value, c.observed) for c in result.case_results],
        )
        mutation_modes_seen |= {c.mode for c in question.test_suite}
    assert TestMode.ARGUMENT_MUTATION in mutation_modes_seen

    # same thing through the CLI surface
    assert namegrader_main(["bank", "check", "--runner", RUNNER]) == 0
    assert "all 4 questions passed" in capsys.readouterr().out

    # an infinite loop comes back as a timeout within timeout_ms + 1000ms
    spin = "def spin():\n    while True:\n        pass\n"
    suite = [TestCase(inputs=(), expected=0, mode=TestMode.RETURN_VALUE, timeout_ms=500)]
    start = time.perf_counter()
    result = backend.run(spin, "spin", suite)
    elapsed = time.perf_counter() - start
    assert result.case_results[0].status is CaseStatus.TIMEOUT
    assert elapsed < 1.5
    assert result.passed_all is False and result.fraction_passed == 0.0
