"""Run generated code against a question's test suite in an isolated
subprocess.

The engine never evaluates generated code in its own process. Real runs go
through a runner subprocess speaking a one-shot JSON protocol; offline
tests use a stub backend scripted by code hash. Either way the result is a
SuiteResult with one CaseResult per test case, in order.

Runner protocol (one JSON document each way):

  stdin:  {"function_name": str, "code": str,
           "cases": [{"inputs": [...], "expected": ..., "mode": str,
                      "timeout_ms": int}, ...]}
  stdout: {"load_error": str | null,
           "results": [{"case_index": int, "status": str, "observed": str}, ...]}

The runner exits 0 whenever the protocol was honored, regardless of test
outcomes; a nonzero exit means the protocol itself failed. ``expected``
follows the TestCase encoding: a literal for return_value mode,
``{"args": {...}}`` for argument_mutation, ``{"return": ..., "args": {...}}``
for both.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol, Sequence

from .domain import TestCase
from .errors import BackendUnavailableError, RunnerProtocolError, UnknownCodeError

OBSERVED_LIMIT = 2000

# Grace added to the sum of per-case timeouts before the orchestrator
# kills a runner outright.
RUN_CEILING_GRACE_MS = 2000


class CaseStatus(str, Enum):
    PASS = "pass"
    WRONG_RETURN = "wrong_return"
    WRONG_MUTATION = "wrong_mutation"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    LOAD_ERROR = "load_error"


@dataclass(frozen=True)
class CaseResult:
    """Outcome of one test case. ``observed`` holds the serialized value or
    error message, truncated to OBSERVED_LIMIT characters."""

    case_index: int
    status: CaseStatus
    observed: str = ""

    def __post_init__(self) -> None:
        if len(self.observed) > OBSERVED_LIMIT:
            object.__setattr__(self, "observed", self.observed[:OBSERVED_LIMIT])

    @property
    def passed(self) -> bool:
        return self.status is CaseStatus.PASS


@dataclass(frozen=True)
class SuiteResult:
    """Aggregate outcome of one variant against a full test suite."""

    variant_index: int
    case_results: tuple[CaseResult, ...]
    passed_all: bool
    fraction_passed: float
    runtime_ms: int = 0

    def __post_init__(self) -> None:
        if not self.case_results:
            raise ValueError("a suite result needs at least one case result")
        passed = sum(1 for c in self.case_results if c.passed)
        expect_fraction = passed / len(self.case_results)
        if self.passed_all != (passed == len(self.case_results)):
            raise ValueError("passed_all is inconsistent with the case results")
        if abs(self.fraction_passed - expect_fraction) > 1e-12:
            raise ValueError("fraction_passed is inconsistent with the case results")

    @classmethod
    def from_cases(
        cls,
        case_results: Iterable[CaseResult],
        variant_index: int = 0,
        runtime_ms: int = 0,
    ) -> "SuiteResult":
        results = tuple(case_results)
        passed = sum(1 for c in results if c.passed)
        return cls(
            variant_index=variant_index,
            case_results=results,
            passed_all=passed == len(results),
            fraction_passed=passed / len(results) if results else 0.0,
            runtime_ms=runtime_ms,
        )


class ExecutionBackend(Protocol):
    """Capability contract: runs untrusted code somewhere that is not the
    engine process."""

    def run(self, code: str, function_name: str, suite: Sequence[TestCase]) -> SuiteResult:
        ...


def code_hash(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()


def make_suite_result(
    statuses: Sequence[CaseStatus | str],
    variant_index: int = 0,
    runtime_ms: int = 0,
) -> SuiteResult:
    """Convenience for scripting stub results from a list of statuses."""
    return SuiteResult.from_cases(
        (
            CaseResult(case_index=i, status=CaseStatus(status))
            for i, status in enumerate(statuses)
        ),
        variant_index=variant_index,
        runtime_ms=runtime_ms,
    )


class StubBackend:
    """Scripted backend: answers by code hash, never executes anything."""

    def __init__(self, script: dict[str, SuiteResult]):
        self._script = dict(script)

    def add(self, code: str, result: SuiteResult) -> None:
        self._script[code_hash(code)] = result

    def run(self, code: str, function_name: str, suite: Sequence[TestCase]) -> SuiteResult:
        digest = code_hash(code)
        try:
            return self._script[digest]
        except KeyError:
            raise UnknownCodeError(f"no scripted result for code hash {digest[:12]}…")


def stub_backend(script: dict[str, SuiteResult]) -> StubBackend:
    """Build a backend that answers from a code-hash → result map."""
    return StubBackend(script)


class FixtureBackend:
    """Offline backend scripted by code hash, sized to the suite at call
    time: ``True`` means every case passes, a list of status strings is
    used verbatim. Never executes anything."""

    def __init__(self, specs: dict[str, bool | list[str]]):
        self._specs = dict(specs)

    def run(self, code: str, function_name: str, suite: Sequence[TestCase]) -> SuiteResult:
        digest = code_hash(code)
        spec = self._specs.get(digest)
        if spec is None:
            raise UnknownCodeError(f"no scripted statuses for code hash {digest[:12]}…")
        if spec is True:
            statuses: list[CaseStatus] = [CaseStatus.PASS] * len(suite)
        else:
            if len(spec) != len(suite):
                raise ValueError(
                    f"fixture scripts {len(spec)} cases but the suite has {len(suite)}"
                )
            statuses = [CaseStatus(s) for s in spec]
        return make_suite_result(statuses)


def _case_to_wire(case: TestCase) -> dict:
    return {
        "inputs": list(case.inputs),
        "expected": case.expected,
        "mode": case.mode.value,
        "timeout_ms": case.timeout_ms,
    }


class SubprocessBackend:
    """Runs each variant in one fresh runner subprocess.

    The whole suite is batched into a single invocation; the runner
    enforces per-case timeouts internally, and this orchestrator enforces
    a whole-run ceiling of the summed timeouts plus a grace period. A
    runner that blows the ceiling is killed and every case is reported as
    a timeout, since partial output cannot be trusted.
    """

    def __init__(self, runner_cmd: Sequence[str] | str, env: dict[str, str] | None = None):
        if isinstance(runner_cmd, str):
            runner_cmd = runner_cmd.split()
        if not runner_cmd:
            raise ValueError("runner_cmd must not be empty")
        self._cmd = list(runner_cmd)
        self._env = env

    def run(self, code: str, function_name: str, suite: Sequence[TestCase]) -> SuiteResult:
        doc = {
            "function_name": function_name,
            "code": code,
            "cases": [_case_to_wire(c) for c in suite],
        }
        ceiling_s = (sum(c.timeout_ms for c in suite) + RUN_CEILING_GRACE_MS) / 1000.0
        started = time.perf_counter()
        try:
            proc = subprocess.Popen(
                self._cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                env=self._env,
            )
        except (FileNotFoundError, PermissionError, NotADirectoryError, OSError) as exc:
            raise BackendUnavailableError(
                f"cannot spawn runner {self._cmd!r}: {exc}"
            ) from exc
        try:
            stdout, stderr = proc.communicate(json.dumps(doc), timeout=ceiling_s)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            elapsed_ms = int((time.perf_counter() - started) * 1000)
            return SuiteResult.from_cases(
                (
                    CaseResult(
                        case_index=i,
                        status=CaseStatus.TIMEOUT,
                        observed="runner exceeded the whole-run ceiling",
                    )
                    for i in range(len(suite))
                ),
                runtime_ms=elapsed_ms,
            )
        elapsed_ms = int((time.perf_counter() - started) * 1000)
        if proc.returncode != 0:
            raise RunnerProtocolError(
                f"runner exited {proc.returncode}: {stderr.strip()[:500]}"
            )
        try:
            reply = json.loads(stdout)
        except ValueError as exc:
            raise RunnerProtocolError(f"runner wrote invalid JSON: {exc}") from exc
        return self._reply_to_result(reply, len(suite), elapsed_ms)

    @staticmethod
    def _reply_to_result(reply: dict, n_cases: int, elapsed_ms: int) -> SuiteResult:
        if not isinstance(reply, dict) or "results" not in reply:
            raise RunnerProtocolError("runner reply is missing 'results'")
        load_error = reply.get("load_error")
        if load_error:
            return SuiteResult.from_cases(
                (
                    CaseResult(
                        case_index=i,
                        status=CaseStatus.LOAD_ERROR,
                        observed=str(load_error),
                    )
                    for i in range(n_cases)
                ),
                runtime_ms=elapsed_ms,
            )
        rows = reply["results"]
        if len(rows) != n_cases:
            raise RunnerProtocolError(
                f"runner reported {len(rows)} results for {n_cases} cases"
            )
        results = []
        for i, row in enumerate(rows):
            try:
                status = CaseStatus(row["status"])
                index = int(row["case_index"])
                observed = str(row.get("observed", ""))
            except (KeyError, ValueError, TypeError) as exc:
                raise RunnerProtocolError(f"malformed result row {i}: {exc}") from exc
            if index != i:
                raise RunnerProtocolError(f"result rows out of order at {i}")
            results.append(CaseResult(case_index=index, status=status, observed=observed))
        return SuiteResult.from_cases(results, runtime_ms=elapsed_ms)


def run_suite(
    code: str,
    function_name: str,
    suite: Sequence[TestCase],
    backend: ExecutionBackend,
) -> SuiteResult:
    """Run one variant's code against the suite via the given backend.

    Enforces the shape contract on whatever the backend returns: one
    result per case, in case order.
    """
    if not code:
        raise ValueError("code must be nonempty (extract it first)")
    if not suite:
        raise ValueError("test suite must be nonempty")
    result = backend.run(code, function_name, suite)
    if len(result.case_results) != len(suite):
        raise ValueError(
            f"backend returned {len(result.case_results)} case results "
            f"for {len(suite)} cases"
        )
    for position, case_result in enumerate(result.case_results):
        if case_result.case_index != position:
            raise ValueError("backend returned case results out of order")
    return result
