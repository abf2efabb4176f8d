"""The runner protocol, one job per process.

stdin (one JSON document):

    {"function_name": str, "code": str,
     "cases": [{"inputs": [...], "expected": ..., "mode": str,
                "timeout_ms": int}, ...]}

stdout (one JSON document):

    {"load_error": str | null,
     "results": [{"case_index": int, "status": str, "observed": str}, ...]}

``mode`` selects what gets compared: "return_value" checks the call's
return, "argument_mutation" checks the post-call state of the arguments
(``expected`` is ``{"args": {"<param index>": state, ...}}``), "both"
checks both (``expected`` is ``{"return": ..., "args": {...}}``).

The exit code is 0 whenever the protocol was honored, no matter how badly
the code under test behaved — test outcomes travel as per-case statuses
(pass, wrong_return, wrong_mutation, runtime_error, timeout) or a
document-level load_error with an empty results array. A nonzero exit,
with a diagnostic on stderr and nothing on stdout, means the input itself
was malformed.
"""

from __future__ import annotations

import copy
import json
import signal
import sys
from contextlib import contextmanager
from typing import Any, Callable, Iterator

from .compare import OBSERVED_LIMIT, canonical, values_equal

MODES = ("return_value", "argument_mutation", "both")


class ProtocolError(ValueError):
    """The input document violates the runner protocol."""


class CaseTimeout(BaseException):
    # BaseException on purpose: code under test cannot swallow the
    # watchdog with a bare ``except Exception``
    pass


@contextmanager
def watchdog(seconds: float) -> Iterator[None]:
    """Interrupt the enclosed call after ``seconds`` of wall clock."""

    def fire(signum: int, frame: Any) -> None:
        raise CaseTimeout()

    previous = signal.signal(signal.SIGALRM, fire)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, previous)


def parse_input(raw: str) -> dict:
    try:
        doc = json.loads(raw)
    except ValueError as exc:
        raise ProtocolError(f"stdin is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ProtocolError("input must be a JSON object")
    name = doc.get("function_name")
    if not isinstance(name, str) or not name:
        raise ProtocolError("'function_name' must be a nonempty string")
    if not isinstance(doc.get("code"), str):
        raise ProtocolError("'code' must be a string")
    cases = doc.get("cases")
    if not isinstance(cases, list):
        raise ProtocolError("'cases' must be a list")
    for i, case in enumerate(cases):
        _check_case(i, case)
    return doc


def _check_case(i: int, case: Any) -> None:
    where = f"cases[{i}]"
    if not isinstance(case, dict):
        raise ProtocolError(f"{where} must be an object")
    if not isinstance(case.get("inputs"), list):
        raise ProtocolError(f"{where}: 'inputs' must be a list")
    timeout = case.get("timeout_ms")
    if isinstance(timeout, bool) or not isinstance(timeout, int) or timeout < 1:
        raise ProtocolError(f"{where}: 'timeout_ms' must be a positive integer")
    mode = case.get("mode")
    if mode not in MODES:
        raise ProtocolError(f"{where}: unknown mode {mode!r}")
    if "expected" not in case:
        raise ProtocolError(f"{where}: missing 'expected'")
    if mode in ("argument_mutation", "both"):
        expected = case["expected"]
        args = expected.get("args") if isinstance(expected, dict) else None
        if not isinstance(args, dict) or not args:
            raise ProtocolError(f"{where}: {mode} needs expected 'args' states")
        for key in args:
            try:
                index = int(key)
            except (TypeError, ValueError):
                index = -1
            if not 0 <= index < len(case["inputs"]):
                raise ProtocolError(f"{where}: argument index {key!r} out of range")
        if mode == "both" and "return" not in expected:
            raise ProtocolError(f"{where}: both mode needs an expected 'return'")


def load_function(code: str, function_name: str) -> tuple[Callable | None, str | None]:
    """exec the code in a fresh namespace; (fn, None) or (None, reason)."""
    namespace: dict[str, Any] = {}
    try:
        exec(compile(code, "<generated>", "exec"), namespace)
    except (Exception, SystemExit) as exc:
        return None, f"{type(exc).__name__}: {exc}"[:OBSERVED_LIMIT]
    fn = namespace.get(function_name)
    if not callable(fn):
        return None, f"function {function_name!r} is not defined"
    return fn, None


def judge(case: dict, value: Any, inputs: list) -> tuple[str, str]:
    """Compare one finished call against the case's expectations."""
    mode = case["mode"]
    expected = case["expected"]
    if mode in ("return_value", "both"):
        want = expected["return"] if mode == "both" else expected
        if not values_equal(want, value):
            return "wrong_return", canonical(value)
    if mode in ("argument_mutation", "both"):
        states = expected["args"]
        if not all(values_equal(want, inputs[int(k)]) for k, want in states.items()):
            observed = {"args": {k: inputs[int(k)] for k in states}}
            return "wrong_mutation", canonical(observed)
    return "pass", ""


def run_cases(doc: dict) -> dict:
    fn, reason = load_function(doc["code"], doc["function_name"])
    if fn is None:
        return {"load_error": reason, "results": []}
    results = []
    for i, case in enumerate(doc["cases"]):
        # fresh copies per case: the call may mutate them, and mutation
        # checks must compare against states no earlier case touched
        inputs = copy.deepcopy(case["inputs"])
        try:
            with watchdog(case["timeout_ms"] / 1000.0):
                value = fn(*inputs)
        except CaseTimeout:
            status = "timeout"
            observed = f"timed out after {case['timeout_ms']} ms"
        except (Exception, SystemExit) as exc:
            status = "runtime_error"
            observed = f"{type(exc).__name__}: {exc}"[:OBSERVED_LIMIT]
        else:
            status, observed = judge(case, value, inputs)
        results.append({"case_index": i, "status": status, "observed": observed})
    return {"load_error": None, "results": results}


def main() -> int:
    raw = sys.stdin.read()
    try:
        doc = parse_input(raw)
    except ProtocolError as exc:
        print(f"fnharness: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(run_cases(doc), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
