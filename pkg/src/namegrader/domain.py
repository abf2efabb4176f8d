"""Core domain types: questions, test cases, student responses, and the
rules that decide whether a submitted function name is acceptable.

A response here is never a sentence; it is a single function name such as
``count_odd_nums``. Validation checks three things: the text is a
syntactically valid identifier in the subject language, it is not a
reserved keyword, and it does not exceed the word limit. Invalid
submissions are reported back for a free resubmission rather than raised
as errors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any

IDENTIFIER_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

DEFAULT_WORD_LIMIT = 10


class Violation(str, Enum):
    """Reasons a submitted name can be rejected."""

    NOT_AN_IDENTIFIER = "not_an_identifier"
    RESERVED_KEYWORD = "reserved_keyword"
    TOO_MANY_WORDS = "too_many_words"
    EMPTY = "empty"


class TestMode(str, Enum):
    """What a test case compares after calling the generated function.

    RETURN_VALUE compares the returned value. ARGUMENT_MUTATION compares
    post-call argument states (for functions that work in place and return
    nothing). BOTH requires both comparisons to succeed.
    """

    RETURN_VALUE = "return_value"
    ARGUMENT_MUTATION = "argument_mutation"
    BOTH = "both"


class SoloCategory(str, Enum):
    """Comprehension-level labels assigned by human raters."""

    RELATIONAL = "relational"
    RELATIONAL_ERROR = "relational_error"
    MULTISTRUCTURAL = "multistructural"
    MULTISTRUCTURAL_ERROR = "multistructural_error"
    OTHER_ERROR = "other_error"


@dataclass(frozen=True)
class TestCase:
    """One behavioral check for a question.

    ``expected`` is mode-dependent:
      * RETURN_VALUE: the literal value the call must return.
      * ARGUMENT_MUTATION: ``{"args": {"<param index>": <post-call state>}}``
        with at least one entry.
      * BOTH: ``{"return": <value>, "args": {...}}``.

    All values must be JSON-serializable literals.
    """

    inputs: tuple[Any, ...]
    expected: Any
    mode: TestMode = TestMode.RETURN_VALUE
    timeout_ms: int = 5000

    def expected_return(self) -> Any:
        if self.mode is TestMode.RETURN_VALUE:
            return self.expected
        if self.mode is TestMode.BOTH:
            return self.expected["return"]
        raise ValueError(f"mode {self.mode.value} has no expected return value")

    def expected_arg_states(self) -> dict[int, Any]:
        """Post-call argument states keyed by parameter position."""
        if self.mode is TestMode.RETURN_VALUE:
            raise ValueError("return_value mode has no expected argument states")
        return {int(k): v for k, v in self.expected["args"].items()}

    def validate(self, arity: int) -> None:
        """Check structural invariants against the owning question's arity."""
        if len(self.inputs) != arity:
            raise ValueError(
                f"case has {len(self.inputs)} inputs but the question takes {arity}"
            )
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be positive")
        if self.mode in (TestMode.ARGUMENT_MUTATION, TestMode.BOTH):
            if not isinstance(self.expected, dict) or not self.expected.get("args"):
                raise ValueError(
                    f"{self.mode.value} mode requires expected post-call state "
                    "for at least one argument"
                )
            if any(int(i) not in range(arity) for i in self.expected["args"]):
                raise ValueError("expected argument index out of range")
        if self.mode is TestMode.BOTH and "return" not in self.expected:
            raise ValueError("both mode requires an expected return value")


@dataclass(frozen=True)
class Question:
    """A code snippet students describe by proposing a function name."""

    id: str
    title: str
    code: str
    params: tuple[tuple[str, str], ...]
    assumptions: str
    test_suite: tuple[TestCase, ...]
    reference_solution: str
    subject_language: str = "python"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("question id must be nonempty")
        if not self.test_suite:
            raise ValueError(f"question {self.id!r}: test suite must be nonempty")
        for i, case in enumerate(self.test_suite):
            try:
                case.validate(len(self.params))
            except ValueError as exc:
                raise ValueError(f"question {self.id!r}, case {i}: {exc}") from exc

    @property
    def arity(self) -> int:
        return len(self.params)

    def signature(self) -> str:
        """Render the parameter list, e.g. ``x: List[int], t: int``."""
        return ", ".join(f"{name}: {ann}" if ann else name for name, ann in self.params)


@dataclass(frozen=True)
class ResponseRef:
    """Identifies one submitted attempt."""

    student_id: str
    question_id: str
    attempt: int


@dataclass(frozen=True)
class StudentResponse:
    """One submission, recorded verbatim even when invalid."""

    student_id: str
    question_id: str
    attempt: int
    text: str
    timestamp: datetime

    def __post_init__(self) -> None:
        if self.attempt < 1:
            raise ValueError("attempt numbering starts at 1")

    @property
    def ref(self) -> ResponseRef:
        return ResponseRef(self.student_id, self.question_id, self.attempt)


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of checking a submitted name. ``valid`` iff no violations."""

    valid: bool
    word_count: int
    violations: tuple[Violation, ...] = ()


@dataclass(frozen=True)
class SoloLabel:
    """A rater's comprehension-level judgment of one response."""

    rater_id: str
    response_ref: ResponseRef
    category: SoloCategory


@lru_cache(maxsize=None)
def load_keywords(subject_language: str = "python") -> frozenset[str]:
    """Reserved words of the subject language, from the packaged word list.

    One file per language under ``data/keywords/`` so additional subject
    languages can be added without code changes.
    """
    path = resources.files("namegrader").joinpath(
        f"data/keywords/{subject_language}.txt"
    )
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValueError(f"no keyword list for subject language {subject_language!r}")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def count_words(name: str) -> int:
    """Number of word segments in a function name.

    Segments are delimited by underscores and by lowercase-to-uppercase
    transitions, so ``find_distance_to_zero`` has 4 and ``countOddNums``
    has 3. Empty segments from leading, trailing, or doubled underscores
    are not counted: ``__init`` has 1.
    """
    if not name:
        raise ValueError("name must be nonempty")
    total = 0
    for segment in name.split("_"):
        if not segment:
            continue
        humps = sum(
            1
            for a, b in zip(segment, segment[1:])
            if a.islower() and b.isupper()
        )
        total += 1 + humps
    return total


def validate_function_name(
    text: str,
    word_limit: int = DEFAULT_WORD_LIMIT,
    subject_language: str = "python",
) -> ValidationResult:
    """Decide whether a submission is an acceptable function name.

    Pure and deterministic. Never raises on bad submissions: violations
    come back in the result so the caller can offer a penalty-free
    resubmission. The stored response text is never normalized here.
    """
    if word_limit < 1:
        raise ValueError("word_limit must be at least 1")
    if not text:
        return ValidationResult(valid=False, word_count=0, violations=(Violation.EMPTY,))

    violations: list[Violation] = []
    if not IDENTIFIER_RE.fullmatch(text):
        violations.append(Violation.NOT_AN_IDENTIFIER)
    elif text in load_keywords(subject_language):
        violations.append(Violation.RESERVED_KEYWORD)

    word_count = count_words(text)
    if word_count == 0:
        # All-underscore names carry no words to count; reject them the way
        # an empty box is rejected, so a valid result always has >= 1 word.
        violations.append(Violation.EMPTY)
    elif word_count > word_limit:
        violations.append(Violation.TOO_MANY_WORDS)

    return ValidationResult(
        valid=not violations,
        word_count=word_count,
        violations=tuple(violations),
    )
