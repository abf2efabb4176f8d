"""Grading policies and the pipeline from a submitted function name to a
graded outcome.

Two policies:

* one-attempt — a single variant is generated; the submission is correct
  iff that variant passes every test case, and partial credit is the
  fraction of cases it passed.
* robustness — n variants are generated (default 5); the submission is
  correct iff every variant passes every case, and partial credit is the
  fraction of variants that passed the whole suite.

A variant whose code could not be extracted counts as failing everything:
it is recorded as an all-load-error suite rather than silently dropped,
so robustness scores stay honest and one malformed completion cannot
crash a batch run.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .codegen import (
    GeneratedVariant,
    GenerationClient,
    VariantCache,
    extraction_failure_reason,
    generate_variants,
    make_request,
)
from .domain import (
    DEFAULT_WORD_LIMIT,
    Question,
    ResponseRef,
    StudentResponse,
    validate_function_name,
)
from .errors import AttemptLimitExceeded
from .execution import (
    CaseResult,
    CaseStatus,
    ExecutionBackend,
    SuiteResult,
    code_hash,
    run_suite,
)

DEFAULT_MAX_ATTEMPTS = 3


class GradingPolicy(str, Enum):
    ONE_ATTEMPT = "one_attempt"
    ROBUSTNESS = "robustness"


@dataclass(frozen=True)
class FeedbackPayload:
    """What the student sees: the first variant's code, its per-case
    outcomes, and a verdict message. Never includes the reference
    solution."""

    shown_code: str
    case_summaries: tuple[tuple[int, str], ...]
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "shown_code": self.shown_code,
            "case_summaries": [list(pair) for pair in self.case_summaries],
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FeedbackPayload":
        return cls(
            shown_code=doc["shown_code"],
            case_summaries=tuple((int(i), s) for i, s in doc["case_summaries"]),
            message=doc["message"],
        )


@dataclass(frozen=True)
class GradingOutcome:
    """One graded submission under one policy."""

    response_ref: ResponseRef
    function_name: str
    policy: GradingPolicy
    variants: tuple[tuple[GeneratedVariant, SuiteResult], ...]
    correct: bool
    partial_score: float
    feedback: FeedbackPayload

    def __post_init__(self) -> None:
        if not self.variants:
            raise ValueError("an outcome needs at least one variant")
        if self.policy is GradingPolicy.ONE_ATTEMPT and len(self.variants) != 1:
            raise ValueError("one-attempt outcomes carry exactly one variant")
        if not 0.0 <= self.partial_score <= 1.0:
            raise ValueError(f"partial_score {self.partial_score} out of [0, 1]")
        if self.correct and self.partial_score != 1.0:
            raise ValueError("a correct outcome must score 1.0")

    @property
    def suite_results(self) -> tuple[SuiteResult, ...]:
        return tuple(suite for _, suite in self.variants)

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_ref": {
                "student_id": self.response_ref.student_id,
                "question_id": self.response_ref.question_id,
                "attempt": self.response_ref.attempt,
            },
            "function_name": self.function_name,
            "policy": self.policy.value,
            "variants": [
                {
                    "index": v.index,
                    "raw_output": v.raw_output,
                    "code": v.code,
                    "cache_hit": v.cache_hit,
                    "suite": _suite_to_dict(s),
                }
                for v, s in self.variants
            ],
            "correct": self.correct,
            "partial_score": self.partial_score,
            "feedback": self.feedback.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "GradingOutcome":
        ref = doc["response_ref"]
        return cls(
            response_ref=ResponseRef(
                student_id=ref["student_id"],
                question_id=ref["question_id"],
                attempt=int(ref["attempt"]),
            ),
            function_name=doc["function_name"],
            policy=GradingPolicy(doc["policy"]),
            variants=tuple(
                (
                    GeneratedVariant(
                        index=int(v["index"]),
                        raw_output=v["raw_output"],
                        code=v["code"],
                        cache_hit=bool(v["cache_hit"]),
                    ),
                    _suite_from_dict(v["suite"]),
                )
                for v in doc["variants"]
            ),
            correct=bool(doc["correct"]),
            partial_score=float(doc["partial_score"]),
            feedback=FeedbackPayload.from_dict(doc["feedback"]),
        )


def _suite_to_dict(suite: SuiteResult) -> dict[str, Any]:
    return {
        "variant_index": suite.variant_index,
        "passed_all": suite.passed_all,
        "fraction_passed": suite.fraction_passed,
        "runtime_ms": suite.runtime_ms,
        "case_results": [
            {"case_index": c.case_index, "status": c.status.value, "observed": c.observed}
            for c in suite.case_results
        ],
    }


def _suite_from_dict(doc: Mapping[str, Any]) -> SuiteResult:
    return SuiteResult(
        variant_index=int(doc["variant_index"]),
        case_results=tuple(
            CaseResult(
                case_index=int(c["case_index"]),
                status=CaseStatus(c["status"]),
                observed=c.get("observed", ""),
            )
            for c in doc["case_results"]
        ),
        passed_all=bool(doc["passed_all"]),
        fraction_passed=float(doc["fraction_passed"]),
        runtime_ms=int(doc.get("runtime_ms", 0)),
    )


def score_one_attempt(suite_results: Sequence[SuiteResult]) -> tuple[bool, float]:
    """Correct iff the single variant passes every case; partial credit is
    the fraction of cases passed."""
    if len(suite_results) != 1:
        raise ValueError(
            f"one-attempt grading needs exactly 1 variant, got {len(suite_results)}"
        )
    suite = suite_results[0]
    return suite.passed_all, 1.0 if suite.passed_all else suite.fraction_passed


def score_robustness(suite_results: Sequence[SuiteResult]) -> tuple[bool, float]:
    """Correct iff every variant passes every case; partial credit is the
    fraction of variants that passed the whole suite."""
    if not suite_results:
        raise ValueError("robustness grading needs at least 1 variant")
    passing = sum(1 for s in suite_results if s.passed_all)
    return passing == len(suite_results), passing / len(suite_results)


def build_feedback(
    policy: GradingPolicy,
    correct: bool,
    variants: Sequence[tuple[GeneratedVariant, SuiteResult]],
) -> FeedbackPayload:
    first_variant, first_suite = variants[0]
    passing = sum(1 for _, s in variants if s.passed_all)
    if correct:
        message = "Correct: every generated implementation passed the test suite."
    elif not first_variant.code and all(not v.code for v, _ in variants):
        message = (
            "Incorrect: no runnable code could be produced from this name, "
            "so nothing was tested."
        )
    elif policy is GradingPolicy.ONE_ATTEMPT:
        n_pass = sum(1 for c in first_suite.case_results if c.passed)
        message = (
            f"Incorrect: the generated implementation passed "
            f"{n_pass} of {len(first_suite.case_results)} test cases."
        )
    else:
        message = (
            f"Incorrect: {passing} of {len(variants)} generated "
            f"implementations passed the test suite."
        )
    return FeedbackPayload(
        shown_code=first_variant.code,
        case_summaries=tuple(
            (c.case_index, c.status.value) for c in first_suite.case_results
        ),
        message=message,
    )


def _failed_extraction_suite(
    variant: GeneratedVariant, n_cases: int, name: str
) -> SuiteResult:
    reason = extraction_failure_reason(variant.raw_output, name)
    return SuiteResult.from_cases(
        (
            CaseResult(case_index=i, status=CaseStatus.LOAD_ERROR, observed=reason)
            for i in range(n_cases)
        ),
        variant_index=variant.index,
    )


def _generate_and_run(
    response: StudentResponse,
    question: Question,
    *,
    policy: GradingPolicy,
    client: GenerationClient,
    backend: ExecutionBackend,
    model_id: str,
    n_variants: int,
    temperature: float,
    cache: VariantCache | None,
    retry_budget: int,
    word_limit: int,
) -> GradingOutcome:
    if response.question_id != question.id:
        raise ValueError(
            f"response targets question {response.question_id!r}, got {question.id!r}"
        )
    name = response.text
    check = validate_function_name(
        name, word_limit=word_limit, subject_language=question.subject_language
    )
    if not check.valid:
        raise ValueError(
            f"{name!r} is not a gradeable submission: "
            + ", ".join(v.value for v in check.violations)
        )
    request = make_request(
        question,
        name,
        model_id=model_id,
        n_variants=n_variants,
        temperature=temperature,
    )
    generated = generate_variants(request, client, cache, retry_budget=retry_budget)
    pairs: list[tuple[GeneratedVariant, SuiteResult]] = []
    for variant in generated:
        if not variant.code:
            suite = _failed_extraction_suite(variant, len(question.test_suite), name)
        else:
            suite = run_suite(variant.code, name, question.test_suite, backend)
            if suite.variant_index != variant.index:
                suite = SuiteResult.from_cases(
                    suite.case_results,
                    variant_index=variant.index,
                    runtime_ms=suite.runtime_ms,
                )
        pairs.append((variant, suite))
    suites = [s for _, s in pairs]
    if policy is GradingPolicy.ONE_ATTEMPT:
        correct, score = score_one_attempt(suites)
    else:
        correct, score = score_robustness(suites)
    return GradingOutcome(
        response_ref=response.ref,
        function_name=name,
        policy=policy,
        variants=tuple(pairs),
        correct=correct,
        partial_score=score,
        feedback=build_feedback(policy, correct, pairs),
    )


def grade_one_attempt(
    response: StudentResponse,
    question: Question,
    client: GenerationClient,
    backend: ExecutionBackend,
    *,
    model_id: str,
    temperature: float = 0.0,
    cache: VariantCache | None = None,
    retry_budget: int = 3,
    word_limit: int = DEFAULT_WORD_LIMIT,
) -> GradingOutcome:
    """Grade under the one-attempt policy: one variant, all cases must pass."""
    return _generate_and_run(
        response,
        question,
        policy=GradingPolicy.ONE_ATTEMPT,
        client=client,
        backend=backend,
        model_id=model_id,
        n_variants=1,
        temperature=temperature,
        cache=cache,
        retry_budget=retry_budget,
        word_limit=word_limit,
    )


def grade_robustness(
    response: StudentResponse,
    question: Question,
    client: GenerationClient,
    backend: ExecutionBackend,
    *,
    model_id: str,
    n_variants: int = 5,
    temperature: float = 0.7,
    cache: VariantCache | None = None,
    retry_budget: int = 3,
    word_limit: int = DEFAULT_WORD_LIMIT,
) -> GradingOutcome:
    """Grade under the robustness policy: all variants must pass all cases."""
    return _generate_and_run(
        response,
        question,
        policy=GradingPolicy.ROBUSTNESS,
        client=client,
        backend=backend,
        model_id=model_id,
        n_variants=n_variants,
        temperature=temperature,
        cache=cache,
        retry_budget=retry_budget,
        word_limit=word_limit,
    )


def grade_with_attempts(
    responses: Sequence[StudentResponse],
    question: Question,
    policy: GradingPolicy,
    client: GenerationClient,
    backend: ExecutionBackend,
    *,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    model_id: str,
    n_variants: int = 5,
    temperature_one_attempt: float = 0.0,
    temperature_robustness: float = 0.7,
    cache: VariantCache | None = None,
    retry_budget: int = 3,
    word_limit: int = DEFAULT_WORD_LIMIT,
) -> tuple[float, list[GradingOutcome]]:
    """Run the attempt loop over one student's submissions, in order.

    Invalid submissions consume no attempt and produce no outcome. Valid
    submissions are graded in order, stopping early once one is correct;
    the final score is the best partial score seen (0.0 when nothing was
    gradeable). Supplying more valid submissions than ``max_attempts``
    means the input itself broke the attempt limit, which is an error,
    not something to grade around.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    keys = {(r.student_id, r.question_id) for r in responses}
    if len(keys) > 1:
        raise ValueError(f"responses span multiple (student, question) pairs: {sorted(keys)}")
    for r in responses:
        if r.question_id != question.id:
            raise ValueError(
                f"response for question {r.question_id!r} given to {question.id!r}"
            )

    valid = [
        r
        for r in responses
        if validate_function_name(
            r.text, word_limit=word_limit, subject_language=question.subject_language
        ).valid
    ]
    if len(valid) > max_attempts:
        raise AttemptLimitExceeded(
            f"{len(valid)} valid submissions exceed the {max_attempts}-attempt limit"
        )

    outcomes: list[GradingOutcome] = []
    for response in valid:
        if policy is GradingPolicy.ONE_ATTEMPT:
            outcome = grade_one_attempt(
                response,
                question,
                client,
                backend,
                model_id=model_id,
                temperature=temperature_one_attempt,
                cache=cache,
                retry_budget=retry_budget,
                word_limit=word_limit,
            )
        else:
            outcome = grade_robustness(
                response,
                question,
                client,
                backend,
                model_id=model_id,
                n_variants=n_variants,
                temperature=temperature_robustness,
                cache=cache,
                retry_budget=retry_budget,
                word_limit=word_limit,
            )
        outcomes.append(outcome)
        if outcome.correct:
            break
    final_score = max((o.partial_score for o in outcomes), default=0.0)
    return final_score, outcomes


@dataclass(frozen=True)
class VariantRecord:
    """Durable trace of one variant: a hash of the code, not the code."""

    index: int
    code_hash: str
    passed_all: bool
    fraction_passed: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "code_hash": self.code_hash,
            "passed_all": self.passed_all,
            "fraction_passed": self.fraction_passed,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "VariantRecord":
        return cls(
            index=int(doc["index"]),
            code_hash=doc["code_hash"],
            passed_all=bool(doc["passed_all"]),
            fraction_passed=float(doc["fraction_passed"]),
        )


@dataclass(frozen=True)
class GradingRecord:
    """One line of the grading log: a single response, graded once."""

    response_ref: ResponseRef
    function_name: str
    policy: GradingPolicy
    valid: bool
    correct: bool
    partial_score: float
    variants: tuple[VariantRecord, ...]
    model_id: str
    prompt_version: str
    temperature: float
    graded_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_ref": {
                "student_id": self.response_ref.student_id,
                "question_id": self.response_ref.question_id,
                "attempt": self.response_ref.attempt,
            },
            "function_name": self.function_name,
            "policy": self.policy.value,
            "valid": self.valid,
            "correct": self.correct,
            "partial_score": self.partial_score,
            "variants": [v.to_dict() for v in self.variants],
            "model_id": self.model_id,
            "prompt_version": self.prompt_version,
            "temperature": self.temperature,
            "graded_at": self.graded_at,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "GradingRecord":
        ref = doc["response_ref"]
        return cls(
            response_ref=ResponseRef(
                student_id=ref["student_id"],
                question_id=ref["question_id"],
                attempt=int(ref["attempt"]),
            ),
            function_name=doc["function_name"],
            policy=GradingPolicy(doc["policy"]),
            valid=bool(doc["valid"]),
            correct=bool(doc["correct"]),
            partial_score=float(doc["partial_score"]),
            variants=tuple(VariantRecord.from_dict(v) for v in doc["variants"]),
            model_id=doc["model_id"],
            prompt_version=doc["prompt_version"],
            temperature=float(doc["temperature"]),
            graded_at=doc["graded_at"],
        )

    def content_dict(self) -> dict[str, Any]:
        """The record minus its timestamp, for idempotence comparisons."""
        doc = self.to_dict()
        doc.pop("graded_at")
        return doc


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def make_record(
    response: StudentResponse,
    outcome: GradingOutcome | None,
    *,
    policy: GradingPolicy,
    model_id: str,
    prompt_version: str,
    temperature: float,
    graded_at: str | None = None,
) -> GradingRecord:
    """Build the durable record for one response.

    ``outcome is None`` means the submission was invalid: it is logged
    with a zero score and no variants so the grading log still has one
    line per response.
    """
    if outcome is None:
        return GradingRecord(
            response_ref=response.ref,
            function_name=response.text,
            policy=policy,
            valid=False,
            correct=False,
            partial_score=0.0,
            variants=(),
            model_id=model_id,
            prompt_version=prompt_version,
            temperature=temperature,
            graded_at=graded_at or _now_iso(),
        )
    variants = tuple(
        VariantRecord(
            index=v.index,
            code_hash=code_hash(v.code) if v.code else "",
            passed_all=s.passed_all,
            fraction_passed=s.fraction_passed,
        )
        for v, s in outcome.variants
    )
    return GradingRecord(
        response_ref=response.ref,
        function_name=response.text,
        policy=outcome.policy,
        valid=True,
        correct=outcome.correct,
        partial_score=outcome.partial_score,
        variants=variants,
        model_id=model_id,
        prompt_version=prompt_version,
        temperature=temperature,
        graded_at=graded_at or _now_iso(),
    )


def append_records(path: str | Path, records: Iterable[GradingRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[GradingRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(GradingRecord.from_dict(json.loads(line)))
    return records


def compact_records(path: str | Path) -> int:
    """Rewrite the log keeping only the latest record per
    (response_ref, policy). Returns the number of records dropped."""
    path = Path(path)
    records = load_records(path)
    latest: dict[tuple, GradingRecord] = {}
    for record in records:
        latest[(record.response_ref, record.policy)] = record
    kept = list(latest.values())
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in kept:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    tmp.replace(path)
    return len(records) - len(kept)


def grade_batch(
    questions: Mapping[str, Question],
    responses: Sequence[StudentResponse],
    *,
    policy: GradingPolicy,
    client: GenerationClient,
    backend: ExecutionBackend,
    model_id: str,
    prompt_version: str = "v1",
    n_variants: int = 5,
    temperature_one_attempt: float = 0.0,
    temperature_robustness: float = 0.7,
    cache: VariantCache | None = None,
    retry_budget: int = 3,
    worker_limit: int = 4,
    word_limit: int = DEFAULT_WORD_LIMIT,
) -> list[GradingRecord]:
    """Grade every response independently, one record per response, input
    order preserved. Invalid submissions become zero-score records. Safe
    to fan out because each response is self-contained."""
    if worker_limit < 1:
        raise ValueError("worker_limit must be >= 1")
    for r in responses:
        if r.question_id not in questions:
            raise KeyError(f"unknown question id {r.question_id!r}")
    temperature = (
        temperature_one_attempt
        if policy is GradingPolicy.ONE_ATTEMPT
        else temperature_robustness
    )

    def grade_one(response: StudentResponse) -> GradingRecord:
        question = questions[response.question_id]
        check = validate_function_name(
            response.text, word_limit=word_limit, subject_language=question.subject_language
        )
        if not check.valid:
            return make_record(
                response,
                None,
                policy=policy,
                model_id=model_id,
                prompt_version=prompt_version,
                temperature=temperature,
            )
        if policy is GradingPolicy.ONE_ATTEMPT:
            outcome = grade_one_attempt(
                response,
                question,
                client,
                backend,
                model_id=model_id,
                temperature=temperature_one_attempt,
                cache=cache,
                retry_budget=retry_budget,
                word_limit=word_limit,
            )
        else:
            outcome = grade_robustness(
                response,
                question,
                client,
                backend,
                model_id=model_id,
                n_variants=n_variants,
                temperature=temperature_robustness,
                cache=cache,
                retry_budget=retry_budget,
                word_limit=word_limit,
            )
        return make_record(
            response,
            outcome,
            policy=policy,
            model_id=model_id,
            prompt_version=prompt_version,
            temperature=temperature,
        )

    if worker_limit == 1 or len(responses) <= 1:
        return [grade_one(r) for r in responses]
    with ThreadPoolExecutor(max_workers=worker_limit) as pool:
        return list(pool.map(grade_one, responses))
