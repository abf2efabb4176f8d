"""Question bank and response-file IO.

A bank is a JSON document: {"questions": [...]}, each question carrying
the displayed code, parameter list, assumptions, a reference solution,
and the test suite. Responses are JSONL, one submission per line with
student_id, question_id, attempt, text, and an optional ISO timestamp.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping

from .domain import Question, StudentResponse, TestCase, TestMode
from .errors import DuplicateIdError, ParseError

DEFAULT_BANK_RESOURCE = "default_bank.json"

_DEF_NAME_RE = re.compile(r"^[ \t]*def[ \t]+([A-Za-z_][A-Za-z0-9_]*)[ \t]*\(", re.MULTILINE)


@dataclass(frozen=True)
class QuestionBank:
    """An ordered set of questions with a schema version tag."""

    version: str
    questions: tuple[Question, ...]
    by_id: Mapping[str, Question] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, Question] = {}
        for q in self.questions:
            if q.id in index:
                raise DuplicateIdError(f"duplicate question id {q.id!r}")
            index[q.id] = q
        object.__setattr__(self, "by_id", index)

    def __iter__(self) -> Iterator[Question]:
        return iter(self.questions)

    def __len__(self) -> int:
        return len(self.questions)


def _parse_case(doc: Mapping[str, Any], where: str) -> TestCase:
    try:
        mode = TestMode(doc.get("mode", TestMode.RETURN_VALUE.value))
        case = TestCase(
            inputs=tuple(doc["inputs"]),
            expected=doc["expected"],
            mode=mode,
            timeout_ms=int(doc.get("timeout_ms", 5000)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad test case: {exc}") from exc
    return case


def parse_question(doc: Mapping[str, Any], where: str = "bank") -> Question:
    try:
        cases = tuple(
            _parse_case(c, f"{where}/case[{i}]")
            for i, c in enumerate(doc["test_suite"])
        )
        question = Question(
            id=doc["id"],
            title=doc["title"],
            code=doc["code"],
            params=tuple((p[0], p[1]) for p in doc["params"]),
            assumptions=doc.get("assumptions", ""),
            test_suite=cases,
            reference_solution=doc["reference_solution"],
            subject_language=doc.get("subject_language", "python"),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{where}: bad question: {exc}") from exc
    return question


def parse_bank(doc: Mapping[str, Any]) -> QuestionBank:
    if not isinstance(doc, Mapping) or "questions" not in doc:
        raise ParseError("bank document must be an object with a 'questions' list")
    version = doc.get("version", "1")
    if not isinstance(version, str) or not version:
        raise ParseError("bank 'version' must be a non-empty string")
    questions = tuple(
        parse_question(qdoc, where=f"questions[{i}]")
        for i, qdoc in enumerate(doc["questions"])
    )
    return QuestionBank(version=version, questions=questions)


def load_bank(path: str | Path | None = None) -> QuestionBank:
    """Load a bank file, or the packaged default bank when path is None."""
    if path is None:
        text = (
            resources.files("namegrader").joinpath(f"data/bank/{DEFAULT_BANK_RESOURCE}")
        ).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ParseError(f"bank is not valid JSON: {exc}") from exc
    return parse_bank(doc)


def question_to_dict(question: Question) -> dict[str, Any]:
    return {
        "id": question.id,
        "title": question.title,
        "code": question.code,
        "params": [list(p) for p in question.params],
        "assumptions": question.assumptions,
        "reference_solution": question.reference_solution,
        "subject_language": question.subject_language,
        "test_suite": [
            {
                "inputs": list(c.inputs),
                "expected": c.expected,
                "mode": c.mode.value,
                "timeout_ms": c.timeout_ms,
            }
            for c in question.test_suite
        ],
    }


def save_bank(path: str | Path, bank: QuestionBank) -> None:
    doc = {
        "version": bank.version,
        "questions": [question_to_dict(q) for q in bank.questions],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def reference_function_name(question: Question) -> str:
    """Name of the function the reference solution defines."""
    match = _DEF_NAME_RE.search(question.reference_solution)
    if not match:
        raise ParseError(
            f"question {question.id!r}: reference solution defines no function"
        )
    return match.group(1)


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def load_responses(path: str | Path) -> list[StudentResponse]:
    """Read submissions from JSONL, preserving file order."""
    responses = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                stamp = doc.get("timestamp")
                responses.append(
                    StudentResponse(
                        student_id=doc["student_id"],
                        question_id=doc["question_id"],
                        attempt=int(doc["attempt"]),
                        text=doc["text"],
                        timestamp=(
                            datetime.fromisoformat(stamp) if stamp else _EPOCH
                        ),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad response record: {exc}") from exc
    return responses


def save_responses(path: str | Path, responses: list[StudentResponse]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in responses:
            fh.write(
                json.dumps(
                    {
                        "student_id": r.student_id,
                        "question_id": r.question_id,
                        "attempt": r.attempt,
                        "text": r.text,
                        "timestamp": r.timestamp.isoformat(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
