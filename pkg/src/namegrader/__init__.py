"""Autograder for "explain in plain English" questions answered with a
function name, plus the psychometrics used to study the grades.

A student summarizes what a piece of code does by proposing a function
name. A code model regenerates an implementation from that name alone and
the implementation is run against the question's test suite; the name is
judged by whether the regenerated code behaves like the original.
"""

from .bank import QuestionBank, load_bank, load_responses
from .domain import (
    Question,
    ResponseRef,
    StudentResponse,
    TestCase,
    TestMode,
    ValidationResult,
    Violation,
    count_words,
    validate_function_name,
)
from .errors import EngineError
from .grading import (
    FeedbackPayload,
    GradingOutcome,
    GradingPolicy,
    GradingRecord,
    grade_batch,
    grade_one_attempt,
    grade_robustness,
    grade_with_attempts,
)
from .psychometrics import (
    AbilityEstimates,
    FitConfig,
    FitReport,
    ItemParameters,
    ScoreMatrix,
    classify_discrimination,
    cohens_kappa,
    cross_entropy_loss,
    descriptive_report,
    fit_2pl,
    icc_probability,
)

__version__ = "0.1.0"

__all__ = [
    "AbilityEstimates",
    "EngineError",
    "FeedbackPayload",
    "FitConfig",
    "FitReport",
    "GradingOutcome",
    "GradingPolicy",
    "GradingRecord",
    "ItemParameters",
    "Question",
    "QuestionBank",
    "ResponseRef",
    "ScoreMatrix",
    "StudentResponse",
    "TestCase",
    "TestMode",
    "ValidationResult",
    "Violation",
    "classify_discrimination",
    "cohens_kappa",
    "count_words",
    "cross_entropy_loss",
    "descriptive_report",
    "fit_2pl",
    "grade_batch",
    "grade_one_attempt",
    "grade_robustness",
    "grade_with_attempts",
    "icc_probability",
    "load_bank",
    "load_responses",
    "validate_function_name",
    "__version__",
]
