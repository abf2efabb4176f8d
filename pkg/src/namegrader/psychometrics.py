"""Two-parameter logistic IRT over fractional scores, plus the small
measurement toolkit around it: discrimination bands, inter-rater kappa,
and descriptive report tables.

Model: P(correct) = sigmoid(a * (theta - b)) with discrimination a,
difficulty b, ability theta. Scores may be fractional (partial credit in
[0, 1]); the loss is the masked cross-entropy

    L = -sum over observed cells of [s*log(P) + (1-s)*log(1-P)]

with P clamped away from 0 and 1 before the logs. Fitting is projected
gradient descent on (theta, a, b) jointly, with box constraints
theta in [-3, 3], a in [0, 2], b in [-3, 3].

The matrix orientation everywhere is scores[student, item].
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .domain import ResponseRef, SoloCategory, SoloLabel, StudentResponse, count_words
from .errors import (
    DuplicateIdError,
    EmptyMaskError,
    LengthMismatchError,
    NonFiniteLossError,
    OutOfRangeError,
)

THETA_BOUNDS = (-3.0, 3.0)
A_BOUNDS = (0.0, 2.0)
B_BOUNDS = (-3.0, 3.0)
PROB_FLOOR = 1e-9

# Default theta grid for ICC curves: [-3, 3] in steps of 0.05.
ICC_GRID = np.linspace(-3.0, 3.0, 121)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def icc_probability(theta, a, b):
    """Item characteristic curve: P = sigmoid(a * (theta - b)), clamped to
    [PROB_FLOOR, 1 - PROB_FLOOR] so downstream logs stay finite.

    Accepts scalars or broadcastable arrays; returns a float for scalar
    input, an array otherwise.
    """
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.clip(_sigmoid(a * (theta - b)), PROB_FLOOR, 1.0 - PROB_FLOOR)
    if p.ndim == 0:
        return float(p)
    return p


def predicted_matrix(theta: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full students x items probability matrix for the given parameters."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return _sigmoid(a[None, :] * (theta[:, None] - b[None, :]))


def icc_curve(a: float, b: float, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sampled ICC for plotting/reporting: (theta grid, probabilities)."""
    grid = ICC_GRID if grid is None else np.asarray(grid, dtype=float)
    return grid, _sigmoid(a * (grid - b))


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Fractional scores, students x items. NaN marks a missing cell."""

    scores: np.ndarray
    student_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 2:
            raise ValueError(f"scores must be 2-D, got shape {scores.shape}")
        if scores.shape != (len(self.student_ids), len(self.item_ids)):
            raise LengthMismatchError(
                f"scores shape {scores.shape} does not match "
                f"{len(self.student_ids)} students x {len(self.item_ids)} items"
            )
        if len(set(self.student_ids)) != len(self.student_ids):
            raise DuplicateIdError("duplicate student ids")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DuplicateIdError("duplicate item ids")
        observed = scores[np.isfinite(scores)]
        if observed.size and (observed.min() < 0.0 or observed.max() > 1.0):
            raise OutOfRangeError("scores must lie in [0, 1]")

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.scores)

    @property
    def n_students(self) -> int:
        return len(self.student_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def thresholded(self, cutoff: float = 1.0) -> "ScoreMatrix":
        """Binarize: 1.0 where score >= cutoff, else 0.0; missing stays missing."""
        binary = np.where(self.scores >= cutoff, 1.0, 0.0)
        binary = np.where(self.mask, binary, np.nan)
        return ScoreMatrix(binary, self.student_ids, self.item_ids)


def save_score_matrix(path: str | Path, matrix: ScoreMatrix) -> None:
    """CSV with a student_id column and one column per item; empty cell =
    missing."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", *matrix.item_ids])
        for j, sid in enumerate(matrix.student_ids):
            row: list[str] = [sid]
            for value in matrix.scores[j]:
                row.append("" if not np.isfinite(value) else repr(float(value)))
            writer.writerow(row)


def load_score_matrix(path: str | Path) -> ScoreMatrix:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty score file") from None
        if not header or header[0] != "student_id":
            raise ValueError(f"{path}: first column must be 'student_id'")
        item_ids = tuple(header[1:])
        if not item_ids:
            raise ValueError(f"{path}: no item columns")
        student_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(item_ids) + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {len(item_ids) + 1} cells, got {len(row)}"
                )
            student_ids.append(row[0])
            rows.append([float(cell) if cell.strip() else math.nan for cell in row[1:]])
    return ScoreMatrix(np.array(rows, dtype=float), tuple(student_ids), item_ids)


@dataclass(frozen=True, eq=False)
class ItemParameters:
    item_ids: tuple[str, ...]
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not (len(self.item_ids) == a.shape[0] == b.shape[0]) or a.ndim != 1 or b.ndim != 1:
            raise LengthMismatchError("item_ids, a, b must be 1-D and the same length")

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_ids": list(self.item_ids),
            "a": [float(x) for x in self.a],
            "b": [float(x) for x in self.b],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ItemParameters":
        return cls(
            item_ids=tuple(doc["item_ids"]),
            a=np.array(doc["a"], dtype=float),
            b=np.array(doc["b"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class AbilityEstimates:
    student_ids: tuple[str, ...]
    theta: np.ndarray

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or theta.shape[0] != len(self.student_ids):
            raise LengthMismatchError("student_ids and theta must be 1-D and the same length")

    def to_dict(self) -> dict[str, Any]:
        return {
            "student_ids": list(self.student_ids),
            "theta": [float(x) for x in self.theta],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "AbilityEstimates":
        return cls(
            student_ids=tuple(doc["student_ids"]),
            theta=np.array(doc["theta"], dtype=float),
        )


def save_parameters(
    path: str | Path, params: ItemParameters, abilities: AbilityEstimates | None = None
) -> None:
    doc: dict[str, Any] = {"items": params.to_dict()}
    if abilities is not None:
        doc["students"] = abilities.to_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_parameters(path: str | Path) -> tuple[ItemParameters, AbilityEstimates | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    params = ItemParameters.from_dict(doc["items"])
    abilities = (
        AbilityEstimates.from_dict(doc["students"]) if "students" in doc else None
    )
    return params, abilities


def _loss_arrays(
    scores: np.ndarray,
    mask: np.ndarray,
    theta: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    prob_floor: float = PROB_FLOOR,
) -> float:
    s = np.where(mask, scores, 0.0)  # keep NaNs out of the arithmetic
    p = np.clip(predicted_matrix(theta, a, b), prob_floor, 1.0 - prob_floor)
    cell = s * np.log(p) + (1.0 - s) * np.log(1.0 - p)
    return float(-(cell * mask).sum())


def _gradient_arrays(
    scores: np.ndarray,
    mask: np.ndarray,
    theta: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = np.where(mask, scores, 0.0)
    p = predicted_matrix(theta, a, b)
    r = np.where(mask, p - s, 0.0)
    d_theta = r @ a
    d_a = (r * (theta[:, None] - b[None, :])).sum(axis=0)
    d_b = -a * r.sum(axis=0)
    return d_theta, d_a, d_b


def _unpack(
    matrix: ScoreMatrix, items: ItemParameters, abilities: AbilityEstimates
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if items.item_ids != matrix.item_ids:
        raise LengthMismatchError("item parameters do not match the matrix's items")
    if abilities.student_ids != matrix.student_ids:
        raise LengthMismatchError("abilities do not match the matrix's students")
    mask = matrix.mask
    if not mask.any():
        raise EmptyMaskError("no observed scores")
    return matrix.scores, mask, abilities.theta, items.a, items.b


def cross_entropy_loss(
    matrix: ScoreMatrix, items: ItemParameters, abilities: AbilityEstimates
) -> float:
    """Masked cross-entropy of fractional scores under the 2PL model:
    L = -sum over observed cells of [s*log(P) + (1-s)*log(1-P)].

    Probabilities are clamped to [PROB_FLOOR, 1 - PROB_FLOOR] before the
    logs, so the loss is always finite.
    """
    return _loss_arrays(*_unpack(matrix, items, abilities))


def cross_entropy_gradients(
    matrix: ScoreMatrix, items: ItemParameters, abilities: AbilityEstimates
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of cross_entropy_loss as (d_theta, d_a, d_b).

    With residual r = P - s over observed cells:

        dL/d theta_j = sum_i r_ji * a_i
        dL/d a_i     = sum_j r_ji * (theta_j - b_i)
        dL/d b_i     = -a_i * sum_j r_ji
    """
    return _gradient_arrays(*_unpack(matrix, items, abilities))


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the projected gradient fit. Defaults are the contract;
    operators may override any of them per run."""

    step_size: float = 0.05
    max_iters: int = 50_000
    tol: float = 1e-9  # relative improvement per accepted step
    max_halvings: int = 20
    theta_bounds: tuple[float, float] = THETA_BOUNDS
    a_bounds: tuple[float, float] = A_BOUNDS
    b_bounds: tuple[float, float] = B_BOUNDS
    prob_floor: float = PROB_FLOOR
    init_a: float = 1.0
    init_b: float = 0.0
    init_mean_clip: tuple[float, float] = (0.02, 0.98)


@dataclass(frozen=True)
class FitReport:
    """Diagnostics of one fit: iteration count, final loss, whether the
    stop was a convergence test (vs the iteration cap), whether the loss
    trajectory was nonincreasing, and any all-0/all-1 rows or columns."""

    n_iters: int
    loss: float
    converged: bool
    monotone: bool
    degenerate_items: tuple[str, ...] = ()
    degenerate_students: tuple[str, ...] = ()


def _degenerate_ids(
    scores: np.ndarray, mask: np.ndarray, ids: Sequence[str], axis: int
) -> tuple[str, ...]:
    """Ids whose observed scores are all 0 or all 1 along the axis."""
    flagged = []
    for k, name in enumerate(ids):
        row = scores[k, :] if axis == 0 else scores[:, k]
        seen = mask[k, :] if axis == 0 else mask[:, k]
        observed = row[seen]
        if observed.size and (np.all(observed == 0.0) or np.all(observed == 1.0)):
            flagged.append(name)
    return tuple(flagged)


def fit_2pl(
    matrix: ScoreMatrix,
    config: FitConfig = FitConfig(),
    callback: Callable[[int, float], None] | None = None,
) -> tuple[ItemParameters, AbilityEstimates, FitReport]:
    """Fit the 2PL model to a (possibly sparse, possibly fractional) score
    matrix by projected gradient descent.

    All three parameter blocks move together each iteration: take a step
    against the gradient, project onto the boxes, accept if the loss
    dropped, otherwise halve the step and retry (up to
    ``config.max_halvings`` times). Stops when no halving helps, when the
    relative improvement falls under ``config.tol``, or at
    ``config.max_iters``.

    Initialization is deterministic: a = init_a, b = init_b, and each
    theta starts at the logit of the student's clipped mean score. A rerun
    on the same matrix and config reproduces the same fit exactly.
    """
    scores = matrix.scores
    mask = matrix.mask
    if not mask.any():
        raise EmptyMaskError("no observed scores to fit")
    unseen_students = [s for k, s in enumerate(matrix.student_ids) if not mask[k].any()]
    unseen_items = [s for k, s in enumerate(matrix.item_ids) if not mask[:, k].any()]
    if unseen_students or unseen_items:
        raise EmptyMaskError(
            "every student and item needs at least one observation; missing: "
            + ", ".join(unseen_students + unseen_items)
        )
    n_students, n_items = scores.shape

    degenerate_students = _degenerate_ids(scores, mask, matrix.student_ids, axis=0)
    degenerate_items = _degenerate_ids(scores, mask, matrix.item_ids, axis=1)

    a = np.full(n_items, float(config.init_a))
    b = np.full(n_items, float(config.init_b))
    counts = mask.sum(axis=1)
    sums = np.where(mask, scores, 0.0).sum(axis=1)
    means = np.divide(
        sums, counts, out=np.full(n_students, 0.5), where=counts > 0
    )
    lo, hi = config.init_mean_clip
    p0 = np.clip(means, lo, hi)
    theta = np.clip(np.log(p0 / (1.0 - p0)), *config.theta_bounds)
    a = np.clip(a, *config.a_bounds)
    b = np.clip(b, *config.b_bounds)

    def loss_at(t: np.ndarray, aa: np.ndarray, bb: np.ndarray) -> float:
        return _loss_arrays(scores, mask, t, aa, bb, prob_floor=config.prob_floor)

    loss = loss_at(theta, a, b)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"initial loss is {loss}")
    n_iters = 0
    converged = False
    monotone = True
    for iteration in range(config.max_iters):
        d_theta, d_a, d_b = _gradient_arrays(scores, mask, theta, a, b)
        step = config.step_size
        accepted = False
        for _ in range(config.max_halvings + 1):
            trial_theta = np.clip(theta - step * d_theta, *config.theta_bounds)
            trial_a = np.clip(a - step * d_a, *config.a_bounds)
            trial_b = np.clip(b - step * d_b, *config.b_bounds)
            trial_loss = loss_at(trial_theta, trial_a, trial_b)
            if math.isfinite(trial_loss) and trial_loss < loss:
                accepted = True
                break
            step *= 0.5
        n_iters = iteration + 1
        if not accepted:
            converged = True  # no descent direction left at this scale
            break
        theta, a, b = trial_theta, trial_a, trial_b
        improvement = loss - trial_loss
        if improvement < 0:
            monotone = False
        loss = trial_loss
        if callback is not None:
            callback(iteration, loss)
        if improvement <= config.tol * max(1.0, abs(loss)):
            converged = True
            break
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"loss diverged to {loss}")

    return (
        ItemParameters(matrix.item_ids, a, b),
        AbilityEstimates(matrix.student_ids, theta),
        FitReport(
            n_iters=n_iters,
            loss=loss,
            converged=converged,
            monotone=monotone,
            degenerate_items=degenerate_items,
            degenerate_students=degenerate_students,
        ),
    )


class DiscriminationBand(str, Enum):
    VERY_LOW = "very_low"
    LOW = "low"
    MODERATE = "moderate"
    HIGH = "high"
    VERY_HIGH = "very_high"

    @property
    def label(self) -> str:
        return _BAND_LABELS[self]


_BAND_LABELS = {
    DiscriminationBand.VERY_LOW: "Very low",
    DiscriminationBand.LOW: "Low",
    DiscriminationBand.MODERATE: "Moderate",
    DiscriminationBand.HIGH: "High",
    DiscriminationBand.VERY_HIGH: "Very high",
}

# Band edges; each interval is closed on the left, open on the right.
_BAND_EDGES = (
    (0.35, DiscriminationBand.VERY_LOW),
    (0.65, DiscriminationBand.LOW),
    (1.35, DiscriminationBand.MODERATE),
    (1.70, DiscriminationBand.HIGH),
)


def classify_discrimination(a: float) -> DiscriminationBand:
    """Map a discrimination value onto the conventional verbal bands:
    [0, 0.35) very low, [0.35, 0.65) low, [0.65, 1.35) moderate,
    [1.35, 1.70) high, [1.70, inf) very high."""
    a = float(a)
    if not math.isfinite(a) or a < 0.0:
        raise OutOfRangeError(f"discrimination must be finite and >= 0, got {a}")
    for edge, band in _BAND_EDGES:
        if a < edge:
            return band
    return DiscriminationBand.VERY_HIGH


def cohens_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Cohen's kappa between two raters' label sequences.

    kappa = (p_o - p_e) / (1 - p_e), with chance agreement p_e from the
    product of the raters' marginal label distributions. Perfect observed
    agreement is 1.0 by definition, which also covers the degenerate case
    where both raters use a single identical label.
    """
    if len(labels_a) != len(labels_b):
        raise LengthMismatchError(
            f"label sequences differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    n = len(labels_a)
    if n == 0:
        raise LengthMismatchError("kappa needs at least one paired label")
    agree = sum(1 for x, y in zip(labels_a, labels_b) if x == y)
    p_o = agree / n
    if p_o == 1.0:
        return 1.0
    count_a = Counter(labels_a)
    count_b = Counter(labels_b)
    p_e = sum(count_a[c] * count_b.get(c, 0) for c in count_a) / (n * n)
    return (p_o - p_e) / (1.0 - p_e)


def load_solo_labels(path: str | Path) -> list[SoloLabel]:
    """Read rater labels from JSONL: one object per line with rater_id,
    student_id, question_id, attempt, category."""
    labels = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                labels.append(
                    SoloLabel(
                        rater_id=doc["rater_id"],
                        response_ref=ResponseRef(
                            student_id=doc["student_id"],
                            question_id=doc["question_id"],
                            attempt=int(doc["attempt"]),
                        ),
                        category=SoloCategory(doc["category"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad label record: {exc}") from exc
    return labels


def align_labels(
    labels_a: Iterable[SoloLabel], labels_b: Iterable[SoloLabel]
) -> tuple[list[SoloCategory], list[SoloCategory]]:
    """Pair two raters' labels by response reference, in rater A's order.

    References labeled by only one rater are dropped; duplicate references
    within one rater are an error.
    """
    by_ref_a: dict[ResponseRef, SoloCategory] = {}
    order: list[ResponseRef] = []
    for label in labels_a:
        if label.response_ref in by_ref_a:
            raise DuplicateIdError(f"rater A labeled {label.response_ref} twice")
        by_ref_a[label.response_ref] = label.category
        order.append(label.response_ref)
    by_ref_b: dict[ResponseRef, SoloCategory] = {}
    for label in labels_b:
        if label.response_ref in by_ref_b:
            raise DuplicateIdError(f"rater B labeled {label.response_ref} twice")
        by_ref_b[label.response_ref] = label.category
    aligned_a = []
    aligned_b = []
    for ref in order:
        if ref in by_ref_b:
            aligned_a.append(by_ref_a[ref])
            aligned_b.append(by_ref_b[ref])
    return aligned_a, aligned_b


ALL_QUESTIONS = "(all)"


@dataclass(frozen=True)
class ReportTables:
    """Plain-dict rows ready for CSV emission or plotting.

    length_rows: {question_id, word_count, count} — submission name
    lengths per question plus an aggregate under question_id "(all)".
    proportion_rows: {question_id, policy, n, n_correct, proportion_correct}
    with the same aggregate convention.
    """

    length_rows: tuple[dict[str, Any], ...]
    proportion_rows: tuple[dict[str, Any], ...]


def descriptive_report(
    responses: Sequence["StudentResponse"],
    outcomes: Sequence[Any],
) -> ReportTables:
    """Tabulate response name lengths and correctness proportions.

    ``outcomes`` accepts graded outcomes or grading records — anything
    with response_ref, policy, and correct attributes. Empty inputs give
    empty tables.
    """
    length_counts: dict[tuple[str, int], int] = {}
    for r in responses:
        words = count_words(r.text) if r.text else 0
        for qid in (r.question_id, ALL_QUESTIONS):
            length_counts[(qid, words)] = length_counts.get((qid, words), 0) + 1
    length_rows = tuple(
        {"question_id": qid, "word_count": words, "count": n}
        for (qid, words), n in sorted(length_counts.items())
    )

    tallies: dict[tuple[str, str], list[int]] = {}
    for o in outcomes:
        policy = o.policy.value if hasattr(o.policy, "value") else str(o.policy)
        for qid in (o.response_ref.question_id, ALL_QUESTIONS):
            bucket = tallies.setdefault((qid, policy), [0, 0])
            bucket[0] += 1
            bucket[1] += int(bool(o.correct))
    proportion_rows = tuple(
        {
            "question_id": qid,
            "policy": policy,
            "n": n,
            "n_correct": n_correct,
            "proportion_correct": n_correct / n,
        }
        for (qid, policy), (n, n_correct) in sorted(tallies.items())
    )
    return ReportTables(length_rows=length_rows, proportion_rows=proportion_rows)
