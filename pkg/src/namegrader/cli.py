"""Command-line interface.

Exit codes: 0 success, 1 domain failure (invalid submission, failed
check, engine error), 2 usage error (argparse's default).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .bank import load_bank, load_responses, reference_function_name
from .codegen import (
    HttpChatClient,
    MockGenerationClient,
    VariantCache,
    compact_cache,
    extract_code,
)
from .config import EngineConfig, load_config
from .domain import StudentResponse, validate_function_name
from .errors import EngineError, NameMismatchError, NoCodeError
from .execution import FixtureBackend, SubprocessBackend, code_hash, run_suite
from .grading import (
    GradingPolicy,
    compact_records,
    grade_batch,
    grade_one_attempt,
    grade_robustness,
    load_records,
)
from .psychometrics import (
    FitConfig,
    ScoreMatrix,
    align_labels,
    classify_discrimination,
    cohens_kappa,
    descriptive_report,
    fit_2pl,
    icc_curve,
    load_parameters,
    load_score_matrix,
    load_solo_labels,
    save_parameters,
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

# CLI policy names are hyphenated; the enum uses underscores.
_POLICY_CHOICES = [p.value.replace("_", "-") for p in GradingPolicy]


def _policy_from_flag(value: str) -> GradingPolicy:
    return GradingPolicy(value.replace("-", "_"))


def load_mock_fixture(path: str | Path) -> tuple[MockGenerationClient, FixtureBackend]:
    """Build an offline client/backend pair from a fixture file.

    The fixture maps each function name to a list of variant specs:
    ``{"completion": str, "all_pass": true}`` or
    ``{"completion": str, "case_statuses": [...]}``. Completions whose
    code cannot be extracted need no statuses — they fail before
    execution.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    completions: dict[str, list[str]] = {}
    specs: dict[str, Any] = {}
    for name, variants in doc.items():
        completions[name] = [v["completion"] for v in variants]
        for v in variants:
            try:
                code = extract_code(v["completion"], name)
            except (NoCodeError, NameMismatchError):
                continue
            if "case_statuses" in v:
                specs[code_hash(code)] = list(v["case_statuses"])
            elif v.get("all_pass"):
                specs[code_hash(code)] = True
    return MockGenerationClient(completions), FixtureBackend(specs)


def _config_from_args(args: argparse.Namespace) -> EngineConfig:
    override_names = (
        "model_id",
        "base_url",
        "temperature_one_attempt",
        "temperature_robustness",
        "n_variants",
        "word_limit",
        "max_attempts",
        "worker_limit",
        "cache_path",
        "bank_path",
        "retry_budget",
        "runner_cmd",
    )
    overrides = {
        name: getattr(args, name)
        for name in override_names
        if getattr(args, name, None) is not None
    }
    return load_config(overrides, config_path=getattr(args, "config", None))


def _make_engine(args: argparse.Namespace, config: EngineConfig):
    if getattr(args, "mock", None):
        client, backend = load_mock_fixture(args.mock)
        cache = VariantCache()  # in-memory only: mock runs must not pollute the real cache
    else:
        client = HttpChatClient(config.base_url)
        backend = SubprocessBackend(config.runner_cmd)
        cache = VariantCache(config.cache_path)
    return client, backend, cache


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = validate_function_name(args.name, word_limit=config.word_limit)
    if result.valid:
        plural = "" if result.word_count == 1 else "s"
        print(f"valid ({result.word_count} word{plural})")
        return 0
    reasons = ", ".join(v.value for v in result.violations)
    print(f"invalid: {reasons}", file=sys.stderr)
    return 1


def _cmd_grade(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bank = load_bank(config.bank_path)
    if args.question not in bank.by_id:
        raise EngineError(f"unknown question id {args.question!r}")
    question = bank.by_id[args.question]
    check = validate_function_name(
        args.name, word_limit=config.word_limit, subject_language=question.subject_language
    )
    if not check.valid:
        reasons = ", ".join(v.value for v in check.violations)
        print(f"invalid submission: {reasons}", file=sys.stderr)
        return 1
    # Ad-hoc single submission; the fixed ref keeps the output stable.
    response = StudentResponse(
        student_id=args.student,
        question_id=question.id,
        attempt=1,
        text=args.name,
        timestamp=_EPOCH,
    )
    client, backend, cache = _make_engine(args, config)
    policy = _policy_from_flag(args.policy)
    if policy is GradingPolicy.ONE_ATTEMPT:
        outcome = grade_one_attempt(
            response,
            question,
            client,
            backend,
            model_id=config.model_id,
            temperature=config.temperature_one_attempt,
            cache=cache,
            retry_budget=config.retry_budget,
            word_limit=config.word_limit,
        )
    else:
        outcome = grade_robustness(
            response,
            question,
            client,
            backend,
            model_id=config.model_id,
            n_variants=config.n_variants,
            temperature=config.temperature_robustness,
            cache=cache,
            retry_budget=config.retry_budget,
            word_limit=config.word_limit,
        )
    print(json.dumps(outcome.to_dict(), sort_keys=True))
    return 0


def _cmd_batch(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bank = load_bank(config.bank_path)
    responses = load_responses(args.responses)
    client, backend, cache = _make_engine(args, config)
    records = grade_batch(
        bank.by_id,
        responses,
        policy=_policy_from_flag(args.policy),
        client=client,
        backend=backend,
        model_id=config.model_id,
        n_variants=config.n_variants,
        temperature_one_attempt=config.temperature_one_attempt,
        temperature_robustness=config.temperature_robustness,
        cache=cache,
        retry_budget=config.retry_budget,
        worker_limit=config.worker_limit,
        word_limit=config.word_limit,
    )
    out = Path(args.out) if args.out else None
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")
        print(f"graded {len(records)} responses -> {out}")
    else:
        for line in lines:
            print(line)
    return 0


def _cmd_fit_irt(args: argparse.Namespace) -> int:
    matrix = load_score_matrix(args.scores)
    fit_kwargs: dict[str, Any] = {}
    for name in ("step_size", "tol", "max_iters", "max_halvings"):
        value = getattr(args, name)
        if value is not None:
            fit_kwargs[name] = value
    params, abilities, report = fit_2pl(matrix, FitConfig(**fit_kwargs))
    if args.out:
        save_parameters(args.out, params, abilities)
    else:
        doc = {"items": params.to_dict(), "students": abilities.to_dict()}
        print(json.dumps(doc, indent=2, sort_keys=True))
    status = "converged" if report.converged else "hit max_iters"
    print(
        f"{status} after {report.n_iters} iterations, loss {report.loss:.6f}",
        file=sys.stderr,
    )
    for label, names in (
        ("items", report.degenerate_items),
        ("students", report.degenerate_students),
    ):
        if names:
            print(
                f"warning: degenerate {label} (all 0 or all 1): " + ", ".join(names),
                file=sys.stderr,
            )
    return 0


def _cmd_bands(args: argparse.Namespace) -> int:
    if args.params:
        params, _ = load_parameters(args.params)
        rows = list(zip(params.item_ids, params.a))
    elif args.values:
        rows = [(f"a[{i}]", v) for i, v in enumerate(args.values)]
    else:
        raise EngineError("give either --params or one or more a values")
    for name, a in rows:
        band = classify_discrimination(float(a))
        print(f"{name}\t{float(a):.3f}\t{band.label}")
    return 0


def _cmd_kappa(args: argparse.Namespace) -> int:
    labels_a = load_solo_labels(args.a)
    labels_b = load_solo_labels(args.b)
    aligned_a, aligned_b = align_labels(labels_a, labels_b)
    if not aligned_a:
        raise EngineError("the two raters share no labeled responses")
    kappa = cohens_kappa(aligned_a, aligned_b)
    print(f"kappa = {kappa:.6f} (n = {len(aligned_a)})")
    return 0


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _matrix_from_records(records) -> ScoreMatrix | None:
    """Best score per (student, question), as a fittable matrix."""
    best: dict[tuple[str, str], float] = {}
    for r in records:
        key = (r.response_ref.student_id, r.response_ref.question_id)
        best[key] = max(best.get(key, 0.0), r.partial_score)
    if not best:
        return None
    student_ids = sorted({s for s, _ in best})
    item_ids = sorted({q for _, q in best})
    scores = np.full((len(student_ids), len(item_ids)), np.nan)
    for (s, q), value in best.items():
        scores[student_ids.index(s), item_ids.index(q)] = value
    return ScoreMatrix(student_ids=tuple(student_ids), item_ids=tuple(item_ids), scores=scores)


def _cmd_report(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Records carry the submitted name, so the histogram needs no
    # separate responses file.
    responses = [
        StudentResponse(
            student_id=r.response_ref.student_id,
            question_id=r.response_ref.question_id,
            attempt=r.response_ref.attempt,
            text=r.function_name,
            timestamp=_EPOCH,
        )
        for r in records
    ]
    tables = descriptive_report(responses, records)
    _write_csv(
        out_dir / "length_histogram.csv",
        ("question_id", "word_count", "count"),
        [(row["question_id"], row["word_count"], row["count"]) for row in tables.length_rows],
    )
    _write_csv(
        out_dir / "correctness.csv",
        ("question_id", "policy", "n", "n_correct", "proportion_correct"),
        [
            (
                row["question_id"],
                row["policy"],
                row["n"],
                row["n_correct"],
                f"{row['proportion_correct']:.6f}",
            )
            for row in tables.proportion_rows
        ],
    )

    icc_rows: list[tuple[str, str, str]] = []
    matrix = _matrix_from_records(records)
    if matrix is not None:
        params, abilities, _ = fit_2pl(matrix)
        save_parameters(out_dir / "params.json", params, abilities)
        for item_id, a, b in zip(params.item_ids, params.a, params.b):
            grid, probs = icc_curve(float(a), float(b))
            icc_rows.extend(
                (item_id, f"{float(t):.2f}", f"{float(p):.6f}")
                for t, p in zip(grid, probs)
            )
    _write_csv(out_dir / "icc_curves.csv", ("item_id", "theta", "p"), icc_rows)
    print(
        f"report on {len(records)} records -> {out_dir} "
        "(length_histogram.csv, correctness.csv, icc_curves.csv)"
    )
    return 0


def _cmd_bank_check(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    bank = load_bank(config.bank_path)
    backend = SubprocessBackend(config.runner_cmd)
    failures = 0
    for question in bank:
        name = reference_function_name(question)
        suite = run_suite(question.reference_solution, name, question.test_suite, backend)
        if suite.passed_all:
            print(f"{question.id}: ok ({len(suite.case_results)} cases)")
        else:
            failures += 1
            bad = [c for c in suite.case_results if not c.passed]
            detail = "; ".join(
                f"case {c.case_index}: {c.status.value} {c.observed}".rstrip() for c in bad
            )
            print(f"{question.id}: FAIL ({detail})")
    if failures:
        print(f"{failures} of {len(bank)} questions failed", file=sys.stderr)
        return 1
    print(f"all {len(bank)} questions passed")
    return 0


def _cmd_compact(args: argparse.Namespace) -> int:
    if not args.cache and not args.records:
        raise EngineError("give --cache and/or --records")
    if args.cache:
        dropped = compact_cache(args.cache)
        print(f"cache: dropped {dropped} superseded records")
    if args.records:
        dropped = compact_records(args.records)
        print(f"records: dropped {dropped} superseded records")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser, *, engine: bool = False) -> None:
    parser.add_argument("--config", help="JSON config file (default: $EIPL_CONFIG)")
    parser.add_argument("--word-limit", dest="word_limit", type=int)
    if engine:
        parser.add_argument("--bank", dest="bank_path")
        parser.add_argument("--model", dest="model_id")
        parser.add_argument("--base-url", dest="base_url")
        parser.add_argument(
            "--temperature-one-attempt", dest="temperature_one_attempt", type=float
        )
        parser.add_argument(
            "--temperature-robustness", dest="temperature_robustness", type=float
        )
        parser.add_argument("--n-variants", dest="n_variants", type=int)
        parser.add_argument("--max-attempts", dest="max_attempts", type=int)
        parser.add_argument("--workers", dest="worker_limit", type=int)
        parser.add_argument("--cache", dest="cache_path")
        parser.add_argument("--retry-budget", dest="retry_budget", type=int)
        parser.add_argument("--runner", dest="runner_cmd")
        parser.add_argument(
            "--mock",
            help="fixture file of canned completions and statuses; no network, no execution",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="namegrader",
        description="Grade function-name answers by regenerating and testing code.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a submitted function name")
    p.add_argument("name")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("grade", help="grade one submission, outcome JSON on stdout")
    p.add_argument("--question", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--policy", choices=_POLICY_CHOICES, default=_POLICY_CHOICES[0])
    p.add_argument("--student", default="cli", help="student id recorded in the outcome")
    _add_config_flags(p, engine=True)
    p.set_defaults(func=_cmd_grade)

    p = sub.add_parser("batch", help="grade a JSONL file of submissions")
    p.add_argument("--responses", required=True)
    p.add_argument("--policy", choices=_POLICY_CHOICES, default=_POLICY_CHOICES[0])
    p.add_argument("--out", help="write grading records here (default: stdout)")
    _add_config_flags(p, engine=True)
    p.set_defaults(func=_cmd_batch)

    p = sub.add_parser("fit-irt", help="fit the 2PL model to a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", help="write fitted parameters JSON here")
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--tol", dest="tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--max-halvings", dest="max_halvings", type=int)
    p.set_defaults(func=_cmd_fit_irt)

    p = sub.add_parser("bands", help="label discriminations with verbal bands")
    p.add_argument("values", nargs="*", type=float)
    p.add_argument("--params", help="fitted parameters JSON")
    p.set_defaults(func=_cmd_bands)

    p = sub.add_parser("kappa", help="inter-rater agreement between two label files")
    p.add_argument("--a", required=True, help="rater A labels JSONL")
    p.add_argument("--b", required=True, help="rater B labels JSONL")
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("report", help="descriptive CSVs from a grading record log")
    p.add_argument("--records", required=True, help="grading records JSONL")
    p.add_argument("--out", required=True, help="directory for the emitted CSVs")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bank", help="question bank utilities")
    bank_sub = p.add_subparsers(dest="bank_command", required=True)
    pc = bank_sub.add_parser(
        "check", help="run every reference solution through the runner"
    )
    _add_config_flags(pc, engine=True)
    pc.set_defaults(func=_cmd_bank_check)

    p = sub.add_parser("compact", help="compact append-only stores")
    p.add_argument("--cache", help="variant cache JSONL")
    p.add_argument("--records", help="grading records JSONL")
    p.set_defaults(func=_cmd_compact)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
