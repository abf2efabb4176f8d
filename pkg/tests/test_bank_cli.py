import csv
import json
from pathlib import Path

import pytest

from namegrader.bank import (
    QuestionBank,
    load_bank,
    load_responses,
    parse_bank,
    reference_function_name,
    save_bank,
    save_responses,
)
from namegrader.cli import main
from namegrader.codegen import VariantCache
from namegrader.config import EngineConfig, load_config
from namegrader.domain import TestMode
from namegrader.errors import DuplicateIdError, ParseError
from namegrader.grading import GradingPolicy, GradingRecord, append_records, make_record

FIXTURES = Path(__file__).parent / "fixtures"
MOCK = str(FIXTURES / "mock_table_questions.json")

EXPECTED_QUESTION_IDS = {
    "count-odd-nums-in-list",
    "get-numbers-below-threshold",
    "absolute-values-of-list",
    "count-strings-of-given-length",
}


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("EIPL_CONFIG", "EIPL_WORD_LIMIT", "EIPL_MODEL_ID", "EIPL_BANK_PATH"):
        monkeypatch.delenv(name, raising=False)


# --- bank ---


def test_default_bank_ships_four_questions():
    bank = load_bank()
    assert {q.id for q in bank} == EXPECTED_QUESTION_IDS
    assert bank.version
    for q in bank:
        assert len(q.test_suite) >= 5
        assert q.reference_solution.strip()


def test_absolute_values_has_mutation_cases():
    bank = load_bank()
    q = bank.by_id["absolute-values-of-list"]
    modes = {c.mode for c in q.test_suite}
    assert TestMode.ARGUMENT_MUTATION in modes


def test_bank_duplicate_id_rejected():
    bank = load_bank()
    doc = {
        "version": "1",
        "questions": [json.loads(json.dumps(qd)) for qd in _bank_doc()["questions"]],
    }
    doc["questions"].append(doc["questions"][0])
    with pytest.raises(DuplicateIdError):
        parse_bank(doc)


def _bank_doc():
    from namegrader.bank import question_to_dict

    bank = load_bank()
    return {
        "version": bank.version,
        "questions": [question_to_dict(q) for q in bank],
    }


def test_bank_empty_file_is_parse_error(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(ParseError):
        load_bank(path)


def test_bank_missing_questions_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises(ParseError):
        load_bank(path)


def test_bank_bad_case_reports_location(tmp_path):
    doc = _bank_doc()
    del doc["questions"][0]["test_suite"][0]["inputs"]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match=r"questions\[0\]/case\[0\]"):
        load_bank(path)


def test_bank_roundtrip(tmp_path):
    bank = load_bank()
    path = tmp_path / "bank.json"
    save_bank(path, bank)
    back = load_bank(path)
    assert back.version == bank.version
    assert [q.id for q in back] == [q.id for q in bank]
    assert back.by_id["count-odd-nums-in-list"] == bank.by_id["count-odd-nums-in-list"]


def test_reference_function_names_resolve():
    bank = load_bank()
    for q in bank:
        name = reference_function_name(q)
        assert f"def {name}(" in q.reference_solution


def test_question_bank_rejects_duplicates_directly():
    bank = load_bank()
    with pytest.raises(DuplicateIdError):
        QuestionBank(version="1", questions=bank.questions + (bank.questions[0],))


def test_responses_roundtrip(tmp_path):
    path = tmp_path / "responses.jsonl"
    path.write_text(
        '{"student_id": "s1", "question_id": "q1", "attempt": 1, "text": "count_odd_nums", '
        '"timestamp": "2024-09-01T00:00:00+00:00"}\n'
        '{"student_id": "s2", "question_id": "q1", "attempt": 1, "text": "whatever"}\n'
    )
    responses = load_responses(path)
    assert len(responses) == 2
    assert responses[0].text == "count_odd_nums"

    out = tmp_path / "copy.jsonl"
    save_responses(out, responses)
    assert load_responses(out) == responses


def test_responses_parse_error_names_the_line(tmp_path):
    path = tmp_path / "responses.jsonl"
    path.write_text('{"student_id": "s1"}\n')
    with pytest.raises(ParseError, match=":1"):
        load_responses(path)


# --- config ---


def test_config_defaults():
    config = load_config(environ={})
    assert config == EngineConfig()
    assert config.temperature_one_attempt == 0.0
    assert config.temperature_robustness == 0.7
    assert config.n_variants == 5
    assert config.word_limit == 10
    assert config.max_attempts == 3


def test_config_precedence(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"word_limit": 2, "model_id": "file-model"}))
    env = {"EIPL_WORD_LIMIT": "3"}

    file_only = load_config(config_path=path, environ={})
    assert file_only.word_limit == 2 and file_only.model_id == "file-model"

    env_beats_file = load_config(config_path=path, environ=env)
    assert env_beats_file.word_limit == 3

    flags_beat_env = load_config({"word_limit": 7}, config_path=path, environ=env)
    assert flags_beat_env.word_limit == 7
    assert flags_beat_env.model_id == "file-model"  # untouched layers survive


def test_config_env_var_points_at_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"n_variants": 9}))
    config = load_config(environ={"EIPL_CONFIG": str(path)})
    assert config.n_variants == 9


def test_config_missing_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(config_path=tmp_path / "nope.json", environ={})
    with pytest.raises(FileNotFoundError):
        load_config(environ={"EIPL_CONFIG": str(tmp_path / "gone.json")})


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"wordlimit": 2}))
    with pytest.raises(ValueError, match="wordlimit"):
        load_config(config_path=path, environ={})


def test_config_validates_values():
    with pytest.raises(ValueError):
        load_config({"n_variants": 0}, environ={})


# --- CLI ---


def test_cli_validate_valid(capsys):
    assert main(["validate", "count_odd_nums"]) == 0
    assert capsys.readouterr().out.strip() == "valid (3 words)"


def test_cli_validate_invalid(capsys):
    assert main(["validate", "count odd numbers"]) == 1
    assert "not_an_identifier" in capsys.readouterr().err


def test_cli_validate_word_limit_flag(capsys):
    assert main(["validate", "count_odd_nums", "--word-limit", "2"]) == 1
    assert "too_many_words" in capsys.readouterr().err


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["grade"])  # missing required flags
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_cli_grade_mock_one_attempt_json(capsys):
    rc = main(
        [
            "grade",
            "--question", "count-odd-nums-in-list",
            "--name", "count_odd_nums",
            "--policy", "one-attempt",
            "--mock", MOCK,
        ]
    )
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["correct"] is True
    assert doc["partial_score"] == 1.0
    assert doc["policy"] == "one_attempt"
    assert len(doc["variants"]) == 1


def test_cli_grade_is_deterministic(capsys):
    argv = [
        "grade",
        "--question", "count-strings-of-given-length",
        "--name", "check_string_lengths",
        "--policy", "robustness",
        "--mock", MOCK,
    ]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    second = capsys.readouterr().out
    assert first == second
    doc = json.loads(first)
    assert doc["correct"] is False
    assert doc["partial_score"] == pytest.approx(0.6)


def test_cli_grade_unknown_question(capsys):
    rc = main(
        ["grade", "--question", "nope", "--name", "count_odd_nums", "--mock", MOCK]
    )
    assert rc == 1
    assert "unknown question" in capsys.readouterr().err


def test_cli_grade_invalid_name(capsys):
    rc = main(
        [
            "grade",
            "--question", "count-odd-nums-in-list",
            "--name", "class",
            "--mock", MOCK,
        ]
    )
    assert rc == 1
    assert "reserved_keyword" in capsys.readouterr().err


def write_responses(tmp_path):
    path = tmp_path / "responses.jsonl"
    rows = [
        {"student_id": "s1", "question_id": "count-odd-nums-in-list", "attempt": 1,
         "text": "count_odd_nums"},
        {"student_id": "s2", "question_id": "count-odd-nums-in-list", "attempt": 1,
         "text": "count odd"},
        {"student_id": "s3", "question_id": "get-numbers-below-threshold", "attempt": 1,
         "text": "get_values_under_threshold"},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_cli_batch_writes_records(tmp_path, capsys):
    responses = write_responses(tmp_path)
    out = tmp_path / "records.jsonl"
    rc = main(
        [
            "batch",
            "--responses", str(responses),
            "--policy", "one-attempt",
            "--out", str(out),
            "--mock", MOCK,
        ]
    )
    assert rc == 0
    records = [GradingRecord.from_dict(json.loads(line)) for line in out.read_text().splitlines()]
    assert [r.valid for r in records] == [True, False, True]
    assert records[0].correct and records[0].partial_score == 1.0
    assert records[1].partial_score == 0.0


def test_cli_fit_irt_and_bands(tmp_path, capsys):
    scores = tmp_path / "scores.csv"
    with scores.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "q1", "q2"])
        for i in range(12):
            writer.writerow([f"s{i}", 1.0 if i % 2 else 0.0, 1.0 if i % 3 else 0.5])
    params_path = tmp_path / "params.json"
    rc = main(["fit-irt", "--scores", str(scores), "--out", str(params_path)])
    assert rc == 0
    doc = json.loads(params_path.read_text())
    assert set(doc) == {"items", "students"}
    assert all(0.0 <= a <= 2.0 for a in doc["items"]["a"])
    assert all(-3.0 <= b <= 3.0 for b in doc["items"]["b"])
    assert all(-3.0 <= t <= 3.0 for t in doc["students"]["theta"])

    capsys.readouterr()
    rc = main(["bands", "--params", str(params_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "q1" in out and "q2" in out


def test_cli_bands_positional_values(capsys):
    assert main(["bands", "0.3", "1.0", "1.8"]) == 0
    out = capsys.readouterr().out
    assert "Very low" in out and "Moderate" in out and "Very high" in out


def test_cli_kappa(tmp_path, capsys):
    def write_labels(name, categories):
        path = tmp_path / name
        rows = [
            {"rater_id": name, "student_id": f"s{i}", "question_id": "q1",
             "attempt": 1, "category": c}
            for i, c in enumerate(categories)
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return path

    a = write_labels("a.jsonl", ["relational", "relational", "multistructural", "other_error"])
    b = write_labels("b.jsonl", ["relational", "multistructural", "multistructural", "other_error"])
    rc = main(["kappa", "--a", str(a), "--b", str(b)])
    assert rc == 0
    assert "kappa = 0.636364" in capsys.readouterr().out


def test_cli_report_emits_csvs(tmp_path, capsys):
    responses = write_responses(tmp_path)
    records = tmp_path / "records.jsonl"
    main(
        [
            "batch",
            "--responses", str(responses),
            "--policy", "robustness",
            "--out", str(records),
            "--mock", MOCK,
        ]
    )
    out_dir = tmp_path / "report"
    rc = main(["report", "--records", str(records), "--out", str(out_dir)])
    assert rc == 0

    hist = list(csv.DictReader((out_dir / "length_histogram.csv").open()))
    assert any(r["question_id"] == "count-odd-nums-in-list" for r in hist)

    correctness = list(csv.DictReader((out_dir / "correctness.csv").open()))
    overall = [r for r in correctness if r["question_id"] == "(all)"]
    assert overall and overall[0]["n"] == "3"

    curves = list(csv.DictReader((out_dir / "icc_curves.csv").open()))
    assert len(curves) == 121 * 2  # two questions had records
    assert {r["item_id"] for r in curves} == {
        "count-odd-nums-in-list", "get-numbers-below-threshold",
    }
    assert (out_dir / "params.json").exists()


def test_cli_report_empty_records(tmp_path, capsys):
    records = tmp_path / "records.jsonl"
    records.write_text("")
    out_dir = tmp_path / "report"
    rc = main(["report", "--records", str(records), "--out", str(out_dir)])
    assert rc == 0
    for name in ("length_histogram.csv", "correctness.csv", "icc_curves.csv"):
        rows = (out_dir / name).read_text().splitlines()
        assert len(rows) == 1  # header only


def test_cli_compact(tmp_path, capsys):
    cache_path = tmp_path / "cache.jsonl"
    cache = VariantCache(cache_path)
    for _ in range(2):
        cache.put(
            model_id="m", prompt_sha256="x", temperature=0.0, seed_index=0,
            prompt_version="v1", raw_output="meh",
        )

    from datetime import datetime, timezone
    from namegrader.domain import StudentResponse

    record = make_record(
        StudentResponse("s1", "q1", 1, "some_name", datetime(2024, 1, 1, tzinfo=timezone.utc)),
        None,
        policy=GradingPolicy.ONE_ATTEMPT, model_id="m",
        prompt_version="v1", temperature=0.0,
    )
    records_path = tmp_path / "records.jsonl"
    append_records(records_path, [record, record])

    rc = main(["compact", "--cache", str(cache_path), "--records", str(records_path)])
    assert rc == 0
    assert len(cache_path.read_text().splitlines()) == 1
    assert len(records_path.read_text().splitlines()) == 1


RUNNER_ALL_PASS = """
import json, sys
doc = json.load(sys.stdin)
results = [
    {"case_index": i, "status": "pass", "observed": ""}
    for i in range(len(doc["cases"]))
]
print(json.dumps({"load_error": None, "results": results}))
"""

RUNNER_ALL_FAIL = RUNNER_ALL_PASS.replace('"pass"', '"wrong_return"')


def write_runner(tmp_path, body, name):
    path = tmp_path / name
    path.write_text("#!/usr/bin/env python3\n" + body)
    return f"python3 {path}"


def test_cli_bank_check_pass_and_fail(tmp_path, capsys):
    ok = write_runner(tmp_path, RUNNER_ALL_PASS, "ok.py")
    rc = main(["bank", "check", "--runner", ok])
    assert rc == 0
    assert "all 4 questions passed" in capsys.readouterr().out

    bad = write_runner(tmp_path, RUNNER_ALL_FAIL, "bad.py")
    rc = main(["bank", "check", "--runner", bad])
    assert rc == 1
    assert "FAIL" in capsys.readouterr().out
