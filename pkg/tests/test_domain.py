import pytest

from namegrader.domain import (
    Question,
    StudentResponse,
    TestCase,
    TestMode,
    Violation,
    count_words,
    load_keywords,
    validate_function_name,
)

from datetime import datetime, timezone


def test_validate_accepts_snake_case_name():
    result = validate_function_name("count_odd_nums")
    assert result.valid
    assert result.word_count == 3
    assert result.violations == ()


def test_validate_accepts_four_word_name():
    result = validate_function_name("get_values_under_threshold")
    assert result.valid
    assert result.word_count == 4


def test_validate_rejects_spaces():
    result = validate_function_name("count odd numbers")
    assert not result.valid
    assert Violation.NOT_AN_IDENTIFIER in result.violations


def test_validate_rejects_keyword():
    result = validate_function_name("class")
    assert not result.valid
    assert result.violations == (Violation.RESERVED_KEYWORD,)


def test_validate_rejects_eleven_words():
    result = validate_function_name("a_b_c_d_e_f_g_h_i_j_k")
    assert not result.valid
    assert result.word_count == 11
    assert Violation.TOO_MANY_WORDS in result.violations


def test_validate_empty_string():
    result = validate_function_name("")
    assert not result.valid
    assert result.violations == (Violation.EMPTY,)


def test_validate_all_underscores_has_no_words():
    result = validate_function_name("___")
    assert not result.valid
    assert result.word_count == 0


def test_validate_respects_custom_word_limit():
    assert validate_function_name("one_two_three", word_limit=2).valid is False
    assert validate_function_name("one_two_three", word_limit=3).valid is True


def test_validate_rejects_limit_below_one():
    with pytest.raises(ValueError):
        validate_function_name("x", word_limit=0)


@pytest.mark.parametrize(
    "name,expected",
    [
        ("find_distance_to_zero", 4),
        ("countOddNums", 3),
        ("__init", 1),
        ("x", 1),
        ("getHTTPResponse", 2),  # consecutive capitals are one hump
        ("snake_and_camelCase", 4),
    ],
)
def test_count_words(name, expected):
    assert count_words(name) == expected


def test_count_words_rejects_empty():
    with pytest.raises(ValueError):
        count_words("")


def test_keyword_list_contains_the_usual_suspects():
    kw = load_keywords("python")
    assert {"class", "def", "return", "lambda", "None"} <= kw


def test_unknown_subject_language_raises():
    with pytest.raises(ValueError):
        load_keywords("cobol")


# --- question / test case structure ---


def make_question(**overrides):
    fields = dict(
        id="q",
        title="T",
        code="def foo(x):\n    return x\n",
        params=(("x", "List[int]"),),
        assumptions="",
        test_suite=(TestCase(inputs=([1],), expected=[1]),),
        reference_solution="def echo(x):\n    return x\n",
    )
    fields.update(overrides)
    return Question(**fields)


def test_question_signature_renders_annotations():
    q = make_question(params=(("x", "List[int]"), ("t", "int")),
                      test_suite=(TestCase(inputs=([1], 2), expected=[1]),))
    assert q.signature() == "x: List[int], t: int"
    assert q.arity == 2


def test_question_rejects_empty_suite():
    with pytest.raises(ValueError):
        make_question(test_suite=())


def test_question_rejects_arity_mismatch():
    with pytest.raises(ValueError, match="case 0"):
        make_question(test_suite=(TestCase(inputs=(1, 2), expected=3),))


def test_mutation_case_needs_arg_states():
    case = TestCase(inputs=([1],), expected={}, mode=TestMode.ARGUMENT_MUTATION)
    with pytest.raises(ValueError):
        make_question(test_suite=(case,))


def test_mutation_case_index_must_be_in_range():
    case = TestCase(
        inputs=([1],),
        expected={"args": {"3": [1]}},
        mode=TestMode.ARGUMENT_MUTATION,
    )
    with pytest.raises(ValueError):
        make_question(test_suite=(case,))


def test_both_mode_needs_return_key():
    case = TestCase(inputs=([1],), expected={"args": {"0": [1]}}, mode=TestMode.BOTH)
    with pytest.raises(ValueError):
        make_question(test_suite=(case,))


def test_expected_accessors():
    ret = TestCase(inputs=(1,), expected=2)
    assert ret.expected_return() == 2
    with pytest.raises(ValueError):
        ret.expected_arg_states()

    mut = TestCase(
        inputs=([1],),
        expected={"args": {"0": [2]}},
        mode=TestMode.ARGUMENT_MUTATION,
    )
    assert mut.expected_arg_states() == {0: [2]}
    with pytest.raises(ValueError):
        mut.expected_return()

    both = TestCase(
        inputs=([1],),
        expected={"return": None, "args": {"0": [2]}},
        mode=TestMode.BOTH,
    )
    assert both.expected_return() is None
    assert both.expected_arg_states() == {0: [2]}


def test_response_ref_and_attempt_numbering():
    ts = datetime(2024, 9, 1, tzinfo=timezone.utc)
    r = StudentResponse("s1", "q1", 2, "count_odd_nums", ts)
    assert r.ref.student_id == "s1"
    assert r.ref.attempt == 2
    with pytest.raises(ValueError):
        StudentResponse("s1", "q1", 0, "x", ts)
