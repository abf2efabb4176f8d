"""Deep value comparison and canonical serialization for case judging."""

from __future__ import annotations

import json
from typing import Any

FLOAT_TOLERANCE = 1e-9
OBSERVED_LIMIT = 2000


def values_equal(expected: Any, actual: Any, tolerance: float = FLOAT_TOLERANCE) -> bool:
    """Structural equality over JSON-shaped values.

    Booleans never equal ints (True is not 1 here, whatever Python says);
    other numbers compare within an absolute tolerance; lists and tuples
    are interchangeable, since JSON cannot tell them apart and expected
    values arrive as JSON.
    """
    if isinstance(expected, bool) or isinstance(actual, bool):
        return isinstance(expected, bool) and isinstance(actual, bool) and expected == actual
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        if expected == actual:
            return True
        try:
            return abs(expected - actual) <= tolerance
        except OverflowError:
            return False
    if isinstance(expected, (list, tuple)) and isinstance(actual, (list, tuple)):
        if len(expected) != len(actual):
            return False
        return all(values_equal(e, a, tolerance) for e, a in zip(expected, actual))
    if isinstance(expected, dict) and isinstance(actual, dict):
        if expected.keys() != actual.keys():
            return False
        return all(values_equal(v, actual[k], tolerance) for k, v in expected.items())
    return type(expected) is type(actual) and expected == actual


def canonical(value: Any) -> str:
    """Stable serialization for the ``observed`` field, capped in length."""
    try:
        text = json.dumps(value, sort_keys=True)
    except (TypeError, ValueError):
        text = repr(value)
    return text[:OBSERVED_LIMIT]
