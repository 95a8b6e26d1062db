from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twinpath.values import INT64_MAX, INT64_MIN, FactValue, FactValueError, ValueKind, default_value


def test_constructors_fix_kind():
    assert FactValue.boolean(True).kind is ValueKind.BOOLEAN
    assert FactValue.integer(50).value == 50
    assert FactValue.decimal("11.2").value == Decimal("11.2")
    assert FactValue.string("Cat6").value == "Cat6"


@pytest.mark.parametrize(
    "kind, payload",
    [
        (ValueKind.BOOLEAN, 1),
        (ValueKind.INTEGER, True),
        (ValueKind.INTEGER, INT64_MAX + 1),
        (ValueKind.INTEGER, INT64_MIN - 1),
        (ValueKind.DECIMAL, 1.5),
        (ValueKind.DECIMAL, Decimal("NaN")),
        (ValueKind.STRING, b"bytes"),
    ],
)
def test_payload_must_match_kind(kind, payload):
    with pytest.raises(FactValueError):
        FactValue(kind, payload)


def test_decimal_json_is_a_string_and_exact():
    v = FactValue.decimal("11.2")
    assert v.to_json() == {"decimal": "11.2"}
    assert FactValue.from_json({"decimal": "11.2"}) == v
    with pytest.raises(FactValueError):
        FactValue.from_json({"decimal": 11.2})


@pytest.mark.parametrize("doc", [{}, {"boolean": True, "integer": 1}, {"colour": "red"}, {"decimal": "eleven"}, [1]])
def test_from_json_rejects_malformed(doc):
    with pytest.raises(FactValueError):
        FactValue.from_json(doc)


def test_default_values_are_zero_values():
    assert default_value(ValueKind.BOOLEAN) == FactValue.boolean(False)
    assert default_value(ValueKind.INTEGER) == FactValue.integer(0)
    assert default_value(ValueKind.DECIMAL) == FactValue.decimal("0")
    assert default_value(ValueKind.STRING) == FactValue.string("")


values = st.one_of(
    st.booleans().map(FactValue.boolean),
    st.integers(INT64_MIN, INT64_MAX).map(FactValue.integer),
    st.decimals(allow_nan=False, allow_infinity=False).map(FactValue.decimal),
    st.text().map(FactValue.string),
)


@given(values)
def test_json_round_trip(v):
    back = FactValue.from_json(v.to_json())
    assert back == v
    assert str(back.value) == str(v.value)
