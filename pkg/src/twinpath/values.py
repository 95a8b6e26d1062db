"""Typed fact values shared by the model and the expression engine."""

from __future__ import annotations

import decimal
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from typing import Any, Union

# 34 significant digits; comfortably above the 28 required for exact thresholds.
DECIMAL_CONTEXT = decimal.Context(prec=34, rounding=decimal.ROUND_HALF_EVEN)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class ValueKind(str, Enum):
    BOOLEAN = "boolean"
    INTEGER = "integer"
    DECIMAL = "decimal"
    STRING = "string"

    @property
    def numeric(self) -> bool:
        return self in (ValueKind.INTEGER, ValueKind.DECIMAL)


Payload = Union[bool, int, Decimal, str]


class FactValueError(ValueError):
    """Malformed or ill-kinded fact value."""


@dataclass(frozen=True, slots=True)
class FactValue:
    """A tagged value: the kind is fixed at construction and never coerced."""

    kind: ValueKind
    value: Payload

    def __post_init__(self) -> None:
        k, v = self.kind, self.value
        if k is ValueKind.BOOLEAN:
            ok = isinstance(v, bool)
        elif k is ValueKind.INTEGER:
            ok = isinstance(v, int) and not isinstance(v, bool) and INT64_MIN <= v <= INT64_MAX
        elif k is ValueKind.DECIMAL:
            ok = isinstance(v, Decimal) and v.is_finite()
        elif k is ValueKind.STRING:
            ok = isinstance(v, str)
        else:
            ok = False
        if not ok:
            raise FactValueError(f"payload {v!r} is not a valid {k}")

    @classmethod
    def boolean(cls, v: bool) -> FactValue:
        return cls(ValueKind.BOOLEAN, v)

    @classmethod
    def integer(cls, v: int) -> FactValue:
        return cls(ValueKind.INTEGER, v)

    @classmethod
    def decimal(cls, v: str | Decimal | int) -> FactValue:
        return cls(ValueKind.DECIMAL, Decimal(v))

    @classmethod
    def string(cls, v: str) -> FactValue:
        return cls(ValueKind.STRING, v)

    def to_json(self) -> dict[str, Any]:
        if self.kind is ValueKind.DECIMAL:
            return {"decimal": str(self.value)}
        return {self.kind.value: self.value}

    @classmethod
    def from_json(cls, doc: Any) -> FactValue:
        if not isinstance(doc, dict) or len(doc) != 1:
            raise FactValueError(f"fact value must be a one-key tagged object, got {doc!r}")
        ((tag, raw),) = doc.items()
        try:
            kind = ValueKind(tag)
        except ValueError:
            raise FactValueError(f"unknown value kind {tag!r}") from None
        if kind is ValueKind.DECIMAL:
            if not isinstance(raw, str):
                raise FactValueError("decimal payloads are encoded as strings")
            try:
                raw = Decimal(raw)
            except decimal.InvalidOperation:
                raise FactValueError(f"bad decimal literal {doc['decimal']!r}") from None
        return cls(kind, raw)

    def __str__(self) -> str:
        if self.kind is ValueKind.BOOLEAN:
            return "true" if self.value else "false"
        if self.kind is ValueKind.STRING:
            return repr(self.value)
        return str(self.value)


def default_value(kind: ValueKind) -> FactValue:
    """Zero value of a kind, used for freshly created facts."""
    return {
        ValueKind.BOOLEAN: FactValue.boolean(False),
        ValueKind.INTEGER: FactValue.integer(0),
        ValueKind.DECIMAL: FactValue.decimal("0"),
        ValueKind.STRING: FactValue.string(""),
    }[kind]
