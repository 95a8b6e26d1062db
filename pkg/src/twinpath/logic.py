"""Typed condition expressions: AST, static typing and evaluation.

Expressions are plain data. A precondition is a ``Compare`` tree yielding a
boolean; a postcondition is a value-producing tree (``Const``/``Input``/
``Arith``) whose result is written to target facts.
"""

from __future__ import annotations

import decimal
import operator
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable, Sequence, Union

from .values import DECIMAL_CONTEXT, INT64_MAX, INT64_MIN, FactValue, FactValueError, ValueKind

ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("==", "!=", "<", ">", "<=", ">=")
EQUALITY_OPS = ("==", "!=")

NEGATION = {"==": "!=", "!=": "==", "<": ">=", ">=": "<", ">": "<=", "<=": ">"}


class ExpressionError(Exception):
    """Base class for expression failures."""


class ExpressionTypeError(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class EvaluationError(ExpressionError):
    """Raised at evaluation time (division by zero, integer overflow)."""


class DivisionByZero(EvaluationError):
    pass


class IntegerOverflow(EvaluationError):
    pass


@dataclass(frozen=True, slots=True)
class Const:
    value: FactValue


@dataclass(frozen=True, slots=True)
class Input:
    index: int


@dataclass(frozen=True, slots=True)
class Arith:
    op: str
    left: Expr
    right: Expr

    def __post_init__(self) -> None:
        if self.op not in ARITH_OPS:
            raise ExpressionTypeError(f"unknown arithmetic operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class Compare:
    op: str
    left: Expr
    right: Expr

    def __post_init__(self) -> None:
        if self.op not in COMPARE_OPS:
            raise ExpressionTypeError(f"unknown comparison operator {self.op!r}")


Expr = Union[Const, Input, Arith, Compare]


# -- typing --


def typecheck_expression(e: Expr, slot_kinds: Sequence[ValueKind]) -> ValueKind:
    """Return the result kind of ``e`` given the kinds bound to its inputs."""
    if isinstance(e, Const):
        return e.value.kind
    if isinstance(e, Input):
        if not 0 <= e.index < len(slot_kinds):
            raise ArityError(f"input {e.index} out of range for {len(slot_kinds)} slot(s)")
        return slot_kinds[e.index]
    if isinstance(e, Arith):
        lk = typecheck_expression(e.left, slot_kinds)
        rk = typecheck_expression(e.right, slot_kinds)
        if not (lk.numeric and rk.numeric):
            raise ExpressionTypeError(f"arithmetic {e.op!r} needs numeric operands, got {lk.value}/{rk.value}")
        if lk is ValueKind.INTEGER and rk is ValueKind.INTEGER and e.op != "/":
            return ValueKind.INTEGER
        if lk is ValueKind.INTEGER and rk is ValueKind.INTEGER:
            # quotient kind depends on divisibility; callers treat it as numeric
            return ValueKind.DECIMAL
        return ValueKind.DECIMAL
    if isinstance(e, Compare):
        lk = typecheck_expression(e.left, slot_kinds)
        rk = typecheck_expression(e.right, slot_kinds)
        if lk.numeric and rk.numeric:
            return ValueKind.BOOLEAN
        if lk is not rk:
            raise ExpressionTypeError(f"cannot compare {lk.value} with {rk.value}")
        if e.op not in EQUALITY_OPS:
            raise ExpressionTypeError(f"{lk.value} values admit only == and !=, not {e.op!r}")
        return ValueKind.BOOLEAN
    raise ExpressionTypeError(f"not an expression node: {e!r}")


def is_value_root(e: Expr) -> bool:
    return isinstance(e, (Const, Input, Arith))


def assignable(result: ValueKind, target: ValueKind) -> bool:
    """Whether a postcondition result of kind ``result`` may be stored in ``target``."""
    if result is target:
        return True
    # integer/integer division is reported as decimal; both numeric kinds fit a decimal
    return target is ValueKind.DECIMAL and result.numeric


# -- evaluation --


def _checked(n: int) -> FactValue:
    if not INT64_MIN <= n <= INT64_MAX:
        raise IntegerOverflow(f"integer result {n} overflows 64 bits")
    return FactValue(ValueKind.INTEGER, n)


def _arith(op: str, a: FactValue, b: FactValue) -> FactValue:
    if not (a.kind.numeric and b.kind.numeric):
        raise ExpressionTypeError(f"arithmetic on {a.kind.value}/{b.kind.value}")
    x, y = a.value, b.value
    if a.kind is ValueKind.INTEGER and b.kind is ValueKind.INTEGER:
        if op == "+":
            return _checked(x + y)
        if op == "-":
            return _checked(x - y)
        if op == "*":
            return _checked(x * y)
        if y == 0:
            raise DivisionByZero("integer division by zero")
        q, r = divmod(x, y)
        if r == 0:
            return _checked(q)
        return FactValue(ValueKind.DECIMAL, DECIMAL_CONTEXT.divide(Decimal(x), Decimal(y)))
    dx, dy = Decimal(x), Decimal(y)
    try:
        if op == "+":
            res = DECIMAL_CONTEXT.add(dx, dy)
        elif op == "-":
            res = DECIMAL_CONTEXT.subtract(dx, dy)
        elif op == "*":
            res = DECIMAL_CONTEXT.multiply(dx, dy)
        else:
            if dy == 0:
                raise DivisionByZero("decimal division by zero")
            res = DECIMAL_CONTEXT.divide(dx, dy)
    except decimal.Overflow as exc:
        raise EvaluationError(f"decimal overflow in {op!r}") from exc
    if not res.is_finite():
        raise EvaluationError(f"non-finite decimal result in {op!r}")
    return FactValue(ValueKind.DECIMAL, res)


_ORDERING: dict[str, Callable[[Any, Any], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    ">": operator.gt,
    "<=": operator.le,
    ">=": operator.ge,
}


def _compare(op: str, a: FactValue, b: FactValue) -> FactValue:
    if a.kind.numeric and b.kind.numeric:
        # int vs Decimal comparisons are exact in Python
        return FactValue(ValueKind.BOOLEAN, _ORDERING[op](a.value, b.value))
    if a.kind is not b.kind:
        raise ExpressionTypeError(f"cannot compare {a.kind.value} with {b.kind.value}")
    if op not in EQUALITY_OPS:
        raise ExpressionTypeError(f"{a.kind.value} values admit only == and !=")
    return FactValue(ValueKind.BOOLEAN, _ORDERING[op](a.value, b.value))


def eval_expression(e: Expr, slots: Sequence[FactValue]) -> FactValue:
    """Evaluate ``e`` against positional input slots. Pure and deterministic."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Input):
        try:
            return slots[e.index]
        except IndexError:
            raise ArityError(f"input {e.index} out of range for {len(slots)} slot(s)") from None
    if isinstance(e, Compare):
        return _compare(e.op, eval_expression(e.left, slots), eval_expression(e.right, slots))
    if isinstance(e, Arith):
        return _arith(e.op, eval_expression(e.left, slots), eval_expression(e.right, slots))
    raise ExpressionTypeError(f"not an expression node: {e!r}")


def max_input_index(e: Expr) -> int:
    """Largest ``Input`` index referenced, or -1."""
    if isinstance(e, Input):
        return e.index
    if isinstance(e, (Arith, Compare)):
        return max(max_input_index(e.left), max_input_index(e.right))
    return -1


# -- JSON encoding --


def expr_to_json(e: Expr) -> dict[str, Any]:
    if isinstance(e, Const):
        return {"const": e.value.to_json()}
    if isinstance(e, Input):
        return {"input": e.index}
    tag = "arith" if isinstance(e, Arith) else "compare"
    return {tag: {"op": e.op, "left": expr_to_json(e.left), "right": expr_to_json(e.right)}}


def expr_from_json(doc: Any) -> Expr:
    if not isinstance(doc, dict) or len(doc) != 1:
        raise ExpressionTypeError(f"expression node must be a one-key object, got {doc!r}")
    ((tag, body),) = doc.items()
    if tag == "const":
        try:
            return Const(FactValue.from_json(body))
        except FactValueError as exc:
            raise ExpressionTypeError(str(exc)) from None
    if tag == "input":
        if not isinstance(body, int) or isinstance(body, bool) or body < 0:
            raise ExpressionTypeError(f"input index must be a non-negative integer, got {body!r}")
        return Input(body)
    if tag in ("arith", "compare"):
        if not isinstance(body, dict) or set(body) != {"op", "left", "right"}:
            raise ExpressionTypeError(f"{tag} node needs op/left/right")
        node = Arith if tag == "arith" else Compare
        return node(body["op"], expr_from_json(body["left"]), expr_from_json(body["right"]))
    raise ExpressionTypeError(f"unknown expression node {tag!r}")


def render(e: Expr) -> str:
    """Human-readable infix form, e.g. ``($0 <= 11.2)``."""
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Input):
        return f"${e.index}"
    return f"({render(e.left)} {e.op} {render(e.right)})"
