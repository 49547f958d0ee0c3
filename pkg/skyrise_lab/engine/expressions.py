"""Scalar expressions of plan operators.

JSON forms::

    {"col": "l_discount"}
    {"lit": "1994-01-01", "type": "date32"}
    {"op": "<", "args": [{"col": "l_quantity"}, {"lit": 24}]}
    {"op": "between", "args": [x, lo, hi]}          # inclusive
    {"op": "in", "args": [x], "values": ["MAIL", "SHIP"]}
    {"op": "if", "args": [cond, then, else]}

Expressions evaluate either over a whole ``Batch`` (numpy, used by workers)
or over one row dict of Python values (used by the reference interpreter).
Both paths apply the same IEEE operations in the same order.
"""

import datetime
import operator
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from skyrise_lab.dataform import Batch, ColumnRange, ColumnType, Schema
from skyrise_lab.errors import PlanInvalid, SchemaMismatch

BOOL = "bool"

ARITHMETIC = {"+": operator.add, "-": operator.sub, "*": operator.mul, "/": operator.truediv}
COMPARISON = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
LOGICAL = ("and", "or", "not")
SPECIAL = ("between", "in", "if")
NUMERIC = (ColumnType.INT64, ColumnType.FLOAT64)

# flipped comparison when the literal is on the left
_MIRROR = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "!=": "!="}


@dataclass(frozen=True)
class Col:
    name: str


@dataclass(frozen=True)
class Lit:
    value: Any
    type: ColumnType


@dataclass(frozen=True)
class Call:
    op: str
    args: Tuple["Expr", ...]
    values: Tuple[Any, ...] = ()


Expr = Union[Col, Lit, Call]


def _literal(value: Any, type_name: Optional[str]) -> Lit:
    if type_name is None:
        if isinstance(value, bool):
            return Lit(int(value), ColumnType.INT64)
        if isinstance(value, int):
            return Lit(value, ColumnType.INT64)
        if isinstance(value, float):
            return Lit(value, ColumnType.FLOAT64)
        if isinstance(value, str):
            return Lit(value, ColumnType.UTF8)
        raise PlanInvalid(f"literal {value!r} needs an explicit type")
    try:
        column_type = ColumnType(type_name)
    except ValueError as exc:
        raise PlanInvalid(f"unknown literal type '{type_name}'") from exc
    if column_type is ColumnType.DATE32:
        try:
            return Lit(datetime.date.fromisoformat(str(value)), column_type)
        except ValueError as exc:
            raise PlanInvalid(f"bad date literal {value!r}") from exc
    if column_type is ColumnType.INT64:
        return Lit(int(value), column_type)
    if column_type is ColumnType.FLOAT64:
        return Lit(float(value), column_type)
    return Lit(str(value), column_type)


def parse(document: Any) -> Expr:
    if not isinstance(document, Mapping):
        raise PlanInvalid(f"expression must be an object, got {document!r}")
    if "col" in document:
        return Col(str(document["col"]))
    if "lit" in document:
        return _literal(document["lit"], document.get("type"))
    op = document.get("op")
    if op not in ARITHMETIC and op not in COMPARISON and op not in LOGICAL and op not in SPECIAL:
        raise PlanInvalid(f"unknown expression operator {op!r}")
    args = tuple(parse(arg) for arg in document.get("args", ()))
    arity = {"not": 1, "in": 1, "between": 3, "if": 3}.get(op, 2)
    if op in ("and", "or"):
        if len(args) < 2:
            raise PlanInvalid(f"'{op}' needs at least two arguments")
    elif len(args) != arity:
        raise PlanInvalid(f"'{op}' takes {arity} arguments, got {len(args)}")
    values: Tuple[Any, ...] = ()
    if op == "in":
        if not document.get("values"):
            raise PlanInvalid("'in' needs a non-empty 'values' list")
        values = tuple(document["values"])
    return Call(op, args, values)


def columns(expr: Expr) -> Set[str]:
    if isinstance(expr, Col):
        return {expr.name}
    if isinstance(expr, Lit):
        return set()
    out: Set[str] = set()
    for arg in expr.args:
        out |= columns(arg)
    return out


# typing


def _comparable(left: Any, right: Any) -> bool:
    return left == right or (left in NUMERIC and right in NUMERIC)


def result_type(expr: Expr, schema: Schema) -> Any:
    """``ColumnType`` (or ``BOOL``) of ``expr`` over ``schema``; raises PlanInvalid."""
    if isinstance(expr, Col):
        try:
            return schema.column(expr.name).type
        except SchemaMismatch as exc:
            raise PlanInvalid(str(exc)) from exc
    if isinstance(expr, Lit):
        return expr.type
    kinds = [result_type(arg, schema) for arg in expr.args]
    op = expr.op
    if op in ARITHMETIC:
        if any(kind not in NUMERIC for kind in kinds):
            raise PlanInvalid(f"'{op}' needs numeric operands, got {kinds}")
        if op == "/" or ColumnType.FLOAT64 in kinds:
            return ColumnType.FLOAT64
        return ColumnType.INT64
    if op in COMPARISON or op == "between":
        if not all(_comparable(kinds[0], kind) for kind in kinds[1:]):
            raise PlanInvalid(f"'{op}' compares incompatible types {kinds}")
        return BOOL
    if op in LOGICAL:
        if any(kind != BOOL for kind in kinds):
            raise PlanInvalid(f"'{op}' needs boolean operands, got {kinds}")
        return BOOL
    if op == "in":
        return BOOL
    if kinds[0] != BOOL:
        raise PlanInvalid("'if' condition must be boolean")
    then, other = kinds[1], kinds[2]
    if then == other:
        return then
    if then in NUMERIC and other in NUMERIC:
        return ColumnType.FLOAT64
    raise PlanInvalid(f"'if' branches have different types {then} and {other}")


def storage_type(kind: Any) -> ColumnType:
    """Column type a projected expression is stored as."""
    return ColumnType.INT64 if kind == BOOL else kind


# vectorized evaluation


def _vector_literal(lit: Lit) -> Any:
    if lit.type is ColumnType.DATE32:
        return np.datetime64(lit.value, "D")
    return lit.value


def _eval(expr: Expr, batch: Batch) -> Any:
    if isinstance(expr, Col):
        return batch.column(expr.name)
    if isinstance(expr, Lit):
        return _vector_literal(expr)
    op = expr.op
    if op == "in":
        target = _eval(expr.args[0], batch)
        return np.isin(np.asarray(target), np.array(expr.values, dtype=object if isinstance(expr.values[0], str) else None))
    args = [_eval(arg, batch) for arg in expr.args]
    if op in ARITHMETIC:
        left, right = args
        if op == "/":
            right = np.asarray(right, dtype=np.float64)
            zero = right == 0
            quotient = np.asarray(left, dtype=np.float64) / np.where(zero, 1.0, right)
            return np.ma.masked_where(np.broadcast_to(zero, np.shape(quotient)), quotient) if np.any(zero) else quotient
        return ARITHMETIC[op](left, right)
    if op in COMPARISON:
        return COMPARISON[op](args[0], args[1])
    if op == "and":
        out = args[0]
        for arg in args[1:]:
            out = np.logical_and(out, arg)
        return out
    if op == "or":
        out = args[0]
        for arg in args[1:]:
            out = np.logical_or(out, arg)
        return out
    if op == "not":
        return np.logical_not(args[0])
    if op == "between":
        return np.logical_and(args[0] >= args[1], args[0] <= args[2])
    cond, then, other = args
    return np.where(np.ma.filled(cond, False), then, other)


def evaluate(expr: Expr, batch: Batch) -> np.ndarray:
    """Evaluate over every row of ``batch``; scalars are broadcast."""
    value = _eval(expr, batch)
    if np.ndim(value) == 0:
        value = np.full(batch.num_rows, value, dtype=object if isinstance(value, str) else None)
    return value


def evaluate_mask(expr: Expr, batch: Batch) -> np.ndarray:
    return np.ma.filled(evaluate(expr, batch), False).astype(bool)


# row evaluation


def evaluate_row(expr: Expr, row: Mapping[str, Any]) -> Any:
    """Evaluate over one row of Python values; ``None`` propagates."""
    if isinstance(expr, Col):
        return row[expr.name]
    if isinstance(expr, Lit):
        return expr.value
    op = expr.op
    if op == "and":
        return all(evaluate_row(arg, row) for arg in expr.args)
    if op == "or":
        return any(evaluate_row(arg, row) for arg in expr.args)
    args = [evaluate_row(arg, row) for arg in expr.args]
    if op == "if":
        return args[1] if args[0] else args[2]
    if any(arg is None for arg in args):
        return None
    if op in ARITHMETIC:
        if op == "/":
            return None if args[1] == 0 else float(args[0]) / float(args[1])
        return ARITHMETIC[op](args[0], args[1])
    if op in COMPARISON:
        return COMPARISON[op](args[0], args[1])
    if op == "not":
        return not args[0]
    if op == "between":
        return args[1] <= args[0] <= args[2]
    return args[0] in expr.values


def row_value(kind: Any, value: Any) -> Any:
    """Normalize a row-evaluated value to what a stored column would hold."""
    if value is None:
        return None
    if kind == BOOL:
        return int(bool(value))
    if kind is ColumnType.FLOAT64:
        return float(value)
    return value


# pushdown


def _range_of(expr: Call) -> Optional[ColumnRange]:
    if expr.op == "between":
        target, lo, hi = expr.args
        if isinstance(target, Col) and isinstance(lo, Lit) and isinstance(hi, Lit):
            return ColumnRange(target.name, lo.value, hi.value)
        return None
    if expr.op == "in":
        target = expr.args[0]
        if isinstance(target, Col):
            return ColumnRange(target.name, min(expr.values), max(expr.values))
        return None
    if expr.op not in COMPARISON or expr.op == "!=":
        return None
    left, right = expr.args
    op = expr.op
    if isinstance(left, Lit) and isinstance(right, Col):
        left, right, op = right, left, _MIRROR[op]
    if not (isinstance(left, Col) and isinstance(right, Lit)):
        return None
    value = right.value
    if op == "=":
        return ColumnRange(left.name, value, value)
    if op in ("<", "<="):
        return ColumnRange(left.name, hi=value, hi_inclusive=op == "<=")
    return ColumnRange(left.name, lo=value, lo_inclusive=op == ">=")


def column_ranges(expr: Optional[Expr]) -> List[ColumnRange]:
    """Range restrictions implied by the top-level conjunction of ``expr``.

    Every row satisfying ``expr`` satisfies each returned range, so row groups
    disproved by any of them can be skipped.
    """
    if expr is None or not isinstance(expr, Call):
        return []
    if expr.op == "and":
        out: List[ColumnRange] = []
        for arg in expr.args:
            out.extend(column_ranges(arg))
        return out
    found = _range_of(expr)
    return [found] if found is not None else []


def row_dict(schema: Schema, values: Sequence[Any]) -> Dict[str, Any]:
    return dict(zip(schema.names, values))


def python_rows(batch: Batch) -> List[Dict[str, Any]]:
    return [row_dict(batch.schema, row) for row in batch.rows()]
