"""Typed operator registry: built-in transformations plus a registration seam."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from .generator import CompressionError
from .model import (
    ADDRESS,
    BOOL,
    BYTES,
    INT256,
    STRING,
    UINT256,
    Address,
    ValueType,
    Value,
    list_of,
    parse_type_name,
    render_value,
)

INT256_MIN = -(2**255)
INT256_MAX = 2**255 - 1
UINT256_MAX = 2**256 - 1


class EvaluationError(Exception):
    """Runtime failure confined to the entity being evaluated."""


class DivideByZero(EvaluationError):
    pass


class Overflow(EvaluationError):
    pass


def is_int_literal(t: ValueType) -> bool:
    return t.is_integer and t.ref == "literal"


def assignable(src: ValueType, dst: ValueType) -> bool:
    """Can a value of static type ``src`` be stored where ``dst`` is expected?

    Integers widen only within their own signedness; literals adapt to any
    integer type (range is checked separately by the validator).
    """
    if src.kind in ("dictionary", "bitmapping") or dst.kind in ("dictionary", "bitmapping"):
        return False
    if is_int_literal(src) and dst.is_integer:
        return src.kind == "uint" or dst.kind == "int"
    if src.kind != dst.kind:
        return False
    if src.kind in ("uint", "int", "fixedbytes"):
        return src.bits <= dst.bits if src.kind != "fixedbytes" else src.bits == dst.bits
    if src.kind == "list":
        return src.elem is None or (dst.elem is not None and assignable(src.elem, dst.elem))
    return True


def comparable(a: ValueType, b: ValueType) -> bool:
    return assignable(a, b) or assignable(b, a)


def _match(pattern: str, t: ValueType) -> bool:
    if pattern == "any":
        return t.kind not in ("dictionary", "bitmapping")
    if pattern == "uint":
        return t.kind == "uint"
    if pattern == "int":
        return t.kind == "int" or (is_int_literal(t) and t.kind == "uint")
    if pattern in ("list", "dictionary", "bitmapping", "fixedbytes"):
        return t.kind == pattern
    exact = parse_type_name(pattern)
    return exact is not None and assignable(t, exact)


ResultRule = Union[ValueType, Callable[[Sequence[ValueType]], Optional[ValueType]]]


@dataclass(frozen=True)
class Signature:
    name: str
    params: tuple[str, ...]
    returns: ResultRule
    fn: Callable[..., Value]

    def result_type(self, argtypes: Sequence[ValueType]) -> Optional[ValueType]:
        if len(argtypes) != len(self.params):
            return None
        if not all(_match(p, t) for p, t in zip(self.params, argtypes)):
            return None
        return self.returns(argtypes) if callable(self.returns) else self.returns

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.params)})"


class OperatorRegistry:
    def __init__(self):
        self._ops: dict[str, list[Signature]] = {}

    def register(self, name: str, params: Sequence[str], returns: ResultRule,
                 fn: Callable[..., Value]) -> Signature:
        """Add an overload.  ``params`` are type patterns: a type name such as
        ``string`` or ``address``, ``uint``/``int`` for any width, ``list``,
        ``any``, or ``dictionary``/``bitmapping`` for compression specs."""
        sig = Signature(name, tuple(params), returns, fn)
        self._ops.setdefault(name, []).append(sig)
        return sig

    def __contains__(self, name: str) -> bool:
        return name in self._ops

    def names(self) -> list[str]:
        return sorted(self._ops)

    def signatures(self, name: str) -> list[Signature]:
        return list(self._ops.get(name, ()))

    def resolve(self, name: str, argtypes: Sequence[ValueType]) -> Optional[tuple[Signature, ValueType]]:
        for sig in self._ops.get(name, ()):
            result = sig.result_type(argtypes)
            if result is not None:
                return sig, result
        return None

    def apply(self, name: str, argtypes: Sequence[ValueType], values: Sequence[Value]) -> Value:
        """Resolve ``name`` against static ``argtypes`` and run it on ``values``."""
        resolved = self.resolve(name, argtypes)
        if resolved is None:
            shown = ", ".join(str(t) for t in argtypes)
            raise TypeError(f"no overload of {name} accepts ({shown})")
        return apply_operator(resolved[0], values)

    def copy(self) -> "OperatorRegistry":
        other = OperatorRegistry()
        other._ops = {k: list(v) for k, v in self._ops.items()}
        return other


def apply_operator(sig: Signature, values: Sequence[Value]) -> Value:
    """Run an operator implementation, mapping any failure to an entity-level error."""
    try:
        return sig.fn(*values)
    except EvaluationError:
        raise
    except (CompressionError, ArithmeticError, ValueError, TypeError, KeyError) as exc:
        raise EvaluationError(f"{sig.name}: {exc}") from exc


# -- built-in implementations ---------------------------------------------------------


def _check_uint(v: int) -> int:
    if not 0 <= v <= UINT256_MAX:
        raise Overflow(f"result {v} outside uint256 range")
    return v


def _check_int(v: int) -> int:
    if not INT256_MIN <= v <= INT256_MAX:
        raise Overflow(f"result {v} outside int256 range")
    return v


def _nonzero(b: int) -> int:
    if b == 0:
        raise DivideByZero("division by zero")
    return b


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(_nonzero(b))
    return q if (a >= 0) == (b >= 0) else -q


def _trunc_mod(a: int, b: int) -> int:
    return a - b * _trunc_div(a, b)


def _to_int(v) -> int:
    if isinstance(v, str):
        try:
            return _check_int(int(v, 10))
        except ValueError as exc:
            raise EvaluationError(f"cannot convert {v!r} to an integer") from exc
    return _check_int(v)


def _to_uint(v) -> int:
    if isinstance(v, str):
        try:
            return _check_uint(int(v, 10))
        except ValueError as exc:
            raise EvaluationError(f"cannot convert {v!r} to an integer") from exc
    return _check_uint(v)


def _same_list(ts):
    a, b = ts
    if a.elem is None:
        return b
    return a if b.elem is None or assignable(b.elem, a.elem) else None


def _elem_of(ts):
    lst, item = ts
    return BOOL if lst.elem is None or comparable(item, lst.elem) else None


def _append_type(ts):
    lst, item = ts
    if lst.elem is None:
        return list_of(item if not is_int_literal(item) else UINT256)
    return lst if assignable(item, lst.elem) else None


def _comparison(ordering: bool):
    def rule(ts):
        a, b = ts
        if not comparable(a, b):
            return None
        if ordering and not a.is_integer:
            return None
        return BOOL
    return rule


def _dict_result(ts):
    return ts[0].elem


def _eq(a, b) -> bool:
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    return a == b


def _bit_field(mapping, encoded, field):
    try:
        return mapping.decode_field(encoded, field)
    except KeyError as exc:
        raise EvaluationError(f"bit mapping {mapping.name} has no field {field}") from exc


def _map_value(dictionary, code):
    try:
        return dictionary.decode(code)
    except CompressionError as exc:
        raise EvaluationError(str(exc)) from exc


def builtin_registry() -> OperatorRegistry:
    r = OperatorRegistry()
    r.register("add", ["uint", "uint"], UINT256, lambda a, b: _check_uint(a + b))
    r.register("add", ["int", "int"], INT256, lambda a, b: _check_int(a + b))
    r.register("subtract", ["uint", "uint"], UINT256, lambda a, b: _check_uint(a - b))
    r.register("subtract", ["int", "int"], INT256, lambda a, b: _check_int(a - b))
    r.register("multiply", ["uint", "uint"], UINT256, lambda a, b: _check_uint(a * b))
    r.register("multiply", ["int", "int"], INT256, lambda a, b: _check_int(a * b))
    r.register("divide", ["uint", "uint"], UINT256, lambda a, b: a // _nonzero(b))
    r.register("divide", ["int", "int"], INT256, lambda a, b: _check_int(_trunc_div(a, b)))
    r.register("mod", ["uint", "uint"], UINT256, lambda a, b: a % _nonzero(b))
    r.register("mod", ["int", "int"], INT256, lambda a, b: _trunc_mod(a, b))

    r.register("concatenate", ["string", "string"], STRING, lambda a, b: a + b)
    r.register("concatenate", ["bytes", "bytes"], BYTES, lambda a, b: a + b)
    r.register("concatenate", ["list", "list"], _same_list, lambda a, b: a + b)
    r.register("contains", ["list", "any"], _elem_of, lambda lst, x: any(_eq(i, x) for i in lst))
    r.register("contains", ["string", "string"], BOOL, lambda s, sub: sub in s)
    r.register("append", ["list", "any"], _append_type, lambda lst, x: lst + (x,))
    r.register("length", ["list"], UINT256, len)
    r.register("length", ["string"], UINT256, len)
    r.register("length", ["bytes"], UINT256, len)

    r.register("mapValue", ["dictionary", "uint"], _dict_result, _map_value)
    # result type of bitField is refined per field by the validator
    r.register("bitField", ["bitmapping", "uint", "string"], UINT256, _bit_field)

    r.register("eq", ["any", "any"], _comparison(False), _eq)
    r.register("ne", ["any", "any"], _comparison(False), lambda a, b: not _eq(a, b))
    r.register("lt", ["any", "any"], _comparison(True), lambda a, b: a < b)
    r.register("le", ["any", "any"], _comparison(True), lambda a, b: a <= b)
    r.register("gt", ["any", "any"], _comparison(True), lambda a, b: a > b)
    r.register("ge", ["any", "any"], _comparison(True), lambda a, b: a >= b)
    r.register("and", ["bool", "bool"], BOOL, lambda a, b: a and b)
    r.register("or", ["bool", "bool"], BOOL, lambda a, b: a or b)
    r.register("not", ["bool"], BOOL, lambda a: not a)

    r.register("toString", ["any"], STRING, render_value)
    r.register("toInt", ["int"], INT256, _to_int)
    r.register("toInt", ["uint"], INT256, _to_int)
    r.register("toInt", ["string"], INT256, _to_int)
    r.register("toUint", ["uint"], UINT256, _to_uint)
    r.register("toUint", ["int"], UINT256, _to_uint)
    r.register("toUint", ["string"], UINT256, _to_uint)
    r.register("toAddress", ["string"], ADDRESS, _to_address)
    return r


def _to_address(s: str) -> Address:
    try:
        return Address(s)
    except ValueError as exc:
        raise EvaluationError(str(exc)) from exc


INFIX = {"==": "eq", "!=": "ne", "<": "lt", "<=": "le", ">": "gt", ">=": "ge", "&&": "and", "||": "or"}

BUILTINS = builtin_registry()
