"""AST node classes for manifests.

Nodes are frozen dataclasses; ``span`` is excluded from equality so two
parses of differently formatted but equivalent text compare equal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..model import Address, ValueType


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


def _span():
    return field(default=None, compare=False, repr=False)


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class IntLit:
    value: int
    span: Span = _span()


@dataclass(frozen=True)
class BytesLit:
    value: bytes
    span: Span = _span()


@dataclass(frozen=True)
class AddressLit:
    value: Address
    span: Span = _span()


@dataclass(frozen=True)
class StringLit:
    value: str
    span: Span = _span()


@dataclass(frozen=True)
class BoolLit:
    value: bool
    span: Span = _span()


@dataclass(frozen=True)
class ListLit:
    items: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Name:
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class Attr:
    entity: str  # block, tx or log
    attr: str
    span: Span = _span()


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class Not:
    operand: "Expr"
    span: Span = _span()


Expr = Union[IntLit, BytesLit, AddressLit, StringLit, BoolLit, ListLit, Name, Attr, Call, BinOp, Not]
LITERALS = (IntLit, BytesLit, AddressLit, StringLit, BoolLit)


# -- statements and declarations --------------------------------------------


@dataclass(frozen=True)
class VarDecl:
    type: ValueType
    name: str
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class OutputDecl:
    name: str
    format: str  # CSV, LOG or XES
    span: Span = _span()


@dataclass(frozen=True)
class DictEntry:
    source: Expr
    code: Expr
    span: Span = _span()


@dataclass(frozen=True)
class DictDecl:
    name: str
    source_type: ValueType
    code_type: ValueType
    entries: tuple[DictEntry, ...]
    default: Optional[Expr] = None
    unknown: Optional[Expr] = None
    span: Span = _span()


@dataclass(frozen=True)
class BitFieldDecl:
    name: str
    start: int
    length: int
    via: Optional[str] = None
    span: Span = _span()


@dataclass(frozen=True)
class BitmapDecl:
    name: str
    fields: tuple[BitFieldDecl, ...]
    span: Span = _span()


@dataclass(frozen=True)
class Column:
    name: str
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class XesAttr:
    key: str
    xes_type: Optional[str]
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class EmitLogLine:
    output: str
    parts: tuple  # str or Expr
    span: Span = _span()


@dataclass(frozen=True)
class EmitCsvRow:
    output: str
    columns: tuple[Column, ...]
    span: Span = _span()


@dataclass(frozen=True)
class EmitXes:
    level: str  # EVENT or TRACE
    output: str
    trace_id: Expr
    attrs: tuple[XesAttr, ...]
    span: Span = _span()


Emit = Union[EmitLogLine, EmitCsvRow, EmitXes]


# -- filters -------------------------------------------------------------------


@dataclass(frozen=True)
class ParamDecl:
    type: ValueType
    indexed: bool
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class EventSig:
    name: str
    params: tuple[ParamDecl, ...]
    span: Span = _span()


@dataclass(frozen=True)
class MemberSpec:
    type: ValueType
    name: str
    args: Optional[tuple] = None  # None: plain getter written without parentheses
    span: Span = _span()


BlockSpec = Union[int, str]  # int or EARLIEST / CURRENT / CONTINUOUS


@dataclass(frozen=True)
class BlockFilter:
    start: BlockSpec
    end: BlockSpec
    body: tuple
    span: Span = _span()


@dataclass(frozen=True)
class TxFilter:
    senders: Optional[tuple]  # None means ANY
    recipients: Optional[tuple]
    body: tuple
    span: Span = _span()


@dataclass(frozen=True)
class LogFilter:
    contracts: Optional[tuple]
    event: EventSig
    body: tuple
    span: Span = _span()


@dataclass(frozen=True)
class StateFilter:
    contract: Expr
    members: tuple[MemberSpec, ...]
    body: tuple
    span: Span = _span()


@dataclass(frozen=True)
class GenericFilter:
    predicate: Expr
    body: tuple
    span: Span = _span()


Filter = Union[BlockFilter, TxFilter, LogFilter, StateFilter, GenericFilter]
FILTERS = (BlockFilter, TxFilter, LogFilter, StateFilter, GenericFilter)
EMITS = (EmitLogLine, EmitCsvRow, EmitXes)
DECLARATIONS = (VarDecl, DictDecl, BitmapDecl, OutputDecl)


@dataclass(frozen=True)
class Manifest:
    items: tuple = ()
    span: Span = _span()

    @property
    def declarations(self) -> list:
        return [i for i in self.items if isinstance(i, (VarDecl, DictDecl, BitmapDecl))]

    @property
    def roots(self) -> list:
        return [i for i in self.items if isinstance(i, FILTERS)]

    @property
    def outputs(self) -> list[OutputDecl]:
        return [i for i in self.items if isinstance(i, OutputDecl)]

    @property
    def dictionaries(self) -> list[DictDecl]:
        return [i for i in self.items if isinstance(i, DictDecl)]

    @property
    def bitmappings(self) -> list[BitmapDecl]:
        return [i for i in self.items if isinstance(i, BitmapDecl)]


def walk(node):
    """Yield ``node`` and every AST node beneath it, depth first, in source order."""
    yield node
    for f in getattr(node, "__dataclass_fields__", {}):
        if f == "span":
            continue
        value = getattr(node, f)
        children = value if isinstance(value, tuple) else (value,)
        for child in children:
            if hasattr(child, "__dataclass_fields__") and not isinstance(child, ValueType):
                yield from walk(child)
