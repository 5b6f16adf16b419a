"""Semantic analysis of manifests: scoping, nesting and type rules.

``analyze`` walks the whole AST, collecting every finding instead of
stopping at the first, and records the static facts the extractor needs
(resolved operator overloads, expression types, event and function specs,
compression specs, CSV column order).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .abi import EventParam, EventSpec, FunctionSpec, supported_abi_type
from .generator import BitField, BitMapping, ValueDictionary
from .manifest.nodes import (
    LITERALS,
    AddressLit,
    Assign,
    Attr,
    BinOp,
    BitmapDecl,
    BlockFilter,
    BoolLit,
    BytesLit,
    Call,
    DictDecl,
    EmitCsvRow,
    EmitLogLine,
    EmitXes,
    GenericFilter,
    IntLit,
    ListLit,
    LogFilter,
    Manifest,
    Name,
    Not,
    OutputDecl,
    Span,
    StateFilter,
    StringLit,
    TxFilter,
    VarDecl,
    walk,
)
from .model import (
    ADDRESS,
    BOOL,
    BYTES,
    ENTITY_ATTRIBUTES,
    INT256,
    STRING,
    UINT256,
    ValueType,
    check_value,
    list_of,
)
from .operators import BUILTINS, INFIX, OperatorRegistry, Signature, assignable, is_int_literal

UINT_LITERAL = ValueType("uint", 256, ref="literal")
INT_LITERAL = ValueType("int", 256, ref="literal")
ENTITY_FILTERS = {"block": BlockFilter, "tx": TxFilter, "log": LogFilter}
XES_INTEGER_TYPES = ("date", "int", "float")

ERROR_CODES = {
    "E_NESTING": "filter or statement placed outside its allowed parents",
    "E_TYPE": "operator or attribute type mismatch",
    "E_UNDEF": "use of an undeclared name",
    "E_REDECL": "duplicate declaration of a visible name",
    "E_SIG": "malformed event signature",
    "E_DICT": "invalid value dictionary",
    "E_BITS": "invalid bit mapping",
    "E_RANGE": "invalid block range",
    "E_CSV": "inconsistent CSV columns",
    "E_ATTR": "entity attribute outside its filter scope",
    "E_OUTPUT": "emit statement does not match its output format",
    "E_ASSIGN": "assignment to a read-only binding",
    "E_XES": "invalid XES attribute",
}


@dataclass(frozen=True)
class Finding:
    severity: str  # error or warning
    code: str
    span: Span
    message: str

    def render(self) -> str:
        return f"{self.severity} {self.code} {self.span.line}:{self.span.column} {self.message}"

    def to_dict(self) -> dict:
        return {
            "severity": self.severity,
            "code": self.code,
            "line": self.span.line,
            "column": self.span.column,
            "message": self.message,
        }


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def codes(self) -> list[str]:
        return [f.code for f in self.errors]

    def render(self) -> str:
        return "".join(f.render() + "\n" for f in self.errors + self.warnings)

    def to_json(self) -> str:
        return json.dumps(
            {"ok": self.ok, "findings": [f.to_dict() for f in self.errors + self.warnings]},
            indent=2,
        )


class TypeCheckError(Exception):
    def __init__(self, code: str, span: Span, message: str):
        super().__init__(message)
        self.code = code
        self.span = span
        self.message = message


@dataclass
class Binding:
    type: ValueType
    span: Span
    kind: str = "var"  # var, param, member, dictionary, bitmapping
    is_global: bool = False
    used: bool = False
    hashed: bool = False


class TypeEnvironment:
    """Scope stack plus the operator table and the compression specs in force."""

    def __init__(self, registry: OperatorRegistry = BUILTINS):
        self.registry = registry
        self.scopes: list[dict[str, Binding]] = [{}]
        self.entities: list[str] = []
        self.dictionaries: dict[str, ValueDictionary] = {}
        self.bitmaps: dict[str, BitMapping] = {}
        # annotations keyed by id() of AST nodes
        self.types: dict[int, ValueType] = {}
        self.calls: dict[int, Signature] = {}
        self.hashed_reads: list[tuple[str, Span]] = []

    def lookup(self, name: str) -> Optional[Binding]:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def push(self) -> None:
        self.scopes.append({})

    def pop(self) -> dict[str, Binding]:
        return self.scopes.pop()


def _span_of(node, fallback: Optional[Span] = None) -> Span:
    return getattr(node, "span", None) or fallback or Span(0, 0, 1, 1)


def type_of(e, env: TypeEnvironment) -> ValueType:
    """Static type of expression ``e``; raises TypeCheckError on failure."""
    t = _type_of(e, env)
    env.types[id(e)] = t
    return t


def _type_of(e, env: TypeEnvironment) -> ValueType:
    span = _span_of(e)
    if isinstance(e, IntLit):
        return UINT_LITERAL if e.value >= 0 else INT_LITERAL
    if isinstance(e, BoolLit):
        return BOOL
    if isinstance(e, StringLit):
        return STRING
    if isinstance(e, AddressLit):
        return ADDRESS
    if isinstance(e, BytesLit):
        return BYTES
    if isinstance(e, ListLit):
        if not e.items:
            return list_of(None)
        types = [type_of(i, env) for i in e.items]
        elem = types[0]
        for t in types[1:]:
            if assignable(t, elem):
                continue
            if assignable(elem, t):
                elem = t
            else:
                raise TypeCheckError("E_TYPE", span, f"list mixes {elem} and {t}")
        if elem.kind == "list":
            raise TypeCheckError("E_TYPE", span, "nested lists are not supported")
        return list_of(elem)
    if isinstance(e, Name):
        b = env.lookup(e.name)
        if b is None:
            raise TypeCheckError("E_UNDEF", span, f"undeclared name {e.name!r}")
        b.used = True
        if b.hashed:
            env.hashed_reads.append((e.name, span))
        return b.type
    if isinstance(e, Attr):
        table = ENTITY_ATTRIBUTES.get(e.entity, {})
        if e.entity not in env.entities:
            raise TypeCheckError(
                "E_ATTR", span, f"{e.entity}.{e.attr} used outside a {_filter_word(e.entity)} filter"
            )
        if e.attr not in table:
            raise TypeCheckError("E_ATTR", span, f"{e.entity} has no attribute {e.attr!r}")
        return table[e.attr].type
    if isinstance(e, Not):
        return _apply(e, "not", [e.operand], env)
    if isinstance(e, BinOp):
        return _apply(e, INFIX[e.op], [e.left, e.right], env)
    if isinstance(e, Call):
        return _apply(e, e.name, list(e.args), env)
    raise TypeCheckError("E_TYPE", span, f"not an expression: {type(e).__name__}")


def _filter_word(entity: str) -> str:
    return {"block": "BLOCKS", "tx": "TRANSACTIONS", "log": "LOG ENTRIES"}[entity]


def _apply(node, name: str, args: list, env: TypeEnvironment) -> ValueType:
    span = _span_of(node)
    if name not in env.registry:
        raise TypeCheckError("E_UNDEF", span, f"unknown operator {name!r}")
    argtypes = [type_of(a, env) for a in args]
    resolved = env.registry.resolve(name, argtypes)
    if resolved is None:
        shown = ", ".join(str(t) for t in argtypes)
        raise TypeCheckError("E_TYPE", span, f"no overload of {name} accepts ({shown})")
    sig, result = resolved
    env.calls[id(node)] = sig
    if name == "bitField":
        result = _bit_field_type(node, args, argtypes, env)
    return result


def _bit_field_type(node, args, argtypes, env: TypeEnvironment) -> ValueType:
    field_arg = args[2]
    if not isinstance(field_arg, StringLit):
        raise TypeCheckError("E_TYPE", _span_of(node), "bitField needs a literal field name")
    mapping = env.bitmaps.get(argtypes[0].ref)
    try:
        f = mapping.field(field_arg.value) if mapping else None
    except KeyError:
        f = None
    if f is None:
        raise TypeCheckError(
            "E_UNDEF", _span_of(field_arg), f"bit mapping {argtypes[0].ref} has no field {field_arg.value!r}"
        )
    return f.dictionary.source_type if f.dictionary else UINT256


def _literal_value(e):
    if isinstance(e, LITERALS):
        return e.value
    return None


@dataclass
class Analysis:
    manifest: Manifest
    report: ValidationReport
    env: TypeEnvironment
    events: dict[int, EventSpec] = field(default_factory=dict)
    functions: dict[int, FunctionSpec] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    csv_columns: dict[str, list[str]] = field(default_factory=dict)
    global_types: dict[str, ValueType] = field(default_factory=dict)

    @property
    def dictionaries(self) -> dict[str, ValueDictionary]:
        return self.env.dictionaries

    @property
    def bitmaps(self) -> dict[str, BitMapping]:
        return self.env.bitmaps

    def type(self, node) -> ValueType:
        return self.env.types[id(node)]


class _Analyzer:
    def __init__(self, manifest: Manifest, registry: OperatorRegistry, latest: Optional[int]):
        self.m = manifest
        self.latest = latest
        self.env = TypeEnvironment(registry)
        self.report = ValidationReport()
        self.analysis = Analysis(manifest, self.report, self.env)
        self.filters: list = []  # enclosing filter nodes

    def error(self, code: str, node_or_span, message: str) -> None:
        span = node_or_span if isinstance(node_or_span, Span) else _span_of(node_or_span)
        self.report.errors.append(Finding("error", code, span, message))

    def warn(self, code: str, node_or_span, message: str) -> None:
        span = node_or_span if isinstance(node_or_span, Span) else _span_of(node_or_span)
        self.report.warnings.append(Finding("warning", code, span, message))

    def check(self, e) -> Optional[ValueType]:
        try:
            return type_of(e, self.env)
        except TypeCheckError as exc:
            self.error(exc.code, exc.span, exc.message)
            return None

    def declare(self, name: str, binding: Binding) -> None:
        if name in ENTITY_ATTRIBUTES:
            self.error("E_REDECL", binding.span, f"{name!r} is reserved for entity attributes")
            return
        if self.env.lookup(name) is not None:
            self.error("E_REDECL", binding.span, f"{name!r} is already declared in a visible scope")
            return
        self.env.scopes[-1][name] = binding

    def pop_scope(self) -> None:
        for name, b in self.env.pop().items():
            if b.kind == "var" and not b.used:
                self.warn("W_UNUSED", b.span, f"variable {name!r} is never read")

    # -- top level ---------------------------------------------------------------------

    def run(self) -> Analysis:
        items = self.m.items
        for item in items:
            if isinstance(item, OutputDecl):
                if item.name in self.analysis.outputs:
                    self.error("E_REDECL", item, f"output {item.name!r} declared twice")
                else:
                    self.analysis.outputs[item.name] = item.format
        for item in items:
            if isinstance(item, DictDecl):
                self.dictionary(item)
        for item in items:
            if isinstance(item, BitmapDecl):
                self.bitmapping(item)
        self.collect_csv_columns()
        for item in items:
            if isinstance(item, (OutputDecl, DictDecl, BitmapDecl)):
                continue
            if isinstance(item, VarDecl):
                self.var_decl(item, is_global=True)
            elif isinstance(item, BlockFilter):
                self.filter(item)
            elif isinstance(item, (TxFilter, LogFilter, StateFilter, GenericFilter)):
                self.error("E_NESTING", item, f"{_describe(item)} must be nested inside a BLOCKS filter")
                self.filter(item)
            else:
                self.error("E_NESTING", item, f"{_describe(item)} is only allowed inside a filter")
                self.statement(item)
        self.pop_scope()
        for name, span in self.env.hashed_reads:
            self.warn("W_HASHED", span, f"{name!r} is an indexed dynamic parameter and holds only its hash")
        return self.analysis

    def dictionary(self, d: DictDecl) -> None:
        if d.name in self.env.dictionaries or d.name in self.env.bitmaps:
            self.error("E_REDECL", d, f"{d.name!r} declared twice")
            return
        ok = True
        if d.source_type.kind == "list" or d.code_type.kind != "uint":
            self.error("E_DICT", d, "dictionaries map a scalar source type to an unsigned code type")
            ok = False
        entries = []
        for entry in d.entries:
            src, code = _literal_value(entry.source), _literal_value(entry.code)
            valid = True
            if not check_value(d.source_type, src):
                self.error("E_DICT", entry, f"{src!r} is not a {d.source_type} value")
                valid = False
            if not isinstance(entry.code, IntLit):
                self.error("E_DICT", entry, "dictionary codes must be integers")
                valid = False
            if valid:
                entries.append((src, code))
            ok = ok and valid
        default = _literal_value(d.default) if d.default is not None else None
        if d.default is not None and not isinstance(d.default, IntLit):
            self.error("E_DICT", d.default, "default code must be an integer")
            default = None
            ok = False
        unknown = _literal_value(d.unknown) if d.unknown is not None else None
        if d.unknown is not None and not check_value(d.source_type, unknown):
            self.error("E_DICT", d.unknown, f"unknown marker is not a {d.source_type} value")
        spec = ValueDictionary(d.name, d.source_type, d.code_type, tuple(entries), default, unknown)
        if ok:
            for problem in spec.problems():
                self.error("E_DICT", d, problem)
        if d.default is None:
            self.warn("W_NODEFAULT", d, f"dictionary {d.name!r} has no default code")
        self.env.dictionaries[d.name] = spec
        self.declare(d.name, Binding(ValueType("dictionary", elem=d.source_type, ref=d.name), _span_of(d),
                                     kind="dictionary", is_global=True, used=True))

    def bitmapping(self, b: BitmapDecl) -> None:
        if b.name in self.env.bitmaps or b.name in self.env.dictionaries:
            self.error("E_REDECL", b, f"{b.name!r} declared twice")
            return
        fields = []
        for f in b.fields:
            d = None
            if f.via is not None:
                d = self.env.dictionaries.get(f.via)
                if d is None:
                    self.error("E_UNDEF", f, f"bit field {f.name} refers to unknown dictionary {f.via!r}")
            fields.append(BitField(f.name, f.start, f.length, d))
        spec = BitMapping(b.name, tuple(fields))
        for problem in spec.problems():
            self.error("E_BITS", b, problem)
        self.env.bitmaps[b.name] = spec
        self.declare(b.name, Binding(ValueType("bitmapping", ref=b.name), _span_of(b),
                                     kind="bitmapping", is_global=True, used=True))

    def collect_csv_columns(self) -> None:
        for node in walk(self.m):
            if not isinstance(node, EmitCsvRow):
                continue
            names = [c.name for c in node.columns]
            if len(set(names)) != len(names):
                self.error("E_CSV", node, "duplicate column name in CSV row")
            known = self.analysis.csv_columns.get(node.output)
            if known is None:
                self.analysis.csv_columns[node.output] = names
            elif set(known) != set(names):
                self.error(
                    "E_CSV", node,
                    f"columns {sorted(names)} differ from {sorted(known)} used elsewhere for {node.output!r}",
                )

    # -- statements --------------------------------------------------------------------

    def var_decl(self, d: VarDecl, is_global: bool = False) -> None:
        t = self.check(d.value)
        if d.type.kind == "list" and d.type.elem is not None and d.type.elem.kind == "list":
            self.error("E_TYPE", d, "nested list types are not supported")
        elif t is not None:
            self.check_assignable(t, d.type, d.value, d)
        self.declare(d.name, Binding(d.type, _span_of(d), is_global=is_global))
        if is_global:
            self.analysis.global_types[d.name] = d.type

    def check_assignable(self, src: ValueType, dst: ValueType, value, node) -> None:
        if not assignable(src, dst):
            self.error("E_TYPE", node, f"cannot assign {src} to {dst}")
        elif isinstance(value, IntLit) and not check_value(dst, value.value):
            self.error("E_TYPE", node, f"literal {value.value} does not fit {dst}")

    def statement(self, s) -> None:
        if isinstance(s, VarDecl):
            self.var_decl(s)
        elif isinstance(s, Assign):
            b = self.env.lookup(s.name)
            t = self.check(s.value)
            if b is None:
                self.error("E_UNDEF", s, f"assignment to undeclared variable {s.name!r}")
            elif b.kind != "var":
                self.error("E_ASSIGN", s, f"{s.name!r} is a {b.kind} and cannot be assigned")
            elif t is not None:
                self.check_assignable(t, b.type, s.value, s)
        elif isinstance(s, (EmitLogLine, EmitCsvRow, EmitXes)):
            self.emit(s)
        elif isinstance(s, (OutputDecl, DictDecl, BitmapDecl)):
            self.error("E_NESTING", s, f"{_describe(s)} must appear at the top level")
        elif isinstance(s, BlockFilter):
            self.error("E_NESTING", s, "BLOCKS filters are only allowed at the top level")
            self.filter(s)
        else:
            self.filter(s)

    def emit(self, s) -> None:
        fmt = self.analysis.outputs.get(s.output)
        wanted = {EmitLogLine: "LOG", EmitCsvRow: "CSV", EmitXes: "XES"}[type(s)]
        if fmt is None:
            self.error("E_UNDEF", s, f"undeclared output {s.output!r}")
        elif fmt != wanted:
            self.error("E_OUTPUT", s, f"output {s.output!r} is {fmt}, not {wanted}")
        if isinstance(s, EmitLogLine):
            for part in s.parts:
                if not isinstance(part, str):
                    self.check(part)
        elif isinstance(s, EmitCsvRow):
            for c in s.columns:
                self.check(c.value)
        else:
            self.check(s.trace_id)
            keys = set()
            for a in s.attrs:
                if a.key in keys:
                    self.error("E_XES", a, f"attribute {a.key!r} repeated")
                keys.add(a.key)
                t = self.check(a.value)
                if t is None or a.xes_type is None:
                    continue
                if a.xes_type in XES_INTEGER_TYPES and not t.is_integer:
                    self.error("E_XES", a, f"{a.xes_type} attribute {a.key!r} needs an integer, got {t}")
                elif a.xes_type == "boolean" and t.kind != "bool":
                    self.error("E_XES", a, f"boolean attribute {a.key!r} needs a bool, got {t}")

    # -- filters -----------------------------------------------------------------------

    def nesting_parent(self):
        for f in reversed(self.filters):
            if not isinstance(f, GenericFilter):
                return f
        return None

    def check_nesting(self, f) -> None:
        if not self.filters:
            return  # top level handled by run()
        parent = self.nesting_parent()
        if isinstance(f, (TxFilter, StateFilter)) and not isinstance(parent, BlockFilter):
            self.error("E_NESTING", f, f"{_describe(f)} must be nested directly in a BLOCKS filter")
        elif isinstance(f, LogFilter) and not isinstance(parent, (BlockFilter, TxFilter)):
            self.error("E_NESTING", f, "LOG ENTRIES must be nested in a BLOCKS or TRANSACTIONS filter")

    def address_items(self, items, node) -> None:
        for item in items or ():
            t = self.check(item)
            if t is not None and t.kind != "address" and not (t.kind == "list" and t.elem == ADDRESS):
                self.error("E_TYPE", item, f"expected address or address[], got {t}")

    def filter(self, f) -> None:
        self.check_nesting(f)
        entity = None
        self.env.push()
        if isinstance(f, BlockFilter):
            self.block_range(f)
            entity = "block"
        elif isinstance(f, TxFilter):
            self.address_items(f.senders, f)
            self.address_items(f.recipients, f)
            entity = "tx"
        elif isinstance(f, LogFilter):
            self.address_items(f.contracts, f)
            self.event(f)
            entity = "log"
        elif isinstance(f, StateFilter):
            self.state(f)
        else:
            t = self.check(f.predicate)
            if t is not None and t != BOOL:
                self.error("E_TYPE", f.predicate, f"IF condition must be bool, got {t}")
        if entity:
            self.env.entities.append(entity)
        self.filters.append(f)
        for s in f.body:
            self.statement(s)
        self.filters.pop()
        if entity:
            self.env.entities.pop()
        self.pop_scope()

    def block_range(self, f: BlockFilter) -> None:
        if f.start == "CONTINUOUS":
            self.error("E_RANGE", f, "CONTINUOUS is only valid as the end of a range")
        lo = 0 if f.start == "EARLIEST" else f.start
        hi = 0 if f.end == "EARLIEST" else f.end
        if isinstance(lo, int) and isinstance(hi, int) and lo > hi:
            self.error("E_RANGE", f, f"block range starts at {lo} but ends at {hi}")
        if self.latest is not None and isinstance(hi, int) and hi > self.latest:
            self.warn("W_RANGE", f, f"range end {hi} exceeds the current block {self.latest}")

    def event(self, f: LogFilter) -> None:
        sig = f.event
        params = []
        names = set()
        ok = True
        for p in sig.params:
            if not supported_abi_type(p.type):
                self.error("E_SIG", p, f"unsupported event parameter type {p.type}")
                ok = False
            if p.name in names:
                self.error("E_SIG", p, f"duplicate event parameter {p.name!r}")
                ok = False
            names.add(p.name)
            params.append(EventParam(p.type, p.indexed, p.name))
        indexed = sum(p.indexed for p in sig.params)
        if indexed > 3:
            self.error("E_SIG", sig, f"{indexed} indexed parameters; events allow at most 3")
            ok = False
        if ok:
            self.analysis.events[id(f)] = EventSpec(sig.name, tuple(params))
        declared = set()
        for p in sig.params:
            if p.name in declared:
                continue  # already reported as E_SIG
            declared.add(p.name)
            self.declare(p.name, Binding(p.type, _span_of(p), kind="param",
                                         hashed=p.indexed and p.type.is_dynamic))

    def state(self, f: StateFilter) -> None:
        t = self.check(f.contract)
        if t is not None and t != ADDRESS:
            self.error("E_TYPE", f.contract, f"contract must be an address, got {t}")
        for m in f.members:
            argtypes = []
            for a in m.args or ():
                at = self.check(a)
                if at is None:
                    continue
                if is_int_literal(at):
                    at = UINT256 if at.kind == "uint" else INT256
                if at.kind == "list" and at.elem is not None and is_int_literal(at.elem):
                    at = list_of(UINT256)
                if not supported_abi_type(at):
                    self.error("E_TYPE", a, f"{at} cannot be passed to a contract call")
                argtypes.append(at)
            if not supported_abi_type(m.type):
                self.error("E_TYPE", m, f"unsupported member type {m.type}")
            elif len(argtypes) == len(m.args or ()):
                self.analysis.functions[id(m)] = FunctionSpec(m.name, tuple(argtypes), (m.type,))
            self.declare(m.name, Binding(m.type, _span_of(m), kind="member"))


def _describe(node) -> str:
    return {
        TxFilter: "TRANSACTIONS",
        LogFilter: "LOG ENTRIES",
        StateFilter: "SMART CONTRACT",
        GenericFilter: "IF",
        BlockFilter: "BLOCKS",
        OutputDecl: "OUTPUT",
        DictDecl: "DICTIONARY",
        BitmapDecl: "BITMAPPING",
        EmitLogLine: "EMIT LOG LINE",
        EmitCsvRow: "EMIT CSV ROW",
        EmitXes: "EMIT XES",
        Assign: "assignment",
    }.get(type(node), type(node).__name__)


def analyze(m: Manifest, registry: OperatorRegistry = BUILTINS, latest: Optional[int] = None) -> Analysis:
    return _Analyzer(m, registry, latest).run()


def validate(m: Manifest, registry: OperatorRegistry = BUILTINS, latest: Optional[int] = None) -> ValidationReport:
    return analyze(m, registry, latest).report
