"""Lexer and recovering recursive-descent parser for manifest scripts."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from ..model import Address, parse_type_name
from .nodes import (
    AddressLit,
    Assign,
    Attr,
    BinOp,
    BitFieldDecl,
    BitmapDecl,
    BlockFilter,
    BoolLit,
    BytesLit,
    Call,
    Column,
    DictDecl,
    DictEntry,
    EmitCsvRow,
    EmitLogLine,
    EmitXes,
    EventSig,
    GenericFilter,
    IntLit,
    ListLit,
    LogFilter,
    Manifest,
    MemberSpec,
    Name,
    Not,
    OutputDecl,
    ParamDecl,
    Span,
    StateFilter,
    StringLit,
    TxFilter,
    VarDecl,
    XesAttr,
)

KEYWORDS = frozenset({
    "BLOCKS", "TRANSACTIONS", "LOG", "ENTRIES", "SMART", "CONTRACT", "IF", "EMIT",
    "LINE", "CSV", "ROW", "XES", "EVENT", "TRACE", "ANY", "EARLIEST", "CURRENT",
    "CONTINUOUS", "DICTIONARY", "BITMAPPING", "OUTPUT", "true", "false",
})
ENTITIES = frozenset({"block", "tx", "log"})
BLOCK_SPECS = ("EARLIEST", "CURRENT", "CONTINUOUS")
OUTPUT_FORMATS = ("CSV", "LOG", "XES")
XES_TYPES = frozenset({"string", "date", "int", "float", "boolean", "id"})
COMPARISONS = ("==", "!=", "<=", ">=", "<", ">")
MAX_ERRORS = 50

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<HEX>0[xX][0-9a-fA-F]*)
  | (?P<INT>[0-9]+)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<OP>->|==|!=|<=|>=|&&|\|\||[(){}\[\],;:=.<>!-])
    """,
    re.VERBOSE,
)
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", '"': '"', "\\": "\\", "{": "{", "}": "}"}


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, INT, HEX, STRING, OP, EOF
    value: str
    start: int
    end: int
    line: int
    column: int


@dataclass(frozen=True)
class SyntaxIssue:
    line: int
    column: int
    message: str
    expected: str = ""

    def __str__(self) -> str:
        hint = f" (expected {self.expected})" if self.expected else ""
        return f"{self.line}:{self.column}: {self.message}{hint}"


class ManifestSyntaxError(Exception):
    """Raised by ``parse_manifest``; ``errors`` lists every problem found."""

    def __init__(self, errors: list[SyntaxIssue]):
        super().__init__("\n".join(str(e) for e in errors))
        self.errors = errors


class _Fail(Exception):
    pass


def _unescape_at(body: str, i: int) -> tuple[str, int]:
    """Decode the escape sequence starting at ``body[i] == '\\'``."""
    nxt = body[i + 1:i + 2]
    if nxt == "u" and re.fullmatch(r"[0-9a-fA-F]{4}", body[i + 2:i + 6]):
        return chr(int(body[i + 2:i + 6], 16)), i + 6
    if nxt not in _ESCAPES or not nxt:
        raise ValueError(f"unknown escape \\{nxt}")
    return _ESCAPES[nxt], i + 2


def _unescape(body: str) -> str:
    out, i = [], 0
    while i < len(body):
        if body[i] == "\\":
            c, i = _unescape_at(body, i)
            out.append(c)
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


class _Lexer:
    def __init__(self, text: str, base: int = 0, line: int = 1, column: int = 1):
        self.text = text
        self.base = base
        self.line0, self.col0 = line, column

    def tokens(self, errors: list[SyntaxIssue]) -> list[Token]:
        toks: list[Token] = []
        pos, line, col = 0, self.line0, self.col0
        text = self.text
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                errors.append(SyntaxIssue(line, col, f"unexpected character {text[pos]!r}"))
                m_end = pos + 1
                kind = None
            else:
                m_end = m.end()
                kind = m.lastgroup
            if kind and kind != "ws":
                toks.append(Token(kind, m.group(), self.base + pos, self.base + m_end, line, col))
            chunk = text[pos:m_end]
            nl = chunk.count("\n")
            if nl:
                line += nl
                col = m_end - chunk.rfind("\n") - pos
            else:
                col += m_end - pos
            pos = m_end
        toks.append(Token("EOF", "", self.base + len(text), self.base + len(text), line, col))
        return toks


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.errors: list[SyntaxIssue] = []
        self.toks = _Lexer(text).tokens(self.errors)
        self.i = 0

    # -- token helpers ---------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, value: str, k: int = 0) -> bool:
        t = self.peek(k) if k else self.tok
        return t.kind in ("OP", "IDENT") and t.value == value

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "EOF":
            self.i += 1
        return t

    def fail(self, message: str, expected: str = "", tok: Optional[Token] = None):
        t = tok or self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.value)
        self.errors.append(SyntaxIssue(t.line, t.column, f"{message}, found {found}", expected))
        raise _Fail

    def expect(self, value: str) -> Token:
        if not self.at(value):
            self.fail(f"expected {value!r}", repr(value))
        return self.advance()

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind or (kind == "IDENT" and self.tok.value in KEYWORDS):
            self.fail(f"expected {what}", what)
        return self.advance()

    def span_from(self, start: Token) -> Span:
        prev = self.toks[self.i - 1] if self.i > 0 else start
        end = max(prev.end, start.end)
        return Span(start.start, end, start.line, start.column)

    def synchronize(self) -> None:
        """Skip to the end of the broken statement: past ';' or a balanced '{...}'."""
        depth = 0
        while self.tok.kind != "EOF":
            if self.at("{"):
                depth += 1
            elif self.at("}"):
                if depth == 0:
                    break
                depth -= 1
                if depth == 0:
                    self.advance()
                    return
            elif self.at(";") and depth == 0:
                self.advance()
                return
            self.advance()

    # -- entry points ------------------------------------------------------------

    def parse(self) -> Manifest:
        items = self.statements(top_level=True)
        if self.errors:
            raise ManifestSyntaxError(self.errors[:MAX_ERRORS])
        return Manifest(tuple(items), Span(0, len(self.text), 1, 1))

    def statements(self, top_level: bool) -> list:
        items = []
        while self.tok.kind != "EOF" and len(self.errors) < MAX_ERRORS:
            if self.at("}"):
                if not top_level:
                    break
                self.errors.append(SyntaxIssue(self.tok.line, self.tok.column, "unmatched '}'"))
                self.advance()
                continue
            before = self.i
            try:
                items.append(self.statement())
            except _Fail:
                self.synchronize()
                if self.i == before:
                    self.advance()
        return items

    def body(self) -> tuple:
        self.expect("{")
        items = self.statements(top_level=False)
        self.expect("}")
        return tuple(items)

    # -- statements --------------------------------------------------------------

    def statement(self):
        t = self.tok
        if t.kind == "IDENT":
            handler = {
                "BLOCKS": self.block_filter,
                "TRANSACTIONS": self.tx_filter,
                "LOG": self.log_filter,
                "SMART": self.state_filter,
                "IF": self.generic_filter,
                "EMIT": self.emit,
                "DICTIONARY": self.dict_decl,
                "BITMAPPING": self.bitmap_decl,
                "OUTPUT": self.output_decl,
            }.get(t.value)
            if handler is not None:
                return handler()
            if t.value not in KEYWORDS:
                if self.at("=", 1):
                    return self.assign()
                return self.var_decl()
        self.fail("expected a filter, declaration or statement", "statement")

    def type_name(self):
        start = self.tok
        name = self.expect_kind("IDENT", "type name").value
        while self.at("[") and self.at("]", 1):
            self.advance()
            self.advance()
            name += "[]"
        vtype = parse_type_name(name)
        if vtype is None:
            self.fail(f"unknown type name {name!r}", "type name", tok=start)
        return vtype

    def var_decl(self) -> VarDecl:
        start = self.tok
        vtype = self.type_name()
        name = self.expect_kind("IDENT", "variable name").value
        self.expect("=")
        value = self.expr()
        self.expect(";")
        return VarDecl(vtype, name, value, self.span_from(start))

    def assign(self) -> Assign:
        start = self.advance()
        self.expect("=")
        value = self.expr()
        self.expect(";")
        return Assign(start.value, value, self.span_from(start))

    def output_decl(self) -> OutputDecl:
        start = self.advance()
        name = self.expect_kind("IDENT", "output name").value
        fmt = self.tok
        if fmt.value not in OUTPUT_FORMATS:
            self.fail("expected output format", "CSV, LOG or XES")
        self.advance()
        self.expect(";")
        return OutputDecl(name, fmt.value, self.span_from(start))

    def block_spec(self):
        self.expect("(")
        t = self.tok
        if t.kind == "INT":
            value = int(t.value)
        elif t.value in BLOCK_SPECS:
            value = t.value
        else:
            self.fail("expected block number", "INT, EARLIEST, CURRENT or CONTINUOUS")
        self.advance()
        self.expect(")")
        return value

    def block_filter(self) -> BlockFilter:
        start = self.advance()
        lo = self.block_spec()
        hi = self.block_spec()
        return BlockFilter(lo, hi, self.body(), self.span_from(start))

    def addr_list(self):
        self.expect("(")
        if self.at("ANY"):
            self.advance()
            self.expect(")")
            return None
        items = [self.expr()]
        while self.at(","):
            self.advance()
            items.append(self.expr())
        self.expect(")")
        return tuple(items)

    def tx_filter(self) -> TxFilter:
        start = self.advance()
        senders = self.addr_list()
        recipients = self.addr_list()
        return TxFilter(senders, recipients, self.body(), self.span_from(start))

    def log_filter(self) -> LogFilter:
        start = self.advance()
        self.expect("ENTRIES")
        contracts = self.addr_list()
        self.expect("(")
        event = self.event_sig()
        self.expect(")")
        return LogFilter(contracts, event, self.body(), self.span_from(start))

    def event_sig(self) -> EventSig:
        start = self.tok
        name = self.expect_kind("IDENT", "event name").value
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.param_decl())
            while self.at(","):
                self.advance()
                params.append(self.param_decl())
        self.expect(")")
        return EventSig(name, tuple(params), self.span_from(start))

    def param_decl(self) -> ParamDecl:
        start = self.tok
        vtype = self.type_name()
        indexed = self.at("indexed") and self.peek().kind == "IDENT"
        if indexed:
            self.advance()
        name = self.expect_kind("IDENT", "parameter name").value
        return ParamDecl(vtype, indexed, name, self.span_from(start))

    def state_filter(self) -> StateFilter:
        start = self.advance()
        self.expect("CONTRACT")
        self.expect("(")
        contract = self.expr()
        self.expect(")")
        self.expect("(")
        members = [self.member_spec()]
        while self.at(","):
            self.advance()
            members.append(self.member_spec())
        self.expect(")")
        return StateFilter(contract, tuple(members), self.body(), self.span_from(start))

    def member_spec(self) -> MemberSpec:
        start = self.tok
        vtype = self.type_name()
        name = self.expect_kind("IDENT", "member name").value
        args = None
        if self.at("("):
            args = self.call_args()
        return MemberSpec(vtype, name, args, self.span_from(start))

    def generic_filter(self) -> GenericFilter:
        start = self.advance()
        self.expect("(")
        predicate = self.expr()
        self.expect(")")
        return GenericFilter(predicate, self.body(), self.span_from(start))

    def emit(self):
        start = self.advance()
        first = self.tok.value
        second = self.peek().value
        if (first, second) == ("LOG", "LINE"):
            kind = "LINE"
        elif (first, second) == ("CSV", "ROW"):
            kind = "ROW"
        elif first == "XES" and second in ("EVENT", "TRACE"):
            kind = second
        else:
            self.fail("expected emit target", "LOG LINE, CSV ROW, XES EVENT or XES TRACE")
        self.advance()
        self.advance()
        self.expect("(")
        output = self.expect_kind("IDENT", "output name").value
        self.expect(",")
        if kind == "LINE":
            tmpl = self.expect_kind("STRING", "template string")
            parts = self.template(tmpl)
            self.expect(")")
            self.expect(";")
            return EmitLogLine(output, parts, self.span_from(start))
        if kind == "ROW":
            cols = [self.column()]
            while self.at(","):
                self.advance()
                cols.append(self.column())
            self.expect(")")
            self.expect(";")
            return EmitCsvRow(output, tuple(cols), self.span_from(start))
        trace_id = self.expr()
        attrs = []
        while self.at(","):
            self.advance()
            attrs.append(self.xes_attr())
        self.expect(")")
        self.expect(";")
        return EmitXes(kind, output, trace_id, tuple(attrs), self.span_from(start))

    def column(self) -> Column:
        start = self.tok
        name = self.expect_kind("IDENT", "column name").value
        self.expect("=")
        return Column(name, self.expr(), self.span_from(start))

    def xes_attr(self) -> XesAttr:
        start = self.tok
        xes_type = None
        if (start.kind == "IDENT" and start.value in XES_TYPES
                and self.peek().kind in ("IDENT", "STRING") and self.at("=", 2)):
            xes_type = self.advance().value
        key_tok = self.tok
        if key_tok.kind == "STRING":
            key = self.string_value(self.advance())
        else:
            key = self.expect_kind("IDENT", "attribute key").value
        if not key:
            self.fail("empty attribute key", tok=key_tok)
        self.expect("=")
        return XesAttr(key, xes_type, self.expr(), self.span_from(start))

    def dict_decl(self) -> DictDecl:
        start = self.advance()
        name = self.expect_kind("IDENT", "dictionary name").value
        self.expect("(")
        source = self.type_name()
        self.expect("->")
        code = self.type_name()
        self.expect(")")
        self.expect("{")
        entries, default, unknown = [], None, None
        while not self.at("}"):
            if self.at("default"):
                self.advance()
                self.expect(":")
                default = self.literal()
                if self.at("->"):
                    self.advance()
                    unknown = self.literal()
                if self.at(","):
                    self.advance()
                break
            entry_start = self.tok
            src = self.literal()
            self.expect(":")
            entries.append(DictEntry(src, self.literal(), self.span_from(entry_start)))
            if not self.at(","):
                break
            self.advance()
        self.expect("}")
        if not entries:
            self.fail("dictionary needs at least one entry", tok=start)
        return DictDecl(name, source, code, tuple(entries), default, unknown, self.span_from(start))

    def bitmap_decl(self) -> BitmapDecl:
        start = self.advance()
        name = self.expect_kind("IDENT", "bit mapping name").value
        self.expect("{")
        fields = []
        while not self.at("}"):
            fstart = self.tok
            fname = self.expect_kind("IDENT", "field name").value
            self.expect(":")
            self.expect("bits")
            self.expect("(")
            lo = int(self.expect_kind("INT", "start bit").value)
            self.expect(",")
            length = int(self.expect_kind("INT", "bit length").value)
            self.expect(")")
            via = None
            if self.at("via"):
                self.advance()
                via = self.expect_kind("IDENT", "dictionary name").value
            self.expect(";")
            fields.append(BitFieldDecl(fname, lo, length, via, self.span_from(fstart)))
        self.expect("}")
        if not fields:
            self.fail("bit mapping needs at least one field", tok=start)
        return BitmapDecl(name, tuple(fields), self.span_from(start))

    # -- expressions -------------------------------------------------------------

    def literal(self):
        t = self.tok
        expr = self.primary()
        if not isinstance(expr, (IntLit, BytesLit, AddressLit, StringLit, BoolLit)):
            self.fail("expected a literal", "literal", tok=t)
        return expr

    def expr(self):
        return self.or_expr()

    def or_expr(self):
        start = self.tok
        left = self.and_expr()
        while self.at("||"):
            self.advance()
            left = BinOp("||", left, self.and_expr(), self.span_from(start))
        return left

    def and_expr(self):
        start = self.tok
        left = self.cmp_expr()
        while self.at("&&"):
            self.advance()
            left = BinOp("&&", left, self.cmp_expr(), self.span_from(start))
        return left

    def cmp_expr(self):
        start = self.tok
        left = self.unary()
        if self.tok.kind == "OP" and self.tok.value in COMPARISONS:
            op = self.advance().value
            left = BinOp(op, left, self.unary(), self.span_from(start))
        return left

    def unary(self):
        if self.at("!"):
            start = self.advance()
            return Not(self.unary(), self.span_from(start))
        return self.primary()

    def call_args(self) -> tuple:
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.at(","):
                self.advance()
                args.append(self.expr())
        self.expect(")")
        return tuple(args)

    def string_value(self, t: Token) -> str:
        try:
            return _unescape(t.value[1:-1])
        except ValueError as exc:
            self.fail(str(exc), tok=t)

    def primary(self):
        t = self.tok
        if t.kind == "INT":
            self.advance()
            return IntLit(int(t.value), self.span_from(t))
        if t.kind == "OP" and t.value == "-" and self.peek().kind == "INT":
            self.advance()
            n = self.advance()
            return IntLit(-int(n.value), self.span_from(t))
        if t.kind == "HEX":
            self.advance()
            digits = t.value[2:]
            if len(digits) == 40:
                return AddressLit(Address(t.value), self.span_from(t))
            if len(digits) % 2:
                self.fail("hex literal needs an even number of digits", tok=t)
            return BytesLit(bytes.fromhex(digits), self.span_from(t))
        if t.kind == "STRING":
            self.advance()
            return StringLit(self.string_value(t), self.span_from(t))
        if t.kind == "OP" and t.value == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if t.kind == "OP" and t.value == "[":
            self.advance()
            items = []
            if not self.at("]"):
                items.append(self.expr())
                while self.at(","):
                    self.advance()
                    items.append(self.expr())
            self.expect("]")
            return ListLit(tuple(items), self.span_from(t))
        if t.kind == "IDENT":
            if t.value in ("true", "false"):
                self.advance()
                return BoolLit(t.value == "true", self.span_from(t))
            if t.value in KEYWORDS:
                self.fail("unexpected keyword in expression", "expression")
            self.advance()
            if self.at("("):
                return Call(t.value, self.call_args(), self.span_from(t))
            if self.at(".") and t.value in ENTITIES:
                self.advance()
                attr = self.tok
                if attr.kind != "IDENT":
                    self.fail("expected attribute name", "attribute")
                self.advance()
                return Attr(t.value, attr.value, self.span_from(t))
            return Name(t.value, self.span_from(t))
        self.fail("expected an expression", "expression")

    def template(self, tok: Token) -> tuple:
        """Split a LOG LINE template into literal text and ``{expr}`` placeholders.

        Escapes are decoded first, keeping each character's offset in the raw
        token, so placeholders may hold string literals and carry exact spans.
        """
        body = tok.value[1:-1]
        chars: list[tuple[str, int, bool]] = []  # (char, raw offset within body, came from an escape)
        i = 0
        while i < len(body):
            if body[i] == "\\":
                try:
                    ch, nxt = _unescape_at(body, i)
                except ValueError as exc:
                    self.fail(str(exc), tok=tok)
                chars.append((ch, i, True))
                i = nxt
            else:
                chars.append((body[i], i, False))
                i += 1
        parts: list = []
        buf: list[str] = []
        k = 0
        while k < len(chars):
            ch, _, escaped = chars[k]
            if escaped or ch not in "{}":
                buf.append(ch)
                k += 1
                continue
            if ch == "}":
                self.fail("unmatched '}' in template", tok=tok)
            close, quoted = k + 1, False
            while close < len(chars):
                c = chars[close][0]
                if quoted and c == "\\":
                    close += 1
                elif c == '"':
                    quoted = not quoted
                elif c == "}" and not quoted:
                    break
                close += 1
            if close >= len(chars):
                self.fail("unterminated placeholder in template", "'}'", tok=tok)
            if buf:
                parts.append("".join(buf))
                buf = []
            parts.append(self.placeholder(chars[k + 1:close], tok))
            k = close + 1
        if buf:
            parts.append("".join(buf))
        return tuple(parts)

    def placeholder(self, chars: list, tok: Token):
        source = "".join(c for c, _, _ in chars)
        # raw source offset of every decoded character, plus one past the end
        offsets = [tok.start + 1 + raw for _, raw, _ in chars]
        offsets.append(offsets[-1] + 1 if offsets else tok.start + 1)
        sub = Parser.__new__(Parser)
        sub.text = source
        sub.errors = []
        sub.toks = []
        for x in _Lexer(source).tokens(sub.errors):
            start = offsets[x.start]
            end = offsets[x.end - 1] + 1 if x.end > x.start else start
            sub.toks.append(Token(x.kind, x.value, start, end, tok.line, tok.column + start - tok.start))
        sub.i = 0
        try:
            node = sub.expr()
            if sub.tok.kind != "EOF":
                sub.fail("unexpected text in placeholder")
        except _Fail:
            pass
        if sub.errors:
            for e in sub.errors:
                self.errors.append(SyntaxIssue(tok.line, tok.column, f"in template placeholder: {e.message}", e.expected))
            raise _Fail
        return node


def parse_manifest(text: Union[str, bytes]) -> Manifest:
    """Parse manifest source into an AST, raising ManifestSyntaxError on any syntax error."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestSyntaxError([SyntaxIssue(1, 1, f"input is not UTF-8: {exc.reason}")]) from None
    return Parser(text).parse()
