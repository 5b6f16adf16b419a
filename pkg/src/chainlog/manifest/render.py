"""Canonical text rendering of manifest ASTs."""
from __future__ import annotations

import json
import re

from .nodes import (
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
    StateFilter,
    StringLit,
    TxFilter,
    VarDecl,
)

INDENT = "    "
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _string(s: str, braces: bool = False) -> str:
    body = json.dumps(s, ensure_ascii=False)[1:-1]
    if braces:
        body = body.replace("{", "\\{").replace("}", "\\}")
    return f'"{body}"'


def render_expr(e) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, BytesLit):
        return "0x" + e.value.hex()
    if isinstance(e, AddressLit):
        return str(e.value)
    if isinstance(e, StringLit):
        return _string(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, ListLit):
        return "[" + ", ".join(render_expr(i) for i in e.items) + "]"
    if isinstance(e, Name):
        return e.name
    if isinstance(e, Attr):
        return f"{e.entity}.{e.attr}"
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(render_expr(a) for a in e.args) + ")"
    if isinstance(e, BinOp):
        return f"{_operand(e.left)} {e.op} {_operand(e.right)}"
    if isinstance(e, Not):
        return "!" + _operand(e.operand)
    raise TypeError(f"not an expression node: {e!r}")


def _operand(e) -> str:
    text = render_expr(e)
    return f"({text})" if isinstance(e, (BinOp, Not)) else text


def _addr_list(items) -> str:
    if items is None:
        return "(ANY)"
    return "(" + ", ".join(render_expr(i) for i in items) + ")"


def _key(k: str) -> str:
    return k if _IDENT_RE.match(k) else _string(k)


def _template(parts) -> str:
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(_string(p, braces=True)[1:-1])
        else:
            out.append("{" + render_expr(p).replace("\\", "\\\\").replace('"', '\\"') + "}")
    return '"' + "".join(out) + '"'


def _lines(node, depth: int) -> list[str]:
    pad = INDENT * depth
    if isinstance(node, VarDecl):
        return [f"{pad}{node.type} {node.name} = {render_expr(node.value)};"]
    if isinstance(node, Assign):
        return [f"{pad}{node.name} = {render_expr(node.value)};"]
    if isinstance(node, OutputDecl):
        return [f"{pad}OUTPUT {node.name} {node.format};"]
    if isinstance(node, EmitLogLine):
        return [f"{pad}EMIT LOG LINE ({node.output}, {_template(node.parts)});"]
    if isinstance(node, EmitCsvRow):
        cols = ", ".join(f"{c.name} = {render_expr(c.value)}" for c in node.columns)
        return [f"{pad}EMIT CSV ROW ({node.output}, {cols});"]
    if isinstance(node, EmitXes):
        args = [node.output, render_expr(node.trace_id)]
        for a in node.attrs:
            typed = f"{a.xes_type} " if a.xes_type else ""
            args.append(f"{typed}{_key(a.key)} = {render_expr(a.value)}")
        return [f"{pad}EMIT XES {node.level} ({', '.join(args)});"]
    if isinstance(node, DictDecl):
        lines = [f"{pad}DICTIONARY {node.name} ({node.source_type} -> {node.code_type}) {{"]
        for entry in node.entries:
            lines.append(f"{pad}{INDENT}{render_expr(entry.source)} : {render_expr(entry.code)},")
        if node.default is not None:
            tail = f" -> {render_expr(node.unknown)}" if node.unknown is not None else ""
            lines.append(f"{pad}{INDENT}default : {render_expr(node.default)}{tail}")
        lines.append(pad + "}")
        return lines
    if isinstance(node, BitmapDecl):
        lines = [f"{pad}BITMAPPING {node.name} {{"]
        for f in node.fields:
            via = f" via {f.via}" if f.via else ""
            lines.append(f"{pad}{INDENT}{f.name} : bits({f.start}, {f.length}){via};")
        lines.append(pad + "}")
        return lines
    if isinstance(node, BlockFilter):
        head = f"BLOCKS ({node.start}) ({node.end})"
    elif isinstance(node, TxFilter):
        head = f"TRANSACTIONS {_addr_list(node.senders)} {_addr_list(node.recipients)}"
    elif isinstance(node, LogFilter):
        params = ", ".join(
            f"{p.type}{' indexed' if p.indexed else ''} {p.name}" for p in node.event.params
        )
        head = f"LOG ENTRIES {_addr_list(node.contracts)} ({node.event.name}({params}))"
    elif isinstance(node, StateFilter):
        members = []
        for m in node.members:
            args = "" if m.args is None else "(" + ", ".join(render_expr(a) for a in m.args) + ")"
            members.append(f"{m.type} {m.name}{args}")
        head = f"SMART CONTRACT ({render_expr(node.contract)}) ({', '.join(members)})"
    elif isinstance(node, GenericFilter):
        head = f"IF ({render_expr(node.predicate)})"
    else:
        raise TypeError(f"cannot render {node!r}")
    if not node.body:
        return [f"{pad}{head} {{ }}"]
    lines = [f"{pad}{head} {{"]
    for child in node.body:
        lines.extend(_lines(child, depth + 1))
    lines.append(pad + "}")
    return lines


def render_manifest(m: Manifest) -> str:
    lines: list[str] = []
    for item in m.items:
        lines.extend(_lines(item, 0))
    return "\n".join(lines) + "\n" if lines else ""
