"""Value dictionaries and bit mappings: reference codec and Solidity fragments.

The same spec objects serve the extractor, which inverts compressed values
found on chain, and the fragment generator, which emits the matching
contract-side encoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

from .abi import keccak256
from .model import Address, ValueType, Value, check_value

WORD_BITS = 256


class CompressionError(ValueError):
    pass


class UnknownCode(CompressionError):
    pass


class UnknownValue(CompressionError):
    pass


class FieldOutOfRange(CompressionError):
    pass


class MissingField(CompressionError):
    pass


@dataclass(frozen=True)
class ValueDictionary:
    name: str
    source_type: ValueType
    code_type: ValueType
    entries: tuple[tuple[Value, int], ...]
    default: Optional[int] = None
    unknown: Value = None  # what the default code decodes to

    def problems(self) -> list[str]:
        out = []
        sources = [s for s, _ in self.entries]
        codes = [c for _, c in self.entries]
        if len(set(sources)) != len(sources):
            out.append(f"dictionary {self.name} has duplicate source values")
        if len(set(codes)) != len(codes):
            out.append(f"dictionary {self.name} has duplicate codes")
        for code in codes + ([self.default] if self.default is not None else []):
            if not check_value(self.code_type, code):
                out.append(f"code {code} does not fit {self.code_type}")
        if self.default is not None and self.default in codes:
            out.append(f"default code {self.default} collides with an entry code")
        return out

    @property
    def max_code(self) -> int:
        return max([c for _, c in self.entries] + ([self.default] if self.default is not None else []))

    def encode(self, source: Value) -> int:
        for s, code in self.entries:
            if s == source:
                return code
        if self.default is not None:
            return self.default
        raise UnknownValue(f"{source!r} is not in dictionary {self.name}")

    def decode(self, code: int) -> Value:
        for s, c in self.entries:
            if c == code:
                return s
        if self.default is not None:
            return self.unknown
        raise UnknownCode(f"code {code} is not in dictionary {self.name}")

    def source_words(self) -> int:
        """ABI words needed to log the largest source value uncompressed."""
        if not self.source_type.is_dynamic:
            return 1
        longest = 0
        for s, _ in self.entries:
            raw = s.encode("utf-8") if isinstance(s, str) else bytes(s)
            longest = max(longest, len(raw))
        return 2 + math.ceil(longest / 32)  # offset word, length word, body


@dataclass(frozen=True)
class BitField:
    name: str
    start: int
    length: int
    dictionary: Optional[ValueDictionary] = None

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class BitMapping:
    name: str
    fields: tuple[BitField, ...]

    def problems(self) -> list[str]:
        out = []
        for f in self.fields:
            if f.length < 1:
                out.append(f"field {f.name} has zero width")
            if f.end > WORD_BITS:
                out.append(f"field {f.name} ends at bit {f.end}, beyond {WORD_BITS}")
            if f.dictionary is not None and f.dictionary.max_code >> f.length:
                out.append(
                    f"codes of dictionary {f.dictionary.name} do not fit the {f.length} bits of field {f.name}"
                )
        ordered = sorted(self.fields, key=lambda f: f.start)
        for a, b in zip(ordered, ordered[1:]):
            if b.start < a.end:
                out.append(f"fields {a.name} and {b.name} overlap at bit {b.start}")
        if sum(f.length for f in self.fields) > WORD_BITS:
            out.append(f"total width exceeds {WORD_BITS} bits")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            out.append(f"bit mapping {self.name} has duplicate field names")
        return out

    @property
    def width(self) -> int:
        return max(f.end for f in self.fields)

    def field(self, name: str) -> BitField:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def encode(self, values: Mapping[str, Value]) -> int:
        packed = 0
        for f in self.fields:
            if f.name not in values:
                raise MissingField(f"bit mapping {self.name} needs field {f.name}")
            v = values[f.name]
            if f.dictionary is not None:
                v = f.dictionary.encode(v)
            if type(v) is not int or not 0 <= v < (1 << f.length):
                raise FieldOutOfRange(f"{f.name}={v!r} does not fit {f.length} bits")
            packed |= v << f.start
        return packed

    def decode_field(self, encoded: int, name: str) -> Value:
        f = self.field(name)
        raw = (encoded >> f.start) & ((1 << f.length) - 1)
        return f.dictionary.decode(raw) if f.dictionary is not None else raw

    def decode(self, encoded: int) -> dict[str, Value]:
        return {f.name: self.decode_field(encoded, f.name) for f in self.fields}

    def payload_words(self) -> int:
        return math.ceil(self.width / WORD_BITS)

    def separate_words(self) -> int:
        return sum(f.dictionary.source_words() if f.dictionary else 1 for f in self.fields)


CompressionSpec = Union[ValueDictionary, BitMapping]


def encode(spec: CompressionSpec, values) -> int:
    """Dictionary: source value -> code.  Bit mapping: field map -> packed word."""
    return spec.encode(values)


def decode(spec: CompressionSpec, encoded: int):
    return spec.decode(encoded)


def encoded_words(spec: CompressionSpec) -> int:
    return 1 if isinstance(spec, ValueDictionary) else spec.payload_words()


def separate_words(spec: CompressionSpec) -> int:
    return spec.source_words() if isinstance(spec, ValueDictionary) else spec.separate_words()


# -- fragment generation -------------------------------------------------------------


def _camel(name: str) -> str:
    return name[:1].upper() + name[1:]


def _uint_for(bits: int) -> str:
    return f"uint{max(8, math.ceil(bits / 8) * 8)}"


def checksum_address(addr: Address) -> str:
    digest = keccak256(addr[2:].encode("ascii")).hex()
    return "0x" + "".join(
        c.upper() if c.isalpha() and int(digest[i], 16) >= 8 else c for i, c in enumerate(addr[2:])
    )


def _sol_param_type(t: ValueType) -> str:
    return f"{t} memory" if t.is_dynamic else str(t)


def _sol_literal(t: ValueType, v: Value) -> str:
    if t.kind == "string":
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if t.kind == "bool":
        return "true" if v else "false"
    if t.kind == "address":
        return checksum_address(v)
    if t.kind == "fixedbytes":
        return f"{t}(0x{bytes(v).hex()})"
    if t.kind == "bytes":
        return f'hex"{bytes(v).hex()}"'
    return str(v)


def _dictionary_encoder(spec: ValueDictionary) -> list[str]:
    fn = f"_encode{_camel(spec.name)}"
    src = spec.source_type
    lines = [f"function {fn}({_sol_param_type(src)} value) internal pure returns ({spec.code_type}) {{"]
    if src.kind in ("string", "bytes"):
        conv = "bytes(value)" if src.kind == "string" else "value"
        lines.append(f"    bytes32 h = keccak256({conv});")
        for s, code in spec.entries:
            lit = _sol_literal(src, s)
            wrapped = f"bytes({lit})" if src.kind == "string" else lit
            lines.append(f"    if (h == keccak256({wrapped})) return {code};")
    else:
        for s, code in spec.entries:
            lines.append(f"    if (value == {_sol_literal(src, s)}) return {code};")
    if spec.default is not None:
        lines.append(f"    return {spec.default};")
    else:
        lines.append(f'    revert("{spec.name}: value not in dictionary");')
    lines.append("}")
    return lines


def generate_fragment(spec: CompressionSpec, event_name: Optional[str] = None) -> str:
    """Solidity source: event declaration, internal encoder and emit helper."""
    camel = _camel(spec.name)
    event = event_name or f"{camel}Logged"
    if isinstance(spec, ValueDictionary):
        src = _sol_param_type(spec.source_type)
        lines = [
            f"// Logging fragment for value dictionary {spec.name} ({spec.source_type} -> {spec.code_type}).",
            f"event {event}({spec.code_type} code);",
            "",
            *_dictionary_encoder(spec),
            "",
            f"function _log{camel}({src} value) internal {{",
            f"    emit {event}(_encode{camel}(value));",
            "}",
        ]
        return "\n".join(lines) + "\n"

    packed_type = _uint_for(spec.width)
    layout = ", ".join(f"{f.name} bits [{f.start}, {f.end})" for f in spec.fields)
    params, checks, terms, names = [], [], [], []
    for f in spec.fields:
        names.append(f.name)
        if f.dictionary is not None:
            params.append(f"{_sol_param_type(f.dictionary.source_type)} {f.name}")
            checks.append(f"    uint256 {f.name}Code = _encode{_camel(f.dictionary.name)}({f.name});")
            ref = f"{f.name}Code"
        else:
            params.append(f"{_uint_for(f.length)} {f.name}")
            ref = f"uint256({f.name})"
        checks.append(f'    require({ref} < {1 << f.length}, "{spec.name}: {f.name} out of range");')
        terms.append(f"({ref} << {f.start})")
    lines = [
        f"// Logging fragment for bit mapping {spec.name}: {layout}.",
        f"event {event}({packed_type} packed);",
        "",
        f"function _encode{camel}({', '.join(params)}) internal pure returns ({packed_type}) {{",
        *checks,
        f"    return {packed_type}({' | '.join(terms)});",
        "}",
        "",
        f"function _log{camel}({', '.join(params)}) internal {{",
        f"    emit {event}(_encode{camel}({', '.join(names)}));",
        "}",
    ]
    seen = set()
    for f in spec.fields:
        d = f.dictionary
        if d is not None and d.name not in seen:
            seen.add(d.name)
            lines += ["", *_dictionary_encoder(d)]
    return "\n".join(lines) + "\n"
