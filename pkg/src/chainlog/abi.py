"""Contract ABI encoding: event topics, log decoding and call encoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

from Crypto.Hash import keccak

from .model import (
    Address,
    Hashed,
    LogEntry,
    ValueType,
    Value,
    check_value,
)

WORD = 32


class AbiError(ValueError):
    pass


class TopicMismatch(AbiError):
    pass


class DataUnderflow(AbiError):
    pass


class OffsetOutOfBounds(AbiError):
    pass


class ArityMismatch(AbiError):
    pass


class TypeMismatch(AbiError):
    pass


class NonCanonicalEncoding(AbiError):
    pass


def keccak256(data: bytes) -> bytes:
    h = keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def supported_abi_type(t: ValueType) -> bool:
    if t.kind == "list":
        return t.elem is not None and t.elem.kind != "list" and supported_abi_type(t.elem)
    return t.kind in ("uint", "int", "address", "bool", "string", "bytes", "fixedbytes")


@dataclass(frozen=True)
class EventParam:
    type: ValueType
    indexed: bool
    name: str


@dataclass(frozen=True)
class EventSpec:
    name: str
    params: tuple[EventParam, ...]

    @property
    def signature(self) -> str:
        return f"{self.name}({','.join(str(p.type) for p in self.params)})"

    @property
    def topic0(self) -> bytes:
        return event_topic0(self)

    @property
    def indexed(self) -> tuple[EventParam, ...]:
        return tuple(p for p in self.params if p.indexed)


@dataclass(frozen=True)
class FunctionSpec:
    name: str
    inputs: tuple[ValueType, ...]
    outputs: tuple[ValueType, ...] = ()

    @property
    def signature(self) -> str:
        return f"{self.name}({','.join(str(t) for t in self.inputs)})"

    @property
    def selector(self) -> bytes:
        return keccak256(self.signature.encode("ascii"))[:4]


def event_topic0(spec: Union[EventSpec, str]) -> bytes:
    """keccak256 of a canonical signature string or of an EventSpec's signature."""
    signature = spec if isinstance(spec, str) else spec.signature
    return keccak256(signature.encode("ascii"))


# -- encoding ---------------------------------------------------------------


def _pad_right(data: bytes) -> bytes:
    return data + b"\x00" * (-len(data) % WORD)


def _encode_static(t: ValueType, v: Value) -> bytes:
    k = t.kind
    if k == "uint":
        return v.to_bytes(WORD, "big")
    if k == "int":
        return v.to_bytes(WORD, "big", signed=True)
    if k == "bool":
        return int(v).to_bytes(WORD, "big")
    if k == "address":
        return b"\x00" * 12 + Address(v).raw
    if k == "fixedbytes":
        return _pad_right(bytes(v))
    raise TypeMismatch(f"{t} is not a static type")


def _encode_one(t: ValueType, v: Value) -> bytes:
    if not check_value(t, v):
        raise TypeMismatch(f"value {v!r} does not inhabit {t}")
    if t.kind == "bytes":
        return len(v).to_bytes(WORD, "big") + _pad_right(bytes(v))
    if t.kind == "string":
        raw = v.encode("utf-8")
        return len(raw).to_bytes(WORD, "big") + _pad_right(raw)
    if t.kind == "list":
        return len(v).to_bytes(WORD, "big") + abi_encode([t.elem] * len(v), list(v))
    return _encode_static(t, v)


def abi_encode(types: Sequence[ValueType], values: Sequence[Value]) -> bytes:
    """Standard head/tail encoding of a value tuple."""
    if len(types) != len(values):
        raise ArityMismatch(f"expected {len(types)} values, got {len(values)}")
    head_size = WORD * len(types)
    heads, tails = [], []
    tail_len = 0
    for t, v in zip(types, values):
        enc = _encode_one(t, v)
        if t.is_dynamic:
            heads.append((head_size + tail_len).to_bytes(WORD, "big"))
            tails.append(enc)
            tail_len += len(enc)
        else:
            heads.append(enc)
    return b"".join(heads) + b"".join(tails)


def encode_call(spec: FunctionSpec, args: Sequence[Value]) -> bytes:
    if len(args) != len(spec.inputs):
        raise ArityMismatch(f"{spec.signature} takes {len(spec.inputs)} arguments, got {len(args)}")
    return spec.selector + abi_encode(spec.inputs, args)


# -- decoding ---------------------------------------------------------------


def _word(data: bytes, pos: int) -> bytes:
    if pos < 0 or pos + WORD > len(data):
        raise DataUnderflow(f"need 32 bytes at offset {pos}, data has {len(data)}")
    return data[pos:pos + WORD]


def _decode_static(t: ValueType, word: bytes) -> Value:
    k = t.kind
    if k == "uint":
        v = int.from_bytes(word, "big")
        if v >> t.bits:
            raise NonCanonicalEncoding(f"value does not fit {t}")
        return v
    if k == "int":
        v = int.from_bytes(word, "big", signed=True)
        half = 1 << (t.bits - 1)
        if not -half <= v < half:
            raise NonCanonicalEncoding(f"value does not fit {t}")
        return v
    if k == "bool":
        v = int.from_bytes(word, "big")
        if v > 1:
            raise NonCanonicalEncoding("bool word must be 0 or 1")
        return v == 1
    if k == "address":
        if any(word[:12]):
            raise NonCanonicalEncoding("address word has non-zero padding")
        return Address(word[12:])
    if k == "fixedbytes":
        if any(word[t.bits:]):
            raise NonCanonicalEncoding(f"{t} word has non-zero padding")
        return bytes(word[:t.bits])
    raise TypeMismatch(f"{t} is not a static type")


def _decode_length(data: bytes, pos: int) -> int:
    n = int.from_bytes(_word(data, pos), "big")
    if n > len(data):
        raise OffsetOutOfBounds(f"length {n} exceeds data size {len(data)}")
    return n


def _decode_dynamic(t: ValueType, data: bytes, start: int) -> Value:
    n = _decode_length(data, start)
    body = start + WORD
    if t.kind in ("bytes", "string"):
        if body + n > len(data):
            raise DataUnderflow(f"{t} of length {n} runs past end of data")
        raw = data[body:body + n]
        if t.kind == "bytes":
            return bytes(raw)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NonCanonicalEncoding("string is not valid UTF-8") from exc
    return tuple(_decode_tuple([t.elem] * n, data[body:]))


def _decode_tuple(types: Sequence[ValueType], data: bytes) -> list[Value]:
    out = []
    for i, t in enumerate(types):
        word = _word(data, i * WORD)
        if t.is_dynamic:
            offset = int.from_bytes(word, "big")
            if offset >= len(data):
                raise OffsetOutOfBounds(f"offset {offset} past end of data ({len(data)} bytes)")
            out.append(_decode_dynamic(t, data, offset))
        else:
            out.append(_decode_static(t, word))
    return out


def decode_return(data: bytes, types: Sequence[ValueType]) -> list[Value]:
    return _decode_tuple(list(types), bytes(data))


def decode_log(entry: LogEntry, spec: EventSpec) -> dict[str, Value]:
    """Decode indexed parameters from topics and the rest from the data payload.

    Indexed dynamic parameters come back as ``Hashed`` digests since only
    their hash is stored in the topic.
    """
    indexed = spec.indexed
    if not entry.topics or entry.topics[0] != spec.topic0:
        raise TopicMismatch(f"topic0 does not match {spec.signature}")
    if len(entry.topics) != 1 + len(indexed):
        raise TopicMismatch(
            f"{spec.signature} expects {1 + len(indexed)} topics, entry has {len(entry.topics)}"
        )
    result: dict[str, Value] = {}
    topics = iter(entry.topics[1:])
    plain = [p for p in spec.params if not p.indexed]
    decoded = iter(_decode_tuple([p.type for p in plain], entry.data))
    for p in spec.params:
        if p.indexed:
            topic = next(topics)
            result[p.name] = Hashed(topic) if p.type.is_dynamic else _decode_static(p.type, topic)
        else:
            result[p.name] = next(decoded)
    return result
