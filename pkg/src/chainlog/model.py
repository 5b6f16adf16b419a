"""Chain entities, the value type universe and JSON-RPC hex conventions."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Optional, Union

UINT256_MAX = 2**256 - 1

_QUANTITY_RE = re.compile(r"0x(0|[1-9a-fA-F][0-9a-fA-F]*)\Z")
_ADDRESS_RE = re.compile(r"0x[0-9a-fA-F]{40}\Z")
_DATA_RE = re.compile(r"0x([0-9a-fA-F]{2})*\Z")


class MalformedQuantity(ValueError):
    pass


class MalformedAddress(ValueError):
    pass


class MalformedData(ValueError):
    pass


def parse_quantity(text: str) -> int:
    if not isinstance(text, str) or not _QUANTITY_RE.match(text):
        raise MalformedQuantity(f"not a JSON-RPC quantity: {text!r}")
    return int(text, 16)


def render_quantity(n: int) -> str:
    if n < 0:
        raise ValueError("quantities are unsigned")
    return hex(n)


def parse_data(text: str) -> bytes:
    if not isinstance(text, str) or not _DATA_RE.match(text):
        raise MalformedData(f"not unformatted hex data: {text!r}")
    return bytes.fromhex(text[2:])


def render_data(data: bytes) -> str:
    return "0x" + bytes(data).hex()


class Address(str):
    """A 20-byte account address held in canonical lowercase ``0x`` form.

    Subclasses ``str`` so addresses compare, hash and render like their
    canonical text; construction rejects anything that is not 40 hex digits.
    """

    __slots__ = ()

    def __new__(cls, value: Union[str, bytes, "Address"]) -> "Address":
        if isinstance(value, Address):
            return value
        if isinstance(value, (bytes, bytearray)):
            if len(value) != 20:
                raise MalformedAddress(f"address must be 20 bytes, got {len(value)}")
            return super().__new__(cls, "0x" + bytes(value).hex())
        if not isinstance(value, str) or not _ADDRESS_RE.match(value):
            raise MalformedAddress(f"not a 20-byte hex address: {value!r}")
        return super().__new__(cls, value.lower())

    @property
    def raw(self) -> bytes:
        return bytes.fromhex(self[2:])

    def __repr__(self) -> str:
        return f"Address({str.__str__(self)!r})"


def normalize_address(s: str) -> Address:
    return Address(s)


ZERO_ADDRESS = Address("0x" + "00" * 20)


class Hashed(bytes):
    """keccak-256 digest standing in for an indexed dynamic event parameter."""

    __slots__ = ()

    def __repr__(self) -> str:
        return f"Hashed(0x{self.hex()})"


# Runtime values are plain Python objects: int, bool, str, bytes, Address,
# Hashed, tuple (lists) or None (absent, e.g. the recipient of a creation).
Value = Any


_TYPE_RE = re.compile(r"(uint|int|bytes)(\d*)\Z")


@dataclass(frozen=True)
class ValueType:
    """Static type of a manifest value.

    ``kind`` is one of uint, int, address, bool, string, bytes, fixedbytes,
    list.  ``bits`` is the width for integers and the byte length for
    fixedbytes.  ``dictionary`` and ``bitmapping`` are pseudo-kinds naming a
    compression spec (``ref``); a dictionary's ``elem`` is its source type.
    """

    kind: str
    bits: int = 0
    elem: Optional["ValueType"] = None
    ref: str = ""

    def __str__(self) -> str:
        if self.kind in ("uint", "int"):
            return f"{self.kind}{self.bits}"
        if self.kind == "fixedbytes":
            return f"bytes{self.bits}"
        if self.kind == "list":
            return f"{self.elem}[]" if self.elem is not None else "[]"
        if self.kind in ("dictionary", "bitmapping"):
            return f"{self.kind} {self.ref}"
        return self.kind

    @property
    def is_integer(self) -> bool:
        return self.kind in ("uint", "int")

    @property
    def is_dynamic(self) -> bool:
        return self.kind in ("string", "bytes", "list")


def uint(bits: int = 256) -> ValueType:
    return ValueType("uint", bits)


def sint(bits: int = 256) -> ValueType:
    return ValueType("int", bits)


def fixed_bytes(size: int) -> ValueType:
    return ValueType("fixedbytes", size)


def list_of(elem: Optional[ValueType]) -> ValueType:
    return ValueType("list", elem=elem)


UINT256 = uint(256)
INT256 = sint(256)
ADDRESS = ValueType("address")
BOOL = ValueType("bool")
STRING = ValueType("string")
BYTES = ValueType("bytes")
BYTES32 = fixed_bytes(32)


def parse_type_name(name: str) -> Optional[ValueType]:
    """Map a type name such as ``uint8``, ``bytes32`` or ``address[]`` to a ValueType.

    Returns None for unknown names.  ``uint``/``int`` alias the 256-bit forms.
    """
    if name.endswith("[]"):
        inner = parse_type_name(name[:-2])
        return list_of(inner) if inner is not None else None
    if name in ("address", "bool", "string"):
        return ValueType(name)
    m = _TYPE_RE.match(name)
    if not m:
        return None
    base, digits = m.groups()
    if base == "bytes":
        if not digits:
            return BYTES
        size = int(digits)
        return fixed_bytes(size) if 1 <= size <= 32 and digits[0] != "0" else None
    if not digits:
        return ValueType(base, 256)
    bits = int(digits)
    if digits[0] == "0" or bits % 8 or not 8 <= bits <= 256:
        return None
    return ValueType(base, bits)


def check_value(vtype: ValueType, value: Value) -> bool:
    """True when ``value`` is a legal runtime inhabitant of ``vtype``."""
    k = vtype.kind
    if k == "uint":
        return type(value) is int and 0 <= value < 2**vtype.bits
    if k == "int":
        half = 2 ** (vtype.bits - 1)
        return type(value) is int and -half <= value < half
    if k == "address":
        return isinstance(value, Address)
    if k == "bool":
        return type(value) is bool
    if k == "string":
        return isinstance(value, str) and not isinstance(value, Address)
    if k == "bytes":
        return isinstance(value, bytes)
    if k == "fixedbytes":
        return isinstance(value, bytes) and len(value) == vtype.bits
    if k == "list":
        return isinstance(value, tuple) and (
            vtype.elem is None or all(check_value(vtype.elem, v) for v in value)
        )
    return False


# -- chain entities ---------------------------------------------------------


@dataclass(frozen=True)
class LogEntry:
    address: Address
    topics: tuple[bytes, ...]
    data: bytes
    log_index: int
    transaction_hash: bytes
    transaction_index: int
    block_number: int

    @classmethod
    def from_rpc(cls, obj: dict) -> "LogEntry":
        topics = tuple(parse_data(t) for t in obj.get("topics", []))
        if len(topics) > 4 or any(len(t) != 32 for t in topics):
            raise MalformedData("log topics must be at most four 32-byte words")
        return cls(
            address=Address(obj["address"]),
            topics=topics,
            data=parse_data(obj.get("data", "0x")),
            log_index=parse_quantity(obj["logIndex"]),
            transaction_hash=parse_data(obj["transactionHash"]),
            transaction_index=parse_quantity(obj["transactionIndex"]),
            block_number=parse_quantity(obj["blockNumber"]),
        )


@dataclass(frozen=True)
class Transaction:
    hash: bytes
    block_number: int
    index: int
    sender: Address
    to: Optional[Address]
    value: int
    gas_price: int
    gas_used: Optional[int] = None
    status: Optional[bool] = None
    logs: tuple[LogEntry, ...] = ()

    @classmethod
    def from_rpc(cls, obj: dict, receipt: Optional[dict] = None) -> "Transaction":
        logs: tuple[LogEntry, ...] = ()
        gas_used = status = None
        if receipt is not None:
            logs = tuple(
                sorted((LogEntry.from_rpc(x) for x in receipt.get("logs", [])),
                       key=lambda e: e.log_index)
            )
            gas_used = parse_quantity(receipt["gasUsed"])
            status = parse_quantity(receipt.get("status", "0x1")) == 1
        to = obj.get("to")
        return cls(
            hash=parse_data(obj["hash"]),
            block_number=parse_quantity(obj["blockNumber"]),
            index=parse_quantity(obj["transactionIndex"]),
            sender=Address(obj["from"]),
            to=Address(to) if to else None,
            value=parse_quantity(obj["value"]),
            gas_price=parse_quantity(obj["gasPrice"]),
            gas_used=gas_used,
            status=status,
            logs=logs,
        )


@dataclass(frozen=True)
class Block:
    number: int
    hash: bytes
    parent_hash: bytes
    timestamp: int
    miner: Address
    difficulty: int
    gas_used: int
    gas_limit: int
    transactions: tuple[Transaction, ...] = ()
    # False when receipts were only fetched for a subset of transactions.
    receipts_complete: bool = True

    @property
    def logs(self) -> tuple[LogEntry, ...]:
        return tuple(entry for tx in self.transactions for entry in tx.logs)

    @classmethod
    def from_rpc(cls, obj: dict, receipts: Optional[dict] = None,
                 receipts_complete: bool = True) -> "Block":
        receipts = receipts or {}
        txs = []
        for t in obj.get("transactions", []):
            if isinstance(t, str):
                raise MalformedData("block must be fetched with full transactions")
            txs.append(Transaction.from_rpc(t, receipts.get(t["hash"].lower())))
        txs.sort(key=lambda t: t.index)
        return cls(
            number=parse_quantity(obj["number"]),
            hash=parse_data(obj["hash"]),
            parent_hash=parse_data(obj["parentHash"]),
            timestamp=parse_quantity(obj["timestamp"]),
            miner=Address(obj["miner"]),
            difficulty=parse_quantity(obj.get("difficulty", "0x0")),
            gas_used=parse_quantity(obj["gasUsed"]),
            gas_limit=parse_quantity(obj["gasLimit"]),
            transactions=tuple(txs),
            receipts_complete=receipts_complete,
        )


@dataclass(frozen=True)
class Attribute:
    name: str
    type: ValueType
    getter: Any = field(compare=False)


def _attrs(*items: tuple[str, ValueType, Any]) -> dict[str, Attribute]:
    return {name: Attribute(name, t, g) for name, t, g in items}


# Attribute table exposed to manifests as ``block.*``, ``tx.*`` and ``log.*``.
ENTITY_ATTRIBUTES: dict[str, dict[str, Attribute]] = {
    "block": _attrs(
        ("number", UINT256, lambda b: b.number),
        ("hash", BYTES32, lambda b: b.hash),
        ("parentHash", BYTES32, lambda b: b.parent_hash),
        ("timestamp", UINT256, lambda b: b.timestamp),
        ("miner", ADDRESS, lambda b: b.miner),
        ("difficulty", UINT256, lambda b: b.difficulty),
        ("gasUsed", UINT256, lambda b: b.gas_used),
        ("gasLimit", UINT256, lambda b: b.gas_limit),
        ("transactionCount", UINT256, lambda b: len(b.transactions)),
    ),
    "tx": _attrs(
        ("hash", BYTES32, lambda t: t.hash),
        ("blockNumber", UINT256, lambda t: t.block_number),
        ("index", UINT256, lambda t: t.index),
        ("from", ADDRESS, lambda t: t.sender),
        ("to", ADDRESS, lambda t: t.to),
        ("value", UINT256, lambda t: t.value),
        ("gasPrice", UINT256, lambda t: t.gas_price),
        ("gasUsed", UINT256, lambda t: t.gas_used),
        ("status", BOOL, lambda t: t.status),
    ),
    "log": _attrs(
        ("address", ADDRESS, lambda e: e.address),
        ("topics", list_of(BYTES32), lambda e: e.topics),
        ("data", BYTES, lambda e: e.data),
        ("logIndex", UINT256, lambda e: e.log_index),
        ("transactionHash", BYTES32, lambda e: e.transaction_hash),
        ("transactionIndex", UINT256, lambda e: e.transaction_index),
        ("blockNumber", UINT256, lambda e: e.block_number),
    ),
}


def render_value(value: Value) -> str:
    """Canonical text form used by every exporter."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, bytes):
        return render_data(value)
    if isinstance(value, tuple):
        return "[" + ",".join(render_value(v) for v in value) + "]"
    return str(value)
