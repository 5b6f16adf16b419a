import pytest
from eth_abi import decode as ref_decode
from eth_abi import encode as ref_encode
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlog.abi import (
    DataUnderflow,
    EventParam,
    EventSpec,
    FunctionSpec,
    NonCanonicalEncoding,
    OffsetOutOfBounds,
    TopicMismatch,
    TypeMismatch,
    abi_encode,
    decode_log,
    decode_return,
    encode_call,
    event_topic0,
    keccak256,
)
from chainlog.model import (
    ADDRESS,
    BOOL,
    BYTES,
    STRING,
    UINT256,
    Address,
    Hashed,
    LogEntry,
    fixed_bytes,
    list_of,
    parse_type_name,
    sint,
    uint,
)

from keccak_oracle import keccak256 as oracle_keccak

TRANSFER_TOPIC = bytes.fromhex("ddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef")


def test_transfer_topic0_matches_oracle():
    assert oracle_keccak(b"Transfer(address,address,uint256)") == TRANSFER_TOPIC
    assert event_topic0("Transfer(address,address,uint256)") == TRANSFER_TOPIC


def test_event_spec_signature():
    spec = EventSpec("Transfer", (
        EventParam(ADDRESS, True, "from"), EventParam(ADDRESS, True, "to"), EventParam(UINT256, False, "value"),
    ))
    assert spec.signature == "Transfer(address,address,uint256)"
    assert spec.topic0 == event_topic0(spec) == TRANSFER_TOPIC
    assert [p.name for p in spec.indexed] == ["from", "to"]


def test_function_selector_matches_oracle():
    spec = FunctionSpec("balanceOf", (ADDRESS,), (UINT256,))
    assert spec.selector == oracle_keccak(b"balanceOf(address)")[:4] == bytes.fromhex("70a08231")


@given(st.binary(max_size=300))
def test_keccak_matches_oracle(data):
    assert keccak256(data) == oracle_keccak(data)


# -- randomized inversion against eth_abi ----------------------------------------------

int_bits = st.sampled_from(list(range(8, 257, 8)))


def values_of(t):
    if t.kind == "uint":
        return st.integers(0, 2**t.bits - 1)
    if t.kind == "int":
        return st.integers(-(2 ** (t.bits - 1)), 2 ** (t.bits - 1) - 1)
    if t.kind == "address":
        return st.binary(min_size=20, max_size=20).map(Address)
    if t.kind == "bool":
        return st.booleans()
    if t.kind == "fixedbytes":
        return st.binary(min_size=t.bits, max_size=t.bits)
    if t.kind == "bytes":
        return st.binary(max_size=100)
    if t.kind == "string":
        return st.text(max_size=40)
    return st.lists(values_of(t.elem), max_size=5).map(tuple)


static_types = st.one_of(
    int_bits.map(uint),
    int_bits.map(sint),
    st.just(ADDRESS),
    st.just(BOOL),
    st.integers(1, 32).map(fixed_bytes),
)
abi_types = st.one_of(static_types, st.just(BYTES), st.just(STRING), static_types.map(list_of))


@st.composite
def type_and_value(draw):
    t = draw(abi_types)
    return t, draw(values_of(t))


def to_ref(v):
    if isinstance(v, Address):
        return str(v)
    if isinstance(v, tuple):
        return [to_ref(x) for x in v]
    return v


def from_ref(t, v):
    if t.kind == "address":
        return Address(v)
    if t.kind == "list":
        return tuple(from_ref(t.elem, x) for x in v)
    return v


@settings(max_examples=100, deadline=None)
@given(st.lists(type_and_value(), min_size=1, max_size=4))
def test_encode_decode_inversion(pairs):
    types = [t for t, _ in pairs]
    values = [v for _, v in pairs]
    names = [str(t) for t in types]
    encoded = abi_encode(types, values)
    assert encoded == ref_encode(names, [to_ref(v) for v in values])
    assert decode_return(encoded, types) == values
    ref_values = ref_decode(names, encoded)
    assert [from_ref(t, v) for t, v in zip(types, ref_values)] == values


def test_encode_rejects_wrong_value():
    with pytest.raises(TypeMismatch):
        abi_encode([uint(8)], [256])


# -- log decoding ------------------------------------------------------------------------

APPROVAL = EventSpec("Noted", (
    EventParam(ADDRESS, True, "who"),
    EventParam(STRING, True, "tag"),
    EventParam(UINT256, False, "amount"),
    EventParam(STRING, False, "memo"),
))


def make_entry(spec, topics=None, data=b""):
    return LogEntry(Address(b"\x01" * 20), tuple(topics if topics is not None else [spec.topic0]), data, 0,
                    b"\x00" * 32, 0, 0)


def test_decode_log_with_indexed_and_dynamic():
    who = Address(b"\x42" * 20)
    topics = [APPROVAL.topic0, ref_encode(["address"], [str(who)]), oracle_keccak(b"tagged")]
    data = ref_encode(["uint256", "string"], [7, "hello"])
    result = decode_log(make_entry(APPROVAL, topics, data), APPROVAL)
    assert result == {"who": who, "tag": oracle_keccak(b"tagged"), "amount": 7, "memo": "hello"}
    assert isinstance(result["tag"], Hashed)


def test_decode_log_topic_mismatch():
    with pytest.raises(TopicMismatch):
        decode_log(make_entry(APPROVAL, [TRANSFER_TOPIC]), APPROVAL)
    with pytest.raises(TopicMismatch):
        decode_log(make_entry(APPROVAL, [APPROVAL.topic0]), APPROVAL)


def test_decode_underflow_and_offsets():
    with pytest.raises(DataUnderflow):
        decode_return(b"\x00" * 31, [UINT256])
    bad_offset = (1000).to_bytes(32, "big")
    with pytest.raises(OffsetOutOfBounds):
        decode_return(bad_offset, [STRING])
    huge_length = (32).to_bytes(32, "big") + (10**6).to_bytes(32, "big")
    with pytest.raises((DataUnderflow, OffsetOutOfBounds)):
        decode_return(huge_length, [BYTES])


@pytest.mark.parametrize("t, word", [
    (BOOL, (2).to_bytes(32, "big")),
    (ADDRESS, b"\x01" + b"\x00" * 31),
    (uint(8), (256).to_bytes(32, "big")),
    (sint(8), (128).to_bytes(32, "big")),
    (fixed_bytes(2), b"ab" + b"\x01" + b"\x00" * 29),
])
def test_non_canonical_words_rejected(t, word):
    with pytest.raises(NonCanonicalEncoding):
        decode_return(word, [t])


def test_encode_call():
    spec = FunctionSpec("getAddress", (STRING,), (ADDRESS,))
    assert encode_call(spec, ["Market"]) == oracle_keccak(b"getAddress(string)")[:4] + ref_encode(["string"], ["Market"])


def test_type_names_round_trip_through_reference():
    for name in ["uint8", "int256", "bytes4", "address[]", "bool[]"]:
        assert str(parse_type_name(name)) == name
