import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainlog.model import (
    ADDRESS,
    BOOL,
    BYTES32,
    UINT256,
    ZERO_ADDRESS,
    Address,
    Block,
    Hashed,
    MalformedAddress,
    MalformedData,
    MalformedQuantity,
    fixed_bytes,
    check_value,
    list_of,
    normalize_address,
    parse_data,
    parse_quantity,
    parse_type_name,
    render_data,
    render_quantity,
    render_value,
    sint,
    uint,
)

from chainfactory import ChainBuilder, LogSpec, TxSpec

hex_digits = st.text(alphabet="0123456789abcdefABCDEF", min_size=40, max_size=40)


def positional_hex(digits: str) -> int:
    total = 0
    for ch in digits:
        total = total * 16 + "0123456789abcdef".index(ch.lower())
    return total


class TestQuantity:
    def test_zero(self):
        assert parse_quantity("0x0") == 0

    def test_positional_expansion(self):
        assert parse_quantity("0x4b7") == positional_hex("4b7") == 1207

    @pytest.mark.parametrize("bad", ["4b7", "0x", "0x04b7", "0xg1", "", "0X1f", " 0x1", None, 12])
    def test_rejects(self, bad):
        with pytest.raises(MalformedQuantity):
            parse_quantity(bad)

    @given(st.integers(min_value=0, max_value=2**256 - 1))
    def test_round_trip(self, n):
        assert parse_quantity(render_quantity(n)) == n

    def test_render_rejects_negative(self):
        with pytest.raises(ValueError):
            render_quantity(-1)


class TestAddress:
    def test_zero_address(self):
        assert normalize_address("0x" + "00" * 20) == ZERO_ADDRESS

    def test_mixed_case_folds(self):
        mixed = "0xABCDEFabcdef0123456789ABCDEFabcdef012345"
        a = normalize_address(mixed)
        assert a == mixed.lower()
        assert a.raw == bytes.fromhex(mixed[2:])

    @pytest.mark.parametrize("bad", ["0x1234", "ab" * 20, "0x" + "zz" * 20, "0x" + "00" * 21, b"\x00" * 19])
    def test_rejects(self, bad):
        with pytest.raises(MalformedAddress):
            normalize_address(bad)

    def test_from_bytes(self):
        assert Address(b"\x11" * 20) == "0x" + "11" * 20

    @given(hex_digits)
    def test_idempotent(self, digits):
        a = normalize_address("0x" + digits)
        assert normalize_address(a) == a
        assert normalize_address(a) is a

    @given(hex_digits)
    def test_equality_ignores_case(self, digits):
        assert normalize_address("0x" + digits.upper()) == normalize_address("0x" + digits.lower())
        assert hash(normalize_address("0x" + digits.upper())) == hash(normalize_address("0x" + digits))


class TestData:
    def test_round_trip(self):
        assert parse_data(render_data(b"\x00\xff")) == b"\x00\xff"
        assert parse_data("0x") == b""

    @pytest.mark.parametrize("bad", ["0x1", "ff", "0xgg"])
    def test_rejects(self, bad):
        with pytest.raises(MalformedData):
            parse_data(bad)


class TestTypes:
    @pytest.mark.parametrize("name, expected", [
        ("uint", "uint256"), ("int", "int256"), ("uint8", "uint8"), ("bytes32", "bytes32"),
        ("address[]", "address[]"), ("bytes", "bytes"), ("string", "string"), ("bool", "bool"),
    ])
    def test_parse_type_name(self, name, expected):
        assert str(parse_type_name(name)) == expected

    @pytest.mark.parametrize("name", ["uint7", "uint264", "bytes33", "bytes0", "uint08", "float", "int0"])
    def test_unknown(self, name):
        assert parse_type_name(name) is None

    def test_check_value(self):
        assert check_value(uint(8), 255) and not check_value(uint(8), 256)
        assert check_value(sint(8), -128) and not check_value(sint(8), 128)
        assert not check_value(UINT256, True)  # bool is not an integer here
        assert check_value(ADDRESS, ZERO_ADDRESS) and not check_value(ADDRESS, "0x00")
        assert check_value(BYTES32, b"\x00" * 32) and not check_value(fixed_bytes(4), b"abc")
        assert check_value(list_of(UINT256), (1, 2)) and not check_value(list_of(UINT256), [1, 2])
        assert check_value(BOOL, False)

    def test_render_value(self):
        assert render_value(None) == ""
        assert render_value(True) == "true"
        assert render_value(10**30) == "1" + "0" * 30
        assert render_value(b"\x01") == "0x01"
        assert render_value(Hashed(b"\x02" * 32)) == "0x" + "02" * 32
        assert render_value((1, Address(b"\x01" * 20))) == "[1,0x" + "01" * 20 + "]"


class TestEntities:
    def _block(self):
        b = ChainBuilder(1)
        token = b.address()
        txs = [
            TxSpec(b.address(), token, gas_used=50_000, logs=[
                LogSpec(token, "Ping(uint256)", data=[("uint256", 1)]),
                LogSpec(token, "Ping(uint256)", data=[("uint256", 2)]),
            ]),
            TxSpec(b.address(), None, gas_used=90_000, status=False),
        ]
        raw = b.add_block(txs)
        return raw, b.receipts

    def test_from_rpc(self):
        raw, receipts = self._block()
        raw = dict(raw, transactions=list(reversed(raw["transactions"])))
        block = Block.from_rpc(raw, receipts)
        assert [t.index for t in block.transactions] == [0, 1]
        assert block.transactions[1].to is None
        assert block.transactions[1].status is False
        assert [e.log_index for e in block.logs] == [0, 1]
        assert block.gas_used == 140_000 <= block.gas_limit

    def test_hash_only_transactions_rejected(self):
        raw, receipts = self._block()
        raw = dict(raw, transactions=[t["hash"] for t in raw["transactions"]])
        with pytest.raises(MalformedData):
            Block.from_rpc(raw, receipts)

    def test_without_receipts(self):
        raw, _ = self._block()
        block = Block.from_rpc(raw, {}, receipts_complete=False)
        assert block.transactions[0].gas_used is None
        assert block.logs == ()
        assert not block.receipts_complete
