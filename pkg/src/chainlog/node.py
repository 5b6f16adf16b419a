"""JSON-RPC access to an Ethereum node over HTTP or a recorded fixture chain."""
from __future__ import annotations

import copy
import itertools
import json
import logging
import time
from collections import OrderedDict
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Protocol, Union

import requests

from .model import Address, Block, parse_data, parse_quantity, render_data, render_quantity

log = logging.getLogger(__name__)

EXTRACTION_METHODS = frozenset(
    {"eth_blockNumber", "eth_getBlockByNumber", "eth_getTransactionReceipt", "eth_getLogs", "eth_call"}
)


class NodeError(Exception):
    pass


class TransportError(NodeError):
    """Connection-level failure; safe to retry."""


class RpcError(NodeError):
    """The node answered with a JSON-RPC error object."""

    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(f"rpc error {code}: {message}")
        self.code = code
        self.message = message
        self.data = data


class BlockNotFound(NodeError):
    pass


class CallReverted(NodeError):
    pass


class DecodeError(NodeError):
    pass


class Transport(Protocol):
    def send(self, method: str, params: list) -> Any: ...


class HttpTransport:
    """JSON-RPC 2.0 over HTTP(S)."""

    def __init__(self, url: str, timeout: float = 30.0, session: Optional[requests.Session] = None):
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()
        self._ids = itertools.count(1)

    def send(self, method: str, params: list) -> Any:
        request_id = next(self._ids)
        payload = {"jsonrpc": "2.0", "id": request_id, "method": method, "params": params}
        try:
            resp = self.session.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise TransportError(f"{method}: {exc}") from exc
        if not isinstance(body, dict):
            raise TransportError(f"{method}: response is not a JSON-RPC object")
        if body.get("id") != request_id:
            raise TransportError(f"{method}: response id {body.get('id')!r} != request id {request_id}")
        if "error" in body:
            err = body["error"] or {}
            raise RpcError(err.get("code", -32000), err.get("message", ""), err.get("data"))
        return body.get("result")


class FixtureChain:
    """A recorded chain served through the JSON-RPC method subset.

    The fixture document holds ``blocks`` (full-transaction block objects),
    ``receipts`` (tx hash -> receipt), ``calls`` (state-call results) and
    ``reorgs`` (replacement blocks).  ``head`` optionally limits how much of
    the chain is visible; ``advance`` reveals the next block.  A reorg at
    height h takes effect once the head moves past h (or immediately, if
    the head already is past h when the fixture is loaded).
    """

    def __init__(self, doc: dict):
        doc = copy.deepcopy(doc)
        self._blocks: dict[int, dict] = {}
        for b in doc.get("blocks", []):
            self._blocks[parse_quantity(b["number"])] = b
        self._receipts = {k.lower(): v for k, v in doc.get("receipts", {}).items()}
        self._calls: dict[tuple[int, str, str], str] = {}
        for c in doc.get("calls", []):
            key = (int(c["block"]), Address(c["to"]), c["data"].lower())
            self._calls[key] = c["result"]
        self._pending_reorgs = sorted(doc.get("reorgs", []), key=lambda r: r["atHeight"])
        self.last = max(self._blocks) if self._blocks else -1
        self.head = int(doc["head"]) if "head" in doc else self.last
        self._apply_reorgs()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FixtureChain":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    @property
    def at_end(self) -> bool:
        return self.head >= self.last and not self._pending_reorgs

    def advance(self, n: int = 1) -> bool:
        moved = False
        for _ in range(n):
            if self.head >= self.last:
                # reorgs scripted at the final height have no successor block
                if self._pending_reorgs:
                    self._apply_reorgs(force=True)
                    moved = True
                break
            self.head += 1
            moved = True
            self._apply_reorgs()
        return moved

    def append_block(self, block: dict, receipts: Optional[dict] = None) -> None:
        number = parse_quantity(block["number"])
        self._blocks[number] = copy.deepcopy(block)
        self._receipts.update({k.lower(): v for k, v in (receipts or {}).items()})
        self.last = max(self.last, number)

    def _apply_reorgs(self, force: bool = False) -> None:
        while self._pending_reorgs and (force or self._pending_reorgs[0]["atHeight"] < self.head):
            reorg = self._pending_reorgs.pop(0)
            height = int(reorg["atHeight"])
            log.debug("fixture reorg at height %d", height)
            self._blocks[height] = reorg["block"]
            self._receipts.update({k.lower(): v for k, v in reorg.get("receipts", {}).items()})

    # -- JSON-RPC surface ---------------------------------------------------

    def send(self, method: str, params: list) -> Any:
        handler = getattr(self, "_rpc_" + method, None)
        if handler is None:
            raise RpcError(-32601, f"method {method} not supported by fixture")
        return copy.deepcopy(handler(*params))

    def _visible(self, number: int) -> Optional[dict]:
        return self._blocks.get(number) if number <= self.head else None

    def _rpc_eth_blockNumber(self):
        return render_quantity(self.head)

    def _rpc_eth_getBlockByNumber(self, tag, full):
        number = self.head if tag == "latest" else parse_quantity(tag)
        block = self._visible(number)
        if block is None:
            return None
        if not full:
            block = dict(block, transactions=[t["hash"] for t in block.get("transactions", [])])
        return block

    def _rpc_eth_getTransactionReceipt(self, tx_hash):
        receipt = self._receipts.get(tx_hash.lower())
        if receipt is None:
            return None
        number = parse_quantity(receipt["blockNumber"])
        block = self._visible(number)
        if block is None or not any(t["hash"].lower() == tx_hash.lower() for t in block["transactions"]):
            return None
        return receipt

    def _rpc_eth_getLogs(self, flt):
        lo = parse_quantity(flt.get("fromBlock", "0x0"))
        hi = parse_quantity(flt.get("toBlock", render_quantity(self.head)))
        addresses = flt.get("address")
        if isinstance(addresses, str):
            addresses = [addresses]
        wanted = {Address(a) for a in addresses} if addresses else None
        topic0 = (flt.get("topics") or [None])[0]
        if isinstance(topic0, str):
            topic0 = [topic0]
        topic0 = {t.lower() for t in topic0} if topic0 else None
        out = []
        for n in range(lo, min(hi, self.head) + 1):
            block = self._blocks.get(n)
            if block is None:
                continue
            for tx in block["transactions"]:
                receipt = self._receipts.get(tx["hash"].lower(), {})
                for entry in receipt.get("logs", []):
                    if wanted is not None and Address(entry["address"]) not in wanted:
                        continue
                    topics = entry.get("topics", [])
                    if topic0 is not None and (not topics or topics[0].lower() not in topic0):
                        continue
                    out.append(entry)
        return out

    def _rpc_eth_call(self, call, tag):
        number = self.head if tag == "latest" else parse_quantity(tag)
        key = (number, Address(call["to"]), call.get("data", "0x").lower())
        if key not in self._calls:
            raise RpcError(3, "execution reverted")
        return self._calls[key]


class RecordingTransport:
    """Wraps a transport and records every method name sent through it."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.methods: list[str] = []

    def send(self, method: str, params: list) -> Any:
        self.methods.append(method)
        return self.inner.send(method, params)


class NodeClient:
    """Typed access to the extraction method subset with retry on transport errors."""

    def __init__(
        self,
        transport: Transport,
        retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        receipt_cache_blocks: int = 4,
    ):
        self.transport = transport
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self._receipts: OrderedDict[bytes, dict] = OrderedDict()
        self._receipt_cache_blocks = receipt_cache_blocks

    def request(self, method: str, params: list) -> Any:
        attempt = 0
        while True:
            try:
                return self.transport.send(method, params)
            except TransportError as exc:
                if attempt >= self.retries:
                    raise
                delay = self.backoff * (2**attempt)
                log.warning("%s failed (%s); retry %d in %.2fs", method, exc, attempt + 1, delay)
                self.sleep(delay)
                attempt += 1

    def latest_block_number(self) -> int:
        return self._quantity(self.request("eth_blockNumber", []))

    def block_hash(self, n: int) -> bytes:
        header = self.request("eth_getBlockByNumber", [render_quantity(n), False])
        if header is None:
            raise BlockNotFound(n)
        try:
            return parse_data(header["hash"])
        except (KeyError, ValueError) as exc:
            raise DecodeError(f"block {n}: {exc}") from exc

    def fetch_block(self, n: int, only_receipts_for: Optional[Iterable[bytes]] = None) -> Block:
        """Fetch block ``n`` with full transactions and merged receipts.

        ``only_receipts_for`` limits receipt retrieval to the given
        transaction hashes; the result is then marked incomplete.
        """
        raw = self.request("eth_getBlockByNumber", [render_quantity(n), True])
        if raw is None:
            raise BlockNotFound(n)
        try:
            block_hash = parse_data(raw["hash"])
            subset = None if only_receipts_for is None else set(only_receipts_for)
            receipts = self._block_receipts(block_hash, raw, subset)
            return Block.from_rpc(raw, receipts, receipts_complete=subset is None)
        except (KeyError, ValueError, TypeError) as exc:
            raise DecodeError(f"block {n}: {exc}") from exc

    def _block_receipts(self, block_hash: bytes, raw: dict, subset: Optional[set]) -> dict:
        cached = self._receipts.setdefault(block_hash, {})
        self._receipts.move_to_end(block_hash)
        while len(self._receipts) > self._receipt_cache_blocks:
            self._receipts.popitem(last=False)
        out = {}
        for tx in raw.get("transactions", []):
            h = tx["hash"].lower()
            if subset is not None and parse_data(h) not in subset:
                continue
            if h not in cached:
                receipt = self.request("eth_getTransactionReceipt", [h])
                if receipt is None:
                    raise DecodeError(f"missing receipt for {h}")
                cached[h] = receipt
            out[h] = cached[h]
        return out

    def get_logs(self, n: int, topic0s: Iterable[bytes]) -> list[dict]:
        topics = sorted(render_data(t) for t in topic0s)
        flt = {"fromBlock": render_quantity(n), "toBlock": render_quantity(n), "topics": [topics]}
        return self.request("eth_getLogs", [flt]) or []

    def call_contract(self, to: Address, calldata: bytes, at: int) -> bytes:
        params = [{"to": str(Address(to)), "data": render_data(calldata)}, render_quantity(at)]
        try:
            result = self.request("eth_call", params)
        except RpcError as exc:
            raise CallReverted(f"call to {to} at block {at}: {exc.message}") from exc
        try:
            return parse_data(result)
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc

    @staticmethod
    def _quantity(text: str) -> int:
        try:
            return parse_quantity(text)
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
