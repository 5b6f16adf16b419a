"""The extraction engine: walks blocks in order and evaluates the filter tree.

Address-typed variables that outlive a single transaction (globals and
block-level declarations) follow next-entity visibility: an assignment made
while evaluating transaction ``t`` of block ``b`` is seen by transactions
``t+1`` onward and by all later blocks, regardless of which sibling filter
performs the read.
"""
from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .abi import AbiError, TopicMismatch, decode_log, decode_return, encode_call
from .exporters import Emission, SinkSet
from .manifest.nodes import (
    AddressLit,
    Assign,
    Attr,
    BinOp,
    BlockFilter,
    BoolLit,
    BytesLit,
    Call,
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
    StateFilter,
    StringLit,
    TxFilter,
    VarDecl,
    walk,
)
from .model import ENTITY_ATTRIBUTES, Address, Block, LogEntry, Transaction, ValueType, check_value, render_value
from .node import CallReverted, NodeClient, NodeError
from .operators import BUILTINS, EvaluationError, OperatorRegistry, apply_operator
from .validator import Analysis, analyze

log = logging.getLogger(__name__)


class ExtractionError(Exception):
    pass


class ManifestInvalid(ExtractionError):
    def __init__(self, report):
        super().__init__(report.render().strip() or "manifest has errors")
        self.report = report


class RangeUnresolvable(ExtractionError):
    pass


class MalformedUpdate(EvaluationError):
    """An address variable was assigned something that is not an address."""


@dataclass
class RuntimeFailure:
    block: int
    tx: Optional[int]
    log: Optional[int]
    message: str

    def __str__(self) -> str:
        pos = ":".join("-" if p is None else str(p) for p in (self.block, self.tx, self.log))
        return f"[{pos}] {self.message}"


@dataclass
class ExtractionSummary:
    blocks_processed: int = 0
    transactions_matched: int = 0
    log_entries_matched: int = 0
    emissions_per_sink: dict[str, int] = field(default_factory=dict)
    errors: list = field(default_factory=list)
    reorgs: int = 0
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "blocksProcessed": self.blocks_processed,
            "transactionsMatched": self.transactions_matched,
            "logEntriesMatched": self.log_entries_matched,
            "emissionsPerSink": dict(self.emissions_per_sink),
            "errors": [str(e) for e in self.errors],
            "reorgs": self.reorgs,
            "aborted": self.aborted,
        }


Position = tuple[int, int]


class Cell:
    """Storage for one variable.

    Deferred cells keep the writes of the current block with their
    (block, tx) position so reads can pick the value visible at theirs.
    """

    __slots__ = ("base", "history", "deferred")

    def __init__(self, value, deferred: bool = False):
        self.base = value
        self.history: list[tuple[Position, object]] = []
        self.deferred = deferred

    @property
    def value(self):
        return self.history[-1][1] if self.history else self.base

    def read(self, pos: Optional[Position]):
        if not self.deferred or pos is None:
            return self.value
        for wpos, v in reversed(self.history):
            if wpos < pos:
                return v
        return self.base

    def write(self, value, pos: Optional[Position]) -> None:
        if self.deferred and pos is not None:
            self.history.append((pos, value))
        else:
            self.base = value
            self.history.clear()

    def settle(self) -> None:
        self.base = self.value
        self.history.clear()

    def snapshot(self):
        return (self.base, list(self.history))

    def restore(self, snap) -> None:
        self.base, history = snap
        self.history = list(history)


class ExecutionEnvironment:
    def __init__(self, registry: OperatorRegistry = BUILTINS):
        self.registry = registry
        self.scopes: list[dict[str, Cell]] = [{}]
        self.block: Optional[Block] = None
        self.tx: Optional[Transaction] = None
        self.log: Optional[LogEntry] = None

    @property
    def depth(self) -> int:
        return len(self.scopes)

    @property
    def globals(self) -> dict[str, Cell]:
        return self.scopes[0]

    def push(self) -> None:
        self.scopes.append({})

    def pop(self) -> None:
        self.scopes.pop()

    def lookup(self, name: str) -> Cell:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        raise EvaluationError(f"unbound name {name!r}")

    @property
    def position(self) -> Optional[Position]:
        """Read/write position for deferred cells; None at block level."""
        if self.block is None:
            return None
        if self.log is not None:
            return (self.block.number, self.log.transaction_index)
        if self.tx is not None:
            return (self.block.number, self.tx.index)
        return None

    @property
    def in_entity(self) -> bool:
        return self.tx is not None or self.log is not None

    def declare(self, name: str, vtype: ValueType, value) -> None:
        deferred = vtype.kind == "address" and not self.in_entity
        self.scopes[-1][name] = Cell(value, deferred)

    def address_variables(self) -> dict[str, Address]:
        out = {}
        for scope in self.scopes:
            for name, cell in scope.items():
                if isinstance(cell.value, Address):
                    out[name] = cell.read(self.position)
        return out


RangeSpec = Union[int, str]


class Extractor:
    def __init__(
        self,
        manifest: Manifest,
        client: NodeClient,
        sinks: SinkSet,
        registry: OperatorRegistry = BUILTINS,
        analysis: Optional[Analysis] = None,
        poll_interval: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
        reorg_window: int = 12,
        from_block: Optional[RangeSpec] = None,
        to_block: Optional[RangeSpec] = None,
    ):
        if analysis is None:
            analysis = analyze(manifest, registry)
        if not analysis.report.ok:
            raise ManifestInvalid(analysis.report)
        self.m = manifest
        self.analysis = analysis
        self.client = client
        self.sinks = sinks
        self.registry = registry
        self.poll_interval = poll_interval
        self.sleep = sleep
        self.reorg_window = reorg_window
        self.from_block = from_block
        self.to_block = to_block
        self.summary = ExtractionSummary(emissions_per_sink={name: 0 for name in analysis.outputs})
        self.env = ExecutionEnvironment(registry)
        self._state_cache: dict[tuple[bytes, str, bytes], object] = {}
        self._hashes: OrderedDict[int, bytes] = OrderedDict()
        self._snapshots: OrderedDict[int, dict] = OrderedDict()
        self._emissions: list[Emission] = []
        self.last_processed: Optional[int] = None
        self._head: Optional[int] = None  # chain head when the run started; resolves CURRENT
        self.roots = [r for r in manifest.items if isinstance(r, BlockFilter)]
        nodes = list(walk(manifest))
        self._has_tx_filter = any(isinstance(n, TxFilter) for n in nodes)
        self._topic0s = {spec.topic0 for spec in analysis.events.values()}
        self._initialise_globals()

    # -- setup ------------------------------------------------------------------------

    def _initialise_globals(self) -> None:
        env = self.env
        for name, spec in {**self.analysis.dictionaries, **self.analysis.bitmaps}.items():
            env.globals[name] = Cell(spec)
        for item in self.m.items:
            if isinstance(item, VarDecl):
                env.declare(item.name, item.type, self._checked(item.type, self.eval(item.value)))

    def _root_range(self, root: BlockFilter, head: Optional[int]) -> tuple[int, Optional[int]]:
        """Resolved (start, end) of a root; end None means unbounded."""
        start = root.start if self.from_block is None else self.from_block
        end = root.end if self.to_block is None else self.to_block
        return self._resolve(start, head, is_end=False), self._resolve(end, head, is_end=True)

    def _resolve(self, spec: RangeSpec, head: Optional[int], is_end: bool) -> Optional[int]:
        if isinstance(spec, int):
            return spec
        if spec == "EARLIEST":
            return 0
        if spec == "CONTINUOUS":
            if not is_end:
                raise RangeUnresolvable("CONTINUOUS cannot start a range")
            return None
        if spec == "CURRENT":
            if head is None:
                raise RangeUnresolvable("CURRENT needs the node's latest block number")
            return head
        raise RangeUnresolvable(f"unknown block specification {spec!r}")

    def wants_stream(self) -> bool:
        ends = [self.to_block] if self.to_block is not None else [r.end for r in self.roots]
        return any(e == "CONTINUOUS" for e in ends)

    # -- running ----------------------------------------------------------------------

    def run(self, mode: Optional[str] = None, should_stop: Callable[[], bool] = lambda: False) -> ExtractionSummary:
        mode = mode or ("stream" if self.wants_stream() else "batch")
        if mode not in ("batch", "stream"):
            raise ValueError(f"unknown mode {mode!r}")
        if not self.roots:
            return self.summary
        head = self._head = self.client.latest_block_number()
        ranges = [self._root_range(r, head) for r in self.roots]
        lo = min(s for s, _ in ranges)
        if mode == "batch":
            ends = [head if e is None else e for _, e in ranges]
            hi = max(ends)
            if hi > head:
                raise RangeUnresolvable(f"range ends at {hi} but the chain head is {head}")
            if lo > hi:
                raise RangeUnresolvable(f"range starts at {lo} after its end {hi}")
            self._batch(lo, hi)
        else:
            hi = None if any(e is None for _, e in ranges) else max(e for _, e in ranges)
            self._stream(lo, hi, should_stop)
        return self.summary

    def _batch(self, lo: int, hi: int) -> None:
        try:
            for n in range(lo, hi + 1):
                self._process(n)
        except NodeError as exc:
            self._abort(f"node error: {exc}")
        try:
            self.sinks.flush()
        except OSError as exc:
            self._abort(f"sink write failed: {exc}")

    def _stream(self, lo: int, hi: Optional[int], should_stop: Callable[[], bool]) -> None:
        next_block = lo
        while True:
            try:
                head = self.client.latest_block_number()
                rewind = self._detect_reorg()
                if rewind is not None:
                    next_block = rewind
                limit = head if hi is None else min(head, hi)
                while next_block <= limit:
                    self._process(next_block)
                    self.sinks.flush(next_block)
                    next_block += 1
            except NodeError as exc:
                self._abort(f"node error: {exc}")
                return
            except OSError as exc:
                self._abort(f"sink write failed: {exc}")
                return
            if hi is not None and next_block > hi:
                return
            if should_stop():
                return
            self.sleep(self.poll_interval)

    def _abort(self, message: str) -> None:
        log.error("%s", message)
        self.summary.errors.append(message)
        self.summary.aborted = True

    def _detect_reorg(self) -> Optional[int]:
        """Lowest stored height whose hash the node no longer reports, rolling state back to it."""
        for n, stored in list(self._hashes.items()):
            if self.client.block_hash(n) == stored:
                continue
            log.info("reorg detected at height %d", n)
            self.summary.reorgs += 1
            snap = self._snapshots[n]
            for name, cell in self.env.globals.items():
                if name in snap:
                    cell.restore(snap[name])
            for h in [h for h in self._hashes if h >= n]:
                del self._hashes[h]
                self._snapshots.pop(h, None)
            self.last_processed = n - 1
            return n
        return None

    def _process(self, n: int) -> list[Emission]:
        block = self._fetch(n)
        self._snapshots[n] = {name: cell.snapshot() for name, cell in self.env.globals.items()}
        self._hashes[n] = block.hash
        while len(self._hashes) > self.reorg_window:
            old, _ = self._hashes.popitem(last=False)
            self._snapshots.pop(old, None)
        emissions = self.evaluate_block(block)
        for e in emissions:
            self.sinks.emit(e)
            self.summary.emissions_per_sink[e.output] = self.summary.emissions_per_sink.get(e.output, 0) + 1
        self.summary.blocks_processed += 1
        self.last_processed = n
        return emissions

    def _fetch(self, n: int) -> Block:
        if self._has_tx_filter:
            return self.client.fetch_block(n)
        if not self._topic0s:
            return self.client.fetch_block(n, only_receipts_for=())
        # log-only manifests: receipts just for transactions that emitted a candidate event
        hits = self.client.get_logs(n, self._topic0s)
        wanted = {bytes.fromhex(entry["transactionHash"][2:]) for entry in hits}
        return self.client.fetch_block(n, only_receipts_for=wanted)

    # -- evaluation -------------------------------------------------------------------

    def evaluate_block(self, block: Block) -> list[Emission]:
        env = self.env
        for cell in env.globals.values():
            cell.settle()
        env.block, env.tx, env.log = block, None, None
        self._emissions = []
        depth = env.depth
        try:
            for root in self.roots:
                start, end = self._root_range(root, self._head)
                if block.number < start or (end is not None and block.number > end):
                    continue
                self._entity(lambda: self._body(root.body))
        finally:
            env.block = None
        assert env.depth == depth, "scope stack unbalanced"
        emissions = sorted(self._emissions, key=lambda e: e.order_key)
        self._emissions = []
        return emissions

    def _entity(self, fn: Callable[[], None]) -> None:
        """Evaluate one entity's body inside a fresh scope, quarantining runtime errors."""
        env = self.env
        env.push()
        try:
            fn()
        except EvaluationError as exc:
            self._record(str(exc))
        finally:
            env.pop()

    def _record(self, message: str) -> None:
        env = self.env
        failure = RuntimeFailure(
            env.block.number,
            env.log.transaction_index if env.log else (env.tx.index if env.tx else None),
            env.log.log_index if env.log else None,
            message,
        )
        log.warning("runtime error %s", failure)
        self.summary.errors.append(failure)

    def _body(self, statements: Iterable) -> None:
        for s in statements:
            self._statement(s)

    def _statement(self, s) -> None:
        env = self.env
        if isinstance(s, VarDecl):
            env.declare(s.name, s.type, self._checked(s.type, self.eval(s.value)))
        elif isinstance(s, Assign):
            cell = env.lookup(s.name)
            value = self.eval(s.value)
            if isinstance(cell.value, Address) and not isinstance(value, Address):
                raise MalformedUpdate(f"{s.name} must hold an address, got {render_value(value)!r}")
            cell.write(value, env.position)
        elif isinstance(s, (EmitLogLine, EmitCsvRow, EmitXes)):
            self._emit(s)
        elif isinstance(s, BlockFilter):
            pass  # rejected by the validator
        elif isinstance(s, TxFilter):
            self._transactions(s)
        elif isinstance(s, LogFilter):
            self._logs(s)
        elif isinstance(s, StateFilter):
            self._state(s)
        elif isinstance(s, GenericFilter):
            if self.eval(s.predicate) is True:
                env.push()
                try:
                    self._body(s.body)
                finally:
                    env.pop()

    def _checked(self, vtype: ValueType, value):
        if vtype.kind == "address" and value is not None and not isinstance(value, Address):
            raise MalformedUpdate(f"expected an address, got {value!r}")
        if vtype.is_integer and not check_value(vtype, value):
            raise EvaluationError(f"{value} does not fit {vtype}")
        return value

    def _address_set(self, items) -> Optional[set]:
        if items is None:
            return None
        out = set()
        for item in items:
            v = self.eval(item)
            if isinstance(v, tuple):
                out.update(v)
            else:
                out.add(v)
        return out

    def _transactions(self, f: TxFilter) -> None:
        env = self.env
        outer_tx = env.tx
        try:
            for tx in env.block.transactions:
                env.tx = tx
                try:
                    senders = self._address_set(f.senders)
                    recipients = self._address_set(f.recipients)
                except EvaluationError as exc:
                    self._record(str(exc))
                    continue
                if senders is not None and tx.sender not in senders:
                    continue
                if recipients is not None and tx.to not in recipients:
                    continue
                self.summary.transactions_matched += 1
                self._entity(lambda: self._body(f.body))
        finally:
            env.tx = outer_tx

    def _logs(self, f: LogFilter) -> None:
        env = self.env
        spec = self.analysis.events[id(f)]
        entries = env.tx.logs if env.tx is not None else env.block.logs
        outer_log = env.log
        try:
            for entry in entries:
                if not entry.topics or entry.topics[0] != spec.topic0:
                    continue
                env.log = entry
                try:
                    contracts = self._address_set(f.contracts)
                except EvaluationError as exc:
                    self._record(str(exc))
                    continue
                if contracts is not None and entry.address not in contracts:
                    continue
                try:
                    params = decode_log(entry, spec)
                except TopicMismatch:
                    continue  # same topic0, different indexed layout
                except AbiError as exc:
                    self._record(f"cannot decode {spec.signature}: {exc}")
                    continue
                self.summary.log_entries_matched += 1

                def body(params=params):
                    for p in spec.params:
                        env.scopes[-1][p.name] = Cell(params[p.name])
                    self._body(f.body)

                self._entity(body)
        finally:
            env.log = outer_log

    def _state(self, f: StateFilter) -> None:
        env = self.env
        contract = self.eval(f.contract)
        values = {}
        for m in f.members:
            fspec = self.analysis.functions[id(m)]
            args = [self.eval(a) for a in (m.args or ())]
            try:
                calldata = encode_call(fspec, args)
            except AbiError as exc:
                raise EvaluationError(f"cannot encode {fspec.signature}: {exc}") from exc
            key = (env.block.hash, contract, calldata)
            if key not in self._state_cache:
                try:
                    raw = self.client.call_contract(contract, calldata, env.block.number)
                    self._state_cache[key] = decode_return(raw, fspec.outputs)[0]
                except AbiError as exc:
                    raise EvaluationError(f"cannot decode {fspec.signature} result: {exc}") from exc
                except CallReverted as exc:
                    raise EvaluationError(str(exc)) from exc
            values[m.name] = self._state_cache[key]
        env.push()
        try:
            for name, v in values.items():
                env.scopes[-1][name] = Cell(v)
            self._body(f.body)
        finally:
            env.pop()

    def _emit(self, s) -> None:
        env = self.env
        if isinstance(s, EmitLogLine):
            text = "".join(p if isinstance(p, str) else render_value(self.eval(p)) for p in s.parts)
            payload, kind = text, "LINE"
        elif isinstance(s, EmitCsvRow):
            payload = {c.name: render_value(self.eval(c.value)) for c in s.columns}
            kind = "ROW"
        else:
            trace_id = render_value(self.eval(s.trace_id))
            attrs = []
            for a in s.attrs:
                value = self.eval(a.value)
                attrs.append((a.key, a.xes_type or _xes_type(a.key, self.analysis.type(a.value)), value))
            payload, kind = (trace_id, attrs), s.level
        self._emissions.append(Emission(
            s.output,
            kind,
            env.block.number,
            env.log.transaction_index if env.log else (env.tx.index if env.tx else None),
            env.log.log_index if env.log else None,
            payload,
        ))

    def eval(self, e):
        env = self.env
        if isinstance(e, (IntLit, StringLit, BoolLit, BytesLit, AddressLit)):
            return e.value
        if isinstance(e, ListLit):
            return tuple(self.eval(i) for i in e.items)
        if isinstance(e, Name):
            return env.lookup(e.name).read(env.position)
        if isinstance(e, Attr):
            entity = {"block": env.block, "tx": env.tx, "log": env.log}[e.entity]
            if entity is None:
                raise EvaluationError(f"{e.entity}.{e.attr} has no current entity")
            return ENTITY_ATTRIBUTES[e.entity][e.attr].getter(entity)
        if isinstance(e, (Call, BinOp, Not)):
            return self.apply(e)
        raise EvaluationError(f"cannot evaluate {type(e).__name__}")

    def apply(self, e):
        sig = self.analysis.env.calls[id(e)]
        if isinstance(e, Not):
            args = (e.operand,)
        elif isinstance(e, BinOp):
            args = (e.left, e.right)
        else:
            args = e.args
        if sig.name in ("and", "or") and sig.params == ("bool", "bool"):
            left = self.eval(args[0])
            if left is (sig.name == "or"):
                return left
            return self.eval(args[1])
        values = [self.eval(a) for a in args]
        return apply_operator(sig, values)


def _xes_type(key: str, vtype: ValueType) -> str:
    if vtype.is_integer:
        return "date" if key.startswith("time:") else "int"
    if vtype.kind == "bool":
        return "boolean"
    return "string"


def run(
    m: Manifest,
    client: NodeClient,
    sinks: SinkSet,
    mode: Optional[str] = None,
    registry: OperatorRegistry = BUILTINS,
    **options,
) -> ExtractionSummary:
    should_stop = options.pop("should_stop", lambda: False)
    return Extractor(m, client, sinks, registry=registry, **options).run(mode, should_stop)
