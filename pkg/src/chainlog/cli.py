"""Command-line entry point: ``chainlog validate | extract | generate``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .exporters import SinkSet, write_atomic
from .extractor import ExtractionError, Extractor
from .generator import generate_fragment
from .manifest import ManifestSyntaxError, parse_manifest
from .node import FixtureChain, HttpTransport, NodeClient, NodeError
from .validator import analyze

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
BLOCK_KEYWORDS = ("EARLIEST", "CURRENT", "CONTINUOUS")

log = logging.getLogger("chainlog")


class UsageError(Exception):
    pass


def _block_spec(text: str):
    if text.upper() in BLOCK_KEYWORDS:
        return text.upper()
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a block number or one of {', '.join(BLOCK_KEYWORDS)}")
    if n < 0:
        raise argparse.ArgumentTypeError("block numbers are non-negative")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainlog", description="Manifest-driven blockchain log extraction.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def source_flags(p):
        p.add_argument("--node", help="JSON-RPC endpoint URL (default: $CHAINLOG_NODE)")
        p.add_argument("--fixture", type=Path, help="recorded fixture chain (JSON) instead of a node")

    v = sub.add_parser("validate", help="check a manifest and print its report")
    v.add_argument("manifest", type=Path)
    v.add_argument("--json", action="store_true", help="machine-readable report")
    source_flags(v)

    e = sub.add_parser("extract", help="run a manifest against a node or fixture")
    e.add_argument("manifest", type=Path)
    source_flags(e)
    e.add_argument("--out", type=Path, default=Path("."), help="output directory")
    e.add_argument("--stream", action="store_true", help="keep following the chain head")
    e.add_argument("--poll-interval", type=float, default=2.0, metavar="SECS")
    e.add_argument("--from", dest="from_block", type=_block_spec)
    e.add_argument("--to", dest="to_block", type=_block_spec)
    e.add_argument("--json", action="store_true", help="print the summary as JSON")

    g = sub.add_parser("generate", help="write logging fragments for dictionaries and bit mappings")
    g.add_argument("manifest", type=Path)
    g.add_argument("--out", type=Path, default=Path("."), help="output directory")
    g.add_argument("--json", action="store_true", help="list written files as JSON")
    return parser


def _read_manifest(path: Path):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}")
    return parse_manifest(data)


def _syntax_report(exc: ManifestSyntaxError, as_json: bool) -> str:
    if as_json:
        findings = [
            {"severity": "error", "code": "E_SYNTAX", "line": i.line, "column": i.column,
             "message": i.message + (f" (expected {i.expected})" if i.expected else "")}
            for i in exc.errors
        ]
        return json.dumps({"ok": False, "findings": findings}, indent=2) + "\n"
    return "".join(f"error E_SYNTAX {i}\n" for i in exc.errors)


def _source(args, require: bool):
    """Build (client, fixture) from --node / --fixture / $CHAINLOG_NODE."""
    if args.node and args.fixture:
        raise UsageError("give either --node or --fixture, not both")
    if args.fixture:
        try:
            chain = FixtureChain.load(args.fixture)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load fixture {args.fixture}: {exc}")
        return NodeClient(chain), chain
    url = args.node or os.environ.get("CHAINLOG_NODE")
    if url:
        return NodeClient(HttpTransport(url)), None
    if require:
        raise UsageError("no node given: use --node, --fixture or set CHAINLOG_NODE")
    return None, None


def cmd_validate(args) -> int:
    try:
        manifest = _read_manifest(args.manifest)
    except ManifestSyntaxError as exc:
        sys.stdout.write(_syntax_report(exc, args.json))
        return EXIT_FAILED
    latest = None
    if args.node or args.fixture:
        client, _ = _source(args, require=False)
        try:
            latest = client.latest_block_number()
        except NodeError as exc:
            log.warning("could not query the chain head: %s", exc)
    report = analyze(manifest, latest=latest).report
    sys.stdout.write(report.to_json() + "\n" if args.json else report.render())
    return EXIT_OK if report.ok else EXIT_FAILED


def cmd_extract(args) -> int:
    try:
        manifest = _read_manifest(args.manifest)
    except ManifestSyntaxError as exc:
        sys.stderr.write(_syntax_report(exc, False))
        return EXIT_FAILED
    client, chain = _source(args, require=True)
    analysis = analyze(manifest)
    if not analysis.report.ok:
        sys.stderr.write(analysis.report.render())
        return EXIT_FAILED
    for w in analysis.report.warnings:
        log.warning("%s", w.render())
    sinks = SinkSet.for_outputs(args.out, analysis.outputs, analysis.csv_columns)
    options = {"poll_interval": args.poll_interval, "from_block": args.from_block, "to_block": args.to_block}
    if chain is not None:
        # a fixture advances by one block instead of waiting for new heads
        options["sleep"] = lambda _secs: chain.advance(1)
    extractor = Extractor(manifest, client, sinks, analysis=analysis, **options)

    def should_stop() -> bool:
        return chain is not None and chain.at_end and extractor.last_processed is not None \
            and extractor.last_processed >= chain.head

    mode = "stream" if args.stream or extractor.wants_stream() else "batch"
    try:
        summary = extractor.run(mode, should_stop)
    except KeyboardInterrupt:
        summary = extractor.summary
        log.info("interrupted")
    except (ExtractionError, NodeError) as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    for err in summary.errors:
        log.warning("%s", err)
    if args.json:
        sys.stdout.write(json.dumps(summary.to_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(
            f"blocks processed: {summary.blocks_processed}\n"
            f"transactions matched: {summary.transactions_matched}\n"
            f"log entries matched: {summary.log_entries_matched}\n"
            + "".join(f"emissions {name}: {n}\n" for name, n in sorted(summary.emissions_per_sink.items()))
            + f"runtime errors: {len(summary.errors)}\n"
            + (f"reorgs: {summary.reorgs}\n" if summary.reorgs else "")
        )
    return EXIT_FAILED if summary.aborted else EXIT_OK


def cmd_generate(args) -> int:
    try:
        manifest = _read_manifest(args.manifest)
    except ManifestSyntaxError as exc:
        sys.stderr.write(_syntax_report(exc, False))
        return EXIT_FAILED
    analysis = analyze(manifest)
    if not analysis.report.ok:
        sys.stderr.write(analysis.report.render())
        return EXIT_FAILED
    written = []
    specs = {**analysis.dictionaries, **analysis.bitmaps}
    try:
        for name, spec in specs.items():
            path = args.out / f"{name}.sol.inc"
            write_atomic(path, generate_fragment(spec).encode("utf-8"))
            written.append(str(path))
    except OSError as exc:
        log.error("cannot write fragment: %s", exc)
        return EXIT_FAILED
    if not specs:
        log.warning("manifest declares no dictionaries or bit mappings")
    sys.stdout.write(json.dumps(written) + "\n" if args.json else "".join(p + "\n" for p in written))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "extract": cmd_extract, "generate": cmd_generate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"chainlog: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
