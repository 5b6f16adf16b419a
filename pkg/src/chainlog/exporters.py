"""Emission sinks for CSV tables, textual log lines and XES event logs."""
from __future__ import annotations

import os
import re
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

from .model import render_value

XES_NAMESPACE = "http://www.xes-standard.org/"
XES_EXTENSIONS = {
    "concept": ("Concept", "http://www.xes-standard.org/concept.xesext"),
    "time": ("Time", "http://www.xes-standard.org/time.xesext"),
    "lifecycle": ("Lifecycle", "http://www.xes-standard.org/lifecycle.xesext"),
    "org": ("Organizational", "http://www.xes-standard.org/org.xesext"),
    "identity": ("Identity", "http://www.xes-standard.org/identity.xesext"),
}


@dataclass(frozen=True)
class Emission:
    """One rendered emit statement, tagged with its chain position."""

    output: str
    kind: str  # LINE, ROW, EVENT or TRACE
    block: int
    tx: Optional[int]
    log: Optional[int]
    payload: Any

    @property
    def order_key(self) -> tuple[int, int, int]:
        return (self.block, -1 if self.tx is None else self.tx, -1 if self.log is None else self.log)


def write_atomic(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_NEEDS_QUOTES = re.compile(r'[",\r\n]')


def _csv_row(cells: list[str]) -> str:
    # hand-rolled because the stdlib writer refuses NUL, which decoded log strings may hold
    if cells == [""]:
        return '""\r\n'  # keep a lone empty cell distinguishable from a blank line
    out = ('"' + c.replace('"', '""') + '"' if _NEEDS_QUOTES.search(c) else c for c in cells)
    return ",".join(out) + "\r\n"


class CsvSink:
    ext = "csv"

    def __init__(self, name: str, columns: list[str]):
        self.name = name
        self.columns = list(columns)
        self.rows: list[list[str]] = []

    def add(self, emission: Emission) -> None:
        cells = emission.payload
        self.rows.append([cells[c] for c in self.columns])

    def render(self) -> bytes:
        return "".join(_csv_row(r) for r in [self.columns, *self.rows]).encode("utf-8")

    def clear(self) -> None:
        self.rows.clear()


class LogLineSink:
    ext = "log"

    def __init__(self, name: str):
        self.name = name
        self.lines: list[str] = []

    def add(self, emission: Emission) -> None:
        pos = ":".join("-" if p is None else str(p) for p in (emission.block, emission.tx, emission.log))
        self.lines.append(f"[{pos}] {emission.payload}")

    def render(self) -> bytes:
        return "".join(line + "\n" for line in self.lines).encode("utf-8")

    def clear(self) -> None:
        self.lines.clear()


_XML_ILLEGAL = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ufffe\uffff]")


def xml_safe(text: str) -> str:
    """Replace characters XML 1.0 cannot carry with U+FFFD."""
    return _XML_ILLEGAL.sub("\ufffd", text)


def render_xes_value(xes_type: str, value) -> str:
    if xes_type == "date":
        dt = datetime.fromtimestamp(value, tz=timezone.utc)
        return dt.isoformat(timespec="milliseconds")
    if xes_type == "float":
        return repr(float(value))
    return xml_safe(render_value(value))


class XesSink:
    """Traces keyed by rendered trace id, each with attributes and ordered events."""

    ext = "xes"

    def __init__(self, name: str):
        self.name = name
        self.traces: dict[str, dict] = {}

    def _trace(self, trace_id: str) -> dict:
        trace = self.traces.get(trace_id)
        if trace is None:
            trace = {"attrs": {"concept:name": ("string", trace_id)}, "events": []}
            self.traces[trace_id] = trace
        return trace

    def add(self, emission: Emission) -> None:
        trace_id, attrs = emission.payload
        trace = self._trace(trace_id)
        if emission.kind == "TRACE":
            trace["attrs"].update((k, (t, v)) for k, t, v in attrs)
        else:
            trace["events"].append({k: (t, v) for k, t, v in attrs})

    def _keys(self):
        for trace in self.traces.values():
            yield from trace["attrs"]
            for event in trace["events"]:
                yield from event

    def render(self) -> bytes:
        ET.register_namespace("", XES_NAMESPACE)
        root = ET.Element("log", {"xes.version": "1849-2016", "xes.features": "", "xmlns": XES_NAMESPACE})
        prefixes = sorted({k.split(":", 1)[0] for k in self._keys() if ":" in k} & XES_EXTENSIONS.keys())
        for prefix in prefixes:
            name, uri = XES_EXTENSIONS[prefix]
            ET.SubElement(root, "extension", {"name": name, "prefix": prefix, "uri": uri})
        for trace in self.traces.values():
            t_el = ET.SubElement(root, "trace")
            _attributes(t_el, trace["attrs"])
            for event in trace["events"]:
                _attributes(ET.SubElement(t_el, "event"), event)
        ET.indent(root)
        body = ET.tostring(root, encoding="unicode", short_empty_elements=True)
        return ('<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n").encode("utf-8")

    def clear(self) -> None:
        self.traces.clear()


def _attributes(parent: ET.Element, attrs: dict) -> None:
    for key, (xes_type, value) in attrs.items():
        ET.SubElement(parent, xes_type, {"key": xml_safe(key), "value": render_xes_value(xes_type, value)})


Sink = Union[CsvSink, LogLineSink, XesSink]


class SinkSet:
    """All outputs of one manifest, flushed once per run or once per block."""

    def __init__(self, out_dir: Union[str, Path], sinks: dict[str, Sink]):
        self.out_dir = Path(out_dir)
        self.sinks = sinks
        self.counts: dict[str, int] = {name: 0 for name in sinks}
        self.written: list[Path] = []

    @classmethod
    def for_outputs(cls, out_dir, outputs: dict[str, str], csv_columns: dict[str, list[str]]) -> "SinkSet":
        sinks: dict[str, Sink] = {}
        for name, fmt in outputs.items():
            if fmt == "CSV":
                sinks[name] = CsvSink(name, csv_columns.get(name, []))
            elif fmt == "LOG":
                sinks[name] = LogLineSink(name)
            else:
                sinks[name] = XesSink(name)
        return cls(out_dir, sinks)

    def emit(self, emission: Emission) -> None:
        self.sinks[emission.output].add(emission)
        self.counts[emission.output] += 1

    def clear(self) -> None:
        for sink in self.sinks.values():
            sink.clear()

    def _write(self, sink: Sink, filename: str) -> Path:
        path = self.out_dir / filename
        write_atomic(path, sink.render())
        self.written.append(path)
        return path

    def flush(self, block: Optional[int] = None) -> list[Path]:
        """Batch (``block`` None): ``<name>.<ext>``; stream: ``<name>_<block>.<ext>``, overwriting."""
        paths = []
        for name, sink in self.sinks.items():
            suffix = "" if block is None else f"_{block}"
            paths.append(self._write(sink, f"{name}{suffix}.{sink.ext}"))
        self.clear()
        return paths
