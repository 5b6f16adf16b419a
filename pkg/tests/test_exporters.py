import csv
import io
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlog.exporters import CsvSink, Emission, LogLineSink, SinkSet, XesSink, render_xes_value, write_atomic

from xes_check import XesProblem, check_xes


def row(output, block, payload, tx=None, log=None):
    return Emission(output, "ROW", block, tx, log, payload)


class TestCsv:
    def test_zero_emission_block(self):
        sink = CsvSink("blockStats", ["number", "txCount", "reward"])
        sink.add(row("blockStats", 5, {"number": "5", "txCount": "0", "reward": "0"}))
        assert sink.render() == b"number,txCount,reward\r\n5,0,0\r\n"

    def test_header_always_present(self):
        assert CsvSink("t", ["a", "b"]).render() == b"a,b\r\n"

    def test_quoting(self):
        sink = CsvSink("t", ["v"])
        for v in ['plain', 'with,comma', 'with "quote"', "two\nlines", ""]:
            sink.add(row("t", 0, {"v": v}))
        assert sink.render() == b'v\r\nplain\r\n"with,comma"\r\n"with ""quote"""\r\n"two\nlines"\r\n""\r\n'

    @settings(max_examples=100)
    @given(st.lists(st.lists(st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=10), min_size=3, max_size=3), max_size=5))
    def test_parses_back(self, rows):  # the stdlib reader is the oracle, and it cannot read NUL
        sink = CsvSink("t", ["a", "b", "c"])
        for r in rows:
            sink.add(row("t", 0, dict(zip("abc", r))))
        parsed = list(csv.reader(io.StringIO(sink.render().decode(), newline="")))
        assert parsed[1:] == rows

    def test_nul_and_empty_cells(self):
        sink = CsvSink("t", ["a", "b"])
        sink.add(row("t", 0, {"a": "x\x00y", "b": ""}))
        assert sink.render() == b"a,b\r\nx\x00y,\r\n"
        lone = CsvSink("t", ["v"])
        lone.add(row("t", 0, {"v": ""}))
        assert lone.render() == b'v\r\n""\r\n'

    def test_utf8(self):
        sink = CsvSink("t", ["v"])
        sink.add(row("t", 0, {"v": "naïve ✓"}))
        assert "naïve ✓".encode() in sink.render()


class TestLogLines:
    def test_prefix_and_order(self):
        sink = LogLineSink("updates")
        sink.add(Emission("updates", "LINE", 4, 2, 7, "register update Market -> 0xab"))
        sink.add(Emission("updates", "LINE", 5, None, None, "block-level"))
        sink.add(Emission("updates", "LINE", 5, 1, None, "tx-level"))
        assert sink.render().decode().splitlines() == [
            "[4:2:7] register update Market -> 0xab",
            "[5:-:-] block-level",
            "[5:1:-] tx-level",
        ]


class TestXes:
    def event(self, trace, *attrs, block=0):
        return Emission("x", "EVENT", block, None, None, (trace, list(attrs)))

    def test_first_event_creates_trace(self):
        sink = XesSink("x")
        sink.add(self.event("7", ("concept:name", "string", "Birth")))
        (trace,) = check_xes(sink.render())
        assert trace["attrs"]["concept:name"] == ("string", "7")
        assert trace["events"] == [{"concept:name": ("string", "Birth")}]

    def test_events_keep_insertion_order_and_types(self):
        sink = XesSink("x")
        for i, name in enumerate(["Birth", "Pregnant", "Transfer"]):
            sink.add(self.event("1", ("concept:name", "string", name), ("time:timestamp", "date", 1_500_000_000 + i),
                                ("block", "int", i), ("ok", "boolean", True)))
        sink.add(self.event("2", ("concept:name", "string", "Birth")))
        traces = check_xes(sink.render())
        assert [t["attrs"]["concept:name"][1] for t in traces] == ["1", "2"]
        events = traces[0]["events"]
        assert [e["concept:name"][1] for e in events] == ["Birth", "Pregnant", "Transfer"]
        assert events[1]["time:timestamp"] == ("date", "2017-07-14T02:40:01.000+00:00")
        assert events[2]["block"] == ("int", "2") and events[2]["ok"] == ("boolean", "true")

    def test_trace_attributes_overwrite(self):
        sink = XesSink("x")
        sink.add(Emission("x", "TRACE", 0, None, None, ("1", [("matron", "int", 4)])))
        sink.add(Emission("x", "TRACE", 1, None, None, ("1", [("matron", "int", 5), ("concept:name", "string", "kitty 1")])))
        (trace,) = check_xes(sink.render())
        assert trace["attrs"] == {"concept:name": ("string", "kitty 1"), "matron": ("int", "5")}
        assert trace["events"] == []

    def test_extensions_declared(self):
        sink = XesSink("x")
        sink.add(self.event("1", ("time:timestamp", "date", 0), ("org:resource", "string", "0xab")))
        text = sink.render().decode()
        assert 'prefix="time"' in text and 'prefix="org"' in text and 'prefix="concept"' in text
        assert text.startswith('<?xml version="1.0" encoding="UTF-8"?>\n<log xes.version="1849-2016"')

    def test_escaping(self):
        sink = XesSink("x")
        sink.add(self.event("<&>", ("note", "string", 'say "hi" & <bye>')))
        (trace,) = check_xes(sink.render())
        assert trace["events"][0]["note"] == ("string", 'say "hi" & <bye>')

    def test_control_characters_are_replaced(self):
        sink = XesSink("x")
        sink.add(self.event("1", ("note", "string", "a\x00b\x1b")))
        (trace,) = check_xes(sink.render())
        assert trace["events"][0]["note"] == ("string", "a\ufffdb\ufffd")

    def test_empty_log(self):
        assert check_xes(XesSink("x").render()) == []

    def test_checker_rejects_bad_structure(self):
        with pytest.raises(XesProblem):
            check_xes(b'<log><event><string key="a" value="b"/></event></log>')
        with pytest.raises(XesProblem):
            check_xes(b'<log><trace><string key="a" value="1"/><string key="a" value="2"/></trace></log>')
        with pytest.raises(XesProblem):
            check_xes(b'<log><trace><int key="a" value="x"/></trace></log>')

    def test_render_values(self):
        assert render_xes_value("date", 0) == "1970-01-01T00:00:00.000+00:00"
        assert render_xes_value("int", 2**70) == str(2**70)
        assert render_xes_value("float", 3) == "3.0"
        assert render_xes_value("boolean", False) == "false"


class TestFiles:
    def outputs(self):
        return {"stats": "CSV", "notes": "LOG", "life": "XES"}

    def test_batch_file_per_output(self, tmp_path):
        sinks = SinkSet.for_outputs(tmp_path, self.outputs(), {"stats": ["n"]})
        sinks.emit(row("stats", 1, {"n": "1"}))
        sinks.flush()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["life.xes", "notes.log", "stats.csv"]
        assert sinks.counts == {"stats": 1, "notes": 0, "life": 0}

    def test_stream_files_and_overwrite(self, tmp_path):
        sinks = SinkSet.for_outputs(tmp_path, {"stats": "CSV"}, {"stats": ["n"]})
        for b in range(3):
            sinks.emit(row("stats", b, {"n": str(b)}))
            sinks.flush(b)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["stats_0.csv", "stats_1.csv", "stats_2.csv"]
        sinks.emit(row("stats", 1, {"n": "replaced"}))
        sinks.flush(1)
        assert (tmp_path / "stats_1.csv").read_bytes() == b"n\r\nreplaced\r\n"
        assert (tmp_path / "stats_2.csv").read_bytes() == b"n\r\n2\r\n"

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        target = tmp_path / "sub" / "f.csv"
        write_atomic(target, b"one")
        write_atomic(target, b"two")
        assert target.read_bytes() == b"two"
        assert os.listdir(target.parent) == ["f.csv"]

    def test_failed_write_keeps_old_content(self, tmp_path, monkeypatch):
        target = tmp_path / "f.log"
        write_atomic(target, b"old")

        def broken(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", broken)
        with pytest.raises(OSError):
            write_atomic(target, b"new")
        assert target.read_bytes() == b"old"
        assert os.listdir(tmp_path) == ["f.log"]

    def test_rerender_is_byte_identical(self, tmp_path):
        a = SinkSet.for_outputs(tmp_path / "a", self.outputs(), {"stats": ["n"]})
        b = SinkSet.for_outputs(tmp_path / "b", self.outputs(), {"stats": ["n"]})
        for s in (a, b):
            s.emit(row("stats", 1, {"n": "1"}))
            s.emit(Emission("life", "EVENT", 1, 0, 0, ("9", [("concept:name", "string", "Birth")])))
            s.emit(Emission("notes", "LINE", 1, 0, 0, "hello"))
            s.flush()
        for name in ("stats.csv", "notes.log", "life.xes"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
