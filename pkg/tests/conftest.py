import csv
import io
from dataclasses import dataclass
from pathlib import Path

import pytest

from chainlog import Extractor, FixtureChain, NodeClient, SinkSet, parse_manifest
from chainlog.validator import analyze

MANIFESTS = Path(__file__).parent / "manifests"


@dataclass
class RunResult:
    summary: object
    out: Path
    chain: FixtureChain
    extractor: Extractor

    def text(self, name: str) -> str:
        return (self.out / name).read_text(encoding="utf-8")

    def rows(self, name: str) -> list[list[str]]:
        return list(csv.reader(io.StringIO(self.text(name), newline="")))


def run_manifest(text, doc, out, mode=None, follow=False, **options) -> RunResult:
    """Run ``text`` against fixture ``doc``; ``follow`` advances the fixture while streaming."""
    m = parse_manifest(text)
    analysis = analyze(m)
    assert analysis.report.ok, analysis.report.render()
    chain = FixtureChain(doc)
    sinks = SinkSet.for_outputs(out, analysis.outputs, analysis.csv_columns)
    if follow:
        options.setdefault("sleep", lambda _s: chain.advance(1))
    ex = Extractor(m, NodeClient(chain, sleep=lambda _s: None), sinks, analysis=analysis, **options)

    def should_stop():
        return chain.at_end and ex.last_processed is not None and ex.last_processed >= chain.head

    summary = ex.run(mode, should_stop)
    return RunResult(summary, Path(out), chain, ex)


@pytest.fixture
def run(tmp_path):
    counter = iter(range(1000))

    def _run(text, doc, mode=None, **options):
        return run_manifest(text, doc, tmp_path / f"run{next(counter)}", mode, **options)

    return _run
