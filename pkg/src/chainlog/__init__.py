"""Manifest-driven extraction of Ethereum block, transaction, log and state data."""
from .exporters import SinkSet
from .extractor import ExtractionSummary, Extractor, ManifestInvalid, run
from .manifest import ManifestSyntaxError, parse_manifest, render_manifest
from .node import FixtureChain, HttpTransport, NodeClient
from .operators import BUILTINS, OperatorRegistry
from .validator import analyze, validate

__all__ = [
    "BUILTINS",
    "ExtractionSummary",
    "Extractor",
    "FixtureChain",
    "HttpTransport",
    "ManifestInvalid",
    "ManifestSyntaxError",
    "NodeClient",
    "OperatorRegistry",
    "SinkSet",
    "analyze",
    "parse_manifest",
    "render_manifest",
    "run",
    "validate",
]
