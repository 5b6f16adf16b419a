from .nodes import Manifest, Span, walk
from .parser import ManifestSyntaxError, SyntaxIssue, parse_manifest
from .render import render_expr, render_manifest

__all__ = [
    "Manifest",
    "ManifestSyntaxError",
    "Span",
    "SyntaxIssue",
    "parse_manifest",
    "render_expr",
    "render_manifest",
    "walk",
]
