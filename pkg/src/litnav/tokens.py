"""Shared tokenizer: lowercase alphanumeric runs, with optional offsets."""

from __future__ import annotations

import re

_TOKEN = re.compile(r"[A-Za-z0-9]+")


def tokenize(text: str) -> list[str]:
    return [m.group(0).lower() for m in _TOKEN.finditer(text)]


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """(lowercased token, start_char, end_char) triples in text order."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN.finditer(text)]
