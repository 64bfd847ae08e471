"""Versioned prompt templates with named placeholders.

Each template lives in a text file named `<template_id>.txt`; the id
(including version suffix) is recorded in every trace event and gateway
request, so transcripts can match on it.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

_PROMPT_DIR = Path(__file__).parent


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    path = _PROMPT_DIR / f"{template_id}.txt"
    if not path.exists():
        raise KeyError(f"unknown prompt template: {template_id}")
    return path.read_text(encoding="utf-8")


def render(template_id: str, **values: str) -> str:
    return load_template(template_id).format(**values)
