"""Shared fixtures: deterministic synthetic corpora for the bench tests."""

from __future__ import annotations

import importlib.util
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent


def load_script(name: str):
    spec = importlib.util.spec_from_file_location(
        name, REPO_ROOT / "scripts" / f"{name}.py"
    )
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def corpus_script():
    return load_script("make_corpus")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory, corpus_script) -> Path:
    """A 6-image corpus; returns the manifest path."""
    out = tmp_path_factory.mktemp("corpus-small")
    return corpus_script.make_corpus(out, count=6, seed=20260817)
