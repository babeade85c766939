"""Shared fixtures for integration tests.

Builds a real corpus cache on disk from a tiny synthetic manifest so the
tools and commands run their full path without mocks.
"""

import json
import os

import pytest

from lab.commands import cmd_ingest
from tests.conftest import tiny_manifest


@pytest.fixture
def lab_dir(tmp_path):
    """Working directory holding manifest.json and an ingested corpus.ltmc."""
    manifest = tmp_path / 'manifest.json'
    manifest.write_text(json.dumps(tiny_manifest()), encoding='utf-8')
    cmd_ingest(manifest, tmp_path / 'corpus.ltmc')
    return tmp_path


@pytest.fixture
def write_json(lab_dir):
    """Factory: write a JSON file into the lab directory and return its path as str."""

    def _write(name, payload):
        path = lab_dir / name
        path.write_text(json.dumps(payload), encoding='utf-8')
        return str(path)

    return _write


def slow_enabled() -> bool:
    return os.getenv('LTM_LAB_RUN_SLOW') == '1'
