import json
import os
import shutil
import socket
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "fixtures" / "golden"
MOCK_DEMO = ROOT / "configs" / "mock_demo"


def pytest_collection_modifyitems(config, items):
    if os.environ.get("ACPS_LIVE") == "1":
        return
    skip = pytest.mark.skip(reason="live backend test; set ACPS_LIVE=1 to run")
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)


@pytest.fixture
def no_network(monkeypatch):
    """Any socket connection attempt fails the test."""
    calls = []

    def refuse(self, *args, **kwargs):
        calls.append(args)
        raise AssertionError(f"network access attempted: {args}")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", lambda *a, **k: refuse(None, *a))
    return calls


@pytest.fixture
def mock_demo(tmp_path):
    """A writable copy of the bundled mock demo configuration."""
    dst = tmp_path / "mock_demo"
    shutil.copytree(MOCK_DEMO, dst)
    return dst


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path
