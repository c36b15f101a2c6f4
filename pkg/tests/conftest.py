"""Shared test setup: the whole suite runs with networking disabled."""

import socket
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


class _NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Refuse any socket connection at the process level; the suite must be
    fully hermetic."""

    def guard(*args, **kwargs):
        raise _NetworkBlocked("network access attempted during tests")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket, "create_connection", guard)


@pytest.fixture
def q64_fixtures():
    return FIXTURES / "q64"


@pytest.fixture
def q17_fixtures():
    return FIXTURES / "q17"
