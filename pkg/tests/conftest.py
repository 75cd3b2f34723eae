from __future__ import annotations

import pytest

from asgiclient import AsgiClient
from provkernel.kernel import ProvenanceKernel
from provkernel.service import create_app
from provkernel.storage import FileStorage, MemoryStorage, RemoteStorage


@pytest.fixture(params=["memory", "file", "remote"])
def storage(request, tmp_path):
    """One fixture, three backends: the interchangeability contract."""
    if request.param == "memory":
        yield MemoryStorage()
    elif request.param == "file":
        yield FileStorage(tmp_path / "store")
    else:
        app = create_app(MemoryStorage())
        client = AsgiClient(app)
        remote = RemoteStorage(client=client)
        yield remote
        client.close()


@pytest.fixture
def kernel(storage):
    return ProvenanceKernel(storage)


@pytest.fixture
def mem_kernel():
    return ProvenanceKernel(MemoryStorage())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the per-criterion acceptance verdicts at the end of the run."""
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
