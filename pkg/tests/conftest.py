import os
import random

import pytest

from zerotree.btree import BTree, Session
from zerotree.crypto import random_key
from zerotree.wire import LocalTransport, ObjectStore, StoreClient, start_background
from zerotree.wire.client import TcpTransport


@pytest.fixture
def store(tmp_path):
    s = ObjectStore(tmp_path / "store", fsync=False)
    yield s
    s.close()


@pytest.fixture
def client(store):
    return StoreClient(LocalTransport(store))


@pytest.fixture
def master_key():
    return random_key()


@pytest.fixture
def session(client, master_key):
    return Session(client, master_key, cache_bytes=0)


@pytest.fixture
def tcp_server(store):
    server = start_background(store)
    yield server
    server.shutdown()
    server.server_close()


@pytest.fixture
def tcp_client(tcp_server):
    c = StoreClient(TcpTransport(*tcp_server.address))
    yield c
    c.close()


@pytest.fixture
def rng():
    return random.Random(int(os.environ.get("ZEROTREE_TEST_SEED", "1234")))


def build_tree(session, keys, *, name="ix", bucket_size=256, compression=1.0, value=lambda k: k[::-1]):
    tree = BTree(session, name, bucket_size=bucket_size, compression=compression)
    for k in keys:
        tree.insert(k, value(k))
    tree.commit()
    return tree


# -- acceptance summary: one PASS/FAIL line per numbered criterion -----------

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed and not report.skipped):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"titles": [], "failed": False, "skipped": False, "ran": False})
    if title not in entry["titles"]:
        entry["titles"].append(title)
    if report.failed:
        entry["failed"] = True
    elif report.skipped:
        entry["skipped"] = True
    elif report.when == "call":
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "FAIL" if e["failed"] else "PASS" if e["ran"] else "SKIP"
        note = " (some checks skipped)" if e["skipped"] and status == "PASS" else ""
        terminalreporter.write_line(f"criterion {n}: {status}{note} - {'; '.join(e['titles'])}")
