"""Analytic query-cost model, optimal bucket sizing, and a virtual-time benchmark.

A point query walks from the first uncached level down to a leaf::

    k  = (ln s_i - ln s_c) / (ln s_b - ln s_r)      round trips
    dt = k * (tau + s_b / (c * b))                  seconds
    traffic = k * s_b / c                           bytes

``s_b`` is the plaintext bucket size; a bucket travels compressed as ``s_b / c``.
Minimizing ``dt`` over ``s_b`` gives ``s_b = c*b*tau / W(c*b*tau / (e * s_r))``.
"""

from __future__ import annotations

import csv
import io
import math
import random
import tempfile
from dataclasses import dataclass

from .btree import BTree, Session, encode_uint
from .btree.node import branch_record_size
from .crypto import random_key
from .errors import DomainError, ResourceCap
from .wire.client import LocalTransport, StoreClient, Transport
from .wire.store import ObjectStore

RECORD_SIZE = 29  # default s_r for sizing examples; real trees report branch_record_size()


@dataclass(frozen=True)
class NetworkModel:
    tau: float
    bandwidth: float
    compression: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and self.bandwidth > 0 and self.compression >= 1):
            raise DomainError("need tau > 0, bandwidth > 0 and compression >= 1")


@dataclass(frozen=True)
class CostEstimate:
    round_trips: float
    time: float
    traffic: float


def lambert_w(x: float) -> float:
    """Principal branch of W on x >= 0 by Halley iteration."""
    if x < 0 or math.isnan(x):
        raise DomainError("lambert_w is defined here for x >= 0 only")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return math.inf
    w = math.log1p(x)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1
        step = f / (ew * wp1 - (w + 2) * f / (2 * wp1))
        w -= step
        if abs(step) <= 1e-15 * max(abs(w), 1e-300):
            break
    return w


def delay(model: NetworkModel, s_b: float) -> float:
    """Seconds one bucket fetch takes: a round trip plus the compressed bucket on the wire."""
    return model.tau + s_b / (model.compression * model.bandwidth)


def round_trips(s_i: float, s_c: float, s_b: float, s_r: float) -> float:
    if not (s_b > s_r >= 1 and s_i >= s_c >= s_r):
        raise DomainError("need s_b > s_r >= 1 and s_i >= s_c >= s_r")
    return (math.log(s_i) - math.log(s_c)) / (math.log(s_b) - math.log(s_r))


def optimal_bucket_size(model: NetworkModel, s_r: float = RECORD_SIZE) -> float:
    """Plaintext bucket size minimizing query time; independent of index and cache size."""
    if s_r < 1:
        raise DomainError("record size must be >= 1")
    cbt = model.compression * model.bandwidth * model.tau
    return cbt / lambert_w(cbt / (math.e * s_r))


def predict_query_cost(s_i: float, s_c: float, s_b: float, s_r: float, model: NetworkModel) -> CostEstimate:
    k = round_trips(s_i, s_c, s_b, s_r)
    return CostEstimate(k, k * delay(model, s_b), k * s_b / model.compression)


class SimulatedTransport(Transport):
    """Pass-through transport that charges each exchange ``tau + wire bytes / b`` of virtual time.

    Wire bytes are already compressed, so bandwidth is not divided by c again.
    """

    def __init__(self, inner: Transport, model: NetworkModel):
        super().__init__()
        self.inner = inner
        self.model = model
        self.clock = 0.0

    def _roundtrip(self, frame: bytes) -> bytes:
        response = self.inner._roundtrip(frame)
        self.clock += self.model.tau + (len(frame) + len(response)) / self.model.bandwidth
        return response

    def reset_counters(self) -> None:
        super().reset_counters()
        self.clock = 0.0

    def close(self) -> None:
        self.inner.close()


# -- benchmark ---------------------------------------------------------------

_FIELDS = {"s_i": float, "s_c": float, "s_b": float, "tau": float, "b": float, "c": float,
           "keys": int, "queries": int, "seed": int, "value_size": int, "name": str}


@dataclass
class Scenario:
    name: str = "scenario"
    keys: int = 100_000
    queries: int = 1000
    s_c: float = 5 * 1024 * 1024
    s_b: float | None = None  # plaintext bucket size; None means the model optimum
    tau: float = 0.05
    b: float = 1e6
    c: float = 3.0
    seed: int = 0
    value_size: int = 24
    s_i: float | None = None  # informational; the benchmark measures the real index size

    @property
    def model(self) -> NetworkModel:
        return NetworkModel(self.tau, self.b, self.c)

    @classmethod
    def parse(cls, text: str) -> Scenario:
        """``key=value`` lines; blank lines and ``#`` comments are ignored."""
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key = key.strip()
            if not sep or key not in _FIELDS:
                raise ValueError(f"line {n}: expected one of {sorted(_FIELDS)} as key=value")
            try:
                values[key] = _FIELDS[key](float(raw) if _FIELDS[key] is int else raw.strip())
            except ValueError:
                raise ValueError(f"line {n}: bad value for {key}: {raw.strip()!r}") from None
        return cls(**values)


@dataclass(frozen=True)
class BenchmarkResult:
    scenario: str
    measured: CostEstimate
    analytic: CostEstimate
    height: int
    index_bytes: int
    mean_bucket: float
    compression: float

    def row(self) -> list:
        m, a = self.measured, self.analytic
        return [self.scenario, f"{m.round_trips:.4f}", f"{a.round_trips:.4f}", f"{m.time:.6f}",
                f"{a.time:.6f}", f"{m.traffic:.1f}", f"{a.traffic:.1f}"]


CSV_HEADER = ["scenario", "k_measured", "k_analytic", "dt_measured", "dt_analytic",
              "traffic_measured", "traffic_analytic"]


def results_csv(results: list[BenchmarkResult]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow(r.row())
    return out.getvalue()


def _value(rng: random.Random, i: int, size: int) -> bytes:
    words = ("alpha", "bravo", "delta", "echo", "kilo", "lima", "oscar", "romeo")
    text = f"{i}:" + "-".join(rng.choice(words) for _ in range(size // 4))
    return text.encode()[:size].ljust(size, b".")


def build_index(session: Session, scn: Scenario, name: str = "bench") -> BTree:
    s_b = scn.s_b or optimal_bucket_size(scn.model)
    tree = BTree(session, name, bucket_size=max(64, int(s_b / scn.c)), compression=scn.c)
    rng = random.Random(scn.seed)
    for i in range(scn.keys):
        tree.insert(encode_uint(i * 7), _value(rng, i, scn.value_size))
        if i % 20_000 == 19_999:
            tree.commit()
    tree.commit()
    return tree


def run_benchmark(scn: Scenario, store_dir: str | None = None, max_keys: int = 2_000_000) -> BenchmarkResult:
    """Build the scenario's index, then time random point queries through a virtual-clock transport."""
    if scn.keys > max_keys:
        raise ResourceCap(f"{scn.keys} keys exceeds the cap of {max_keys}")
    if scn.keys < 1 or scn.queries < 1:
        raise ValueError("keys and queries must be >= 1")
    with tempfile.TemporaryDirectory() as tmp, ObjectStore(store_dir or tmp, fsync=False) as store:
        master = random_key()
        tree = build_index(Session(StoreClient(LocalTransport(store)), master, cache_bytes=0), scn)
        sim = SimulatedTransport(LocalTransport(store), scn.model)
        session = Session(StoreClient(sim), master, cache_bytes=int(scn.s_c))
        probe = BTree(session, tree.name, bucket_size=tree.bucket_size, compression=tree.compression)
        shape = probe.bulk_fetch_subtree()
        plain = [n.size for n in shape.nodes.values()]
        wire = sum(len(rec.blob) for rec in store.get_objects(list(shape.nodes)))
        session.cache.clear()
        rng = random.Random(scn.seed + 1)
        for _ in range(scn.queries):  # warm the cache
            probe.search(encode_uint(rng.randrange(scn.keys) * 7))
        sim.reset_counters()
        n = scn.queries
        for _ in range(n):
            probe.search(encode_uint(rng.randrange(scn.keys) * 7))
        measured = CostEstimate(sim.exchanges / n, sim.clock / n, sim.bytes_received / n)
    index_bytes = sum(plain)
    mean_bucket = index_bytes / len(plain)
    c = max(1.0, index_bytes / wire)
    s_r = branch_record_size()
    s_c = min(max(scn.s_c, s_r), index_bytes)
    if mean_bucket > s_r:
        analytic = predict_query_cost(max(index_bytes, s_c), s_c, mean_bucket, s_r,
                                      NetworkModel(scn.tau, scn.b, c))
    else:
        analytic = CostEstimate(1.0, scn.tau, mean_bucket / c)
    return BenchmarkResult(scn.name, measured, analytic, shape.height, index_bytes, mean_bucket, c)
