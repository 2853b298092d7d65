import math
import random

import pytest
import scipy.special

from zerotree.btree import BTree, Session
from zerotree.crypto import random_key
from zerotree.errors import DomainError, ResourceCap
from zerotree.perfmodel import (
    CSV_HEADER,
    NetworkModel,
    Scenario,
    SimulatedTransport,
    delay,
    lambert_w,
    optimal_bucket_size,
    predict_query_cost,
    results_csv,
    run_benchmark,
)
from zerotree.wire import LocalTransport, StoreClient

KB = 1024


def w_bisect(x):
    """Oracle: bisection on w*e^w - x, monotone for w >= 0."""
    lo, hi = 0.0, max(1.0, math.log(x + 1))
    while hi * math.exp(hi) < x:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if mid * math.exp(mid) < x:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def dt(model, s_b, s_r=29, s_i=50 * 2**30, s_c=5 * 2**20):
    return predict_query_cost(s_i, s_c, s_b, s_r, model).time


class TestLambert:
    def test_fixed_points(self):
        assert lambert_w(0) == 0
        assert lambert_w(math.e) == pytest.approx(1, rel=1e-15)

    def test_against_bisection(self):
        w = lambert_w(634.3)
        assert w == pytest.approx(4.8695255, abs=1e-7)
        assert w == pytest.approx(w_bisect(634.3), rel=1e-12)
        assert abs(w * math.exp(w) - 634.3) / 634.3 <= 1e-12

    def test_residual_log_grid(self):
        for e in range(-60, 91):
            x = 10 ** (e / 10)
            w = lambert_w(x)
            assert abs(w * math.exp(w) - x) <= 1e-12 * max(x, 1)

    def test_against_scipy(self):
        r = random.Random(3)
        for _ in range(500):
            x = 10 ** r.uniform(-6, 9)
            assert lambert_w(x) == pytest.approx(scipy.special.lambertw(x).real, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            lambert_w(-0.1)


class TestOptimalBucket:
    def test_uncompressed_operating_point(self):
        s = optimal_bucket_size(NetworkModel(0.05, 1e6, 1), 29)
        assert s == pytest.approx(10_270, rel=1e-3)
        assert s / KB == pytest.approx(10, rel=0.05)

    def test_compressed_operating_point(self):
        s = optimal_bucket_size(NetworkModel(0.05, 1e6, 3), 29)
        assert s == pytest.approx(25_900, rel=1e-3)
        assert s / 3 / KB == pytest.approx(8, rel=0.10)

    def test_optimal_on_log_grid(self):
        r = random.Random(50)
        for _ in range(50):
            m = NetworkModel(10 ** r.uniform(-3, 0), 10 ** r.uniform(4, 9), r.uniform(1, 5))
            s_r = r.uniform(10, 60)
            best = optimal_bucket_size(m, s_r)
            t_best = dt(m, best, s_r, s_i=1e15, s_c=s_r)
            for j in range(1000):
                s = s_r * 1.0001 * 10 ** (j * 9 / 999)
                assert t_best <= dt(m, s, s_r, s_i=1e15, s_c=s_r) * 1.01

    def test_small_tau_matches_golden_section(self):
        m = NetworkModel(1e-5, 1e6, 1)
        f = lambda s: dt(m, s, 29, 1e12, 29)
        a, b = 30.0, 1e6
        g = (math.sqrt(5) - 1) / 2
        for _ in range(200):
            c, d = b - g * (b - a), a + g * (b - a)
            if f(c) < f(d):
                b = d
            else:
                a = c
        assert optimal_bucket_size(m, 29) == pytest.approx((a + b) / 2, rel=0.01)
        assert optimal_bucket_size(m, 29) < 200

    def test_monotone_in_tau_and_bandwidth(self):
        taus = [10 ** (e / 10) for e in range(-40, 11)]
        sizes = [optimal_bucket_size(NetworkModel(t, 1e6, 2)) for t in taus]
        assert sizes == sorted(sizes)
        bws = [10 ** (e / 10) for e in range(30, 100)]
        sizes = [optimal_bucket_size(NetworkModel(0.05, b, 2)) for b in bws]
        assert sizes == sorted(sizes)

    def test_invalid_model(self):
        for args in ((0, 1e6, 1), (0.05, -1, 1), (0.05, 1e6, 0.5)):
            with pytest.raises(DomainError):
                NetworkModel(*args)
        with pytest.raises(DomainError):
            optimal_bucket_size(NetworkModel(0.05, 1e6), 0)


class TestPredict:
    model = NetworkModel(0.05, 1e6, 3)

    def test_cached_operating_point(self):
        s_b = optimal_bucket_size(self.model, 29)
        est = predict_query_cost(50 * 2**30, 5 * 2**20, s_b, 29, self.model)
        assert 1.25 <= est.round_trips <= 1.45
        assert 0.065 <= est.time <= 0.085
        assert 10 <= est.traffic / KB <= 12

    def test_uncached_operating_point(self):
        s_b = optimal_bucket_size(self.model, 29)
        est = predict_query_cost(50 * 2**30, 29, s_b, 29, self.model)
        assert 0.16 <= est.time <= 0.19
        assert 23 <= est.traffic / KB <= 27

    def test_invariants(self):
        est = predict_query_cost(1e9, 1e5, 8000, 29, self.model)
        assert est.time == pytest.approx(est.round_trips * delay(self.model, 8000), rel=1e-15)
        assert est.traffic == pytest.approx(est.round_trips * 8000 / 3, rel=1e-15)

    def test_single_bucket_index(self):
        assert predict_query_cost(8000, 29, 8000, 29, self.model).round_trips == pytest.approx(1, abs=1e-12)

    @pytest.mark.parametrize("args", [(1e9, 1e5, 20, 29), (1e4, 1e5, 8000, 29), (1e9, 10, 8000, 29)])
    def test_preconditions(self, args):
        with pytest.raises(DomainError):
            predict_query_cost(*args, self.model)


class TestSimulatedTransport:
    def test_clock_and_payload(self, store):
        model = NetworkModel(0.05, 1e6, 3)
        plain = LocalTransport(store)
        sim = SimulatedTransport(LocalTransport(store), model)
        key = random_key()
        tree = BTree(Session(StoreClient(plain), key), "t", bucket_size=256)
        for i in range(300):
            tree.insert(i.to_bytes(4, "big"), b"v" * 20)
        tree.commit()
        mirror = BTree(Session(StoreClient(sim), key, cache_bytes=0), "t", bucket_size=256)
        assert mirror.items() == tree.items()
        expected = sim.exchanges * 0.05 + (sim.bytes_sent + sim.bytes_received) / 1e6
        assert sim.clock == pytest.approx(expected, rel=1e-12)
        before = sim.clock
        mirror.search((7).to_bytes(4, "big"))
        assert sim.clock > before
        sim.reset_counters()
        assert sim.clock == 0 and sim.exchanges == 0


class TestBenchmark:
    def test_zero_cache_counts_height(self):
        r = run_benchmark(Scenario(keys=100_000, queries=200, s_c=0))
        assert r.measured.round_trips == r.height

    def test_cached_branches_leave_one_fetch(self):
        probe = run_benchmark(Scenario(keys=100_000, queries=50, s_c=0))
        r = run_benchmark(Scenario(keys=100_000, queries=400, s_c=probe.index_bytes / 20))
        assert r.measured.round_trips == pytest.approx(1, abs=0.1)

    def test_mid_range_agrees_with_model(self):
        # cache one sixty-fourth of the index: the branch levels plus a few leaves
        probe = run_benchmark(Scenario(keys=100_000, queries=50, s_c=0, s_b=3000))
        r = run_benchmark(Scenario(keys=100_000, queries=500, s_c=probe.index_bytes / 64, s_b=3000))
        assert r.measured.time == pytest.approx(r.analytic.time, rel=0.25)

    @pytest.mark.parametrize("s_b", [12_000, 2500, 800])
    def test_uncached_heights(self, s_b):
        r = run_benchmark(Scenario(keys=60_000, queries=100, s_c=0, s_b=s_b))
        assert 2 <= r.height <= 4
        assert abs(r.measured.round_trips - math.ceil(r.analytic.round_trips)) <= 1

    def test_resource_cap(self):
        with pytest.raises(ResourceCap):
            run_benchmark(Scenario(keys=10**7))

    def test_config_and_csv(self):
        scn = Scenario.parse("# demo\nname=tiny\nkeys=2e3\nqueries=20\ns_c=0\ntau=0.02\n")
        assert (scn.name, scn.keys, scn.tau) == ("tiny", 2000, 0.02)
        text = results_csv([run_benchmark(scn)])
        lines = text.splitlines()
        assert lines[0].split(",") == CSV_HEADER
        assert lines[1].startswith("tiny,")
        with pytest.raises(ValueError):
            Scenario.parse("bogus=1")
        with pytest.raises(ValueError):
            Scenario.parse("keys=many")
