import random

import pytest

from zerotree.btree import KeyRange, Session, encode_composite
from zerotree.errors import MissingIndex
from zerotree.query import (
    Condition,
    IndexCatalog,
    SetIndex,
    decode_value,
    encode_value,
    iter_or,
    query_and_prefetch,
    query_or,
    query_preorder,
    unfolded_lookup,
)

CITIES = ["ams", "ber", "cph", "dub", "hel", "lis", "osl", "par", "rom", "vie"]


def make_corpus(seed, n):
    r = random.Random(seed)
    return {oid: {"age": r.randrange(18, 60), "city": r.choice(CITIES), "score": r.randrange(1000)}
            for oid in r.sample(range(1, 10 * n), n)}


def populate(session, corpus, *, bucket_size=512, composite=True):
    cat = IndexCatalog(session, "people/", bucket_size=bucket_size, compression=1.0)
    if composite:
        cat.add_composite("age", "city", "score")
    for oid, rec in corpus.items():
        cat.index_object(oid, rec)
    cat.commit()
    return cat


def reopen(client, master_key, bucket_size=512):
    return IndexCatalog(Session(client, master_key, cache_bytes=0), "people/",
                        bucket_size=bucket_size, compression=1.0)


def matches(rec, cond):
    return encode_value(rec[cond.field]) in cond.range


def oracle_and(corpus, a, b, sort_field="score"):
    hits = [oid for oid, rec in corpus.items() if matches(rec, a) and matches(rec, b)]
    return sorted(hits, key=lambda oid: (corpus[oid][sort_field], oid))


def random_condition(r, field):
    if field == "age":
        if r.random() < 0.5:
            return Condition.eq("age", r.randrange(15, 62))
        lo = r.randrange(15, 62)
        return Condition.between("age", lo, lo + r.randrange(0, 10))
    if r.random() < 0.5:
        return Condition.eq("city", r.choice(CITIES + ["zzz"]))
    lo, hi = sorted(r.sample(CITIES, 2))
    return Condition.between("city", lo, hi, high_inclusive=False)


@pytest.fixture(scope="module")
def corpus_env(tmp_path_factory):
    from zerotree.crypto import random_key
    from zerotree.wire import LocalTransport, ObjectStore, StoreClient
    store = ObjectStore(tmp_path_factory.mktemp("q"), fsync=False)
    client = StoreClient(LocalTransport(store))
    key = random_key()
    corpus = make_corpus(99, 5000)
    populate(Session(client, key), corpus)
    yield client, key, corpus
    store.close()


class TestValues:
    @pytest.mark.parametrize("a,b", [(-5, 3), (3, 40), ("a", "b"), ("ab", "b"), (10**9, "0")])
    def test_order(self, a, b):
        assert encode_value(a) < encode_value(b)

    @pytest.mark.parametrize("v", [0, -7, 2**40, "héllo", b"\x00raw"])
    def test_round_trip(self, v):
        assert decode_value(encode_value(v)) == v

    def test_open_range_stays_in_type(self):
        cond = Condition.between("x", 10)
        assert encode_value(10**6) in cond.range
        assert encode_value("a") not in cond.range
        assert encode_value(9) not in cond.range


class TestPrefetch:
    def test_matches_oracle_200_pairs(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        r = random.Random(5)
        for _ in range(200):
            a, b = random_condition(r, "age"), random_condition(r, "city")
            if r.random() < 0.5:
                a, b = b, a
            assert query_and_prefetch(cat, a, b, "score") == oracle_and(corpus, a, b)

    def test_limit_truncates(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        a, b = Condition.between("age", 20, 40), Condition.eq("city", "par")
        assert query_and_prefetch(cat, a, b, "score", limit=5) == oracle_and(corpus, a, b)[:5]

    def test_empty_condition_stops_early(self, corpus_env):
        client, key, _ = corpus_env
        cat = reopen(client, key)
        outer = cat.field_index("age").outer
        cat.field_index("city"), cat.sort_index("score")
        t = cat.session.transport
        t.reset_counters()
        assert query_and_prefetch(cat, Condition.eq("age", 99), Condition.eq("city", "par"), "score") == []
        assert t.exchanges == outer.height()

    def test_round_trip_bound(self, corpus_env):
        client, key, _ = corpus_env
        cat = reopen(client, key)
        ia, ib, srt = cat.field_index("age"), cat.field_index("city"), cat.sort_index("score")
        a, b = Condition.eq("age", 30), Condition.eq("city", "osl")
        ta, tb = ia.sets(a.range)[0][1], ib.sets(b.range)[0][1]
        h_a = ia.outer.height() + ta.height()
        h_b = ib.outer.height() + tb.height()
        h_large = max(ta.height(), tb.height())
        t = cat.session.transport
        t.reset_counters()
        query_and_prefetch(cat, a, b, "score")
        assert t.exchanges <= 2 * (h_a + h_b) + h_large + srt.height()

    def test_missing_index(self, corpus_env):
        client, key, _ = corpus_env
        cat = reopen(client, key)
        with pytest.raises(MissingIndex):
            query_and_prefetch(cat, Condition.eq("nope", 1), Condition.eq("age", 3), "score")
        with pytest.raises(MissingIndex):
            query_and_prefetch(cat, Condition.eq("age", 1), Condition.eq("age", 3), "weight")


class TestPreorder:
    def test_agrees_with_prefetch(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        r = random.Random(8)
        for _ in range(60):
            age, city = r.randrange(17, 61), r.choice(CITIES)
            want = query_and_prefetch(cat, Condition.eq("age", age), Condition.eq("city", city), "score")
            assert query_preorder(cat, ("age", age), ("city", city), "score", 10**6) == want
            assert query_preorder(cat, ("age", age), ("city", city), "score", 3) == want[:3]

    def test_absent_group(self, corpus_env):
        client, key, _ = corpus_env
        assert query_preorder(reopen(client, key), ("age", 5), ("city", "ams"), "score", 10) == []

    def test_rounds_independent_of_group_size(self, session, client, master_key):
        corpus = {}
        oid = 1
        for group, size in enumerate((10, 100, 1000, 10_000)):
            for i in range(size):
                corpus[oid] = {"g": group, "h": 0, "v": (i * 7919) % 10007}
                oid += 1
        cat = IndexCatalog(session, "big/", bucket_size=1024, compression=1.0)
        cat.add_composite("g", "h", "v")
        for k, rec in corpus.items():
            cat.index_object(k, rec)
        cat.commit()
        cold = IndexCatalog(Session(client, master_key, cache_bytes=0), "big/", bucket_size=1024,
                            compression=1.0)
        index = cold.composite_index("g", "h", "v")
        counts = []
        for group in range(4):
            t = cold.session.transport
            t.reset_counters()
            got = query_preorder(cold, ("g", group), ("h", 0), "v", 1)
            counts.append(t.exchanges)
            want = min((rec["v"], k) for k, rec in corpus.items() if rec["g"] == group)[1]
            assert got == [want]
        outer_h = index.outer.height()
        for group, n in enumerate(counts):
            g = encode_composite([encode_value(group), encode_value(0)])
            inner_h = index.sets(KeyRange.single(g))[0][1].height()
            assert n == outer_h + inner_h


class TestOr:
    def test_disjoint(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        a, b = Condition.eq("city", "ams"), Condition.eq("city", "ber")
        want = sorted(k for k, r in corpus.items() if r["city"] in ("ams", "ber"))
        assert query_or(cat, [a, b]) == want

    def test_dedup(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        a = Condition.eq("age", 33)
        assert query_or(cat, [a, a]) == sorted(k for k, r in corpus.items() if r["age"] == 33)

    def test_matches_oracle(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        r = random.Random(11)
        for _ in range(200):
            a, b = random_condition(r, "age"), random_condition(r, "city")
            got = query_or(cat, [a, b])
            assert got == sorted(k for k, rec in corpus.items() if matches(rec, a) or matches(rec, b))

    def test_lazy(self, corpus_env):
        client, key, corpus = corpus_env
        cat = reopen(client, key)
        stream = iter_or(cat, [Condition.between("age", 18, 59), Condition.eq("city", "rom")])
        t = cat.session.transport
        t.reset_counters()
        first = next(stream)
        assert first == min(corpus)
        assert t.exchanges < 20

    def test_needs_two(self, corpus_env):
        client, key, _ = corpus_env
        with pytest.raises(ValueError):
            query_or(reopen(client, key), [Condition.eq("age", 3)])


class TestUnfolded:
    @pytest.fixture
    def words(self, session):
        r = random.Random(3)
        pairs = {}
        for wid in range(200):
            for oid in r.sample(range(1, 5000), r.randrange(1, 40)):
                pairs.setdefault(wid, set()).add(oid)
        cat = IndexCatalog(session, "w/", bucket_size=512, compression=1.0)
        nested = cat.field_index("wid", create=True)
        for wid, oids in pairs.items():
            for oid in oids:
                cat.add_tuple("words", encode_value(wid), oid)
                nested.add(encode_value(wid), oid.to_bytes(8, "big"))
        cat.commit()
        return cat, pairs

    def test_equals_nested(self, words):
        cat, pairs = words
        nested = cat.field_index("wid")
        for wid in range(0, 200, 7):
            want = [int.from_bytes(k, "big") for k, _ in nested.sets(Condition.eq("wid", wid).range)[0][1].items()]
            assert unfolded_lookup(cat, "words", encode_value(wid), 1000) == want
            assert want == sorted(pairs[wid])

    def test_absent(self, words):
        cat, _ = words
        assert unfolded_lookup(cat, "words", encode_value(999), 10) == []

    def test_padding_equalizes_bytes(self, client, master_key, session):
        # one wid per match count 1..P, interleaved with filler words
        width = 32
        cat = IndexCatalog(session, "pad/", bucket_size=512, compression=1.0)
        for wid in range(1, width + 1):
            for j in range(wid):
                cat.add_tuple("t", encode_value(wid), wid * 1000 + j)
            for j in range(width):
                cat.add_tuple("t", encode_value(wid) + b"~", j)
        cat.commit()
        cold = IndexCatalog(Session(client, master_key, cache_bytes=0), "pad/", bucket_size=512, compression=1.0)
        tree = cold.unfolded_index("t")
        sizes = []
        for wid in range(1, width + 1):
            t = cold.session.transport
            t.reset_counters()
            got = unfolded_lookup(cold, "t", encode_value(wid), width, padding=width)
            sizes.append(t.bytes_received)
            assert got == [wid * 1000 + j for j in range(wid)]
        assert max(sizes) - min(sizes) <= tree.bucket_size + 64


def test_set_index_remove(session):
    idx = SetIndex(session, "s", 256, 1.0)
    for i in range(300):
        idx.add(b"v", i.to_bytes(8, "big"))
    session.commit()
    for i in range(300):
        assert idx.remove(b"v", i.to_bytes(8, "big"))
    session.commit()
    assert idx.sets(KeyRange.single(b"v")) == []
    assert not idx.remove(b"v", b"\x00" * 8)
