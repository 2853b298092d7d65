"""Encrypted inverted index with incremental, bound-driven top-k search.

Scoring follows the practical TF-IDF scheme:

    TF(t, D)   = sqrt(f(t, D))
    IDF(t)     = 1 + ln(N_docs / (N_docs(t) + 1))
    part(t, D) = TF(t, D) / sqrt(|D|)          (|D| = unique terms in D, fixed at indexing)
    s(D)       = sum_i w_i * part(t_i, D),     w_i = IDF(t_i)^2 / sqrt(sum_j IDF(t_j)^2)

Postings of every term share one tree keyed by (term, inverted 32.32 part,
docid), so reading a term's range in key order yields its documents by
descending part. Search pulls entries one at a time from whichever term
currently leaves the most room in the bounds, and emits a document as soon
as no other document, seen or unseen, can outrank it.
"""

from __future__ import annotations

import heapq
import math
import re
from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass

from .btree import BTree, KeyRange, Session, encode_composite, multi_get, open_cursors
from .btree.keys import decode_uint, encode_uint
from .errors import DuplicateDocument, EmptyCorpus

SCALE = 1 << 32
_MASK64 = (1 << 64) - 1
_TOKEN = re.compile(r"[^\W_]+")
_N_DOCS = b""


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs; no stemming, no stopwords."""
    return _TOKEN.findall(text.lower())


def tf(count: int) -> float:
    if count < 0:
        raise ValueError("term count must be >= 0")
    return math.sqrt(count)


def idf(n_docs: int, n_docs_t: int) -> float:
    if n_docs <= 0:
        raise EmptyCorpus("no documents indexed")
    return 1.0 + math.log(n_docs / (n_docs_t + 1))


def quantize(x: float) -> float:
    """Round to the 32.32 fixed-point grid used in posting keys (exact in a double)."""
    return round(x * SCALE) / SCALE


def score_part(count: int, unique_terms: int) -> float:
    return quantize(tf(count) / math.sqrt(unique_terms))


def encode_score(part: float) -> bytes:
    """Fixed-point 32.32 with all bits inverted: byte ascent is numeric descent."""
    q = round(part * SCALE)
    if not 0 <= q <= _MASK64:
        raise ValueError(f"score part {part} outside the 32.32 range")
    return (_MASK64 - q).to_bytes(8, "big")


def decode_score(data: bytes) -> float:
    return (_MASK64 - int.from_bytes(data, "big")) / SCALE


def weights(idfs: list[float]) -> list[float]:
    norm = math.sqrt(sum(x * x for x in idfs))
    return [x * x / norm for x in idfs]


def combine(w: list[float], parts: Iterable[float]) -> float:
    """The one canonical score sum, always in query-term order."""
    total = 0.0
    for wi, p in zip(w, parts):
        total += wi * p
    return total


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    doc_freq: dict[str, int]

    def idf(self, term: str) -> float:
        return idf(self.n_docs, self.doc_freq.get(term, 0))


@dataclass(frozen=True)
class Hit:
    """A ranked document. ``min_score == max_score`` once every term is resolved."""

    docid: int
    min_score: float
    max_score: float

    @property
    def exact(self) -> bool:
        return self.min_score == self.max_score


@dataclass
class SearchStats:
    entries_read: int = 0
    steps: int = 0


Observer = Callable[[dict[int, tuple[float, float]], float], None]


class FullTextIndex:
    """Postings, corpus statistics and document ids of one text field."""

    def __init__(self, session: Session, field: str = "body", *, bucket_size: int = 8192,
                 compression: float = 3.0):
        opts = dict(bucket_size=bucket_size, compression=compression)
        self.session = session
        self.field = field
        self.postings = BTree(session, f"ft:{field}", **opts)
        self.stats_tree = BTree(session, f"ftstats:{field}", **opts)
        self.docs = BTree(session, f"ftdocs:{field}", **opts)
        self.last_search = SearchStats()

    @staticmethod
    def _term_prefix(term: str) -> bytes:
        return encode_composite([term.encode("utf-8")])

    def posting_key(self, term: str, part: float, docid: int) -> bytes:
        return self._term_prefix(term) + encode_score(part) + encode_uint(docid)

    # -- indexing ---------------------------------------------------------

    def index_document(self, docid: int, text: str) -> None:
        """Stage postings and statistics for one document (commit separately)."""
        counts = Counter(tokenize(text))
        terms = sorted(counts)
        ident = encode_uint(docid)
        stat_keys = [_N_DOCS] + [t.encode("utf-8") for t in terms]
        postings = [self.posting_key(t, score_part(counts[t], len(terms)), docid) for t in terms]
        # one level-synchronous walk pins every path this document will touch
        _, stats, _ = multi_get([(self.docs, [ident]), (self.stats_tree, stat_keys),
                                 (self.postings, postings)], pin=True)
        if self.docs.get(ident) is not None:
            raise DuplicateDocument(f"document {docid} is already indexed")
        self.session.reserve(2 * len(terms) + 4)
        self.docs.insert(ident, b"")
        for key in stat_keys:
            old = stats[key]
            self.stats_tree.insert(key, encode_uint((decode_uint(old) if old else 0) + 1))
        for key in postings:
            self.postings.insert(key, b"")

    def index_documents(self, docs: Iterable[tuple[int, str]]) -> int:
        n = 0
        for docid, text in docs:
            self.index_document(docid, text)
            n += 1
        self.session.commit()
        return n

    def corpus_stats(self, terms: Iterable[str]) -> CorpusStats:
        keys = [_N_DOCS] + [t.encode("utf-8") for t in terms]
        found = self.stats_tree.parallel_traverse(keys)
        n_docs = decode_uint(found[_N_DOCS]) if found[_N_DOCS] else 0
        freq = {k.decode("utf-8"): decode_uint(v) for k, v in found.items() if k and v}
        return CorpusStats(n_docs, freq)

    # -- search -----------------------------------------------------------

    def search(self, query: str | list[str], k: int, observer: Observer | None = None) -> list[Hit]:
        """Top-``k`` documents in descending score (ascending docid on ties).

        ``observer`` is called after every step with the current
        ``{docid: (min, max)}`` bounds and the bound on any unseen document.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        terms = list(dict.fromkeys(tokenize(query) if isinstance(query, str) else
                                   [t.lower() for t in query]))
        if not terms:
            raise ValueError("query has no terms")
        stats = self.corpus_stats(terms)
        w = weights([stats.idf(t) for t in terms])
        cursors = open_cursors([(self.postings, KeyRange.prefix(self._term_prefix(t))) for t in terms])
        return _TopK(terms, w, cursors, k, observer, self).run()


class _TopK:
    def __init__(self, terms, w, cursors, k, observer, owner):
        self.n = len(terms)
        self.w = w
        self.cursors = cursors
        self.k = k
        self.observer = observer
        self.owner = owner
        self.prefix_len = [len(FullTextIndex._term_prefix(t)) for t in terms]
        self.frontier = [math.inf] * self.n
        self.exhausted = [False] * self.n
        self.known: dict[int, list[float | None]] = {}
        self.mins: dict[int, float] = {}
        self.emitted: set[int] = set()
        self.heap: list[tuple[float, int]] = []  # (-min, docid), stale entries skipped lazily
        self.blocker: int | None = None
        self.stats = SearchStats()

    def pull(self, i: int) -> None:
        item = self.cursors[i].next()
        if item is None:
            self.exhausted[i] = True
            self.frontier[i] = 0.0
            return
        key = item[0]
        p = self.prefix_len[i]
        part = decode_score(key[p:p + 8])
        docid = decode_uint(key[p + 8:p + 16])
        self.stats.entries_read += 1
        self.frontier[i] = part
        if docid in self.emitted:  # later postings of an emitted document only move the frontier
            return
        vals = self.known.setdefault(docid, [None] * self.n)
        vals[i] = part
        m = combine(self.w, (v or 0.0 for v in vals))
        self.mins[docid] = m
        heapq.heappush(self.heap, (-m, docid))

    def max_of(self, docid: int) -> float:
        return combine(self.w, (self.frontier[i] if v is None else v for i, v in enumerate(self.known[docid])))

    def phantom(self) -> float:
        return combine(self.w, self.frontier)

    def best(self) -> int | None:
        while self.heap:
            neg, docid = self.heap[0]
            if docid in self.mins and self.mins[docid] == -neg:
                return docid
            heapq.heappop(self.heap)
        return None

    def beats(self, d: int, e: int) -> bool:
        lo, hi = self.mins[d], self.max_of(e)
        return lo > hi or (lo == hi and d < e)

    def try_emit(self) -> Hit | None:
        d = self.best()
        if d is None:
            return None
        if not all(self.exhausted) and not self.mins[d] > self.phantom():
            return None
        if self.blocker is not None and self.blocker in self.mins and self.blocker != d:
            if not self.beats(d, self.blocker):
                return None
        for e in self.mins:
            if e != d and not self.beats(d, e):
                self.blocker = e
                return None
        self.blocker = None
        hit = Hit(d, self.mins[d], self.max_of(d))
        del self.mins[d]
        del self.known[d]
        self.emitted.add(d)
        return hit

    def report(self) -> None:
        if self.observer is not None:
            self.observer({d: (m, self.max_of(d)) for d, m in self.mins.items()}, self.phantom())

    def run(self) -> list[Hit]:
        out: list[Hit] = []
        for i in range(self.n):
            self.pull(i)
        self.report()
        while len(out) < self.k:
            hit = self.try_emit()
            if hit is not None:
                out.append(hit)
                continue
            if all(self.exhausted):
                break
            live = [i for i in range(self.n) if not self.exhausted[i]]
            i = max(live, key=lambda j: (self.w[j] * self.frontier[j], -j))
            self.pull(i)
            self.stats.steps += 1
            self.report()
        self.owner.last_search = self.stats
        return out
