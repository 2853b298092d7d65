"""How much a server watching leaf accesses learns about query keywords.

Each keyword's queries hit its own leaf, so after q queries the server holds
an access count per keyword. Two keywords with counts N1, N2 can be told
apart when |N1 - N2| > sqrt(N1 + N2). A keyword counts as inferable when it
can be told apart from every other keyword; the reported fraction is the
probability that the next query asks for an inferable keyword.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyTable, ParseError, SizeCap

DEFAULT_SIZE_CAP = 10_000_000


@dataclass(frozen=True)
class FrequencyTable:
    keywords: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        if len(self.keywords) == 0:
            raise EmptyTable("frequency table has no entries")
        if len(self.keywords) != len(self.probs):
            raise ValueError("keywords and probabilities differ in length")

    @classmethod
    def from_weights(cls, weights: dict[str, float]) -> FrequencyTable:
        items = [(k, float(w)) for k, w in weights.items()]
        if not items:
            raise EmptyTable("frequency table has no entries")
        if any(not w > 0 or math.isinf(w) for _, w in items):
            raise ValueError("weights must be positive and finite")
        probs = np.array([w for _, w in items], dtype=np.float64)
        return cls(tuple(k for k, _ in items), probs / probs.sum())

    @classmethod
    def zipf(cls, s: float, n: int) -> FrequencyTable:
        """Rank r (1-based) gets weight r^-s."""
        if n < 1:
            raise EmptyTable("a Zipf table needs n >= 1")
        ranks = np.arange(1, n + 1, dtype=np.float64)
        w = ranks ** -s
        return cls(tuple(f"k{r}" for r in range(1, n + 1)), w / w.sum())

    def __len__(self) -> int:
        return len(self.keywords)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.keywords, self.probs.tolist()))


def parse_frequency_csv(text: str) -> FrequencyTable:
    """Rows ``keyword,count_or_probability``; duplicates are summed, then normalized."""
    weights: dict[str, float] = defaultdict(float)
    for n, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or (len(row) == 1 and not row[0].strip()) or row[0].startswith("#"):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 'keyword,weight', got {len(row)} fields", n)
        key, raw = row[0].strip(), row[1].strip()
        try:
            w = float(raw)
        except ValueError:
            if n == 1:
                continue  # header row
            raise ParseError(f"weight {raw!r} is not a number", n) from None
        if not key or not w > 0 or math.isinf(w):
            raise ParseError("keyword must be non-empty and weight positive", n)
        weights[key] += w
    if not weights:
        raise EmptyTable("no rows in frequency table")
    return FrequencyTable.from_weights(weights)


def load_frequency_csv(path: str | os.PathLike) -> FrequencyTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_frequency_csv(fh.read())


def distinguishable(n1: int, n2: int) -> bool:
    """|n1 - n2| > sqrt(n1 + n2), decided in integers."""
    if n1 < 0 or n2 < 0:
        raise ValueError("counts must be >= 0")
    d = n1 - n2
    return d * d > n1 + n2


def inferable_mask(counts: np.ndarray) -> np.ndarray:
    """Keywords distinguishable from all others.

    Distinguishability from b only gets easier as b moves away from a, so
    checking the nearest distinct count on each side decides all pairs.
    Ties are never distinguishable and unobserved keywords never inferable.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    if n == 1:
        return counts > 0
    order = np.argsort(counts, kind="stable")
    c = counts[order]
    ok = c > 0
    below = np.empty(n, dtype=np.int64)
    above = np.empty(n, dtype=np.int64)
    below[0], above[-1] = -1, -1
    below[1:], above[:-1] = c[:-1], c[1:]
    tie = (below == c) | (above == c)
    has_below, has_above = np.arange(n) > 0, np.arange(n) < n - 1
    ok &= ~tie
    ok &= ~has_below | ((c - below) ** 2 > c + below)
    ok &= ~has_above | ((above - c) ** 2 > c + above)
    mask = np.empty(n, dtype=bool)
    mask[order] = ok
    return mask


@dataclass(frozen=True)
class Estimate:
    q: int
    mean: float
    stderr: float


def fraction_inferable(freq: FrequencyTable, q: int, trials: int = 30, seed: int = 0) -> Estimate:
    """Mean probability mass of inferable keywords after ``q`` observed queries."""
    if len(freq) == 0:
        raise DomainError("empty frequency table")
    if q < 1 or trials < 1:
        raise DomainError("q and trials must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(trials)
    out = np.empty(trials)
    for t, ss in enumerate(streams):
        counts = np.random.default_rng(ss).multinomial(q, freq.probs)
        out[t] = float(freq.probs[inferable_mask(counts)].sum())
    stderr = float(out.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return Estimate(q, float(out.mean()), stderr)


def combined_field_table(first: FrequencyTable, last: FrequencyTable,
                         size_cap: int = DEFAULT_SIZE_CAP) -> FrequencyTable:
    """Both fields indexed together: independent product of the two distributions."""
    size = len(first) * len(last)
    if size > size_cap:
        raise SizeCap(f"product table would have {size} entries (cap {size_cap})")
    probs = np.outer(first.probs, last.probs).ravel()
    keywords = tuple(f"{a} {b}" for a in first.keywords for b in last.keywords)
    return FrequencyTable(keywords, probs / probs.sum())


def report_csv(rows: list[Estimate]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["q", "fraction", "stderr"])
    for r in rows:
        w.writerow([r.q, f"{r.mean:.6f}", f"{r.stderr:.6f}"])
    return out.getvalue()
