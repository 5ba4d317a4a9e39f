"""Ranking quality metrics: accuracy, coverage, novelty, and diversity.

Novelty is measured as expected self-information of the recommended items
under their recent click popularity; diversity as expected intra-list
distance between content embeddings. Both come in a rank-discounted form
and a rank-and-relevance-discounted form. All functions are pure; the
per-hour bookkeeping lives in :class:`MetricAccumulator`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CUTOFF = 10
BACKGROUND_RELEVANCE = 0.02  # 50 unclicked items weigh as much as 1 clicked one


def hit_rate(rank, n=DEFAULT_CUTOFF):
    """1 if the clicked article is ranked within the top n, else 0."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1 if rank <= n else 0


def mrr(rank, n=DEFAULT_CUTOFF):
    """Reciprocal rank of the clicked article, zeroed beyond the cutoff."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1.0 / rank if rank <= n else 0.0


def coverage(recommended_ids, recommendable_ids):
    """Share of the recommendable pool that made it into any top-n list."""
    recommendable = set(recommendable_ids)
    if not recommendable:
        raise ValueError("empty recommendable set")
    return len(set(recommended_ids) & recommendable) / len(recommendable)


def disc(k):
    """Logarithmic rank discount; disc(0) is defined as 1 (no discount)."""
    if k < 0:
        raise ValueError("rank discount needs k >= 0")
    return 1.0 if k == 0 else 1.0 / math.log2(k + 1)


def rdisc(l, k):
    """Relative rank discount between list positions l and k.

    Positions at or before k contribute undiscounted: those items were
    already seen by the time position k is reached.
    """
    return disc(max(0, l - k))


def relevance_weight(item, clicked, background=BACKGROUND_RELEVANCE):
    """1.0 for items clicked in the ongoing session, else the background."""
    return 1.0 if item in clicked else background


def pop_floor(total_recent_clicks, catalog_size):
    """Floor for popularity shares so self-information stays finite."""
    return 1.0 / (total_recent_clicks + catalog_size)


def cos_distance(a, b):
    """Cosine distance rescaled from [0, 2] to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    return (1.0 - float(a @ b) / (na * nb)) / 2.0


@dataclass
class RankedList:
    """A scored top-n list for one evaluated click.

    `pops` are the popularity shares of the listed items at prediction
    time (already floored to a positive value by the caller); `aces` are
    their content embeddings, row-aligned with `items`.
    """

    items: list
    positive: object
    pops: np.ndarray
    aces: np.ndarray | None = None
    clicked: set = None

    def __post_init__(self):
        self.pops = np.asarray(self.pops, dtype=np.float64)
        if len(self.items) != self.pops.shape[0]:
            raise ValueError("pops must align with items")
        if self.clicked is None:
            self.clicked = {self.positive}


def _discounts(n):
    return 1.0 / np.log2(np.arange(1, n + 1) + 1.0)


def _relevances(ranked, n, background):
    return np.array(
        [relevance_weight(i, ranked.clicked, background) for i in ranked.items[:n]]
    )


def esi_r(ranked, n=DEFAULT_CUTOFF):
    """Expected self-information of the list, discounted by rank."""
    n = min(n, len(ranked.items))
    d = _discounts(n)
    return float(np.sum(-np.log2(ranked.pops[:n]) * d) / np.sum(d))


def esi_rr(ranked, n=DEFAULT_CUTOFF, background=BACKGROUND_RELEVANCE):
    """Self-information discounted by rank and weighted by click relevance.

    Relevance weights are deliberately not normalized away: relevant items
    near the top push the measure up.
    """
    n = min(n, len(ranked.items))
    d = _discounts(n)
    rel = _relevances(ranked, n, background)
    return float(np.sum(-np.log2(ranked.pops[:n]) * d * rel) / np.sum(d))


def _rdisc_matrix(n):
    # entry [k, l] (0-based) = rdisc(l+1, k+1)
    offsets = np.arange(n)[None, :] - np.arange(n)[:, None]
    offsets = np.maximum(offsets, 0)
    with np.errstate(divide="ignore"):
        m = np.where(offsets == 0, 1.0, 1.0 / np.log2(offsets + 1.0))
    return m


def _pair_distances(aces):
    norms = np.linalg.norm(aces, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cosine distance is undefined for zero vectors")
    unit = aces / norms[:, None]
    return (1.0 - unit @ unit.T) / 2.0


def eild_r(ranked, n=DEFAULT_CUTOFF):
    """Expected intra-list distance with rank-relative discounting."""
    n = min(n, len(ranked.items))
    if n < 2:
        return 0.0
    if ranked.aces is None:
        raise ValueError("intra-list diversity needs content embeddings")
    dist = _pair_distances(np.asarray(ranked.aces, dtype=np.float64)[:n])
    rd = _rdisc_matrix(n)
    np.fill_diagonal(rd, 0.0)
    inner = (dist * rd).sum(axis=1) / rd.sum(axis=1)
    d = _discounts(n)
    return float(np.sum(d * inner) / np.sum(d))


def eild_rr(ranked, n=DEFAULT_CUTOFF, background=BACKGROUND_RELEVANCE):
    """Intra-list distance weighted by both rank discounts and relevance."""
    n = min(n, len(ranked.items))
    if n < 2:
        return 0.0
    if ranked.aces is None:
        raise ValueError("intra-list diversity needs content embeddings")
    dist = _pair_distances(np.asarray(ranked.aces, dtype=np.float64)[:n])
    rd = _rdisc_matrix(n)
    np.fill_diagonal(rd, 0.0)
    rel = _relevances(ranked, n, background)
    inner = (dist * rd * rel[None, :]).sum(axis=1) / rd.sum(axis=1)
    d = _discounts(n)
    return float(np.sum(d * rel * inner) / np.sum(d))


METRIC_NAMES = ("HR", "MRR", "COV", "ESI-R", "ESI-RR", "EILD-R", "EILD-RR")


def metric_columns(cutoff=DEFAULT_CUTOFF):
    return [f"{name}@{cutoff}" for name in METRIC_NAMES]


@dataclass
class MetricAccumulator:
    """Streaming per-hour sums for every metric; merge is associative."""

    cutoff: int = DEFAULT_CUTOFF
    count: int = 0
    sums: dict = field(default_factory=dict)
    recommended: set = field(default_factory=set)

    def add(self, rank, ranked):
        n = self.cutoff
        values = {
            "HR": float(hit_rate(rank, n)),
            "MRR": mrr(rank, n),
            "ESI-R": esi_r(ranked, n),
            "ESI-RR": esi_rr(ranked, n),
            "EILD-R": eild_r(ranked, n),
            "EILD-RR": eild_rr(ranked, n),
        }
        for key, val in values.items():
            self.sums[key] = self.sums.get(key, 0.0) + val
        self.recommended.update(ranked.items[:n])
        self.count += 1

    def merge(self, other):
        if other.cutoff != self.cutoff:
            raise ValueError("cannot merge accumulators with different cutoffs")
        for key, val in other.sums.items():
            self.sums[key] = self.sums.get(key, 0.0) + val
        self.recommended.update(other.recommended)
        self.count += other.count
        return self

    def finalize(self, recommendable_ids):
        """Hour means for every metric, cutoff-qualified column names."""
        if self.count == 0:
            raise ValueError("no measurements accumulated")
        row = {}
        for name in METRIC_NAMES:
            col = f"{name}@{self.cutoff}"
            if name == "COV":
                row[col] = coverage(self.recommended, recommendable_ids)
            else:
                row[col] = self.sums[name] / self.count
        row["n_measurements"] = self.count
        return row
