"""Sliding-window click statistics for the replay clock.

One tracker instance is fed every click in timestamp order and answers,
at any point of the replay: how often was each article clicked within the
trailing window, what is its popularity share, its novelty, its recency,
and window-normalized versions of the dynamic features. Counts are kept
in one-minute buckets so eviction is O(touched articles) per minute at
the price of at most one minute of staleness.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

SECONDS_PER_DAY = 86400.0
DYNAMIC_FEATURES = ("novelty", "recency")


class ProtocolError(RuntimeError):
    """The replay clock moved backwards further than one bucket."""


class _Bucket:
    __slots__ = ("index", "counts", "feat_sum", "feat_sumsq", "feat_count")

    def __init__(self, index):
        self.index = index
        self.counts = {}
        self.feat_sum = {name: 0.0 for name in DYNAMIC_FEATURES}
        self.feat_sumsq = {name: 0.0 for name in DYNAMIC_FEATURES}
        self.feat_count = {name: 0 for name in DYNAMIC_FEATURES}


class ClickTracker:
    """Trailing-window click counter over a fixed article catalog."""

    def __init__(self, published_at, window_minutes=60, bucket_seconds=60):
        if window_minutes < 1:
            raise ValueError("window must cover at least one minute")
        self.window_seconds = window_minutes * 60
        self.bucket_seconds = bucket_seconds
        self.window_buckets = max(1, self.window_seconds // bucket_seconds)
        self.article_ids = sorted(published_at)
        self._index = {aid: i for i, aid in enumerate(self.article_ids)}
        self.published = np.array(
            [float(published_at[aid]) for aid in self.article_ids]
        )
        n = len(self.article_ids)
        self._counts = np.zeros(n)
        self._total = 0.0
        self._buckets = deque()
        self._current_bucket = None
        self._feat_sum = {name: 0.0 for name in DYNAMIC_FEATURES}
        self._feat_sumsq = {name: 0.0 for name in DYNAMIC_FEATURES}
        self._feat_count = {name: 0 for name in DYNAMIC_FEATURES}
        self.warmup_returns = 0

    # -- clock ---------------------------------------------------------

    def index_of(self, article_id):
        try:
            return self._index[article_id]
        except KeyError:
            raise ValueError(f"unknown article {article_id!r}") from None

    def advance(self, ts):
        """Move the clock to `ts`, evicting buckets that left the window."""
        bucket = int(ts) // self.bucket_seconds
        if self._current_bucket is not None and bucket < self._current_bucket - 1:
            raise ProtocolError(
                f"clock moved backwards: bucket {bucket} after {self._current_bucket}"
            )
        if self._current_bucket is None or bucket > self._current_bucket:
            self._current_bucket = bucket
            self._evict()

    def _evict(self):
        horizon = self._current_bucket - self.window_buckets
        while self._buckets and self._buckets[0].index <= horizon:
            old = self._buckets.popleft()
            for idx, cnt in old.counts.items():
                self._counts[idx] -= cnt
            self._total -= sum(old.counts.values())
            for name in DYNAMIC_FEATURES:
                self._feat_sum[name] -= old.feat_sum[name]
                self._feat_sumsq[name] -= old.feat_sumsq[name]
                self._feat_count[name] -= old.feat_count[name]
        if not self._buckets:
            # empty window: clear float dust so the state matches a fresh one
            self._counts.fill(0.0)
            self._total = 0.0
            for name in DYNAMIC_FEATURES:
                self._feat_sum[name] = 0.0
                self._feat_sumsq[name] = 0.0
                self._feat_count[name] = 0

    def _bucket_for(self, bucket_index):
        if self._buckets and self._buckets[-1].index == bucket_index:
            return self._buckets[-1]
        if len(self._buckets) >= 2 and self._buckets[-2].index == bucket_index:
            return self._buckets[-2]
        fresh = _Bucket(bucket_index)
        if self._buckets and bucket_index < self._buckets[-1].index:
            self._buckets.insert(len(self._buckets) - 1, fresh)
        else:
            self._buckets.append(fresh)
        return fresh

    def observe_dynamic(self, feature_name, value, ts):
        """Feed one observation into a dynamic feature's trailing window."""
        if feature_name not in DYNAMIC_FEATURES:
            raise ValueError(f"unknown dynamic feature {feature_name!r}")
        self.advance(ts)
        bucket = self._bucket_for(int(ts) // self.bucket_seconds)
        value = float(value)
        bucket.feat_sum[feature_name] += value
        bucket.feat_sumsq[feature_name] += value * value
        bucket.feat_count[feature_name] += 1
        self._feat_sum[feature_name] += value
        self._feat_sumsq[feature_name] += value * value
        self._feat_count[feature_name] += 1

    def record_click(self, article_id, ts):
        """Count one click; feature windows observe the pre-click values."""
        idx = self.index_of(article_id)
        self.advance(ts)
        self.observe_dynamic("novelty", self.novelty_value(article_id), ts)
        self.observe_dynamic("recency", self.recency_value(article_id, ts), ts)
        bucket = self._bucket_for(int(ts) // self.bucket_seconds)
        bucket.counts[idx] = bucket.counts.get(idx, 0) + 1
        self._counts[idx] += 1
        self._total += 1

    # -- queries -------------------------------------------------------

    @property
    def total_recent_clicks(self):
        return self._total

    def recent_clicks(self, article_id):
        return float(self._counts[self.index_of(article_id)])

    def counts_by_index(self, indices):
        return self._counts[np.asarray(indices, dtype=np.intp)]

    def rec_norm_pop(self, article_id):
        """The article's share of all clicks in the window; 0 when idle."""
        if self._total <= 0:
            return 0.0
        return float(self._counts[self.index_of(article_id)] / self._total)

    def rec_norm_pop_by_index(self, indices):
        counts = self.counts_by_index(indices)
        if self._total <= 0:
            return np.zeros_like(counts)
        return counts / self._total

    def novelty_value(self, article_id):
        """-log2(popularity share + 1); 0 for unseen, -1 for a monopoly."""
        return -math.log2(self.rec_norm_pop(article_id) + 1.0)

    def novelty_by_index(self, indices):
        return -np.log2(self.rec_norm_pop_by_index(indices) + 1.0)

    def recency_value(self, article_id, now):
        """log2 of elapsed days since publication, hours as decimals."""
        return float(self.recency_by_index([self.index_of(article_id)], now)[0])

    def recency_by_index(self, indices, now):
        elapsed = np.maximum(
            0.0, (now - self.published[np.asarray(indices, dtype=np.intp)])
        )
        return np.log2(elapsed / SECONDS_PER_DAY + 1.0)

    def z_normalize_dynamic(self, feature_name, value):
        """Standardize a dynamic feature against its trailing window.

        Uses the population variance of the windowed observations with a
        1e-6 floor on the standard deviation; returns 0 while the window
        has fewer than two observations (warm-up).
        """
        if feature_name not in DYNAMIC_FEATURES:
            raise ValueError(f"unknown dynamic feature {feature_name!r}")
        arr = np.asarray(value, dtype=np.float64)
        count = self._feat_count[feature_name]
        if count < 2:
            self.warmup_returns += 1
            result = np.zeros_like(arr)
        else:
            mean = self._feat_sum[feature_name] / count
            var = max(0.0, self._feat_sumsq[feature_name] / count - mean * mean)
            std = max(math.sqrt(var), 1e-6)
            result = (arr - mean) / std
        return float(result) if arr.ndim == 0 else result

    def recommendable_set(self):
        """Articles clicked at least once within the current window."""
        return {self.article_ids[i] for i in np.nonzero(self._counts > 0.5)[0]}

    def nonzero_counts(self):
        return {
            self.article_ids[i]: float(self._counts[i])
            for i in np.nonzero(self._counts > 0.5)[0]
        }

    def state_dict(self):
        """Snapshot of the aggregate state, for determinism checks."""
        return {
            "counts": self._counts.copy(),
            "total": self._total,
            "feat_sum": dict(self._feat_sum),
            "feat_sumsq": dict(self._feat_sumsq),
            "feat_count": dict(self._feat_count),
            "buckets": [
                (b.index, dict(sorted(b.counts.items()))) for b in self._buckets
            ],
        }
