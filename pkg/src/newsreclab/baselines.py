"""Continuously-updatable session recommenders behind one interface.

Every recommender consumes completed sessions through `observe` and
scores candidate articles for an ongoing session prefix through `score`.
Higher scores mean more relevant; unseen articles or pairs score 0 so a
scorer never fails on catalog candidates. Two extra diagnostic scorers
live here as well: a seeded random ranker (the chance floor) and a canary
that records observation/prediction timestamps for leak checks.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


def decay_weight(kind, x):
    """Distance/position decay family shared by the rule-based scorers."""
    if x < 1:
        raise ValueError("decay distance is 1-based")
    if kind == "same":
        return 1.0
    if kind == "div":
        return 1.0 / x
    if kind == "linear":
        return max(0.0, 1.0 - 0.1 * x)
    if kind == "log":
        return 1.0 / math.log10(x + 1.7)
    if kind == "quadratic":
        return 1.0 / (x * x)
    raise ValueError(f"unknown decay {kind!r}")


@dataclass
class ScoringContext:
    """Read-only view handed to scorers for one prediction."""

    session_id: str
    prefix: tuple
    ts: int
    tracker: object
    ace: dict
    nar_candidates: object = None  # feature block for the neural adapter


class Recommender:
    name = "base"
    wants_features = False  # set by the neural adapter

    def observe(self, session):
        """Ingest one completed session."""

    def on_click_recorded(self, session_id, click, features=None):
        """Called after every click enters the replay stream."""

    def train_completed_sessions(self, records=None):
        """Hourly training hook; only the neural adapter uses it."""

    def score(self, ctx, candidate_ids):
        raise NotImplementedError


class CooccurrenceRecommender(Recommender):
    """Unordered within-session co-occurrence counts (rules of size two)."""

    name = "co"

    def __init__(self):
        self.counts = {}

    def observe(self, session):
        ids = session.article_ids()
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                key = (ids[i], ids[j]) if ids[i] <= ids[j] else (ids[j], ids[i])
                self.counts[key] = self.counts.get(key, 0) + 1

    def pair_count(self, a, b):
        key = (a, b) if a <= b else (b, a)
        return self.counts.get(key, 0)

    def score(self, ctx, candidate_ids):
        last = ctx.prefix[-1].article_id
        return np.array([float(self.pair_count(last, c)) for c in candidate_ids])


class SequentialRulesRecommender(Recommender):
    """Directional rules p -> q weighted by the click distance between them."""

    name = "sr"

    def __init__(self, max_clicks_dist=10, dist_between_clicks_decay="div"):
        self.max_clicks_dist = max_clicks_dist
        self.decay = dist_between_clicks_decay
        decay_weight(self.decay, 1)  # validate eagerly
        self.rules = {}

    def observe(self, session):
        ids = session.article_ids()
        for i in range(len(ids)):
            targets = self.rules.setdefault(ids[i], {})
            for j in range(i + 1, min(len(ids), i + 1 + self.max_clicks_dist)):
                w = decay_weight(self.decay, j - i)
                targets[ids[j]] = targets.get(ids[j], 0.0) + w

    def rule_weight(self, last, candidate):
        return self.rules.get(last, {}).get(candidate, 0.0)

    def score(self, ctx, candidate_ids):
        last = ctx.prefix[-1].article_id
        return np.array([self.rule_weight(last, c) for c in candidate_ids])


class ItemKnnRecommender(Recommender):
    """Similarity over binary session-incidence vectors with smoothing.

    alpha balances the two support norms: 0.5 recovers cosine similarity,
    1.0 rule confidence. reg_lambda damps scores of rarely-seen items.
    """

    name = "item_knn"

    def __init__(self, reg_lambda=20.0, alpha=0.75):
        self.reg_lambda = float(reg_lambda)
        self.alpha = float(alpha)
        self.support = {}
        self.common = {}

    def observe(self, session):
        ids = sorted(set(session.article_ids()))
        for aid in ids:
            self.support[aid] = self.support.get(aid, 0) + 1
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                key = (ids[i], ids[j])
                self.common[key] = self.common.get(key, 0) + 1

    def similarity(self, a, b):
        if a not in self.support or b not in self.support:
            return 0.0
        key = (a, b) if a <= b else (b, a)
        common = self.common.get(key, 0)
        if common == 0:
            return 0.0
        denom = (self.support[a] + self.reg_lambda) ** self.alpha * (
            self.support[b] + self.reg_lambda
        ) ** (1.0 - self.alpha)
        return common / denom

    def score(self, ctx, candidate_ids):
        last = ctx.prefix[-1].article_id
        return np.array([self.similarity(last, c) for c in candidate_ids])


class VSkNNRecommender(Recommender):
    """Session-kNN with position-decayed prefix weights.

    Neighbor sessions are sampled most-recent-first through an inverted
    index over a bounded session buffer; candidate scores sum the
    similarities of the nearest neighbor sessions containing them.
    """

    name = "v_sknn"

    def __init__(self, sessions_buffer_size=3000, candidate_sessions_sample_size=1000,
                 nearest_neighbor_session_for_scoring=500, similarity="cosine",
                 sampling_strategy="recent", first_session_clicks_decay="div"):
        if similarity not in ("cosine", "jaccard"):
            raise ValueError(f"unknown similarity {similarity!r}")
        if sampling_strategy != "recent":
            raise ValueError("only the 'recent' sampling strategy is implemented")
        decay_weight(first_session_clicks_decay, 1)
        self.buffer_size = sessions_buffer_size
        self.sample_size = candidate_sessions_sample_size
        self.k_neighbors = nearest_neighbor_session_for_scoring
        self.similarity = similarity
        self.decay = first_session_clicks_decay
        self._sessions = {}  # serial -> frozenset of article ids
        self._postings = {}  # article id -> list of serials, append order
        self._serial = 0

    def observe(self, session):
        serial = self._serial
        self._serial += 1
        items = frozenset(session.article_ids())
        self._sessions[serial] = items
        for aid in items:
            self._postings.setdefault(aid, []).append(serial)
        evicted = serial - self.buffer_size
        if evicted in self._sessions:
            for aid in self._sessions.pop(evicted):
                postings = self._postings[aid]
                if postings and postings[0] == evicted:
                    postings.pop(0)
                else:
                    postings.remove(evicted)

    def _neighbors(self, prefix_ids):
        """(serial, similarity) of the nearest buffered sessions."""
        weights = {}
        for back, aid in enumerate(reversed(prefix_ids), start=1):
            weights.setdefault(aid, decay_weight(self.decay, back))
        sampled = []
        seen = set()
        for aid in reversed(prefix_ids):
            for serial in reversed(self._postings.get(aid, [])):
                if serial in seen:
                    continue
                seen.add(serial)
                sampled.append(serial)
                if len(sampled) >= self.sample_size:
                    break
            if len(sampled) >= self.sample_size:
                break
        prefix_set = set(weights)
        norm = math.sqrt(sum(w * w for w in weights.values()))
        scored = []
        for serial in sampled:
            items = self._sessions[serial]
            shared = prefix_set & items
            if not shared:
                continue
            if self.similarity == "cosine":
                sim = sum(weights[a] for a in shared) / (
                    norm * math.sqrt(len(items))
                )
            else:
                sim = len(shared) / len(prefix_set | items)
            scored.append((sim, serial))
        scored.sort(key=lambda pair: (-pair[0], -pair[1]))
        return scored[: self.k_neighbors]

    def score(self, ctx, candidate_ids):
        neighbors = self._neighbors([c.article_id for c in ctx.prefix])
        scores = {}
        for sim, serial in neighbors:
            for aid in self._sessions[serial]:
                scores[aid] = scores.get(aid, 0.0) + sim
        return np.array([scores.get(c, 0.0) for c in candidate_ids])


class RecentPopularityRecommender(Recommender):
    """Ranks by click counts within the tracker's trailing window."""

    name = "rp"

    def score(self, ctx, candidate_ids):
        return np.array([ctx.tracker.recent_clicks(c) for c in candidate_ids])


class ContentBasedRecommender(Recommender):
    """Cosine similarity between content embeddings of last and candidate."""

    name = "cb"

    def score(self, ctx, candidate_ids):
        last = ctx.prefix[-1].article_id
        try:
            anchor = ctx.ace[last]
        except KeyError:
            raise ValueError(f"article {last!r} has no content embedding") from None
        anchor_norm = np.linalg.norm(anchor)
        out = np.empty(len(candidate_ids))
        for i, cand in enumerate(candidate_ids):
            try:
                vec = ctx.ace[cand]
            except KeyError:
                raise ValueError(
                    f"article {cand!r} has no content embedding"
                ) from None
            denom = anchor_norm * np.linalg.norm(vec)
            out[i] = float(anchor @ vec) / denom if denom > 0 else 0.0
        return out


class RandomScorer(Recommender):
    """Stateless seeded ranker; its hit rate is the chance floor."""

    name = "random"

    def __init__(self, seed=0):
        self.seed = seed

    def score(self, ctx, candidate_ids):
        out = np.empty(len(candidate_ids))
        for i, cand in enumerate(candidate_ids):
            digest = hashlib.blake2b(
                f"{self.seed}|{ctx.session_id}|{len(ctx.prefix)}|{cand}".encode(),
                digest_size=8,
            ).digest()
            out[i] = int.from_bytes(digest, "big") / 2.0 ** 64
        return out


class CanaryRecommender(Recommender):
    """Records when it observes and predicts, to prove there is no leak."""

    name = "canary"

    def __init__(self):
        self.max_observed_ts = None
        self.violations = []
        self.predictions = 0

    def observe(self, session):
        ts = session.end_time
        if self.max_observed_ts is None or ts > self.max_observed_ts:
            self.max_observed_ts = ts

    def score(self, ctx, candidate_ids):
        self.predictions += 1
        if self.max_observed_ts is not None and self.max_observed_ts >= ctx.ts:
            self.violations.append((self.max_observed_ts, ctx.ts))
        return np.zeros(len(candidate_ids))
