"""Synthetic news-portal corpus with controllable popularity skew.

Click behaviour mixes four kinds of transitions so that different
recommender families have different headroom: following a topic's story
line (publish-order successor), jumping to the freshest article of the
topic, picking a currently-trending article of the topic, and picking a
globally-trending article. Popularity per article decays exponentially
with age on top of a Zipf-like base quality, so the catalog churns the
way a news front page does.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import Article, Click, Dataset, Session

EPOCH = 1538352000  # 2018-10-01 00:00:00 UTC, a Monday

COUNTRIES = (["BR", "US", "PT", "AR", "DE"], [0.55, 0.15, 0.12, 0.10, 0.08])
REGIONS = ([f"r{i}" for i in range(6)], None)
CITIES = ([f"c{i}" for i in range(8)], None)
DEVICES = (["desktop", "mobile", "tablet"], [0.45, 0.50, 0.05])
OSES = (["android", "ios", "windows", "linux"], [0.45, 0.25, 0.2, 0.1])
PLATFORMS = (["web", "app"], [0.6, 0.4])
REFERRERS = (["direct", "internal", "search", "social"], [0.35, 0.3, 0.2, 0.15])


def derive_rng(seed, *tags):
    """Independent, order-insensitive numpy Generator for (seed, tags)."""
    label = "/".join(str(t) for t in tags)
    digest = hashlib.blake2b(
        f"{seed}:{label}".encode("utf-8"), digest_size=8
    ).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))


@dataclass
class SyntheticConfig:
    n_articles: int = 300
    n_hours: int = 24
    sessions_per_hour: int = 60
    popularity_skew: float = 1.1
    topic_count: int = 8
    seed: int = 7
    # transition mix; the remainder is globally-trending jumps
    p_story: float = 0.28
    p_fresh: float = 0.27
    p_topic: float = 0.16
    recency_halflife_hours: float = 7.0
    pre_published_fraction: float = 0.25
    mean_extra_clicks: float = 0.85
    tokens_per_article: int = 30

    def validate(self):
        for name in ("n_articles", "n_hours", "sessions_per_hour", "topic_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"synthetic config: {name} must be >= 1")
        if not 0.0 < self.popularity_skew <= 10.0:
            raise ValueError("synthetic config: popularity_skew must be in (0, 10]")
        if self.p_story + self.p_fresh + self.p_topic > 1.0:
            raise ValueError("synthetic config: transition mix exceeds 1")


def _draw(rng, spec):
    values, probs = spec
    return str(rng.choice(values, p=probs))


class _Trending:
    """Per-hour cumulative weights for popularity-biased article draws."""

    def __init__(self, quality, published, topics, topic_count, halflife_s):
        self.quality = quality
        self.published = published
        self.topics = topics
        self.topic_count = topic_count
        self.halflife_s = halflife_s
        self.topic_members = [
            np.nonzero(topics == t)[0] for t in range(topic_count)
        ]

    def weights_at(self, ts):
        age = np.maximum(0.0, ts - self.published)
        w = self.quality * np.exp2(-age / self.halflife_s)
        w[self.published > ts] = 0.0
        return w

    def draw(self, rng, weights, members, exclude):
        w = weights[members]
        total = w.sum()
        if total <= 0:
            return None
        cum = np.cumsum(w)
        for _ in range(12):
            pick = members[int(np.searchsorted(cum, rng.random() * cum[-1]))]
            if pick not in exclude:
                return int(pick)
        return None


def _make_articles(cfg, rng):
    n = cfg.n_articles
    topics = np.arange(n) % cfg.topic_count
    rank = rng.permutation(n)
    quality = (1.0 + rank.astype(np.float64)) ** (-cfg.popularity_skew)

    n_pre = max(1, int(round(cfg.pre_published_fraction * n)))
    published = np.empty(n, dtype=np.int64)
    published[:n_pre] = EPOCH - rng.integers(1, 48 * 3600, size=n_pre)
    published[n_pre:] = EPOCH + rng.integers(0, cfg.n_hours * 3600, size=n - n_pre)
    # shuffle so publish times are not correlated with topic or quality
    order = rng.permutation(n)
    published = published[order]

    articles = []
    for i in range(n):
        topic = int(topics[i])
        topic_words = [f"t{topic}w{j}" for j in range(50)]
        shared_words = [f"gw{j}" for j in range(40)]
        k_topic = int(round(cfg.tokens_per_article * 0.7))
        tokens = [
            topic_words[int(j)]
            for j in rng.integers(0, len(topic_words), size=k_topic)
        ] + [
            shared_words[int(j)]
            for j in rng.integers(
                0, len(shared_words), size=cfg.tokens_per_article - k_topic
            )
        ]
        keywords = {f"kw{topic}_{int(j)}" for j in rng.integers(0, 8, size=3)}
        if rng.random() < 0.05:
            other = int(rng.integers(0, cfg.topic_count))
            keywords.add(f"kw{other}_{int(rng.integers(0, 8))}")
        articles.append(
            Article(
                article_id=f"a{i:05d}",
                published_at=int(published[i]),
                tokens=tuple(tokens),
                category=f"cat{topic}",
                keywords=frozenset(keywords),
            )
        )
    return articles, topics, quality, published


def generate_synthetic(cfg):
    """Build a deterministic Dataset from a :class:`SyntheticConfig`."""
    cfg.validate()
    art_rng = derive_rng(cfg.seed, "articles")
    articles, topics, quality, published = _make_articles(cfg, art_rng)
    n = cfg.n_articles

    # story successor: the next same-topic article in publish order
    successor = np.full(n, -1, dtype=np.int64)
    topic_order = {}
    for t in range(cfg.topic_count):
        members = np.nonzero(topics == t)[0]
        members = members[np.argsort(published[members], kind="stable")]
        topic_order[t] = members
        for a, b in zip(members, members[1:]):
            successor[a] = b

    trending = _Trending(
        quality, published.astype(np.float64), topics, cfg.topic_count,
        cfg.recency_halflife_hours * 3600.0,
    )
    all_indices = np.arange(n)

    sessions = []
    serial = 0
    p_geom = 1.0 / (1.0 + cfg.mean_extra_clicks)
    for hour in range(cfg.n_hours):
        rng = derive_rng(cfg.seed, "sessions", hour)
        hour_start = EPOCH + hour * 3600
        weights = trending.weights_at(hour_start + 1800)
        starts = np.sort(rng.integers(0, 3600, size=cfg.sessions_per_hour))
        for s_off in starts:
            start_ts = int(hour_start + s_off)
            length = 2 + min(18, int(rng.geometric(p_geom)) - 1)
            context = {
                "country": _draw(rng, COUNTRIES),
                "region": _draw(rng, REGIONS),
                "city": _draw(rng, CITIES),
                "device": _draw(rng, DEVICES),
                "os": _draw(rng, OSES),
                "platform": _draw(rng, PLATFORMS),
                "referrer": _draw(rng, REFERRERS),
            }
            chosen = []
            first = trending.draw(rng, weights, all_indices, set())
            if first is None:
                continue
            chosen.append(first)
            while len(chosen) < length:
                nxt = _next_article(
                    rng, cfg, chosen, topics, published, successor,
                    topic_order, trending, weights, all_indices,
                    start_ts + 90 * len(chosen),
                )
                if nxt is None:
                    break
                chosen.append(nxt)
            if len(chosen) < 2:
                continue
            ts = start_ts
            clicks = []
            for idx in chosen:
                clicks.append(
                    Click(
                        article_id=articles[idx].article_id,
                        timestamp=int(ts),
                        **context,
                    )
                )
                ts += int(rng.integers(20, 180))
            sessions.append(
                Session(
                    session_id=f"s{serial:07d}",
                    user_id=f"u{serial:07d}",
                    clicks=tuple(clicks),
                )
            )
            serial += 1

    sessions.sort(key=lambda s: (s.start_time, s.session_id))
    return Dataset(articles={a.article_id: a for a in articles}, sessions=sessions)


def _next_article(rng, cfg, chosen, topics, published, successor, topic_order,
                  trending, weights, all_indices, now):
    last = chosen[-1]
    topic = int(topics[last])
    exclude = set(chosen)
    r = rng.random()
    if r < cfg.p_story:
        nxt = int(successor[last])
        if nxt >= 0 and published[nxt] <= now and nxt not in exclude:
            return nxt
        r = cfg.p_story  # story unavailable: fall through to the fresh branch
    if r < cfg.p_story + cfg.p_fresh:
        members = topic_order[topic]
        pos = int(np.searchsorted(published[members], now, side="right"))
        for idx in reversed(members[:pos].tolist()):
            if idx not in exclude:
                return int(idx)
    if r < cfg.p_story + cfg.p_fresh + cfg.p_topic:
        pick = trending.draw(rng, weights, topic_order[topic], exclude)
        if pick is not None:
            return pick
    return trending.draw(rng, weights, all_indices, exclude)
