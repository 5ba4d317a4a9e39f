"""Catalog and click-log ingestion: parsing, sessionization, statistics.

Input formats are newline-delimited JSON records. A click log record
carries `ts` (integer seconds), `user`, `article`, and optional context
strings; a catalog record carries `id`, `published_ts`, `category`,
`keywords` (comma-separated), and whitespace-tokenized `text`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

UNK = "UNK"
CONTEXT_FIELDS = ("country", "region", "city", "device", "os", "platform", "referrer")
SESSION_GAP_SECONDS = 30 * 60
MAX_SESSION_LENGTH = 20


class ParseError(ValueError):
    """A malformed input record, with its line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Article:
    """One catalog entry; `ace` is filled in by the content-embedding step."""

    article_id: str
    published_at: int
    tokens: tuple
    category: str
    keywords: frozenset
    ace: np.ndarray | None = None

    def with_ace(self, ace):
        return replace(self, ace=np.asarray(ace, dtype=np.float64))


@dataclass(frozen=True)
class Click:
    article_id: str
    timestamp: int
    country: str = UNK
    region: str = UNK
    city: str = UNK
    device: str = UNK
    os: str = UNK
    platform: str = UNK
    referrer: str = UNK

    @property
    def hour_sin(self):
        return math.sin(2.0 * math.pi * self._hour_of_day() / 24.0)

    @property
    def hour_cos(self):
        return math.cos(2.0 * math.pi * self._hour_of_day() / 24.0)

    @property
    def weekday(self):
        # 1970-01-01 was a Thursday; Monday = 0.
        return int((self.timestamp // 86400 + 3) % 7)

    def _hour_of_day(self):
        return (self.timestamp % 86400) / 3600.0

    def context_value(self, fieldname):
        return getattr(self, fieldname)


@dataclass(frozen=True)
class Session:
    session_id: str
    user_id: str
    clicks: tuple

    @property
    def start_time(self):
        return self.clicks[0].timestamp

    @property
    def end_time(self):
        return self.clicks[-1].timestamp

    def article_ids(self):
        return [c.article_id for c in self.clicks]

    def __len__(self):
        return len(self.clicks)


@dataclass
class DatasetStats:
    n_users: int
    n_sessions: int
    n_clicks: int
    n_articles: int
    avg_session_length: float
    gini: float

    def as_dict(self):
        return {
            "n_users": self.n_users,
            "n_sessions": self.n_sessions,
            "n_clicks": self.n_clicks,
            "n_articles": self.n_articles,
            "avg_session_length": self.avg_session_length,
            "gini": self.gini,
        }


@dataclass
class Dataset:
    articles: dict
    sessions: list

    def context_vocabularies(self):
        """Sorted distinct values per context field, UNK always included."""
        vocab = {name: {UNK} for name in CONTEXT_FIELDS}
        for session in self.sessions:
            for click in session.clicks:
                for name in CONTEXT_FIELDS:
                    vocab[name].add(click.context_value(name))
        return {name: sorted(values) for name, values in vocab.items()}

    def hour_range(self):
        """(first hour start, number of hour buckets) covering all sessions."""
        if not self.sessions:
            raise ValueError("empty dataset")
        first = min(s.start_time for s in self.sessions)
        last = max(s.start_time for s in self.sessions)
        start = (first // 3600) * 3600
        return int(start), int(last // 3600 - start // 3600) + 1


def _load_json_line(line, line_no):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(record, dict):
        raise ParseError(line_no, "record is not an object")
    return record


def parse_click_log(stream):
    """Read (user_id, Click) pairs from an NDJSON stream.

    Output is sorted by (user, timestamp); out-of-order timestamps within
    a user are tolerated and re-sorted. Missing or unexpected context
    values fall back to UNK.
    """
    out = []
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        record = _load_json_line(line, line_no)
        try:
            ts = int(record["ts"])
            user = str(record["user"])
            article = str(record["article"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(line_no, "needs integer 'ts' and 'user'/'article'")
        context = {}
        for name in CONTEXT_FIELDS:
            value = record.get(name)
            context[name] = str(value) if value not in (None, "") else UNK
        out.append((user, Click(article_id=article, timestamp=ts, **context)))
    out.sort(key=lambda pair: (pair[0], pair[1].timestamp))
    return out


def parse_catalog(stream):
    """Read the article catalog from an NDJSON stream."""
    articles = {}
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        record = _load_json_line(line, line_no)
        try:
            aid = str(record["id"])
            published = int(record["published_ts"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(line_no, "needs 'id' and integer 'published_ts'")
        keywords = record.get("keywords", "")
        if isinstance(keywords, str):
            keywords = [k for k in keywords.split(",") if k]
        articles[aid] = Article(
            article_id=aid,
            published_at=published,
            tokens=tuple(str(record.get("text", "")).split()),
            category=str(record.get("category", UNK)) or UNK,
            keywords=frozenset(str(k) for k in keywords),
        )
    return articles


def _split_at_gaps(clicks, gap_seconds):
    runs = []
    run = []
    for click in clicks:
        if run and click.timestamp - run[-1].timestamp >= gap_seconds:
            runs.append(run)
            run = []
        run.append(click)
    if run:
        runs.append(run)
    return runs


def sessionize(clicks, user_id="anon", gap_seconds=SESSION_GAP_SECONDS, counters=None):
    """Cut one user's time-ordered clicks into cleaned sessions.

    Splits whenever the idle gap reaches `gap_seconds`, drops repeated
    articles (keeping the first occurrence), discards singletons, and
    truncates to the first MAX_SESSION_LENGTH clicks. Dropping a repeat
    can itself open an oversized gap, so splitting and deduplication are
    iterated to a fixpoint; this keeps the gap invariant intact and makes
    the whole operation idempotent. Filtering is silent; pass a
    `counters` dict to collect how much was removed.
    """
    if counters is None:
        counters = {}
    runs = [list(clicks)] if clicks else []
    changed = True
    while changed:
        changed = False
        next_runs = []
        for run in runs:
            parts = _split_at_gaps(run, gap_seconds)
            if len(parts) > 1:
                changed = True
            for part in parts:
                seen = set()
                kept = []
                for click in part:
                    if click.article_id in seen:
                        counters["repeated_clicks"] = (
                            counters.get("repeated_clicks", 0) + 1
                        )
                        changed = True
                        continue
                    seen.add(click.article_id)
                    kept.append(click)
                if kept:
                    next_runs.append(kept)
        runs = next_runs

    sessions = []
    for kept in runs:
        if len(kept) < 2:
            counters["singleton_sessions"] = counters.get("singleton_sessions", 0) + 1
            continue
        if len(kept) > MAX_SESSION_LENGTH:
            counters["truncated_sessions"] = counters.get("truncated_sessions", 0) + 1
            kept = kept[:MAX_SESSION_LENGTH]
        sessions.append(kept)

    sessions.sort(key=lambda ks: ks[0].timestamp)
    return [
        Session(
            session_id=f"{user_id}-{i}",
            user_id=user_id,
            clicks=tuple(kept),
        )
        for i, kept in enumerate(sessions)
    ]


def sessionize_log(pairs, gap_seconds=SESSION_GAP_SECONDS, counters=None):
    """Sessionize a whole (user, Click) log, sorted by session start."""
    if counters is None:
        counters = {}
    per_user = {}
    for user, click in pairs:
        per_user.setdefault(user, []).append(click)
    sessions = []
    for user in sorted(per_user):
        sessions.extend(sessionize(per_user[user], user, gap_seconds, counters))
    sessions.sort(key=lambda s: (s.start_time, s.session_id))
    return sessions


def validate_session(session):
    """Raise if a session violates any of its structural invariants."""
    n = len(session.clicks)
    if not 2 <= n <= MAX_SESSION_LENGTH:
        raise ValueError(f"{session.session_id}: length {n} out of range")
    ids = session.article_ids()
    if len(set(ids)) != n:
        raise ValueError(f"{session.session_id}: repeated article")
    for a, b in zip(session.clicks, session.clicks[1:]):
        if b.timestamp < a.timestamp:
            raise ValueError(f"{session.session_id}: timestamps decrease")
        if b.timestamp - a.timestamp >= SESSION_GAP_SECONDS:
            raise ValueError(f"{session.session_id}: idle gap inside session")


def gini_index(counts):
    """Gini inequality of a count distribution; 0 uniform, ->1 concentrated."""
    x = np.sort(np.asarray(list(counts), dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty distribution")
    total = x.sum()
    if total <= 0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * x) / (n * total))


def compute_stats(sessions, articles=None):
    """Dataset statistics; the popularity Gini runs over clicked articles."""
    if not sessions:
        raise ValueError("empty dataset")
    click_counts = {}
    n_clicks = 0
    users = set()
    for session in sessions:
        users.add(session.user_id)
        for click in session.clicks:
            click_counts[click.article_id] = click_counts.get(click.article_id, 0) + 1
            n_clicks += 1
    return DatasetStats(
        n_users=len(users),
        n_sessions=len(sessions),
        n_clicks=n_clicks,
        n_articles=len(click_counts),
        avg_session_length=n_clicks / len(sessions),
        gini=gini_index(click_counts.values()),
    )


# -- dataset files -----------------------------------------------------


def _click_record(click):
    record = {"article": click.article_id, "ts": click.timestamp}
    for name in CONTEXT_FIELDS:
        value = click.context_value(name)
        if value != UNK:
            record[name] = value
    return record


def _click_from_record(record):
    context = {
        name: str(record.get(name, UNK)) or UNK for name in CONTEXT_FIELDS
    }
    return Click(
        article_id=str(record["article"]), timestamp=int(record["ts"]), **context
    )


def save_dataset(dataset, out_dir):
    """Write articles.ndjson and sessions.ndjson with stable formatting."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "articles.ndjson"), "w", encoding="utf-8") as fh:
        for aid in sorted(dataset.articles):
            art = dataset.articles[aid]
            fh.write(
                json.dumps(
                    {
                        "id": art.article_id,
                        "published_ts": art.published_at,
                        "category": art.category,
                        "keywords": ",".join(sorted(art.keywords)),
                        "text": " ".join(art.tokens),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(os.path.join(out_dir, "sessions.ndjson"), "w", encoding="utf-8") as fh:
        for session in dataset.sessions:
            fh.write(
                json.dumps(
                    {
                        "session_id": session.session_id,
                        "user": session.user_id,
                        "clicks": [_click_record(c) for c in session.clicks],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_dataset(path):
    """Load a dataset directory written by :func:`save_dataset`."""
    with open(os.path.join(path, "articles.ndjson"), encoding="utf-8") as fh:
        articles = parse_catalog(fh)
    sessions = []
    with open(os.path.join(path, "sessions.ndjson"), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = _load_json_line(line, line_no)
            sessions.append(
                Session(
                    session_id=str(record["session_id"]),
                    user_id=str(record.get("user", "anon")),
                    clicks=tuple(_click_from_record(c) for c in record["clicks"]),
                )
            )
    sessions.sort(key=lambda s: (s.start_time, s.session_id))
    return Dataset(articles=articles, sessions=sessions)
