"""Streaming temporal evaluation: train for five hours, test on the next.

Sessions are bucketed by their starting hour. The replay walks every
click in global timestamp order; a session becomes visible to the
recommenders only after its last click has been replayed, and the neural
model trains on completed sessions only at hour boundaries, so nothing
ever sees the future. During an evaluation hour each click (after the
first) is scored against one positive plus popularity-sampled negatives,
and per-hour metric means are accumulated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as scipy_stats

from .baselines import ScoringContext
from .metrics import MetricAccumulator, metric_columns, pop_floor
from .metrics import RankedList
from .nar_net import SessionRecord
from .stream_stats import ClickTracker
from .synth import derive_rng

log = logging.getLogger(__name__)

EVENT_CLICK = 0
EVENT_END = 1


@dataclass
class HarnessConfig:
    warmup_hours: int = 12
    eval_stride: int = 5  # training hours between evaluations
    cutoff: int = 10
    num_negatives: int = 50
    window_minutes: int = 60

    def validate(self):
        if self.warmup_hours < 0 or self.eval_stride < 1:
            raise ValueError("warmup_hours must be >= 0 and eval_stride >= 1")
        if self.cutoff < 1 or self.num_negatives < 1:
            raise ValueError("cutoff and num_negatives must be >= 1")


@dataclass
class HourBucket:
    index: int  # hours since the dataset's first hour, 0-based
    start_ts: int
    sessions: list


def bucketize(dataset):
    """Assign every session to the hour bucket its first click falls in."""
    hour0, n_hours = dataset.hour_range()
    buckets = [HourBucket(i, hour0 + i * 3600, []) for i in range(n_hours)]
    for session in dataset.sessions:
        buckets[(session.start_time - hour0) // 3600].sessions.append(session)
    for bucket in buckets:
        bucket.sessions.sort(key=lambda s: (s.start_time, s.session_id))
    return buckets


def schedule(n_hours, warmup_hours, eval_stride=5):
    """Alternating plan of (training hours, evaluation hour), 1-indexed.

    After `warmup_hours` of pure training, every cycle trains on
    `eval_stride` hours and evaluates on the following one. An evaluated
    hour feeds back into training once its evaluation has finished. If
    not even one cycle fits, the plan is empty and a warning is logged.
    """
    if n_hours < 1:
        raise ValueError("schedule needs at least one hour bucket")
    cycle = eval_stride + 1
    steps = []
    eval_hour = warmup_hours + cycle
    while eval_hour <= n_hours:
        steps.append((list(range(eval_hour - eval_stride, eval_hour)), eval_hour))
        eval_hour += cycle
    if not steps:
        log.warning(
            "dataset of %d hours is too short for warmup %d + %d-hour cycle; "
            "no evaluation steps",
            n_hours, warmup_hours, eval_stride,
        )
    return steps


@dataclass
class PopularitySnapshot:
    """Recommendable articles and their supports in the preceding hour."""

    ids: np.ndarray  # article ids, sorted
    supports: np.ndarray  # recent click counts, aligned with ids

    @classmethod
    def from_counts(cls, counts):
        ids = sorted(counts)
        return cls(
            ids=np.array(ids, dtype=object),
            supports=np.array([counts[a] for a in ids], dtype=np.float64),
        )

    def __len__(self):
        return len(self.ids)

    def id_set(self):
        return set(self.ids.tolist())


@dataclass
class CandidateSet:
    positive: str
    negatives: list
    flagged: bool  # fewer negatives than requested were available
    seed_tag: tuple = ()  # derivation tag of the sampling stream

    def all_ids(self):
        return [self.positive] + self.negatives


def sample_negatives(snapshot, session_viewed, k=50, seed=0):
    """Draw k distinct articles, probability proportional to support.

    Uses exponential race keys, which is equivalent to sequential
    weighted sampling without replacement. Articles the user viewed in
    the session are never drawn. When fewer than k articles remain, all
    of them are returned and the draw is flagged.
    """
    viewed = set(session_viewed)
    mask = np.array([aid not in viewed for aid in snapshot.ids], dtype=bool)
    available = int(mask.sum())
    if available == 0:
        return [], True
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed, "negs")
    keys = np.full(len(snapshot.ids), np.inf)
    keys[mask] = rng.exponential(size=available) / snapshot.supports[mask]
    if available <= k:
        chosen = np.nonzero(mask)[0]
        flagged = available < k
    else:
        chosen = np.argpartition(keys, k)[:k]
        flagged = False
    chosen = chosen[np.argsort(keys[chosen], kind="stable")]
    return [snapshot.ids[i] for i in chosen], flagged


@dataclass
class ClickFeatures:
    """Snapshot of one click's model inputs at its replay moment."""

    art_row: int
    dyn: np.ndarray  # [2] z-normalized novelty, recency
    nov_raw: float
    uc_const: np.ndarray
    uc_emb: np.ndarray


@dataclass
class CandidateFeatures:
    rows: np.ndarray  # [C] feature-space rows
    dyn: np.ndarray  # [C, 2]
    nov_raw: np.ndarray  # [C]
    uc_const: np.ndarray  # context of the last revealed click
    uc_emb: np.ndarray


def rank_candidates(scores, candidate_ids, recent_counts, cutoff):
    """Total order: score desc, recent clicks desc, article id asc.

    Returns the 1-based rank of the first candidate (the positive) and
    the top-`cutoff` positions.
    """
    ids = np.asarray(candidate_ids, dtype=str)
    order = np.lexsort((ids, -np.asarray(recent_counts), -np.asarray(scores)))
    rank = int(np.nonzero(order == 0)[0][0]) + 1
    return rank, order[:cutoff]


class _SessionCapture:
    """Per-session feature collection while its clicks are replayed."""

    __slots__ = ("session", "clicks", "slots")

    def __init__(self, session):
        self.session = session
        self.clicks = []
        self.slots = []

    def to_record(self, n_candidates):
        length = len(self.clicks)
        if length < 2:
            return None
        c = n_candidates
        slots = self.slots
        cand_rows = np.zeros((length - 1, c), dtype=np.intp)
        cand_dyn = np.zeros((length - 1, c, 2))
        cand_nov = np.zeros((length - 1, c))
        valid = np.zeros(length - 1, dtype=bool)
        for p, slot in enumerate(slots):
            if slot is None:
                continue
            feats = slot
            if len(feats.rows) < c:
                continue  # short candidate sets are flagged, not trained on
            # negatives are exchangeable, so truncation keeps the bias
            cand_rows[p] = feats.rows[:c]
            cand_dyn[p] = feats.dyn[:c]
            cand_nov[p] = feats.nov_raw[:c]
            valid[p] = True
        if not valid.any():
            return None
        return SessionRecord(
            session_id=self.session.session_id,
            art_rows=np.array([f.art_row for f in self.clicks], dtype=np.intp),
            dyn=np.stack([f.dyn for f in self.clicks]),
            uc_const=np.stack([f.uc_const for f in self.clicks]),
            uc_emb=np.stack([f.uc_emb for f in self.clicks]),
            cand_rows=cand_rows,
            cand_dyn=cand_dyn,
            cand_nov=cand_nov,
            cand_valid=valid,
        )


class Replay:
    """Drives one full temporal evaluation over a dataset."""

    def __init__(self, dataset, algorithms, space, harness_cfg, seed):
        harness_cfg.validate()
        self.dataset = dataset
        self.algorithms = algorithms
        self.space = space
        self.cfg = harness_cfg
        self.seed = seed
        missing = {
            c.article_id
            for s in dataset.sessions
            for c in s.clicks
            if c.article_id not in dataset.articles
        }
        if missing:
            raise ValueError(f"sessions reference unknown articles: {sorted(missing)[:5]}")
        self.tracker = ClickTracker(
            {a: art.published_at for a, art in dataset.articles.items()},
            window_minutes=harness_cfg.window_minutes,
        )
        self.buckets = bucketize(dataset)
        self.hour0 = self.buckets[0].start_ts
        self.plan = schedule(len(self.buckets), harness_cfg.warmup_hours,
                             harness_cfg.eval_stride)
        self.eval_hours = {step[1] - 1 for step in self.plan}  # 0-based
        self.catalog_size = len(dataset.articles)
        self.needs_features = any(getattr(a, "wants_features", False)
                                  for a in algorithms)
        train_widths = [
            getattr(a, "train_negatives", harness_cfg.num_negatives)
            for a in algorithms if getattr(a, "wants_features", False)
        ]
        self.train_candidates = 1 + min(
            harness_cfg.num_negatives, max(train_widths or [0])
        )
        self.ace_lookup = {
            aid: space.ace_matrix[space.article_row[aid]]
            for aid in space.article_ids
        }

    # -- feature capture ------------------------------------------------

    def _tracker_indices(self, rows):
        # feature-space row r >= 1 maps to tracker index r - 1 (same sort)
        return np.asarray(rows, dtype=np.intp) - 1

    def _click_features(self, click):
        row = self.space.row_of(click.article_id)
        tidx = self._tracker_indices([row])
        nov_raw = self.tracker.novelty_by_index(tidx)
        rec_raw = self.tracker.recency_by_index(tidx, click.timestamp)
        dyn = np.array([
            self.tracker.z_normalize_dynamic("novelty", nov_raw[0]),
            self.tracker.z_normalize_dynamic("recency", rec_raw[0]),
        ])
        return ClickFeatures(
            art_row=row,
            dyn=dyn,
            nov_raw=float(nov_raw[0]),
            uc_const=self.space.uc_const(click),
            uc_emb=self.space.uc_embed_rows(click),
        )

    def _candidate_features(self, candidate_ids, ts, last_click_feats):
        rows = self.space.rows_of(candidate_ids)
        tidx = self._tracker_indices(rows)
        nov_raw = self.tracker.novelty_by_index(tidx)
        rec_raw = self.tracker.recency_by_index(tidx, ts)
        dyn = np.stack([
            self.tracker.z_normalize_dynamic("novelty", nov_raw),
            self.tracker.z_normalize_dynamic("recency", rec_raw),
        ], axis=1)
        return CandidateFeatures(
            rows=rows,
            dyn=dyn,
            nov_raw=nov_raw,
            uc_const=last_click_feats.uc_const,
            uc_emb=last_click_feats.uc_emb,
        )

    # -- main loop -------------------------------------------------------

    def run(self):
        if not self.plan:
            raise ValueError(
                "dataset too short for the configured warmup and stride"
            )
        events = []
        for bucket in self.buckets:
            for session in bucket.sessions:
                for i, click in enumerate(session.clicks):
                    events.append((click.timestamp, EVENT_CLICK,
                                   session.session_id, i, bucket.index, session))
                events.append((session.end_time, EVENT_END,
                               session.session_id, len(session.clicks),
                               bucket.index, session))
        events.sort(key=lambda e: (e[0], e[1], e[2], e[3]))

        snapshots = {}
        captures = {}
        accumulators = {}
        skipped_hours = set()
        n_flagged = 0
        next_boundary = 0
        k = self.cfg.num_negatives

        def boundary(hour):
            ts = self.hour0 + hour * 3600
            self.tracker.advance(ts - 1)
            snapshots[hour] = PopularitySnapshot.from_counts(
                self.tracker.nonzero_counts()
            )
            if hour - 1 in self.eval_hours:
                log.info("evaluated hour %d (%d measurements)", hour - 1,
                         sum(acc.count for (h, _), acc in accumulators.items()
                             if h == hour - 1))
            for alg in self.algorithms:
                alg.train_completed_sessions()

        for event in events:
            ts, kind, _, idx, bucket_index, session = event
            while next_boundary <= len(self.buckets) and \
                    ts >= self.hour0 + next_boundary * 3600:
                boundary(next_boundary)
                next_boundary += 1
            try:
                if kind == EVENT_CLICK:
                    n_flagged += self._handle_click(
                        session, idx, bucket_index, snapshots, captures,
                        accumulators, skipped_hours, k,
                    )
                else:
                    self._handle_end(session, captures)
            except Exception as exc:
                raise RuntimeError(
                    f"replay failed at hour {bucket_index}, session "
                    f"{session.session_id}, event ts {ts}"
                ) from exc
        for alg in self.algorithms:
            alg.train_completed_sessions()

        if n_flagged:
            log.warning("%d candidate sets had fewer than %d negatives",
                        n_flagged, k)
        return self._build_report(accumulators, snapshots)

    def _handle_click(self, session, idx, bucket_index, snapshots, captures,
                      accumulators, skipped_hours, k):
        click = session.clicks[idx]
        is_eval = bucket_index in self.eval_hours
        snapshot = snapshots.get(bucket_index)
        flagged = False
        capture = None
        if self.needs_features:
            capture = captures.get(session.session_id)
            if capture is None:
                capture = captures[session.session_id] = _SessionCapture(session)
        feats = self._click_features(click) if self.needs_features else None
        if capture is not None:
            capture.clicks.append(feats)

        if idx >= 1 and snapshot is not None and len(snapshot) > 0:
            seed_tag = ("negs", bucket_index, session.session_id, idx)
            negatives, flagged = sample_negatives(
                snapshot, session.article_ids(), k,
                derive_rng(self.seed, *seed_tag),
            )
            candidate_set = CandidateSet(click.article_id, negatives, flagged,
                                         seed_tag)
            cand_feats = None
            if self.needs_features:
                cand_feats = self._candidate_features(
                    candidate_set.all_ids(), click.timestamp,
                    capture.clicks[idx - 1],
                )
                capture.slots.append(cand_feats)
            if is_eval:
                self._score_event(session, idx, click, candidate_set,
                                  cand_feats, bucket_index, accumulators)
        elif idx >= 1:
            if capture is not None:
                capture.slots.append(None)
            if is_eval and bucket_index not in skipped_hours:
                skipped_hours.add(bucket_index)
                log.warning("hour %d has no recommendable articles; skipped",
                            bucket_index)

        self.tracker.record_click(click.article_id, click.timestamp)
        if is_eval and self.needs_features:
            for alg in self.algorithms:
                if getattr(alg, "wants_features", False):
                    alg.on_click_recorded(session.session_id, click, feats)
        return int(flagged)

    def _score_event(self, session, idx, click, candidate_set, cand_feats,
                     bucket_index, accumulators):
        cand_ids = candidate_set.all_ids()
        rows = self.space.rows_of(cand_ids)
        tidx = self._tracker_indices(rows)
        recent = self.tracker.counts_by_index(tidx)
        floor = pop_floor(self.tracker.total_recent_clicks, self.catalog_size)
        pops = np.maximum(self.tracker.rec_norm_pop_by_index(tidx), floor)
        aces = self.space.ace_matrix[rows]
        ctx = ScoringContext(
            session_id=session.session_id,
            prefix=session.clicks[:idx],
            ts=click.timestamp,
            tracker=self.tracker,
            ace=self.ace_lookup,
        )
        ctx.nar_candidates = cand_feats
        for alg in self.algorithms:
            try:
                scores = np.asarray(alg.score(ctx, cand_ids), dtype=np.float64)
                if scores.shape != (len(cand_ids),) or not np.all(
                        np.isfinite(scores)):
                    raise ValueError(f"invalid scores from {alg.name}")
            except Exception:
                log.exception(
                    "algorithm %s failed on session %s click %d; measurement voided",
                    alg.name, session.session_id, idx,
                )
                continue
            rank, top = rank_candidates(scores, cand_ids, recent, self.cfg.cutoff)
            ranked = RankedList(
                items=[cand_ids[j] for j in top],
                positive=click.article_id,
                pops=pops[top],
                aces=aces[top],
            )
            key = (bucket_index, alg.name)
            if key not in accumulators:
                accumulators[key] = MetricAccumulator(cutoff=self.cfg.cutoff)
            accumulators[key].add(rank, ranked)

    def _handle_end(self, session, captures):
        for alg in self.algorithms:
            alg.observe(session)
            if hasattr(alg, "end_session"):
                alg.end_session(session.session_id)
        capture = captures.pop(session.session_id, None)
        if capture is not None:
            record = capture.to_record(self.train_candidates)
            if record is not None:
                for alg in self.algorithms:
                    if getattr(alg, "wants_features", False):
                        alg.enqueue(record)

    def _build_report(self, accumulators, snapshots):
        rows = []
        alg_order = [alg.name for alg in self.algorithms]
        for hour in sorted({h for h, _ in accumulators}):
            recommendable = snapshots[hour].id_set()
            for name in alg_order:
                acc = accumulators.get((hour, name))
                if acc is None or acc.count == 0:
                    continue
                row = {"hour": hour, "algorithm": name}
                row.update(acc.finalize(recommendable))
                rows.append(row)
        return EvalReport(rows=rows, cutoff=self.cfg.cutoff,
                          algorithms=alg_order)


def paired_ttest(series_a, series_b, num_comparisons=1):
    """Two-sided paired t-test p-value with Bonferroni correction.

    Returns (p_value, degenerate); degenerate means the differences had
    zero variance, where p is reported as 1.
    """
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("paired series must be equal-length, length >= 2")
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0.0:
        return 1.0, True
    t_stat = diff.mean() / (sd / np.sqrt(len(diff)))
    p = 2.0 * scipy_stats.t.sf(abs(t_stat), df=len(diff) - 1)
    return min(1.0, p * num_comparisons), False


@dataclass
class EvalReport:
    """Per-hour metric rows plus derived summary statistics."""

    rows: list
    cutoff: int = 10
    algorithms: list = field(default_factory=list)

    def metric_names(self):
        return metric_columns(self.cutoff)

    def series(self, algorithm, metric):
        return [row[metric] for row in self.rows if row["algorithm"] == algorithm]

    def hours(self):
        return sorted({row["hour"] for row in self.rows})

    def mean(self, algorithm, metric):
        values = self.series(algorithm, metric)
        return float(np.mean(values)) if values else float("nan")

    def summary(self):
        """Global means and Bonferroni-adjusted p-values vs. the best."""
        names = self.metric_names()
        out = []
        best = {}
        for metric in names:
            means = {a: self.mean(a, metric) for a in self.algorithms}
            best[metric] = max(means, key=lambda a: means[a])
        for algorithm in self.algorithms:
            row = {"algorithm": algorithm}
            for metric in names:
                row[metric] = self.mean(algorithm, metric)
                champion = best[metric]
                if algorithm == champion:
                    row[f"p_{metric}"] = ""
                    continue
                mine = self.series(algorithm, metric)
                theirs = self.series(champion, metric)
                if len(mine) != len(theirs) or len(mine) < 2:
                    row[f"p_{metric}"] = ""
                    continue
                p, degenerate = paired_ttest(
                    theirs, mine, num_comparisons=len(self.algorithms) - 1
                )
                row[f"p_{metric}"] = f"{p:.10g}" + ("*" if degenerate else "")
            out.append(row)
        return out

    # -- csv -----------------------------------------------------------

    def write_hourly(self, path):
        columns = ["hour", "algorithm"] + self.metric_names() + ["n_measurements"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_format_cell(row[c]) for c in columns) + "\n")

    def write_summary(self, path):
        names = self.metric_names()
        columns = ["algorithm"]
        for metric in names:
            columns.extend([metric, f"p_{metric}"])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for row in self.summary():
                fh.write(",".join(_format_cell(row[c]) for c in columns) + "\n")


def _format_cell(value):
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def read_report_csv(path):
    """Parse a per-hour report CSV back into row dictionaries."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: malformed row {line!r}")
            row = {}
            for key, raw in zip(header, parts):
                if key in ("hour", "n_measurements"):
                    row[key] = int(raw)
                elif key == "algorithm":
                    row[key] = raw
                else:
                    row[key] = float(raw)
            rows.append(row)
    return header, rows
