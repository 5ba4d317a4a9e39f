import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from newsreclab.corpus import Click, Session
from newsreclab.features import FeatureSpace
from newsreclab.synth import SyntheticConfig, generate_synthetic

BASE_TS = 1538352000  # matches the synthetic corpus epoch


def make_click(article_id, ts, **context):
    return Click(article_id=article_id, timestamp=ts, **context)


def make_session(article_ids, start=BASE_TS, gap=60, session_id="s0", user="u0"):
    clicks = tuple(
        make_click(aid, start + i * gap) for i, aid in enumerate(article_ids)
    )
    return Session(session_id=session_id, user_id=user, clicks=clicks)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SyntheticConfig(
        n_articles=120, n_hours=10, sessions_per_hour=40,
        popularity_skew=1.2, topic_count=6, seed=13,
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_space(small_dataset):
    rng = np.random.default_rng(5)
    ace = {aid: rng.normal(size=16) for aid in small_dataset.articles}
    return FeatureSpace(
        small_dataset.articles, small_dataset.context_vocabularies(), ace
    )
