import io

import pytest

from newsreclab.corpus import compute_stats, save_dataset, validate_session
from newsreclab.synth import SyntheticConfig, derive_rng, generate_synthetic


def small_cfg(**overrides):
    base = dict(n_articles=100, n_hours=6, sessions_per_hour=30,
                popularity_skew=1.2, topic_count=5, seed=7)
    base.update(overrides)
    return SyntheticConfig(**base)


def serialized(dataset, tmp_path, name):
    out = tmp_path / name
    save_dataset(dataset, out)
    return (out / "articles.ndjson").read_bytes() + (
        out / "sessions.ndjson"
    ).read_bytes()


class TestDeterminism:
    def test_same_seed_byte_identical(self, tmp_path):
        a = serialized(generate_synthetic(small_cfg()), tmp_path, "a")
        b = serialized(generate_synthetic(small_cfg()), tmp_path, "b")
        assert a == b

    def test_different_seed_differs(self, tmp_path):
        a = serialized(generate_synthetic(small_cfg()), tmp_path, "a")
        b = serialized(generate_synthetic(small_cfg(seed=8)), tmp_path, "b")
        assert a != b

    def test_derive_rng_streams_are_stable(self):
        assert derive_rng(7, "x", 1).integers(0, 1 << 30) == \
            derive_rng(7, "x", 1).integers(0, 1 << 30)
        assert derive_rng(7, "x", 1).integers(0, 1 << 30) != \
            derive_rng(7, "x", 2).integers(0, 1 << 30)


class TestValidity:
    def test_sessions_satisfy_invariants(self):
        dataset = generate_synthetic(small_cfg())
        assert len(dataset.sessions) > 50
        for session in dataset.sessions:
            validate_session(session)

    def test_clicks_reference_catalog(self):
        dataset = generate_synthetic(small_cfg())
        for session in dataset.sessions:
            for click in session.clicks:
                assert click.article_id in dataset.articles

    def test_articles_have_text_and_topics(self):
        dataset = generate_synthetic(small_cfg())
        categories = {a.category for a in dataset.articles.values()}
        assert len(categories) == 5
        for art in dataset.articles.values():
            assert len(art.tokens) > 0
            assert art.keywords


class TestPopularitySkew:
    def test_gini_monotone_in_skew(self):
        low = compute_stats(generate_synthetic(small_cfg(popularity_skew=0.3)).sessions)
        high = compute_stats(generate_synthetic(small_cfg(popularity_skew=3.0)).sessions)
        assert high.gini > low.gini

    def test_single_topic_degenerate(self):
        dataset = generate_synthetic(small_cfg(topic_count=1))
        categories = {a.category for a in dataset.articles.values()}
        assert categories == {"cat0"}


class TestConfigValidation:
    def test_skew_bounds(self):
        with pytest.raises(ValueError):
            generate_synthetic(small_cfg(popularity_skew=0.0))
        with pytest.raises(ValueError):
            generate_synthetic(small_cfg(popularity_skew=10.5))

    def test_counts_must_be_positive(self):
        with pytest.raises(ValueError):
            generate_synthetic(small_cfg(n_articles=0))
        with pytest.raises(ValueError):
            generate_synthetic(small_cfg(sessions_per_hour=0))

    def test_transition_mix_bounded(self):
        with pytest.raises(ValueError):
            generate_synthetic(small_cfg(p_story=0.9, p_fresh=0.2))
