"""Input featurization shared by the neural recommender.

Categorical inputs with fewer than ten distinct values are one-hot
encoded; larger vocabularies (article ids, and e.g. categories) become
trainable embeddings. Numeric context (cyclic hour, weekday) and the
dynamic article features (window-normalized novelty and recency) enter
as-is. Row 0 of every index space is the out-of-vocabulary slot, which is
how never-seen articles still get scored.
"""

from __future__ import annotations

import numpy as np

from .corpus import CONTEXT_FIELDS, UNK

ONE_HOT_MAX = 10


def _embed_dim(cardinality):
    return int(min(24, max(4, round(cardinality ** 0.5))))


class FeatureSpace:
    """Index maps and constant feature blocks for a fixed catalog."""

    def __init__(self, articles, context_vocab, ace_repository):
        self.article_ids = sorted(articles)
        self.article_row = {aid: i + 1 for i, aid in enumerate(self.article_ids)}
        self.n_article_rows = len(self.article_ids) + 1  # row 0 = unseen

        categories = sorted({articles[a].category for a in self.article_ids})
        self.category_row = {c: i + 1 for i, c in enumerate(categories)}
        self.n_category_rows = len(categories) + 1
        self.category_of_article = np.zeros(self.n_article_rows, dtype=np.intp)
        for aid in self.article_ids:
            self.category_of_article[self.article_row[aid]] = self.category_row[
                articles[aid].category
            ]

        some_ace = next(iter(ace_repository.values()))
        self.ace_dim = len(some_ace)
        self.ace_matrix = np.zeros((self.n_article_rows, self.ace_dim))
        for aid in self.article_ids:
            vec = ace_repository.get(aid)
            if vec is not None:
                self.ace_matrix[self.article_row[aid]] = vec

        self.category_one_hot = self.n_category_rows < ONE_HOT_MAX
        if self.category_one_hot:
            eye = np.eye(self.n_category_rows)
            self.static_const = np.concatenate(
                [self.ace_matrix, eye[self.category_of_article]], axis=1
            )
            self.category_embed_dim = 0
        else:
            self.static_const = self.ace_matrix
            self.category_embed_dim = _embed_dim(self.n_category_rows)

        self.one_hot_fields = []  # (field, value -> row, cardinality)
        self.embed_fields = []  # (field, value -> row, cardinality, dim)
        for name in CONTEXT_FIELDS:
            values = sorted(set(context_vocab.get(name, [])) | {UNK})
            index = {v: i for i, v in enumerate(values)}
            card = len(values)
            if card < ONE_HOT_MAX:
                self.one_hot_fields.append((name, index, card))
            else:
                self.embed_fields.append((name, index, card, _embed_dim(card)))

        # numeric block: hour_sin, hour_cos, weekday one-hot
        self.uc_const_dim = sum(card for _, _, card in self.one_hot_fields) + 2 + 7
        self.dyn_dim = 2  # z-normalized novelty and recency

    @property
    def static_const_dim(self):
        return self.static_const.shape[1]

    def row_of(self, article_id):
        return self.article_row.get(article_id, 0)

    def rows_of(self, article_ids):
        return np.array([self.row_of(a) for a in article_ids], dtype=np.intp)

    def uc_const(self, click):
        """Constant user-context vector: one-hots plus numeric time."""
        parts = []
        for name, index, card in self.one_hot_fields:
            vec = np.zeros(card)
            vec[index.get(click.context_value(name), index[UNK])] = 1.0
            parts.append(vec)
        time_block = np.zeros(9)
        time_block[0] = click.hour_sin
        time_block[1] = click.hour_cos
        time_block[2 + click.weekday] = 1.0
        parts.append(time_block)
        return np.concatenate(parts)

    def uc_embed_rows(self, click):
        return np.array(
            [
                index.get(click.context_value(name), index[UNK])
                for name, index, _, _ in self.embed_fields
            ],
            dtype=np.intp,
        )

    def input_dims(self, id_embedding_size):
        """Width bookkeeping for the fusion input layer."""
        const = self.static_const_dim + self.dyn_dim + self.uc_const_dim
        trainable = id_embedding_size + self.category_embed_dim + sum(
            dim for _, _, _, dim in self.embed_fields
        )
        return const + trainable
