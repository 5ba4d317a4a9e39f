"""Article content embeddings learned from metadata prediction.

Each article's token sequence is encoded (mean of word embeddings, then
one hidden layer with a leaky rectifier) and the encoder is trained on a
side task: predicting the article's category (softmax cross-entropy) and
its keyword set (sigmoid cross-entropy), combined as a weighted sum. The
hidden activation is the Article Content Embedding (ACE); embeddings are
written once to a repository and read-only afterwards.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autograd as ag
from .corpus import UNK
from .synth import derive_rng

log = logging.getLogger(__name__)

DEFAULT_ACE_DIM = 250


class AcrModel:
    """Encoder weights plus the two classification heads."""

    def __init__(self, vocab, categories, keywords, word_dim, ace_dim, rng,
                 pretrained=None):
        self.vocab = vocab  # word -> row
        self.categories = categories  # category -> column
        self.keywords = keywords  # keyword -> column
        self.ace_dim = ace_dim
        n_words = len(vocab)
        emb = rng.uniform(-0.5, 0.5, size=(n_words, word_dim)) / np.sqrt(word_dim)
        if pretrained:
            for word, row in vocab.items():
                if word in pretrained:
                    emb[row] = pretrained[word]
        self.word_emb = ag.parameter(emb, "word_emb")
        self.w_hidden = ag.parameter(_fan_in_init(rng, word_dim, ace_dim), "w_hidden")
        self.b_hidden = ag.parameter(np.zeros(ace_dim), "b_hidden")
        self.w_cat = ag.parameter(_fan_in_init(rng, ace_dim, len(categories)), "w_cat")
        self.b_cat = ag.parameter(np.zeros(len(categories)), "b_cat")
        n_kw = max(1, len(keywords))
        self.w_kw = ag.parameter(_fan_in_init(rng, ace_dim, n_kw), "w_kw")
        self.b_kw = ag.parameter(np.zeros(n_kw), "b_kw")
        self.epoch_losses = []

    def parameters(self):
        return [self.word_emb, self.w_hidden, self.b_hidden,
                self.w_cat, self.b_cat, self.w_kw, self.b_kw]

    def encode(self, pooling):
        """ACE tensors for a batch given its [B, vocab] mean-pooling matrix."""
        mean = ag.matmul(ag.constant(pooling), self.word_emb)
        return ag.leaky_relu(ag.affine(mean, self.w_hidden, self.b_hidden))


def _fan_in_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _pooling_matrix(model, token_lists):
    pool = np.zeros((len(token_lists), len(model.vocab)))
    for row, tokens in enumerate(token_lists):
        known = [model.vocab[t] for t in tokens if t in model.vocab]
        if not known:
            continue
        for col in known:
            pool[row, col] += 1.0
        pool[row] /= len(known)
    return pool


def acr_loss(model, token_lists, category_rows, keyword_multihot, loss_weights):
    """Weighted classification loss tensor for one mini-batch."""
    w_single, w_multi = loss_weights
    ace = model.encode(_pooling_matrix(model, token_lists))
    cat_logits = ag.affine(ace, model.w_cat, model.b_cat)
    lse = ag.logsumexp(cat_logits, axis=1)
    picked = ag.take_rows(ag.reshape(cat_logits, (-1,)),
                          np.arange(len(token_lists)) * len(model.categories)
                          + np.asarray(category_rows))
    cat_loss = ag.mul(ag.reduce_sum(ag.sub(lse, picked)),
                      ag.constant(1.0 / len(token_lists)))

    kw_logits = ag.affine(ace, model.w_kw, model.b_kw)
    y = np.asarray(keyword_multihot, dtype=np.float64)
    # -y*log(sig(z)) - (1-y)*log(1-sig(z)) == softplus(-z) + (1-y)*z
    per_entry = ag.add(ag.softplus(ag.neg(kw_logits)),
                       ag.mul(ag.constant(1.0 - y), kw_logits))
    kw_loss = ag.mul(ag.reduce_sum(per_entry), ag.constant(1.0 / y.size))
    return ag.add(ag.mul(ag.constant(float(w_single)), cat_loss),
                  ag.mul(ag.constant(float(w_multi)), kw_loss))


def train_acr(articles, epochs=5, lr=0.02, loss_weights=(1.0, 1.0),
              ace_dim=DEFAULT_ACE_DIM, word_dim=100, batch_size=64, seed=0,
              pretrained=None):
    """Fit an AcrModel on the catalog's trainable articles.

    Articles without a category are excluded with a warning. Deterministic
    for a fixed seed.
    """
    trainable = []
    for art in articles.values() if isinstance(articles, dict) else articles:
        if not art.category or art.category == UNK:
            log.warning("article %s has no category; excluded from training",
                        art.article_id)
            continue
        if not art.tokens:
            log.warning("article %s has no tokens; excluded from training",
                        art.article_id)
            continue
        trainable.append(art)
    if not trainable:
        raise ValueError("no trainable articles (all lack category or tokens)")
    trainable.sort(key=lambda a: a.article_id)

    vocab = {w: i for i, w in enumerate(sorted({t for a in trainable for t in a.tokens}))}
    categories = {c: i for i, c in enumerate(sorted({a.category for a in trainable}))}
    keywords = {k: i for i, k in enumerate(sorted({k for a in trainable for k in a.keywords}))}

    rng = derive_rng(seed, "acr-init")
    if pretrained:
        word_dim = len(next(iter(pretrained.values())))
    model = AcrModel(vocab, categories, keywords, word_dim, ace_dim, rng,
                     pretrained)
    optimizer = ag.Adam(model.parameters(), lr=lr)

    n_kw = max(1, len(keywords))
    order_rng = derive_rng(seed, "acr-batches")
    for epoch in range(epochs):
        order = order_rng.permutation(len(trainable))
        total, batches = 0.0, 0
        for lo in range(0, len(order), batch_size):
            batch = [trainable[i] for i in order[lo:lo + batch_size]]
            tokens = [a.tokens for a in batch]
            cat_rows = [categories[a.category] for a in batch]
            multihot = np.zeros((len(batch), n_kw))
            for row, art in enumerate(batch):
                for kw in art.keywords:
                    if kw in keywords:
                        multihot[row, keywords[kw]] = 1.0
            loss = acr_loss(model, tokens, cat_rows, multihot, loss_weights)
            optimizer.zero_grad()
            ag.backward(loss)
            optimizer.step()
            total += loss.item()
            batches += 1
        model.epoch_losses.append(total / batches)
    return model


def embed_article(model, tokens):
    """Deterministic ACE for a token sequence; zeros if nothing is known."""
    known = [model.vocab[t] for t in tokens if t in model.vocab]
    if not known:
        log.warning("no known tokens; returning a zero embedding")
        return np.zeros(model.ace_dim)
    mean = model.word_emb.values[known].mean(axis=0)
    pre = mean @ model.w_hidden.values + model.b_hidden.values
    return np.where(pre > 0, pre, 0.01 * pre)


def predict_category_probs(model, tokens):
    ace = embed_article(model, tokens)
    logits = ace @ model.w_cat.values + model.b_cat.values
    logits -= logits.max()
    probs = np.exp(logits)
    return probs / probs.sum()


def build_repository(model, articles):
    """Embed every article once; the result is treated as read-only."""
    items = articles.values() if isinstance(articles, dict) else articles
    return {a.article_id: embed_article(model, a.tokens) for a in items}


def save_ace_repository(path, repository):
    """One line per article: id, dimension, fixed-precision components."""
    with open(path, "w", encoding="utf-8") as fh:
        for aid in sorted(repository):
            vec = repository[aid]
            comps = " ".join(f"{v:.6f}" for v in vec)
            fh.write(f"{aid} {len(vec)} {comps}\n")


def load_ace_repository(path):
    repository = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}:{line_no}: malformed embedding record")
            aid, dim = parts[0], int(parts[1])
            values = [float(v) for v in parts[2:]]
            if len(values) != dim:
                raise ValueError(f"{path}:{line_no}: expected {dim} components")
            repository[aid] = np.array(values)
    return repository


def load_word_vectors(path):
    """Read the conventional 'word v1 ... vd' text format."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) < 2:
                continue
            vectors[parts[0]] = np.array([float(v) for v in parts[1:]])
    return vectors
