"""The neural next-article model and its training objective.

Per click, the article's static features (id embedding, content
embedding, category), its dynamic context (window-normalized novelty and
recency), and the user context are fused by feed-forward layers into a
contextual article embedding. A stack of single-gate recurrent cells
consumes the session so far and predicts the embedding of the next
article; candidate relevance is a learned similarity (element-wise
product through feed-forward layers). Training minimizes a listwise
softmax loss over one positive and sampled negatives, minus a tunable
novelty term that pushes probability mass toward unpopular negatives.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag
from .baselines import Recommender
from .synth import derive_rng

log = logging.getLogger(__name__)


@dataclass
class NarConfig:
    """Hyper-parameters; names follow the usual tuning-table spelling."""

    batch_size: int = 256
    learning_rate: float = 1e-4
    reg_l2: float = 1e-5
    softmax_temperature: float = 0.1
    CAR_embedding_size: int = 1024
    rnn_units: int = 255
    rnn_num_layers: int = 2
    beta: float = 0.0
    id_embedding_size: int = 128
    fusion_hidden_units: tuple = (1024,)
    phi_units: tuple = (128, 64, 32)
    train_negatives: int = 50
    max_batch_rows: int = 26000

    @property
    def gamma(self):
        # smaller temperature -> sharper softmax
        return 1.0 / self.softmax_temperature

    def validate(self):
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.rnn_num_layers < 1 or self.rnn_units < 1:
            raise ValueError("rnn geometry must be positive")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(
                f"unknown nar parameters {unknown}; valid keys: {sorted(known)}"
            )
        kwargs = dict(raw)
        for key in ("fusion_hidden_units", "phi_units"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ModelParams:
    """Every trainable dense array of the network, plus its geometry."""

    def __init__(self, space, cfg, seed=0):
        cfg.validate()
        self.space = space
        self.cfg = cfg
        rng = derive_rng(seed, "nar-init")
        named = {}

        def param(name, values):
            tensor = ag.parameter(values, name)
            named[name] = tensor
            return tensor

        self.id_emb = param(
            "id_emb",
            _uniform(rng, cfg.id_embedding_size,
                     (space.n_article_rows, cfg.id_embedding_size)),
        )
        self.cat_emb = None
        if not space.category_one_hot:
            self.cat_emb = param(
                "cat_emb",
                _uniform(rng, space.category_embed_dim,
                         (space.n_category_rows, space.category_embed_dim)),
            )
        self.uc_emb_tables = []
        for name, _, card, dim in space.embed_fields:
            self.uc_emb_tables.append(
                param(f"uc_emb_{name}", _uniform(rng, dim, (card, dim)))
            )

        def bias(name, size):
            return param(name, rng.uniform(-0.05, 0.05, size=size))

        widths = [space.input_dims(cfg.id_embedding_size)]
        widths += list(cfg.fusion_hidden_units) + [cfg.CAR_embedding_size]
        self.fusion = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            self.fusion.append((
                param(f"fusion_w{i}", _uniform(rng, fan_in, (fan_in, fan_out))),
                bias(f"fusion_b{i}", fan_out),
            ))

        self.rnn = []
        for layer in range(cfg.rnn_num_layers):
            fan_in = cfg.CAR_embedding_size if layer == 0 else cfg.rnn_units
            units = cfg.rnn_units
            self.rnn.append({
                "W_g": param(f"rnn{layer}_W_g", _uniform(rng, fan_in, (fan_in, units))),
                "U_g": param(f"rnn{layer}_U_g", _uniform(rng, units, (units, units))),
                "b_g": bias(f"rnn{layer}_b_g", units),
                "W_c": param(f"rnn{layer}_W_c", _uniform(rng, fan_in, (fan_in, units))),
                "U_c": param(f"rnn{layer}_U_c", _uniform(rng, units, (units, units))),
                "b_c": bias(f"rnn{layer}_b_c", units),
            })

        self.proj_w = param("proj_w", _uniform(rng, cfg.rnn_units,
                                               (cfg.rnn_units, cfg.CAR_embedding_size)))
        self.proj_b = bias("proj_b", cfg.CAR_embedding_size)

        phi_widths = [cfg.CAR_embedding_size] + list(cfg.phi_units) + [1]
        self.phi = []
        for i, (fan_in, fan_out) in enumerate(zip(phi_widths, phi_widths[1:])):
            self.phi.append((
                param(f"phi_w{i}", _uniform(rng, fan_in, (fan_in, fan_out))),
                bias(f"phi_b{i}", fan_out),
            ))
        self.named = named

    def parameters(self):
        return list(self.named.values())

    def checksum(self):
        return float(sum(np.sum(t.values) for t in self.named.values()))

    def assert_finite(self):
        for name, tensor in self.named.items():
            if not np.all(np.isfinite(tensor.values)):
                raise FloatingPointError(f"parameter {name} went non-finite")


# -- checkpointing -------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(params, path):
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {f.name: getattr(params.cfg, f.name) for f in fields(NarConfig)},
    }
    arrays = {name: t.values for name, t in params.named.items()}
    np.savez_compressed(path, __meta__=np.frombuffer(
        json.dumps(meta, sort_keys=True, default=list).encode(), dtype=np.uint8
    ), **arrays)


def load_checkpoint(path, space, seed=0):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = NarConfig.from_dict(meta["config"])
        params = ModelParams(space, cfg, seed)
        for name, tensor in params.named.items():
            if name not in data:
                raise ValueError(f"checkpoint is missing tensor {name}")
            stored = data[name]
            if stored.shape != tensor.values.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            tensor.values = stored.astype(np.float64)
    return params


# -- graph construction ---------------------------------------------------


def _psi_graph(params, const_block, art_rows, uc_emb_rows):
    """Fusion network over a flat batch of rows (the CAE builder)."""
    parts = [ag.constant(const_block), ag.take_rows(params.id_emb, art_rows)]
    if params.cat_emb is not None:
        parts.append(ag.take_rows(
            params.cat_emb, params.space.category_of_article[art_rows]
        ))
    for i, table in enumerate(params.uc_emb_tables):
        parts.append(ag.take_rows(table, uc_emb_rows[:, i]))
    w0, b0 = params.fusion[0]
    x = ag.leaky_relu(ag.concat_affine(parts, w0, b0))
    for w, b in params.fusion[1:]:
        x = ag.leaky_relu(ag.affine(x, w, b))
    return x


def _ugrnn_graph_step(layer, x, h):
    gate = ag.sigmoid(ag.recurrent_affine(x, layer["W_g"], h, layer["U_g"],
                                          layer["b_g"]))
    cand = ag.tanh(ag.recurrent_affine(x, layer["W_c"], h, layer["U_c"],
                                       layer["b_c"]))
    keep = ag.mul(gate, h)
    update = ag.mul(ag.sub(ag.constant(1.0), gate), cand)
    return ag.add(keep, update)


def _phi_graph(params, x):
    hidden = params.phi[:-1]
    for w, b in hidden:
        x = ag.leaky_relu(ag.affine(x, w, b))
    w, b = params.phi[-1]
    return ag.affine(x, w, b)  # final scalar layer stays linear


def _const_block(space, rows, dyn, uc_const):
    return np.concatenate([space.static_const[rows], dyn, uc_const], axis=1)


@dataclass
class TrainBatch:
    """Padded arrays for a group of completed sessions.

    Candidate position 0 holds the positive; `valid` masks real
    prediction slots (slot p predicts click p+1 of its session).
    """

    session_ids: list
    in_art: np.ndarray  # [B, T]
    in_dyn: np.ndarray  # [B, T, 2]
    in_uc_const: np.ndarray  # [B, T, Fu]
    in_uc_emb: np.ndarray  # [B, T, E]
    cand_art: np.ndarray  # [B, P, C]
    cand_dyn: np.ndarray  # [B, P, C, 2]
    cand_nov: np.ndarray  # [B, P, C] raw novelty values
    valid: np.ndarray  # [B, P] bool

    @property
    def shape(self):
        b, t = self.in_art.shape
        return b, t, self.cand_art.shape[1], self.cand_art.shape[2]

    def n_predictions(self):
        return int(self.valid.sum())


def batch_scores(params, batch):
    """Relevance scores tensor [B*P, C] for every slot and candidate."""
    b, t, p, c = batch.shape
    space = params.space

    in_rows = batch.in_art.reshape(-1)
    in_const = _const_block(space, in_rows, batch.in_dyn.reshape(-1, 2),
                            batch.in_uc_const.reshape(b * t, -1))
    cae_in = _psi_graph(params, in_const, in_rows,
                        batch.in_uc_emb.reshape(b * t, -1))

    layer_inputs = None
    for layer_idx, layer in enumerate(params.rnn):
        h = ag.constant(np.zeros((b, params.cfg.rnn_units)))
        outputs = []
        for step in range(t):
            if layer_idx == 0:
                rows = np.arange(b) * t + step
                x = ag.take_rows(cae_in, rows)
            else:
                x = layer_inputs[step]
            h = _ugrnn_graph_step(layer, x, h)
            outputs.append(h)
        layer_inputs = outputs
    states = layer_inputs  # top layer, one [B, units] tensor per step

    # slot p uses the state after consuming click p; stacked is p-major,
    # the candidate arrays are b-major, so reorder rows accordingly
    stacked = ag.concat([states[step] for step in range(p)], axis=0)
    bi = np.repeat(np.arange(b), p)
    pi = np.tile(np.arange(p), b)
    order = pi * b + bi
    nae = ag.affine(ag.take_rows(stacked, order), params.proj_w,
                    params.proj_b)  # [B*P, D]

    cand_rows = batch.cand_art.reshape(-1)
    cand_uc = np.repeat(
        batch.in_uc_const[:, :p, :].reshape(b * p, -1), c, axis=0
    )
    cand_const = _const_block(space, cand_rows,
                              batch.cand_dyn.reshape(-1, 2), cand_uc)
    cand_uc_emb = np.repeat(
        batch.in_uc_emb[:, :p, :].reshape(b * p, -1), c, axis=0
    )
    cae_cand = _psi_graph(params, cand_const, cand_rows, cand_uc_emb)

    nae_rep = ag.take_rows(nae, np.repeat(np.arange(b * p), c))
    scores = _phi_graph(params, ag.mul(nae_rep, cae_cand))
    return ag.reshape(scores, (b * p, c))


def _masked_mean(values, mask_flat):
    n = float(mask_flat.sum())
    if n == 0:
        raise ValueError("batch has no valid prediction slots")
    return ag.mul(ag.reduce_sum(ag.mul(values, ag.constant(mask_flat))),
                  ag.constant(1.0 / n))


def accuracy_loss(params, batch, scores=None):
    """Mean negative log-probability of the positives (graph tensor)."""
    if scores is None:
        scores = batch_scores(params, batch)
    gamma_s = ag.mul(ag.constant(params.cfg.gamma), scores)
    lse = ag.logsumexp(gamma_s, axis=1)
    positive = ag.reshape(ag.slice_cols(gamma_s, 0, 1), (-1,))
    nll = ag.sub(lse, positive)
    return _masked_mean(nll, batch.valid.reshape(-1).astype(np.float64))


def novelty_loss(params, batch, scores=None):
    """Probability-weighted mean novelty of the negatives (graph tensor)."""
    if scores is None:
        scores = batch_scores(params, batch)
    c = batch.shape[3]
    if c < 2:
        raise ValueError("novelty loss needs at least one negative")
    gamma_neg = ag.mul(ag.constant(params.cfg.gamma),
                       ag.slice_cols(scores, 1, c))
    lse = ag.logsumexp(gamma_neg, axis=1)
    probs = ag.exp(ag.sub(gamma_neg, ag.reshape(lse, (-1, 1))))
    weighted = ag.reduce_sum(
        ag.mul(probs, ag.constant(batch.cand_nov[:, :, 1:].reshape(-1, c - 1))),
        axis=1,
    )
    ratio = ag.div(weighted, ag.reduce_sum(probs, axis=1))
    return _masked_mean(ratio, batch.valid.reshape(-1).astype(np.float64))


def l2_penalty(params):
    total = ag.constant(0.0)
    for tensor in params.parameters():
        total = ag.add(total, ag.square_sum(tensor))
    return ag.mul(ag.constant(params.cfg.reg_l2), total)


def total_loss(params, batch, beta=None):
    """accuracy - beta * novelty + L2, as one differentiable scalar."""
    beta = params.cfg.beta if beta is None else beta
    scores = batch_scores(params, batch)
    loss = ag.add(accuracy_loss(params, batch, scores), l2_penalty(params))
    if beta != 0.0:
        loss = ag.sub(loss, ag.mul(ag.constant(float(beta)),
                                   novelty_loss(params, batch, scores)))
    return loss


def train_step(params, optimizer, batch, lr=None, beta=None):
    """One adaptive-moment update; aborts loudly on a non-finite loss."""
    loss = total_loss(params, batch, beta)
    value = loss.item()
    if not np.isfinite(value):
        params.assert_finite()
        raise FloatingPointError(
            f"non-finite training loss {value!r} on batch "
            f"{batch.session_ids[:3]}... shape {batch.shape}"
        )
    optimizer.zero_grad()
    ag.backward(loss)
    optimizer.step(lr)
    return value


# -- numpy inference -------------------------------------------------------


def _leaky_np(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def build_cae(params, art_rows, dyn, uc_const, uc_emb_rows):
    """Numpy forward of the fusion network; rows of CAE vectors."""
    art_rows = np.asarray(art_rows, dtype=np.intp)
    const = _const_block(params.space, art_rows,
                         np.asarray(dyn, dtype=np.float64),
                         np.asarray(uc_const, dtype=np.float64))
    parts = [const, params.id_emb.values[art_rows]]
    if params.cat_emb is not None:
        parts.append(params.cat_emb.values[
            params.space.category_of_article[art_rows]])
    uc_emb_rows = np.asarray(uc_emb_rows, dtype=np.intp)
    for i, table in enumerate(params.uc_emb_tables):
        parts.append(table.values[uc_emb_rows[:, i]])
    x = np.concatenate(parts, axis=1)
    for w, b in params.fusion:
        x = _leaky_np(x @ w.values + b.values)
    return x


def ugrnn_step(layer, x, h):
    """One recurrent step: h' = g*h + (1-g)*tanh-candidate, numpy arrays."""
    w_g, u_g, b_g = layer["W_g"], layer["U_g"], layer["b_g"]
    w_c, u_c, b_c = layer["W_c"], layer["U_c"], layer["b_c"]

    def val(t):
        return t.values if isinstance(t, ag.Tensor) else t

    pre_g = x @ val(w_g) + h @ val(u_g) + val(b_g)
    gate = 1.0 / (1.0 + np.exp(-pre_g))
    cand = np.tanh(x @ val(w_c) + h @ val(u_c) + val(b_c))
    return gate * h + (1.0 - gate) * cand


def predict_nae(params, cae_sequence):
    """Run the recurrent stack over a CAE sequence; project the top state."""
    cae_sequence = np.atleast_2d(np.asarray(cae_sequence, dtype=np.float64))
    if cae_sequence.shape[0] == 0:
        raise ValueError("cannot predict from an empty session prefix")
    states = [np.zeros((1, params.cfg.rnn_units))
              for _ in range(params.cfg.rnn_num_layers)]
    for row in cae_sequence:
        states = advance_states(params, states, row[None, :])
    return (states[-1] @ params.proj_w.values + params.proj_b.values)[0]


def advance_states(params, states, x):
    out = []
    inp = x
    for layer, h in zip(params.rnn, states):
        h_new = ugrnn_step(layer, inp, h)
        out.append(h_new)
        inp = h_new
    return out


def relevance(params, nae, cae):
    """Learned similarity between a predicted and a candidate embedding."""
    x = np.atleast_2d(np.asarray(nae) * np.asarray(cae))
    for w, b in params.phi[:-1]:
        x = _leaky_np(x @ w.values + b.values)
    w, b = params.phi[-1]
    out = (x @ w.values + b.values)[:, 0]
    return float(out[0]) if out.shape[0] == 1 else out


def softmax_probs(scores, gamma):
    """Stable softmax over relevance scores with sharpness gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    s = gamma * np.asarray(scores, dtype=np.float64)
    s = s - s.max()
    e = np.exp(s)
    return e / e.sum()


# -- harness adapter -------------------------------------------------------


@dataclass
class SessionRecord:
    """Feature snapshots of one completed session, ready for training."""

    session_id: str
    art_rows: np.ndarray  # [L]
    dyn: np.ndarray  # [L, 2]
    uc_const: np.ndarray  # [L, Fu]
    uc_emb: np.ndarray  # [L, E]
    cand_rows: np.ndarray  # [L-1, C]
    cand_dyn: np.ndarray  # [L-1, C, 2]
    cand_nov: np.ndarray  # [L-1, C]
    cand_valid: np.ndarray  # [L-1] bool


def assemble_batches(records, batch_size, max_batch_rows):
    """Group consecutive records into padded TrainBatches."""
    batches = []
    group = []

    def candidate_count(recs):
        return max(r.cand_rows.shape[1] for r in recs)

    def rows_of(recs):
        t = max(r.art_rows.shape[0] for r in recs)
        return len(recs) * (t - 1) * candidate_count(recs)

    for record in records:
        if not record.cand_valid.any():
            continue
        if group and (len(group) >= batch_size
                      or rows_of(group + [record]) > max_batch_rows):
            batches.append(_build_batch(group))
            group = []
        group.append(record)
    if group:
        batches.append(_build_batch(group))
    return batches


def _build_batch(records):
    b = len(records)
    t = max(r.art_rows.shape[0] for r in records)
    p = t - 1
    c = max(r.cand_rows.shape[1] for r in records)
    fu = records[0].uc_const.shape[1]
    e = records[0].uc_emb.shape[1]

    batch = TrainBatch(
        session_ids=[r.session_id for r in records],
        in_art=np.zeros((b, t), dtype=np.intp),
        in_dyn=np.zeros((b, t, 2)),
        in_uc_const=np.zeros((b, t, fu)),
        in_uc_emb=np.zeros((b, t, e), dtype=np.intp),
        cand_art=np.zeros((b, p, c), dtype=np.intp),
        cand_dyn=np.zeros((b, p, c, 2)),
        cand_nov=np.zeros((b, p, c)),
        valid=np.zeros((b, p), dtype=bool),
    )
    for i, r in enumerate(records):
        length = r.art_rows.shape[0]
        batch.in_art[i, :length] = r.art_rows
        batch.in_dyn[i, :length] = r.dyn
        batch.in_uc_const[i, :length] = r.uc_const
        batch.in_uc_emb[i, :length] = r.uc_emb
        n_slots, n_cand = r.cand_rows.shape
        batch.cand_art[i, :n_slots, :n_cand] = r.cand_rows
        batch.cand_dyn[i, :n_slots, :n_cand] = r.cand_dyn
        batch.cand_nov[i, :n_slots, :n_cand] = r.cand_nov
        batch.valid[i, :n_slots] = r.cand_valid & (r.cand_rows.shape[1] == c)
    return batch


class NarRecommender(Recommender):
    """Streaming adapter: scores during replay, trains between hours."""

    name = "nar"
    wants_features = True

    def __init__(self, space, cfg, seed=0):
        self.space = space
        self.cfg = cfg
        self.train_negatives = cfg.train_negatives
        self.params = ModelParams(space, cfg, seed)
        self.optimizer = ag.Adam(self.params.parameters(), lr=cfg.learning_rate)
        self._states = {}
        self._pending = []
        self.train_losses = []

    # scoring ---------------------------------------------------------

    def on_click_recorded(self, session_id, click, features=None):
        if features is None:
            return
        cae = build_cae(
            self.params,
            np.array([features.art_row], dtype=np.intp),
            features.dyn[None, :],
            features.uc_const[None, :],
            features.uc_emb[None, :],
        )
        states = self._states.get(session_id)
        if states is None:
            states = [np.zeros((1, self.cfg.rnn_units))
                      for _ in range(self.cfg.rnn_num_layers)]
        self._states[session_id] = advance_states(self.params, states, cae)

    def score(self, ctx, candidate_ids):
        states = self._states.get(ctx.session_id)
        if states is None:
            raise RuntimeError(
                f"no recurrent state for session {ctx.session_id}; "
                "prefix clicks were not replayed"
            )
        nae = states[-1] @ self.params.proj_w.values + self.params.proj_b.values
        feats = ctx.nar_candidates
        cae = build_cae(self.params, feats.rows, feats.dyn,
                        np.broadcast_to(feats.uc_const,
                                        (len(feats.rows), feats.uc_const.shape[0])),
                        np.broadcast_to(feats.uc_emb,
                                        (len(feats.rows), feats.uc_emb.shape[0])))
        return relevance(self.params, np.repeat(nae, len(feats.rows), axis=0), cae)

    def end_session(self, session_id):
        self._states.pop(session_id, None)

    # training --------------------------------------------------------

    def enqueue(self, record):
        self._pending.append(record)

    def train_completed_sessions(self, records=None):
        records = self._pending if records is None else records
        if records is self._pending:
            self._pending = []
        for batch in assemble_batches(records, self.cfg.batch_size,
                                      self.cfg.max_batch_rows):
            value = train_step(self.params, self.optimizer, batch)
            self.train_losses.append(value)
