"""
Hierarchical recurrent encoder.

Word level: embedding lookup, (bi)LSTM over tokens, pooling into one vector
per utterance. Conversation level: (bi)LSTM over the utterance vectors.

Every function works on row batches. A tensor with N rows carries N
independent sequences; a single utterance is a batch of one. Padded steps
are masked: the recurrence keeps its previous state there, so padding never
changes a result.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError, ShapeError
from .numcore import (
    add,
    concat,
    constant,
    dropout,
    gather,
    init_param,
    matmul,
    mul,
    narrow,
    sigmoid,
    tanh,
    transpose,
)

logger = logging.getLogger(__name__)

PAD = 0
UNK = 1

POOLING_MODES = ("last", "mean")


@dataclass
class HierEncoderConfig:
    hidden_size: int = 300
    pooling: str = "last"
    dropout_rate: float = 0.2
    num_stacked_layers: int = 1
    bidirectional: bool = True
    embed_dropout: bool = True

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout_rate}")
        if self.hidden_size < 1 or self.num_stacked_layers < 1:
            raise ConfigError("hidden_size and num_stacked_layers must be positive")


class EmbeddingTable:
    """|V| x d embedding matrix. Row PAD is zero and never receives gradient."""

    def __init__(self, matrix):
        self.matrix = matrix
        self.matrix.data[PAD] = 0.0

    @classmethod
    def create(cls, store, name, vocab_size, dim, rng, pretrained=None):
        if pretrained is not None:
            pretrained = np.asarray(pretrained)
            if pretrained.shape != (vocab_size, dim):
                raise ShapeError(
                    f"pretrained matrix has shape {list(pretrained.shape)}, expected [{vocab_size}, {dim}]"
                )
            matrix = init_param((vocab_size, dim), "zeros", name=name, store=store)
            matrix.data[...] = pretrained
        else:
            matrix = init_param((vocab_size, dim), "glorot", rng=rng, name=name, store=store)
        return cls(matrix)

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]

    def lookup(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            raise DataError(f"token index out of range for a vocabulary of {self.size}")
        rows = gather(self.matrix, (ids,))
        keep = np.repeat((ids != PAD)[:, None].astype(float), self.dim, axis=1)
        return mul(rows, constant(keep))


class LstmCellParams:
    """
    One LSTM direction. W is 4H x in, U is 4H x H, b is 4H; the gate blocks
    are ordered input, forget, output, candidate.
    """

    def __init__(self, W, U, b):
        hidden = U.shape[1]
        if U.shape != (4 * hidden, hidden) or W.shape[0] != 4 * hidden or b.shape != (4 * hidden,):
            raise ShapeError(
                f"inconsistent LSTM shapes W{list(W.shape)} U{list(U.shape)} b{list(b.shape)}"
            )
        self.W = W
        self.U = U
        self.b = b

    @classmethod
    def create(cls, store, prefix, in_dim, hidden, rng):
        W = init_param((4 * hidden, in_dim), "glorot", rng=rng, name=f"{prefix}.W", store=store)
        U = init_param((4 * hidden, hidden), "glorot", rng=rng, name=f"{prefix}.U", store=store)
        b = init_param((4 * hidden,), "zeros", name=f"{prefix}.b", store=store, decay=False)
        b.data[hidden:2 * hidden] = 1.0
        return cls(W, U, b)

    @property
    def hidden_size(self):
        return self.U.shape[1]

    @property
    def in_dim(self):
        return self.W.shape[1]


class BiLstm:
    def __init__(self, forward, backward=None):
        self.forward = forward
        self.backward = backward

    @classmethod
    def create(cls, store, prefix, in_dim, hidden, rng, bidirectional=True):
        forward = LstmCellParams.create(store, f"{prefix}.fwd", in_dim, hidden, rng)
        backward = None
        if bidirectional:
            backward = LstmCellParams.create(store, f"{prefix}.bwd", in_dim, hidden, rng)
        return cls(forward, backward)

    @property
    def bidirectional(self):
        return self.backward is not None

    @property
    def hidden_size(self):
        return self.forward.hidden_size

    @property
    def output_size(self):
        return self.hidden_size * (2 if self.bidirectional else 1)


def _cell_step(cell, W_t, U_t, h_prev, c_prev, x, keep=None):
    H = cell.hidden_size
    gates = add(add(matmul(x, W_t), matmul(h_prev, U_t)), cell.b)
    i = sigmoid(narrow(gates, 1, 0, H))
    f = sigmoid(narrow(gates, 1, H, H))
    o = sigmoid(narrow(gates, 1, 2 * H, H))
    g = tanh(narrow(gates, 1, 3 * H, H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    if keep is not None:
        on, off = keep
        h = add(mul(on, h), mul(off, h_prev))
        c = add(mul(on, c), mul(off, c_prev))
    return h, c


def lstm_step(cell, h_prev, c_prev, x):
    """
    One LSTM update over a batch of rows.

    i = s(W_i x + U_i h + b_i), f = s(W_f x + U_f h + b_f), o = s(W_o x + U_o h + b_o),
    g = tanh(W_g x + U_g h + b_g), c = f*c_prev + i*g, h = o*tanh(c)
    """
    if x.ndim != 2 or x.shape[1] != cell.in_dim:
        raise ShapeError(f"lstm_step: input of shape {list(x.shape)} for in_dim {cell.in_dim}")
    if h_prev.shape != (x.shape[0], cell.hidden_size) or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"lstm_step: state shapes {list(h_prev.shape)}/{list(c_prev.shape)} "
            f"for hidden size {cell.hidden_size}"
        )
    return _cell_step(cell, transpose(cell.W), transpose(cell.U), h_prev, c_prev, x)


def _keep_masks(mask, hidden, steps):
    if mask is None:
        return [None] * steps
    mask = np.asarray(mask, dtype=float)
    keeps = []
    for t in range(steps):
        on = np.repeat(mask[:, t:t + 1], hidden, axis=1)
        keeps.append((constant(on), constant(1.0 - on)))
    return keeps


def _run_direction(cell, inputs, keeps, order):
    rows = inputs[0].shape[0]
    H = cell.hidden_size
    W_t, U_t = transpose(cell.W), transpose(cell.U)
    h = constant(np.zeros((rows, H)))
    c = constant(np.zeros((rows, H)))
    outputs = [None] * len(inputs)
    for t in order:
        h, c = _cell_step(cell, W_t, U_t, h, c, inputs[t], keeps[t])
        outputs[t] = h
    return outputs


def bilstm_run(bilstm, inputs, mask=None):
    """
    Run both directions over a sequence of N x in tensors.

    Step k of the result is [h_fwd(k) ; h_bwd(k)] where the backward direction
    reads the sequence in reverse and its states are re-aligned to the
    original order. ``mask`` is an N x T 0/1 array; masked steps keep the
    previous state.
    """
    if not inputs:
        raise ShapeError("bilstm_run: empty sequence")
    steps = len(inputs)
    keeps = _keep_masks(mask, bilstm.hidden_size, steps)
    forward = _run_direction(bilstm.forward, inputs, keeps, range(steps))
    if not bilstm.bidirectional:
        return forward
    backward = _run_direction(bilstm.backward, inputs, keeps, reversed(range(steps)))
    return [concat([f, b], axis=1) for f, b in zip(forward, backward)]


def run_layers(layers, inputs, mask=None, dropout_rate=0.0, training=False, rng=None):
    states = inputs
    for depth, layer in enumerate(layers):
        if depth > 0:
            states = [dropout(s, dropout_rate, rng, training) for s in states]
        states = bilstm_run(layer, states, mask)
    return states


def pool(states, mode, mask=None, bidirectional=True):
    """
    Summarise a sequence of per-step states into one vector per row.

    ``last`` takes each direction's final processed state: the forward half
    at the last step and the backward half at the first step. ``mean``
    averages the unmasked steps.
    """
    if not states:
        raise ShapeError("pool: empty sequence")
    if mode == "last":
        if not bidirectional:
            return states[-1]
        H = states[0].shape[1] // 2
        return concat([narrow(states[-1], 1, 0, H), narrow(states[0], 1, H, H)], axis=1)
    if mode != "mean":
        raise ConfigError(f"unknown pooling mode {mode!r}")

    rows, width = states[0].shape
    if mask is None:
        mask = np.ones((rows, len(states)))
    mask = np.asarray(mask, dtype=float)
    total = None
    for t, state in enumerate(states):
        term = mul(state, constant(np.repeat(mask[:, t:t + 1], width, axis=1)))
        total = term if total is None else add(total, term)
    lengths = mask.sum(axis=1, keepdims=True)
    return mul(total, constant(np.repeat(1.0 / lengths, width, axis=1)))


def _as_rows(tokens):
    tokens = np.asarray(tokens, dtype=np.intp)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise ShapeError("token matrix needs at least one step")
    return tokens


def embed_utterance(table, tokens, dropout_rate=0.0, training=False, rng=None):
    """One N x d tensor per step; a 1-D token list is a single-row batch."""
    tokens = _as_rows(tokens)
    return [
        dropout(table.lookup(tokens[:, t]), dropout_rate, rng, training)
        for t in range(tokens.shape[1])
    ]


def average_embeddings(table, tokens, mask=None, dropout_rate=0.0, training=False, rng=None):
    """Mean of the unmasked word embeddings, the utterance vector of the WE baseline."""
    steps = embed_utterance(table, tokens, dropout_rate, training, rng)
    return pool(steps, "mean", mask=mask, bidirectional=False)


class UtteranceEncoder:
    """Embedding table plus the word-level recurrent layers."""

    def __init__(self, table, layers, config):
        self.table = table
        self.layers = layers
        self.config = config

    @classmethod
    def create(cls, store, prefix, table, config, rng):
        layers = []
        in_dim = table.dim
        for depth in range(config.num_stacked_layers):
            layer = BiLstm.create(
                store, f"{prefix}.l{depth}", in_dim, config.hidden_size, rng, config.bidirectional
            )
            layers.append(layer)
            in_dim = layer.output_size
        return cls(table, layers, config)

    @property
    def output_size(self):
        return self.layers[-1].output_size


def encode_utterance(encoder, tokens, mask=None, training=False, rng=None):
    """v = pool(bilstm(embed(tokens))), with dropout on v in training mode."""
    config = encoder.config
    rate = config.dropout_rate
    steps = embed_utterance(
        encoder.table, tokens, rate if config.embed_dropout else 0.0, training, rng
    )
    states = run_layers(encoder.layers, steps, mask, rate, training, rng)
    vector = pool(states, config.pooling, mask=mask, bidirectional=config.bidirectional)
    return dropout(vector, rate, rng, training)


class ConversationEncoder:
    def __init__(self, layers, config):
        self.layers = layers
        self.config = config

    @classmethod
    def create(cls, store, prefix, in_dim, config, rng):
        layers = []
        for depth in range(config.num_stacked_layers):
            layer = BiLstm.create(
                store, f"{prefix}.l{depth}", in_dim, config.hidden_size, rng, config.bidirectional
            )
            layers.append(layer)
            in_dim = layer.output_size
        return cls(layers, config)

    @property
    def output_size(self):
        return self.layers[-1].output_size


def encode_conversation(encoder, vs, training=False, rng=None):
    """
    Contextual utterance representations g_1..g_R.

    ``vs`` holds one B x in tensor per utterance position, B conversations of
    equal length side by side.
    """
    if not vs:
        raise ShapeError("encode_conversation: empty conversation")
    rate = encoder.config.dropout_rate
    states = run_layers(encoder.layers, list(vs), None, rate, training, rng)
    return [dropout(g, rate, rng, training) for g in states]
