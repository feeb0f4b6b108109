"""
Optional branches on top of the hierarchical encoder: intra-attention over
the previous utterances and a POS-tag encoder running next to the word-level
encoder.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .encoder import EmbeddingTable, UtteranceEncoder, encode_utterance
from .exceptions import ConfigError, ShapeError
from .numcore import concat, masked_softmax, matmul, scale, take_rows, transpose

logger = logging.getLogger(__name__)

FUSION_POINTS = ("pre_conversation", "pre_classifier")


@dataclass
class AttentionConfig:
    enabled: bool = False
    window: int = 3
    scaled: bool = False

    def __post_init__(self):
        if self.enabled and self.window is not None and self.window < 1:
            raise ConfigError(f"attention.window must be at least 1, got {self.window}")


@dataclass
class PosConfig:
    enabled: bool = False
    dim: int = 32
    hidden_size: int = 32
    fusion_point: str = "pre_classifier"

    def __post_init__(self):
        if self.fusion_point not in FUSION_POINTS:
            raise ConfigError(f"pos.fusion_point must be one of {FUSION_POINTS}, got {self.fusion_point!r}")
        if self.dim < 1 or self.hidden_size < 1:
            raise ConfigError("pos.dim and pos.hidden_size must be positive")


def attention_window_mask(length, window=None):
    """allowed[j, m] is true for the (at most ``window``) utterances before j."""
    rows = np.arange(length)[:, None]
    cols = np.arange(length)[None, :]
    allowed = cols < rows
    if window is not None:
        allowed &= cols >= rows - window
    return allowed


def intra_attention(gs, window=None, scaled=False):
    """
    Attach to every utterance a context vector over its predecessors.

    Weights a_{j,m} are the softmax over the window of dot(g_j, g_m); the
    first utterance gets the zero vector. ``window=None`` covers the whole
    prefix.

    Returns:
        (R x 2F tensor [g_j ; c_j], R x R weight matrix)
    """
    if gs.ndim != 2:
        raise ShapeError(f"intra_attention needs an R x F matrix, got {list(gs.shape)}")
    length, width = gs.shape
    scores = matmul(gs, transpose(gs))
    if scaled:
        scores = scale(scores, 1.0 / math.sqrt(width))
    weights = masked_softmax(scores, attention_window_mask(length, window))
    context = matmul(weights, gs)
    return concat([gs, context], axis=1), weights.data


def apply_attention(features, batch_size, length, config):
    """Attention per conversation over conversation-major rows."""
    outputs = []
    for b in range(batch_size):
        rows = np.arange(b * length, (b + 1) * length)
        augmented, _ = intra_attention(take_rows(features, rows), config.window, config.scaled)
        outputs.append(augmented)
    return concat(outputs, axis=0)


class PosEncoderParams:
    """POS-tag embedding table and its own word-level recurrent encoder."""

    def __init__(self, encoder):
        self.encoder = encoder

    @classmethod
    def create(cls, store, num_tags, pos_config, encoder_config, rng):
        table = EmbeddingTable.create(store, "pos.embedding", num_tags, pos_config.dim, rng)
        config = replace(encoder_config, hidden_size=pos_config.hidden_size)
        return cls(UtteranceEncoder.create(store, "pos", table, config, rng))

    @property
    def output_size(self):
        return self.encoder.output_size


def encode_pos(pos_tags, params, mask=None, training=False, rng=None):
    """The utterance pipeline run over tag embeddings."""
    return encode_utterance(params.encoder, pos_tags, mask=mask, training=training, rng=rng)


def fuse(g, context=None, pos=None):
    """Classifier input [g ; c ; p] with the absent parts left out."""
    parts = [g] + [part for part in (context, pos) if part is not None]
    return concat(parts, axis=1)
