"""
Model assembly: the ablation variants (WE, WE_UL, WE_UL_CL) with an LR or
CRF classifier, plus the optional attention and POS branches.
"""
import logging

import numpy as np

from .crf import CrfParams, nll, unary_scores, viterbi_decode
from .encoder import (
    ConversationEncoder,
    EmbeddingTable,
    UtteranceEncoder,
    average_embeddings,
    encode_conversation,
    encode_utterance,
)
from .exceptions import ConfigError, DataError
from .extensions import PosEncoderParams, apply_attention, encode_pos, fuse
from .numcore import (
    ParameterStore,
    add,
    concat,
    gather,
    init_param,
    logsumexp,
    no_tape,
    reduce_sum,
    scale,
    sub,
    take_rows,
)

logger = logging.getLogger(__name__)


class SoftmaxHead:
    """Independent per-utterance softmax (the LR classifier)."""

    def __init__(self, W_u, b_u):
        self.W_u = W_u
        self.b_u = b_u

    @classmethod
    def create(cls, store, in_dim, num_labels, rng):
        W_u = init_param((num_labels, in_dim), "glorot", rng=rng, name="softmax.W_u", store=store)
        b_u = init_param((num_labels,), "zeros", name="softmax.b_u", store=store, decay=False)
        return cls(W_u, b_u)

    def loss(self, scores, batch):
        labels = batch.labels.reshape(-1)
        picked = gather(scores, (np.arange(labels.size), labels))
        return sub(reduce_sum(logsumexp(scores, axis=1)), reduce_sum(picked))

    def decode(self, scores, batch):
        best = np.argmax(scores, axis=1)
        return [best[b * batch.length:(b + 1) * batch.length].tolist() for b in range(batch.size)]


class CrfHead:
    def __init__(self, params):
        self.params = params
        self.W_u = params.W_u
        self.b_u = params.b_u

    @classmethod
    def create(cls, store, in_dim, num_labels, rng, decay_transitions=False):
        return cls(CrfParams.create(store, "crf", in_dim, num_labels, rng, decay_transitions))

    def _rows(self, batch, b):
        return np.arange(b * batch.length, (b + 1) * batch.length)

    def loss(self, scores, batch):
        total = None
        for b in range(batch.size):
            term = nll(take_rows(scores, self._rows(batch, b)), batch.labels[b], self.params.T, self.params.s)
            total = term if total is None else add(total, term)
        return total

    def decode(self, scores, batch):
        return [
            viterbi_decode(scores[self._rows(batch, b)], self.params.T, self.params.s)[0]
            for b in range(batch.size)
        ]


class DialogueActTagger:
    """
    Embeddings -> [utterance encoder] -> [conversation encoder] -> classifier.

    Which encoders exist is fixed by ``config.variant``; the classifier by
    ``config.classifier``. Features flow through the network as
    conversation-major rows (row b * R + j is utterance j of conversation b).
    """

    def __init__(self, config, vocab_size, num_labels, num_pos_tags=0, pretrained=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        self.num_labels = num_labels
        self.params = ParameterStore()
        encoder_config = config.encoder_config()

        self.table = EmbeddingTable.create(
            self.params, "embedding", vocab_size, config.embedding_dim, rng, pretrained
        )
        self.utterance_encoder = None
        width = config.embedding_dim
        if config.variant != "WE":
            self.utterance_encoder = UtteranceEncoder.create(
                self.params, "utterance", self.table, encoder_config, rng
            )
            width = self.utterance_encoder.output_size

        self.pos_encoder = None
        pos = config.pos
        if pos.enabled:
            if num_pos_tags < 1:
                raise ConfigError("pos.enabled needs a POS-tag vocabulary")
            self.pos_encoder = PosEncoderParams.create(self.params, num_pos_tags, pos, encoder_config, rng)
            if pos.fusion_point == "pre_conversation":
                if config.variant != "WE_UL_CL":
                    raise ConfigError("pos.fusion_point=pre_conversation needs the WE_UL_CL variant")
                width += self.pos_encoder.output_size

        self.conversation_encoder = None
        if config.variant == "WE_UL_CL":
            self.conversation_encoder = ConversationEncoder.create(
                self.params, "conversation", width, encoder_config, rng
            )
            width = self.conversation_encoder.output_size

        if config.attention.enabled:
            if config.variant != "WE_UL_CL":
                raise ConfigError("attention works on conversation-layer outputs and needs WE_UL_CL")
            width *= 2
        if self.pos_encoder is not None and pos.fusion_point == "pre_classifier":
            width += self.pos_encoder.output_size
        self.feature_width = width

        if config.classifier == "CRF":
            self.head = CrfHead.create(self.params, width, num_labels, rng, config.decay_transitions)
        else:
            self.head = SoftmaxHead.create(self.params, width, num_labels, rng)
        logger.info(
            f"Built {config.variant}+{config.classifier}: {len(self.params)} parameter tensors, "
            f"{self.params.num_values()} values, classifier input width {width}"
        )

    def features(self, batch, training=False, rng=None):
        config = self.config
        rate = config.dropout
        if self.utterance_encoder is not None:
            v = encode_utterance(self.utterance_encoder, batch.tokens, batch.mask, training, rng)
        else:
            v = average_embeddings(
                self.table, batch.tokens, batch.mask, rate if config.embed_dropout else 0.0, training, rng
            )

        p = None
        if self.pos_encoder is not None:
            if batch.pos is None:
                raise DataError("the POS branch needs POS tags on every utterance")
            p = encode_pos(batch.pos, self.pos_encoder, batch.mask, training, rng)
            if config.pos.fusion_point == "pre_conversation":
                v = fuse(v, pos=p)

        B, R = batch.size, batch.length
        g = v
        if self.conversation_encoder is not None:
            steps = [take_rows(v, np.arange(B) * R + j) for j in range(R)]
            outputs = encode_conversation(self.conversation_encoder, steps, training, rng)
            order = (np.arange(R)[None, :] * B + np.arange(B)[:, None]).reshape(-1)
            g = take_rows(concat(outputs, axis=0), order)

        if config.attention.enabled:
            g = apply_attention(g, B, R, config.attention)
        if p is not None and config.pos.fusion_point == "pre_classifier":
            g = fuse(g, pos=p)
        return g

    def scores(self, batch, training=False, rng=None):
        return unary_scores(self.features(batch, training, rng), self.head)

    def loss(self, batch, training=True, rng=None):
        """Summed conversation NLL divided by the batch's utterance count."""
        total = self.head.loss(self.scores(batch, training, rng), batch)
        return scale(total, 1.0 / batch.num_utterances)

    def predict(self, batch):
        with no_tape():
            scores = self.scores(batch, training=False).data
        return self.head.decode(scores, batch)


def build_model(config, vocab_size, num_labels, num_pos_tags=0, pretrained=None):
    """One of the six variant x classifier cells; WE_UL_CL + CRF is the full model."""
    return DialogueActTagger(config, vocab_size, num_labels, num_pos_tags, pretrained)
