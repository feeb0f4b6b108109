"""
Loading a run's corpora, label map, vocabularies and embeddings from a
resolved RunConfig.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import (
    LabelSet,
    apply_class_map,
    build_vocab,
    encode_corpus,
    load_class_map,
    load_corpus,
    load_pretrained,
)
from .exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class RunData:
    corpora: dict
    labels: LabelSet
    vocab: object
    pos_vocab: object = None
    pretrained: np.ndarray = None
    train: list = None
    valid: list = None
    test: list = None


def load_corpora(run_config, splits=("train", "valid", "test"), required=("train", "valid")):
    config = run_config.train
    class_map = None
    if run_config.path("class_map_path"):
        class_map = load_class_map(run_config.path("class_map_path"))
    corpora = {}
    for split in splits:
        path = run_config.path(f"{split}_path")
        if path is None:
            if split in required:
                raise ConfigError(f"{split}_path is not configured")
            continue
        corpus = load_corpus(path, split, require_pos=config.pos.enabled, normalize=config.normalize)
        if class_map is not None:
            apply_class_map(corpus, class_map)
        corpora[split] = corpus
    return corpora


def resolve_labels(run_config, corpora):
    """
    The label map file when configured; otherwise the labels in order of
    first appearance, training split first.
    """
    if run_config.path("label_map_path"):
        return LabelSet.load(run_config.path("label_map_path"))
    labels = list(corpora["train"].label_set)
    for split, corpus in corpora.items():
        unseen = [label for label in corpus.label_set if label not in labels]
        if unseen and split != "train":
            logger.warning(f"Labels {unseen} appear in {split} but not in train")
        labels.extend(unseen)
    return LabelSet(labels)


def prepare_run(run_config):
    """
    Load and encode everything a training run needs.

    Raises:
        ConfigError: If a required path is not configured.
        DataError: On unreadable or malformed input files.
    """
    config = run_config.train
    corpora = load_corpora(run_config)
    labels = resolve_labels(run_config, corpora)
    vocab = build_vocab(corpora["train"], config.min_count)
    pos_vocab = build_vocab(corpora["train"], 1, field="pos") if config.pos.enabled else None

    pretrained = None
    if run_config.path("embeddings_path"):
        rng = np.random.default_rng(config.seed)
        pretrained, _ = load_pretrained(run_config.path("embeddings_path"), vocab, config.embedding_dim, rng)

    data = RunData(corpora=corpora, labels=labels, vocab=vocab, pos_vocab=pos_vocab, pretrained=pretrained)
    for split, corpus in corpora.items():
        setattr(data, split, encode_corpus(corpus, vocab, labels, pos_vocab))
    return data
