from pathlib import Path

from tagger.config import TrainConfig
from tagger.corpus import SynthSizes, save_corpus, synth_corpus


def tiny_config(**overrides):
    """Desk-size model: small widths, no dropout, short runs."""
    values = dict(
        hidden_size=8,
        embedding_dim=8,
        dropout=0.0,
        max_batch=16,
        max_epochs=3,
        early_stop_patience=3,
        seed=7,
    )
    values.update(overrides)
    return TrainConfig(**values)


def write_splits(directory, scheme="lexical_labels", counts=(40, 10, 10), seed=0, **sizes):
    """Write train/valid/test.jsonl synthetic splits; returns {split: path}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for offset, (split, count) in enumerate(zip(("train", "valid", "test"), counts)):
        corpus = synth_corpus(scheme, SynthSizes(conversations=count, **sizes), seed + offset, split)
        paths[split] = directory / f"{split}.jsonl"
        save_corpus(corpus, paths[split])
    return paths


def write_config(path, **values):
    lines = [f"{key.replace('__', '.')}={value}\n" for key, value in values.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")
    return path
