"""
Checkpoint directories: the parameter container, the vocabularies and a
manifest tying them to the configuration and label map.

    params.txt | params.npz
    vocab.txt
    pos_vocab.txt        (POS branch only)
    manifest.json        {config, labels, vocab_hash, pos_vocab_hash,
                          params_sha256, params_file}
"""
import hashlib
import hmac
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .corpus import LabelSet, Vocab, encode_corpus
from .encoder import UNK
from .exceptions import ConfigError, DataError
from .network import build_model
from .numcore import DTYPE

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
VOCAB_FILE = "vocab.txt"
POS_VOCAB_FILE = "pos_vocab.txt"
PARAM_FILES = {"text": "params.txt", "npz": "params.npz"}


# Parameter container

def dump_params_text(state):
    """
    One line per parameter: ``name<TAB>d1,d2<TAB>v v v ...`` with row-major
    values at 17 significant digits, which round-trips every double exactly.
    """
    lines = []
    for name, value in state.items():
        value = np.asarray(value, dtype=DTYPE)
        shape = ",".join(str(n) for n in value.shape)
        values = " ".join(format(v, ".17g") for v in value.reshape(-1).tolist())
        lines.append(f"{name}\t{shape}\t{values}\n")
    return "".join(lines)


def parse_params_text(text, path=None):
    state = OrderedDict()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError("parameter lines need name, shape and values", path, line_no)
        name, shape_text, values_text = parts
        try:
            shape = tuple(int(n) for n in shape_text.split(",") if n)
            values = np.array([float(v) for v in values_text.split()], dtype=DTYPE)
        except ValueError:
            raise DataError(f"unparsable values for parameter {name}", path, line_no) from None
        if values.size != int(np.prod(shape)):
            raise DataError(f"parameter {name} has {values.size} values for shape {list(shape)}", path, line_no)
        if name in state:
            raise DataError(f"parameter {name} appears twice", path, line_no)
        state[name] = values.reshape(shape)
    return state


def write_params(path, state):
    path = Path(path)
    if path.suffix == ".npz":
        with path.open("wb") as f:
            np.savez(f, **{name: np.asarray(v, dtype=DTYPE) for name, v in state.items()})
    else:
        path.write_text(dump_params_text(state), encoding="utf-8")


def read_params(path):
    path = Path(path)
    try:
        if path.suffix == ".npz":
            with np.load(path) as archive:
                return OrderedDict((name, archive[name].astype(DTYPE)) for name in archive.files)
        return parse_params_text(path.read_text(encoding="utf-8"), path)
    except OSError as e:
        logger.error(f"Cannot read parameters {path}: {e}")
        raise DataError(f"cannot read parameters: {e.strerror}", path) from None


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# Checkpoints

def save_checkpoint(directory, model, vocab, labels, pos_vocab=None, params_format="text"):
    """
    Write ``model`` and its vocabularies into ``directory``.

    Args:
        directory: Target directory, created if missing.
        model: A DialogueActTagger.
        vocab: Token vocabulary the model was trained with.
        labels: LabelSet in label-index order.
        pos_vocab: POS-tag vocabulary when the POS branch is enabled.
        params_format: "text" or "npz".
    """
    if params_format not in PARAM_FILES:
        raise ConfigError(f"unknown parameter format {params_format!r}, expected one of {tuple(PARAM_FILES)}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    params_file = PARAM_FILES[params_format]
    write_params(directory / params_file, model.params.state_dict())
    (directory / VOCAB_FILE).write_text(vocab.dump(), encoding="utf-8")
    if pos_vocab is not None:
        (directory / POS_VOCAB_FILE).write_text(pos_vocab.dump(), encoding="utf-8")

    manifest = {
        "config": model.config.to_dict(),
        "labels": list(labels.labels),
        "vocab_hash": vocab.digest(),
        "pos_vocab_hash": pos_vocab.digest() if pos_vocab is not None else None,
        "params_file": params_file,
        "params_sha256": file_digest(directory / params_file),
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Saved checkpoint to {directory} ({len(model.params)} parameter tensors)")


@dataclass
class Checkpoint:
    model: object
    config: TrainConfig
    labels: LabelSet
    vocab: Vocab
    pos_vocab: Vocab = None

    def encode(self, corpus):
        """
        Encode ``corpus`` with the checkpoint's vocabularies. Token ids that
        fall outside the model's embedding table are replaced by UNK.

        Raises:
            DataError: If the corpus uses a label the checkpoint does not know.
        """
        encoded = encode_corpus(corpus, self.vocab, self.labels, self.pos_vocab)
        word_rows = self.model.table.size
        pos_rows = self.model.pos_encoder.encoder.table.size if self.model.pos_encoder else None
        for conversation in encoded:
            conversation.tokens = [np.where(ids >= word_rows, UNK, ids) for ids in conversation.tokens]
            if conversation.pos is not None and pos_rows is not None:
                conversation.pos = [np.where(ids >= pos_rows, UNK, ids) for ids in conversation.pos]
        return encoded


def _read_manifest(directory):
    path = directory / MANIFEST_FILE
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        logger.error(f"Cannot read checkpoint manifest {path}: {e}")
        raise DataError(f"cannot read checkpoint manifest: {e.strerror}", path) from None
    except json.JSONDecodeError as e:
        raise DataError(f"malformed checkpoint manifest: {e.msg}", path, e.lineno) from None
    required = {"config", "labels", "vocab_hash", "params_sha256", "params_file"}
    missing = required - set(manifest)
    if missing:
        raise DataError(f"checkpoint manifest lacks {sorted(missing)}", path)
    return manifest


def _load_vocab(path, expected_hash, what):
    vocab = Vocab.load(path)
    if expected_hash and vocab.digest() != expected_hash:
        logger.warning(
            f"{what} {path} does not match the checkpoint manifest; "
            f"unknown indices will fall back to UNK"
        )
    return vocab


def load_checkpoint(directory):
    """
    Rebuild the model stored in ``directory``.

    Raises:
        DataError: On a missing or corrupted checkpoint, including a parameter
        file whose digest differs from the manifest.
    """
    directory = Path(directory)
    manifest = _read_manifest(directory)
    config = TrainConfig.from_dict(manifest["config"])
    labels = LabelSet(manifest["labels"])

    params_path = directory / manifest["params_file"]
    if not params_path.is_file():
        raise DataError("parameter file is missing", params_path)
    if not hmac.compare_digest(file_digest(params_path), manifest["params_sha256"]):
        logger.error(f"Parameter file {params_path} fails its manifest digest")
        raise DataError("parameter file does not match the manifest digest", params_path)
    state = read_params(params_path)

    vocab = _load_vocab(directory / VOCAB_FILE, manifest["vocab_hash"], "Vocabulary")
    pos_vocab = None
    if config.pos.enabled:
        pos_vocab = _load_vocab(directory / POS_VOCAB_FILE, manifest.get("pos_vocab_hash"), "POS vocabulary")

    if "embedding" not in state:
        raise DataError("checkpoint holds no embedding table", params_path)
    num_pos_tags = state["pos.embedding"].shape[0] if "pos.embedding" in state else 0
    model = build_model(config, state["embedding"].shape[0], len(labels), num_pos_tags)
    try:
        model.params.load_state_dict(state)
    except ValueError as e:
        raise DataError(f"checkpoint parameters do not fit the configured model: {e}", params_path) from None
    logger.info(f"Loaded checkpoint {directory}: {config.variant}+{config.classifier}, {len(labels)} labels")
    return Checkpoint(model=model, config=config, labels=labels, vocab=vocab, pos_vocab=pos_vocab)
