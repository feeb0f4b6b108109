"""
Result files: staged output directories, the training history, confusion
matrices, prediction streams and the ablation table.
"""
import csv
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

from .exceptions import DataError
from .train import ABLATION_ROWS

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.tsv"
CONFIG_FILE = "effective_config.txt"
CONFUSION_FILE = "confusion.csv"
CONFUSION_PERCENT_FILE = "confusion_percent.csv"
ABLATION_FILE = "ablation.csv"
PREDICTION_HEADER = ("conversation_id", "utterance_index", "gold_label", "predicted_label")


def _replace(source, destination):
    if destination.is_dir() and not destination.is_symlink():
        shutil.rmtree(destination)
    os.replace(source, destination)


@contextmanager
def staged_output(target):
    """
    Yield a staging directory next to ``target``; its entries are moved into
    ``target`` only when the block finishes without an exception.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}-", dir=target.parent))
    try:
        yield staging
        target.mkdir(exist_ok=True)
        for entry in sorted(staging.iterdir()):
            _replace(entry, target / entry.name)
        logger.info(f"Wrote outputs to {target}")
    finally:
        shutil.rmtree(staging, ignore_errors=True)


@contextmanager
def staged_file(target):
    """Single-file variant of ``staged_output``: yields a writable text stream."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp = tempfile.mkstemp(prefix=f".{target.name}-", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as stream:
            yield stream
        os.replace(temp, target)
    finally:
        if os.path.exists(temp):
            os.unlink(temp)


def write_effective_config(directory, run_config):
    (Path(directory) / CONFIG_FILE).write_text(run_config.dump(), encoding="utf-8")


# History

def dump_history(history):
    lines = ["epoch\ttrain_loss\tvalid_acc\tlr\n"]
    for record in history:
        lines.append(
            f"{record.epoch}\t{record.train_loss:.17g}\t{record.valid_acc:.17g}\t{record.lr:.17g}\n"
        )
    return "".join(lines)


def write_history(directory, history):
    (Path(directory) / HISTORY_FILE).write_text(dump_history(history), encoding="utf-8")


def read_history(path):
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f, delimiter="\t"))
    except OSError as e:
        raise DataError(f"cannot read history: {e.strerror}", path) from None
    return [
        {"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
         "valid_acc": float(r["valid_acc"]), "lr": float(r["lr"])}
        for r in rows
    ]


# Metrics

def write_confusion(directory, metrics):
    directory = Path(directory)
    header = ["true\\pred", *metrics.labels]
    with (directory / CONFUSION_FILE).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for label, row in zip(metrics.labels, metrics.confusion.tolist()):
            writer.writerow([label, *row])
    with (directory / CONFUSION_PERCENT_FILE).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for label, row in zip(metrics.labels, metrics.percentages().tolist()):
            writer.writerow([label, *(f"{value:.2f}" for value in row)])


def read_confusion(path):
    with Path(path).open(encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    labels = rows[0][1:]
    return labels, {row[0]: [int(v) for v in row[1:]] for row in rows[1:]}


# Predictions

def write_predictions(stream, predictions, labels, header=False):
    """
    One CSV record per utterance, 0-based utterance indices, gold and
    predicted label names. With ``header`` a PREDICTION_HEADER row goes first.

    Returns:
        Number of records written.
    """
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow(PREDICTION_HEADER)
    count = 0
    for conversation, path in predictions:
        for index, (gold, predicted) in enumerate(zip(conversation.gold, path)):
            writer.writerow([conversation.id, index, gold, labels.labels[predicted]])
            count += 1
    return count


# Ablation

def format_ablation_table(table):
    lines = [f"{'variant':<10}{'LR':>8}{'CRF':>8}"]
    for variant, name in ABLATION_ROWS.items():
        lines.append(f"{name:<10}{table[(variant, 'LR')]:>8.4f}{table[(variant, 'CRF')]:>8.4f}")
    return "\n".join(lines) + "\n"


def write_ablation(directory, table):
    with (Path(directory) / ABLATION_FILE).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "LR", "CRF"])
        for variant, name in ABLATION_ROWS.items():
            writer.writerow([name, f"{table[(variant, 'LR')]:.6f}", f"{table[(variant, 'CRF')]:.6f}"])
