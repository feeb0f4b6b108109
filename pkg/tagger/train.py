"""
Training and evaluation: Adadelta with weight decay, the halving learning
rate schedule, early stopping on validation accuracy, metrics and the
ablation grid.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import CLASSIFIERS, VARIANTS
from .corpus import EncodedConversation, build_batch, make_batches
from .encoder import PAD
from .exceptions import ConfigError, DataError, NumericError
from .extensions import AttentionConfig, PosConfig
from .network import build_model
from .numcore import GradientTape, check_finite, grad_check_report

logger = logging.getLogger(__name__)


@dataclass
class AdadeltaState:
    rho: float = 0.95
    eps: float = 1e-6
    square_grad: dict = field(default_factory=dict)
    square_delta: dict = field(default_factory=dict)


def adadelta_step(params, state, lr, weight_decay):
    """
    One Adadelta update per parameter:

        g = grad + weight_decay * value        (decayed parameters only)
        E[g^2] = rho E[g^2] + (1 - rho) g^2
        delta = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
        E[dx^2] = rho E[dx^2] + (1 - rho) delta^2
        value += lr * delta

    Raises:
        NumericError: If any gradient is non-finite; nothing is updated then.
    """
    params = list(params)
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise NumericError(f"non-finite gradient for {param.name}, optimizer step aborted")

    rho, eps = state.rho, state.eps
    for param in params:
        grad = param.grad
        if weight_decay and param.decay:
            grad = grad + weight_decay * param.data
        square_grad = state.square_grad.setdefault(param.name, np.zeros_like(param.data))
        square_delta = state.square_delta.setdefault(param.name, np.zeros_like(param.data))
        square_grad[...] = rho * square_grad + (1.0 - rho) * grad * grad
        delta = -np.sqrt(square_delta + eps) / np.sqrt(square_grad + eps) * grad
        square_delta[...] = rho * square_delta + (1.0 - rho) * delta * delta
        param.data += lr * delta


def clip_gradients(params, max_norm):
    """Rescale all gradients together so their global norm is at most ``max_norm``."""
    params = list(params)
    norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if norm > max_norm:
        factor = max_norm / norm
        for param in params:
            param.grad *= factor
    return norm


def lr_at(epoch, config):
    """Learning rate of the 0-based ``epoch``: halved every ``lr_halving_period`` epochs."""
    return config.learning_rate * 0.5 ** (epoch // config.lr_halving_period)


class EarlyStopping:
    """Tracks the best score; a tie does not count as an improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best_score = None
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch, score):
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


@dataclass
class Metrics:
    """Confusion counts: rows are true labels, columns predicted labels."""

    labels: list
    confusion: np.ndarray

    @classmethod
    def from_predictions(cls, labels, gold, predicted):
        K = len(labels)
        confusion = np.zeros((K, K), dtype=np.int64)
        np.add.at(confusion, (np.asarray(gold, dtype=np.intp), np.asarray(predicted, dtype=np.intp)), 1)
        return cls(labels=list(labels), confusion=confusion)

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def correct(self):
        return int(np.trace(self.confusion))

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0

    @property
    def class_counts(self):
        return self.confusion.sum(axis=1)

    def percentages(self):
        counts = self.class_counts[:, None].astype(float)
        return np.divide(
            100.0 * self.confusion, counts, out=np.zeros(self.confusion.shape), where=counts > 0
        )

    def most_confused(self, n=5):
        cells = [
            (int(self.confusion[a, b]), a, b)
            for a in range(len(self.labels))
            for b in range(len(self.labels))
            if a != b and self.confusion[a, b] > 0
        ]
        cells.sort(key=lambda cell: (-cell[0], cell[1], cell[2]))
        return [(self.labels[a], self.labels[b], count) for count, a, b in cells[:n]]


@dataclass
class Evaluation:
    metrics: Metrics
    predictions: list


def evaluate(model, conversations, labels, max_batch=64, workers=1):
    """
    Decode every conversation (Viterbi for CRF, argmax for LR) and score it.

    Returns:
        Evaluation with metrics and (conversation, predicted label ids) pairs
        in batch order.
    """
    if not conversations:
        raise DataError("cannot evaluate an empty corpus")
    for conversation in conversations:
        if conversation.labels.size and conversation.labels.max() >= model.num_labels:
            raise DataError(f"conversation {conversation.id} has labels unknown to the model")
    batches = make_batches(conversations, max_batch)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            decoded = list(pool.map(model.predict, batches))
    else:
        decoded = [model.predict(batch) for batch in batches]

    predictions, gold, predicted = [], [], []
    for batch, paths in zip(batches, decoded):
        for conversation, path in zip(batch.conversations, paths):
            predictions.append((conversation, path))
            gold.extend(conversation.labels.tolist())
            predicted.extend(path)
    return Evaluation(Metrics.from_predictions(labels, gold, predicted), predictions)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_acc: float
    lr: float


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int = None
    best_valid_acc: float = None
    diverged: bool = False


def train(model, train_data, valid_data, config, labels=None):
    """
    Epoch loop: shuffled batches, one Adadelta step per batch, validation
    accuracy after every epoch, early stopping with ``early_stop_patience``.

    The model is returned holding the parameters of its best validation epoch.
    A non-finite loss or gradient ends training with that checkpoint restored.
    """
    if not train_data or not valid_data:
        raise DataError("training and validation corpora must be non-empty")
    labels = labels if labels is not None else [str(k) for k in range(model.num_labels)]
    rng = np.random.default_rng(config.seed)
    state = AdadeltaState(rho=config.rho, eps=config.eps)
    stopper = EarlyStopping(config.early_stop_patience)
    best_state = model.params.state_dict()
    history = []
    diverged = False

    for epoch in range(1, config.max_epochs + 1):
        lr = lr_at(epoch - 1, config)
        total_loss, total_utterances = 0.0, 0
        try:
            for batch in make_batches(train_data, config.max_batch, rng):
                model.params.zero_grad()
                with GradientTape() as tape:
                    loss = model.loss(batch, training=True, rng=rng)
                check_finite(loss, "training loss")
                tape.backward(loss)
                if config.clip_norm > 0:
                    clip_gradients(model.params, config.clip_norm)
                adadelta_step(model.params, state, lr, config.weight_decay)
                total_loss += loss.item() * batch.num_utterances
                total_utterances += batch.num_utterances
        except NumericError as e:
            logger.error(f"Training diverged in epoch {epoch}: {e}; keeping the last good checkpoint")
            diverged = True
            break

        valid_acc = evaluate(model, valid_data, labels, config.max_batch, config.eval_workers).metrics.accuracy
        record = EpochRecord(epoch, total_loss / total_utterances, valid_acc, lr)
        history.append(record)
        improved = stopper.update(epoch, valid_acc)
        if improved:
            best_state = model.params.state_dict()
        logger.info(
            f"Epoch {epoch}: train_loss={record.train_loss:.4f} valid_acc={valid_acc:.4f} "
            f"lr={lr:g}{' (best)' if improved else ''}"
        )
        if stopper.should_stop:
            logger.info(f"Early stopping after epoch {epoch}; best epoch {stopper.best_epoch}")
            break

    model.params.load_state_dict(best_state)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=stopper.best_epoch,
        best_valid_acc=stopper.best_score,
        diverged=diverged,
    )


ABLATION_ROWS = {"WE": "WE", "WE_UL": "WE+UL", "WE_UL_CL": "WE+UL+CL"}


def ablate(config, train_data, valid_data, eval_data, vocab_size, labels, pretrained=None):
    """
    Train all six variant x classifier cells with the same seed and data.

    Returns:
        {(variant, classifier): accuracy on ``eval_data``}
    """
    if config.attention.enabled or config.pos.enabled:
        logger.warning("The ablation grid runs without the attention and POS extensions")
        config = replace(config, attention=AttentionConfig(), pos=PosConfig())
    table = {}
    for variant in VARIANTS:
        for classifier in CLASSIFIERS:
            cell = replace(config, variant=variant, classifier=classifier)
            model = build_model(cell, vocab_size, len(labels), pretrained=pretrained)
            train(model, train_data, valid_data, cell, labels)
            accuracy = evaluate(model, eval_data, labels, cell.max_batch, cell.eval_workers).metrics.accuracy
            table[(variant, classifier)] = accuracy
            logger.info(f"Ablation {ABLATION_ROWS[variant]} + {classifier}: accuracy {accuracy:.4f}")
    return table


GRADCHECK_MAX_HIDDEN = 8
TOY_PARAM_SCALE = 0.5


def toy_config(config):
    """
    ``config`` narrowed for the gradient check: POS widths capped by the
    word widths.

    Raises:
        ConfigError: If hidden_size exceeds GRADCHECK_MAX_HIDDEN.
    """
    if config.hidden_size > GRADCHECK_MAX_HIDDEN:
        raise ConfigError(
            f"gradcheck runs at toy size: hidden_size must be at most {GRADCHECK_MAX_HIDDEN}, "
            f"got {config.hidden_size}"
        )
    pos = replace(
        config.pos,
        dim=min(config.pos.dim, config.embedding_dim),
        hidden_size=min(config.pos.hidden_size, config.hidden_size),
    )
    return replace(config, pos=pos)


def toy_gradient_check(config, num_labels=3, utterances=3, vocab_size=12, num_pos_tags=5, eps=1e-5):
    """
    Finite-difference check of the configured model at toy size on one
    random conversation, dropout off.

    Returns:
        Ordered mapping parameter name -> max relative error.

    Raises:
        ConfigError: If hidden_size exceeds GRADCHECK_MAX_HIDDEN.
    """
    config = toy_config(config)
    pos = config.pos
    rng = np.random.default_rng(config.seed)
    model = build_model(config, vocab_size, num_labels, num_pos_tags if pos.enabled else 0)
    # Every coordinate drawn at TOY_PARAM_SCALE, well above finite-difference noise at eps=1e-5.
    for param in model.params:
        param.data[...] = rng.normal(scale=TOY_PARAM_SCALE, size=param.shape)
        if param.name.endswith("embedding"):
            param.data[PAD] = 0.0

    lengths = [2 + (j * 2) % 3 for j in range(utterances)]
    tokens = [rng.integers(2, vocab_size, size=n) for n in lengths]
    tags = [rng.integers(2, num_pos_tags, size=n) for n in lengths] if pos.enabled else None
    conversation = EncodedConversation(
        id="gradcheck",
        tokens=tokens,
        labels=rng.integers(num_labels, size=utterances),
        pos=tags,
    )
    batch = build_batch([conversation])
    report = grad_check_report(lambda: model.loss(batch, training=False), model.params, eps=eps)
    for name, error in report.items():
        logger.debug(f"gradcheck {name}: {error:.3e}")
    return report
