"""
Conversation corpora: data model, file format, vocabularies, embeddings,
batching and the synthetic generators used by the acceptance tests.

Corpus file: UTF-8, one conversation per line,
{"id": str, "utterances": [{"tokens": [str], "label": str, "pos": [str]}]}
with ``pos`` optional.
"""
import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import PAD, UNK
from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
STRIPPED_CHARS = "!,"
SPLITS = ("train", "valid", "test")

_RECORD_FIELDS = {"id", "utterances"}
_UTTERANCE_FIELDS = {"tokens", "label", "pos"}


@dataclass
class Utterance:
    tokens: list
    label: str
    pos: list = None


@dataclass
class Conversation:
    id: str
    utterances: list

    def __len__(self):
        return len(self.utterances)


@dataclass
class Corpus:
    conversations: list
    label_set: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        present = _labels_in_order(self.conversations)
        if not self.label_set:
            self.label_set = present
        missing = set(present) - set(self.label_set)
        if missing:
            raise DataError(f"labels {sorted(missing)} are outside the corpus label set")

    def __len__(self):
        return len(self.conversations)

    @property
    def num_utterances(self):
        return sum(len(c) for c in self.conversations)

    @property
    def has_pos(self):
        return all(u.pos is not None for c in self.conversations for u in c.utterances)


def _labels_in_order(conversations):
    seen = {}
    for conversation in conversations:
        for utterance in conversation.utterances:
            seen.setdefault(utterance.label, None)
    return list(seen)


# Preprocessing

def _clean(token):
    token = token.lower()
    for char in STRIPPED_CHARS:
        token = token.replace(char, "")
    return token


def preprocess(text):
    """
    Lower-case, strip exclamation marks and commas, split on whitespace.
    An utterance left empty becomes the single token UNK.
    """
    tokens = _clean(text or "").split()
    return tokens or [UNK_TOKEN]


def normalize_tokens(tokens, pos=None):
    """Token-wise ``preprocess`` that keeps POS tags aligned with their tokens."""
    kept_tokens, kept_pos = [], []
    for index, token in enumerate(tokens):
        for piece in _clean(token).split():
            kept_tokens.append(piece)
            if pos is not None:
                kept_pos.append(pos[index])
    if not kept_tokens:
        return [UNK_TOKEN], ([UNK_TOKEN] if pos is not None else None)
    return kept_tokens, (kept_pos if pos is not None else None)


# File format

def _parse_utterance(raw, conversation_id, path, line_no):
    if not isinstance(raw, dict):
        raise DataError(f"conversation {conversation_id}: utterance is not an object", path, line_no)
    unknown = set(raw) - _UTTERANCE_FIELDS
    if unknown:
        raise DataError(
            f"conversation {conversation_id}: unknown utterance field(s) {sorted(unknown)}", path, line_no
        )
    tokens = raw.get("tokens")
    label = raw.get("label")
    pos = raw.get("pos")
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"conversation {conversation_id}: utterance needs a non-empty token list", path, line_no)
    if not isinstance(label, str) or not label:
        raise DataError(f"conversation {conversation_id}: utterance needs a label", path, line_no)
    if pos is not None and (
        not isinstance(pos, list) or len(pos) != len(tokens) or not all(isinstance(t, str) for t in pos)
    ):
        raise DataError(
            f"conversation {conversation_id}: pos tags do not match the {len(tokens)} tokens", path, line_no
        )
    # Vocabulary files hold one entry per line.
    for entry in [*tokens, *(pos or ())]:
        if not entry or "\n" in entry or "\r" in entry:
            raise DataError(
                f"conversation {conversation_id}: empty token or tag, or one containing a line break",
                path, line_no,
            )
    return Utterance(tokens=list(tokens), label=label, pos=list(pos) if pos is not None else None)


def parse_conversation(line, path=None, line_no=None):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed record: {e.msg}", path, line_no) from None
    if not isinstance(record, dict):
        raise DataError("record is not an object", path, line_no)
    unknown = set(record) - _RECORD_FIELDS
    if unknown:
        raise DataError(f"unknown field(s) {sorted(unknown)}", path, line_no)
    conversation_id = record.get("id")
    if not isinstance(conversation_id, str) or not conversation_id:
        raise DataError("record needs a string id", path, line_no)
    utterances = record.get("utterances")
    if not isinstance(utterances, list) or not utterances:
        raise DataError(f"conversation {conversation_id} is empty", path, line_no)
    return Conversation(
        id=conversation_id,
        utterances=[_parse_utterance(u, conversation_id, path, line_no) for u in utterances],
    )


def load_corpus(path, split="train", require_pos=False, normalize=True):
    """
    Read a corpus file.

    Args:
        path: Corpus file, one JSON record per line.
        split: One of train, valid, test.
        require_pos: Reject conversations without POS tags on every utterance.
        normalize: Apply the preprocessing rules token-wise.

    Returns:
        Corpus with conversations in file order.

    Raises:
        DataError: On unreadable files or malformed records, with the line number.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}, expected one of {SPLITS}")
    path = Path(path)
    conversations = []
    try:
        with path.open(encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                conversation = parse_conversation(line, path, line_no)
                for utterance in conversation.utterances:
                    if require_pos and utterance.pos is None:
                        raise DataError(
                            f"conversation {conversation.id}: missing POS tags", path, line_no
                        )
                    if normalize:
                        utterance.tokens, utterance.pos = normalize_tokens(utterance.tokens, utterance.pos)
                conversations.append(conversation)
    except OSError as e:
        logger.error(f"Cannot read corpus {path}: {e}")
        raise DataError(f"cannot read corpus: {e.strerror}", path) from None

    if not conversations:
        raise DataError("corpus holds no conversations", path)
    corpus = Corpus(conversations=conversations, split=split)
    logger.info(
        f"Loaded {split} corpus {path}: {len(corpus)} conversations, "
        f"{corpus.num_utterances} utterances, {len(corpus.label_set)} labels"
    )
    return corpus


def conversation_record(conversation):
    utterances = []
    for utterance in conversation.utterances:
        record = {"tokens": utterance.tokens, "label": utterance.label}
        if utterance.pos is not None:
            record["pos"] = utterance.pos
        utterances.append(record)
    return {"id": conversation.id, "utterances": utterances}


def dump_corpus(corpus):
    return "".join(
        json.dumps(conversation_record(c), ensure_ascii=False) + "\n" for c in corpus.conversations
    )


def save_corpus(corpus, path):
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")


# Labels

class LabelSet:
    """Ordered DA labels; index i <-> label."""

    def __init__(self, labels):
        self.labels = list(labels)
        self._index = {label: i for i, label in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise DataError("label map lists a label twice")

    @classmethod
    def from_corpus(cls, corpus):
        return cls(corpus.label_set)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataError(f"cannot read label map: {e.strerror}", path) from None
        return cls(line.strip() for line in lines if line.strip())

    def dump(self):
        return "".join(f"{label}\n" for label in self.labels)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._index

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise DataError(f"unknown label {label!r}") from None


def load_class_map(path):
    """Read ``fine coarse`` pairs, one per line."""
    path = Path(path)
    mapping = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read class map: {e.strerror}", path) from None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError("class map lines need exactly two fields", path, line_no)
        mapping[parts[0]] = parts[1]
    return mapping


def apply_class_map(corpus, class_map):
    for conversation in corpus.conversations:
        for utterance in conversation.utterances:
            if utterance.label not in class_map:
                raise DataError(
                    f"conversation {conversation.id}: label {utterance.label!r} missing from the class map"
                )
            utterance.label = class_map[utterance.label]
    corpus.label_set = _labels_in_order(corpus.conversations)
    return corpus


# Vocabulary

class Vocab:
    """Token <-> index map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens, min_count=1, counts=None):
        self.tokens = list(tokens)
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("vocabulary must start with the PAD and UNK tokens")
        self.index = {token: i for i, token in enumerate(self.tokens)}
        self.min_count = min_count
        self.counts = counts if counts is not None else Counter()

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token):
        return self.index.get(token, UNK)

    def encode(self, tokens):
        return np.array([self.lookup(t) for t in tokens], dtype=np.intp)

    def digest(self):
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def dump(self):
        return "".join(f"{token}\n" for token in self.tokens)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with path.open(encoding="utf-8", newline="") as f:
                text = f.read()
        except OSError as e:
            raise DataError(f"cannot read vocabulary: {e.strerror}", path) from None
        # Positional: entry k of the file is index k, empty entries included.
        tokens = text.split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocab(corpus, min_count=1, field="tokens"):
    """
    Index every token of the training split seen at least ``min_count`` times.

    ``field="pos"`` builds the POS-tag vocabulary instead.
    """
    if corpus.split != "train":
        raise ConfigError(f"vocabularies are built from the training split, got {corpus.split!r}")
    counts = Counter()
    for conversation in corpus.conversations:
        for utterance in conversation.utterances:
            counts.update(getattr(utterance, field) or [])
    tokens = [PAD_TOKEN, UNK_TOKEN]
    tokens.extend(t for t, n in counts.items() if n >= min_count and t not in (PAD_TOKEN, UNK_TOKEN))
    vocab = Vocab(tokens, min_count=min_count, counts=counts)
    logger.info(f"Built {field} vocabulary: {len(vocab)} entries from {len(counts)} distinct tokens")
    return vocab


def load_pretrained(path, vocab, dim, rng):
    """
    Build an embedding matrix from a "token v1 ... vd" text file.

    Returns:
        (matrix, coverage): in-vocabulary rows copied from the file, the others
        uniform in +-0.05, PAD zero; coverage = |vocab & file| / |vocab|.

    Raises:
        DataError: On a line whose dimension differs from ``dim``.
    """
    path = Path(path)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    found = set()
    try:
        with path.open(encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                values = line.rstrip().split(" ")
                if not line.strip():
                    continue
                if line_no == 1 and len(values) == 2 and all(v.isdigit() for v in values):
                    continue
                if len(values) != dim + 1:
                    hint = "; tokens containing spaces are not supported" if len(values) > dim + 1 else ""
                    raise DataError(
                        f"embedding of dimension {len(values) - 1}, expected {dim}{hint}", path, line_no
                    )
                token = values[0]
                if token in vocab and token not in found:
                    try:
                        matrix[vocab.index[token]] = np.asarray(values[1:], dtype=np.float64)
                    except ValueError:
                        raise DataError(f"non-numeric embedding value for {token!r}", path, line_no) from None
                    found.add(token)
    except OSError as e:
        logger.error(f"Cannot read embeddings {path}: {e}")
        raise DataError(f"cannot read embeddings: {e.strerror}", path) from None
    matrix[PAD] = 0.0
    coverage = len(found) / len(vocab)
    logger.info(f"Pretrained embeddings cover {len(found)}/{len(vocab)} vocabulary entries ({coverage:.2%})")
    return matrix, coverage


# Encoding and batching

@dataclass
class EncodedConversation:
    id: str
    tokens: list
    labels: np.ndarray
    pos: list = None
    gold: list = None

    def __len__(self):
        return len(self.tokens)


def encode_corpus(corpus, vocab, labels, pos_vocab=None):
    """
    Map tokens, POS tags and labels to indices.

    Raises:
        DataError: On a label outside ``labels`` or missing POS tags when
        ``pos_vocab`` is given.
    """
    encoded = []
    for conversation in corpus.conversations:
        try:
            label_ids = np.array([labels.index(u.label) for u in conversation.utterances], dtype=np.intp)
        except DataError as e:
            raise DataError(f"conversation {conversation.id}: {e}") from None
        pos = None
        if pos_vocab is not None:
            if any(u.pos is None for u in conversation.utterances):
                raise DataError(f"conversation {conversation.id}: missing POS tags")
            pos = [pos_vocab.encode(u.pos) for u in conversation.utterances]
        encoded.append(
            EncodedConversation(
                id=conversation.id,
                tokens=[vocab.encode(u.tokens) for u in conversation.utterances],
                labels=label_ids,
                pos=pos,
                gold=[u.label for u in conversation.utterances],
            )
        )
    return encoded


def _pad(rows):
    width = max(len(r) for r in rows)
    matrix = np.full((len(rows), width), PAD, dtype=np.intp)
    mask = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        matrix[i, :len(row)] = row
        mask[i, :len(row)] = 1.0
    return matrix, mask


@dataclass
class Batch:
    """
    Conversations of equal length R. Token rows are conversation-major:
    row b * R + j holds utterance j of conversation b.
    """

    conversations: list
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    pos: np.ndarray = None

    @property
    def size(self):
        return len(self.conversations)

    @property
    def length(self):
        return self.labels.shape[1]

    @property
    def num_utterances(self):
        return self.labels.size


def build_batch(conversations):
    lengths = {len(c) for c in conversations}
    if len(lengths) != 1:
        raise DataError(f"batch mixes conversation lengths {sorted(lengths)}")
    rows = [u for c in conversations for u in c.tokens]
    tokens, mask = _pad(rows)
    pos = None
    if all(c.pos is not None for c in conversations):
        pos, _ = _pad([p for c in conversations for p in c.pos])
    labels = np.stack([c.labels for c in conversations])
    return Batch(conversations=list(conversations), tokens=tokens, mask=mask, labels=labels, pos=pos)


def make_batches(conversations, max_batch=64, rng=None):
    """
    Group conversations of equal length into batches of at most ``max_batch``.

    Buckets are visited by increasing length with conversations in corpus
    order; with ``rng`` the batch order is shuffled.
    """
    if max_batch < 1:
        raise ConfigError("max_batch must be positive")
    buckets = defaultdict(list)
    for conversation in conversations:
        buckets[len(conversation)].append(conversation)
    batches = []
    for length in sorted(buckets):
        bucket = buckets[length]
        for start in range(0, len(bucket), max_batch):
            batches.append(build_batch(bucket[start:start + max_batch]))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


# Statistics

@dataclass
class CorpusStats:
    split: str
    conversations: int
    utterances: int
    mean_utterances: float
    mean_tokens: float
    labels: int


def corpus_stats(corpus):
    tokens = sum(len(u.tokens) for c in corpus.conversations for u in c.utterances)
    return CorpusStats(
        split=corpus.split,
        conversations=len(corpus),
        utterances=corpus.num_utterances,
        mean_utterances=corpus.num_utterances / len(corpus),
        mean_tokens=tokens / corpus.num_utterances,
        labels=len(corpus.label_set),
    )


# Synthetic corpora

SYNTH_SCHEMES = ("markov_labels", "lexical_labels", "mixed")
FILLER_TAGS = ("NN", "VB", "DT")
_STAY = {"markov_labels": 0.9, "mixed": 0.6}
_CUE_RATE = {"markov_labels": 0.2, "lexical_labels": 1.0, "mixed": 0.7}


@dataclass
class SynthSizes:
    conversations: int = 100
    labels: int = 4
    min_utterances: int = 3
    max_utterances: int = 8
    min_tokens: int = 3
    max_tokens: int = 8
    fillers: int = 40

    def __post_init__(self):
        values = (self.conversations, self.labels, self.min_utterances, self.min_tokens, self.fillers)
        if min(values) < 1:
            raise ConfigError("synthetic corpus sizes must be positive")
        if self.max_utterances < self.min_utterances or self.max_tokens < self.min_tokens:
            raise ConfigError("synthetic corpus maxima must not be below the minima")


def synth_transition_matrix(scheme, num_labels):
    """
    Label transition matrix of a generator scheme: a cyclic chain that moves
    to the next label with high probability, or uniform for lexical_labels.
    """
    if scheme not in SYNTH_SCHEMES:
        raise ConfigError(f"unknown synthetic scheme {scheme!r}, expected one of {SYNTH_SCHEMES}")
    K = num_labels
    if scheme == "lexical_labels" or K == 1:
        return np.full((K, K), 1.0 / K)
    stay = _STAY[scheme]
    matrix = np.full((K, K), (1.0 - stay) / (K - 1))
    for a in range(K):
        matrix[a, (a + 1) % K] = stay
    return matrix


def _cue_tokens(scheme, label):
    if scheme == "mixed":
        first, second = f"cue{label // 2}a", f"cue{label // 2}b"
        return [first, second] if label % 2 == 0 else [second, first]
    return [f"kw{label}"]


def synth_corpus(scheme, sizes=None, seed=0, split="train"):
    """
    Deterministic synthetic corpus.

    markov_labels: labels follow a strong cyclic chain, a label keyword shows
    up in a fifth of the utterances. lexical_labels: iid labels, the keyword
    is always present. mixed: a milder chain plus cue-token pairs whose order
    alone tells paired labels apart.
    """
    sizes = sizes or SynthSizes()
    transitions = synth_transition_matrix(scheme, sizes.labels)
    rng = np.random.default_rng(seed)
    fillers = [f"w{i}" for i in range(sizes.fillers)]
    conversations = []
    for number in range(sizes.conversations):
        length = int(rng.integers(sizes.min_utterances, sizes.max_utterances + 1))
        label = int(rng.integers(sizes.labels))
        utterances = []
        for position in range(length):
            if position > 0:
                label = int(rng.choice(sizes.labels, p=transitions[label]))
            count = int(rng.integers(sizes.min_tokens, sizes.max_tokens + 1))
            picks = rng.integers(len(fillers), size=count)
            tokens = [fillers[i] for i in picks]
            pos = [FILLER_TAGS[i % len(FILLER_TAGS)] for i in picks]
            if rng.random() < _CUE_RATE[scheme]:
                cue = _cue_tokens(scheme, label)
                at = int(rng.integers(count + 1))
                tokens[at:at] = cue
                pos[at:at] = ["KW"] * len(cue)
            utterances.append(Utterance(tokens=tokens, label=f"da{label}", pos=pos))
        conversations.append(Conversation(id=f"{scheme}-{seed}-{number:05d}", utterances=utterances))
    label_set = [f"da{k}" for k in range(sizes.labels)]
    return Corpus(conversations=conversations, label_set=label_set, split=split)
