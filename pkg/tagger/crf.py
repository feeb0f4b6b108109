"""
Linear-chain CRF head.

Scores live in log space. A label sequence y over R utterances scores

    s[y_1] + sum_j U[j, y_j] + sum_{j>=2} T[y_{j-1}, y_j]

with U the unary scores projected from the encoder output, T the K x K
transition matrix shared by every position and s the start vector.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, ShapeError
from .numcore import (
    add,
    as_tensor,
    gather,
    init_param,
    logsumexp,
    logsumexp_array,
    matmul,
    reduce_sum,
    sub,
    transpose,
)

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 10 ** 6


class CrfParams:
    """Unary projection W_u (K x F), b_u (K), transitions T (K x K), start s (K)."""

    def __init__(self, W_u, b_u, T, s):
        K = T.shape[0]
        if T.shape != (K, K) or s.shape != (K,) or b_u.shape != (K,) or W_u.shape[0] != K:
            raise ShapeError(
                f"inconsistent CRF shapes W_u{list(W_u.shape)} b_u{list(b_u.shape)} "
                f"T{list(T.shape)} s{list(s.shape)}"
            )
        self.W_u = W_u
        self.b_u = b_u
        self.T = T
        self.s = s

    @classmethod
    def create(cls, store, prefix, in_dim, num_labels, rng, decay_transitions=False):
        W_u = init_param((num_labels, in_dim), "glorot", rng=rng, name=f"{prefix}.W_u", store=store)
        b_u = init_param((num_labels,), "zeros", name=f"{prefix}.b_u", store=store, decay=False)
        T = init_param(
            (num_labels, num_labels), "zeros", name=f"{prefix}.T", store=store, decay=decay_transitions
        )
        s = init_param((num_labels,), "zeros", name=f"{prefix}.s", store=store, decay=decay_transitions)
        return cls(W_u, b_u, T, s)

    @property
    def num_labels(self):
        return self.T.shape[0]


def unary_scores(gs, params):
    """Row j of the result is W_u . g_j + b_u."""
    gs = as_tensor(gs)
    if gs.ndim != 2 or gs.shape[0] < 1:
        raise ShapeError(f"unary_scores needs a non-empty R x F matrix, got {list(gs.shape)}")
    if gs.shape[1] != params.W_u.shape[1]:
        raise ShapeError(
            f"unary_scores: features of width {gs.shape[1]} for a projection of width {params.W_u.shape[1]}"
        )
    return add(matmul(gs, transpose(params.W_u)), params.b_u)


def _check_labels(labels, R, K):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (R,):
        raise DataError(f"label sequence of length {labels.size} for {R} utterances")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"label index out of range 0..{K - 1}")
    return labels


def score_sequence(U, labels, T, s):
    U, T, s = as_tensor(U), as_tensor(T), as_tensor(s)
    R, K = U.shape
    labels = _check_labels(labels, R, K)
    score = add(reduce_sum(gather(s, (labels[:1],))), reduce_sum(gather(U, (np.arange(R), labels))))
    if R > 1:
        score = add(score, reduce_sum(gather(T, (labels[:-1], labels[1:]))))
    return score


def log_partition(U, T, s):
    """
    Forward recursion in log space:
    alpha_1 = s + U[1]; alpha_j[b] = logsumexp_a(alpha_{j-1}[a] + T[a, b]) + U[j, b].
    """
    U, T, s = as_tensor(U), as_tensor(T), as_tensor(s)
    R = U.shape[0]
    if R < 1:
        raise ShapeError("log_partition needs at least one position")
    T_by_target = transpose(T)
    alpha = add(s, gather(U, (0,)))
    for j in range(1, R):
        alpha = add(logsumexp(add(T_by_target, alpha), axis=1), gather(U, (j,)))
    return logsumexp(alpha)


def nll(U, labels, T, s):
    """-log p(y | C) = log Z - score(y)."""
    return sub(log_partition(U, T, s), score_sequence(U, labels, T, s))


def _arrays(U, T, s):
    return (
        np.asarray(as_tensor(U).data),
        np.asarray(as_tensor(T).data),
        np.asarray(as_tensor(s).data),
    )


def viterbi_decode(U, T, s):
    """
    Highest-scoring label sequence and its score.

    Ties resolve toward the lower label index, both for the final label and
    for every back-pointer.
    """
    U, T, s = _arrays(U, T, s)
    R, K = U.shape
    delta = s + U[0]
    pointers = np.zeros((R, K), dtype=np.intp)
    for j in range(1, R):
        candidates = delta[:, None] + T
        pointers[j] = np.argmax(candidates, axis=0)
        delta = candidates[pointers[j], np.arange(K)] + U[j]
    best = int(np.argmax(delta))
    path = [best]
    for j in range(R - 1, 0, -1):
        best = int(pointers[j, best])
        path.append(best)
    path.reverse()
    return path, float(np.max(delta))


def forward_backward_marginals(U, T, s):
    """
    Node marginals (R x K) and edge marginals ((R-1) x K x K) of the chain.
    """
    U, T, s = _arrays(U, T, s)
    R, K = U.shape
    alpha = np.zeros((R, K))
    beta = np.zeros((R, K))
    alpha[0] = s + U[0]
    for j in range(1, R):
        alpha[j] = logsumexp_array(alpha[j - 1][:, None] + T, axis=0) + U[j]
    for j in range(R - 2, -1, -1):
        beta[j] = logsumexp_array(T + (U[j + 1] + beta[j + 1])[None, :], axis=1)
    log_z = logsumexp_array(alpha[-1])
    nodes = np.exp(alpha + beta - log_z)
    edges = np.zeros((max(R - 1, 0), K, K))
    for j in range(R - 1):
        edges[j] = np.exp(alpha[j][:, None] + T + (U[j + 1] + beta[j + 1])[None, :] - log_z)
    return nodes, edges


@dataclass
class BruteForceResult:
    log_z: float
    best_sequence: list
    best_score: float
    sequences: np.ndarray
    probabilities: np.ndarray


def brute_force(U, T, s):
    """
    Exhaustive enumeration of all K^R labelings, the ground truth for tests.

    Sequences are enumerated in lexicographic order and the first maximum wins.
    """
    U, T, s = _arrays(U, T, s)
    R, K = U.shape
    if K ** R > BRUTE_FORCE_LIMIT:
        raise ShapeError(f"brute force over {K}^{R} sequences exceeds {BRUTE_FORCE_LIMIT}")
    sequences = np.array(list(itertools.product(range(K), repeat=R)), dtype=np.intp)
    scores = s[sequences[:, 0]] + U[np.arange(R), sequences].sum(axis=1)
    if R > 1:
        scores = scores + T[sequences[:, :-1], sequences[:, 1:]].sum(axis=1)
    log_z = float(logsumexp_array(scores))
    best = int(np.argmax(scores))
    return BruteForceResult(
        log_z=log_z,
        best_sequence=[int(k) for k in sequences[best]],
        best_score=float(scores[best]),
        sequences=sequences,
        probabilities=np.exp(scores - log_z),
    )
