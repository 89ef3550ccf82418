"""Category-level contrastive loss over cross-modal embedding pairs."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from . import numcore as nc
from .exceptions import ContractError, DomainError, ShapeError
from .numcore import Tensor

PROB_EPS = 1e-7
MODALITY_PAIRS = tuple(combinations(range(3), 2))  # (v, a), (v, t), (a, t)


def similarity(x, y) -> float:
    """Cosine similarity of two nonzero vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"similarity: shapes {x.shape} and {y.shape} do not conform")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise DomainError("similarity: zero-norm vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def nce_prob(index: int, similarities, tau: float) -> float:
    """Probability of candidate ``index`` under a temperature softmax of ``similarities``."""
    if tau <= 0:
        raise ContractError(f"nce_prob: temperature must be positive, got {tau}")
    s = np.asarray(similarities, dtype=np.float64).ravel()
    if s.size < 1:
        raise ContractError("nce_prob: empty candidate set")
    z = s / tau
    e = np.exp(z - z.max())
    return float(e[index] / e.sum())


def cosine_matrix(z1: Tensor, z2: Tensor) -> Tensor:
    """Pairwise cosine similarities between the rows of two (B, d) matrices."""
    if z1.ndim != 2 or z1.shape != z2.shape:
        raise ShapeError(f"cosine_matrix: shapes {z1.shape} and {z2.shape} do not conform")
    return nc.matmul(_normalize_rows(z1), nc.transpose(_normalize_rows(z2)))


def _normalize_rows(z: Tensor) -> Tensor:
    sq = nc.sum_(z * z, axis=-1, keepdims=True)
    if np.any(sq.data == 0):
        raise DomainError("cosine similarity: zero-norm embedding row")
    return z / nc.expand(nc.sqrt(sq), z.shape)


def pair_probabilities(sims: Tensor, tau: float) -> Tensor:
    """Softmax of ``sims / tau`` over all entries of the (B, B) similarity matrix."""
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    flat = nc.reshape(sims, (sims.size,))
    return nc.reshape(nc.softmax(nc.scale(flat, 1.0 / tau)), sims.shape)


def pair_loss(z1: Tensor, z2: Tensor, labels, tau: float) -> Tensor:
    """Contrastive term for one modality pair."""
    labels = np.asarray(labels)
    p = nc.clip(pair_probabilities(cosine_matrix(z1, z2), tau), PROB_EPS, 1.0 - PROB_EPS)
    positive = (labels[:, None] == labels[None, :]).astype(p.dtype)
    negative = 1.0 - positive
    n_pos, n_neg = positive.sum(), negative.sum()
    loss = Tensor(np.zeros((), dtype=p.dtype))
    if n_pos:
        loss = loss - nc.sum_(nc.log(p) * Tensor(positive)) / n_pos
    if n_neg:
        loss = loss - nc.sum_(nc.log(1.0 - p) * Tensor(negative)) / n_neg
    return loss


def cnce_loss(embeddings, labels, tau: float = 0.1) -> Tensor:
    """Sum of :func:`pair_loss` over the (v, a), (v, t) and (a, t) pairs.

    ``embeddings`` is either a (B, 3, d) tensor of relevance-weighted rows or
    a sequence of three (B, d) matrices.
    """
    if tau <= 0:
        raise ContractError(f"cnce_loss: temperature must be positive, got {tau}")
    if isinstance(embeddings, Tensor):
        if embeddings.ndim != 3 or embeddings.shape[1] != 3:
            raise ShapeError(f"cnce_loss: expected (B, 3, d) embeddings, got {embeddings.shape}")
        parts = [embeddings[:, m, :] for m in range(3)]
    else:
        parts = [nc.as_tensor(z) for z in embeddings]
        if len(parts) != 3:
            raise ShapeError(f"cnce_loss: expected three modality matrices, got {len(parts)}")
    labels = np.asarray(labels)
    if labels.shape != (parts[0].shape[0],):
        raise ShapeError(f"cnce_loss: labels {labels.shape} do not match batch {parts[0].shape}")
    total = None
    for a, b in MODALITY_PAIRS:
        term = pair_loss(parts[a], parts[b], labels, tau)
        total = term if total is None else total + term
    return total

