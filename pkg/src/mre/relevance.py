"""Relevance estimation over the stacked (vision, audio, text) embeddings.

All functions accept a single stack ``(3, d)`` or a batch ``(B, 3, d)``.
Row order is always vision, audio, text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .exceptions import ShapeError
from .layers import MLP, Module
from .numcore import Tensor

MODALITIES = ("vision", "audio", "text")
N_MODALITIES = len(MODALITIES)


class RelevanceHeads(Module):
    """``m1`` scores modalities, ``m2`` classifies each attended row, ``pm`` the flattened stack."""

    def __init__(self, d_model, n_classes, d_hidden, rng, dtype=np.float64):
        flat = N_MODALITIES * d_model
        self.m1 = MLP(flat, d_hidden, N_MODALITIES, rng, dtype)
        self.m2 = MLP(d_model, d_hidden, n_classes, rng, dtype)
        self.pm = MLP(flat, d_hidden, n_classes, rng, dtype)

    @property
    def n_classes(self):
        return self.m2.out.d_out


@dataclass
class CategoryEstimates:
    modality_logits: Tensor  # (..., 3, C), one row per modality from m2
    multimodal_logits: Tensor  # (..., C)


def _check_stack(S: Tensor, who: str):
    if S.ndim not in (2, 3) or S.shape[-2] != N_MODALITIES:
        raise ShapeError(f"{who}: expected a (3, d) stack or (B, 3, d) batch, got {S.shape}")


def _flatten(A: Tensor) -> Tensor:
    return nc.reshape(A, A.shape[:-2] + (A.shape[-2] * A.shape[-1],))


def attention_scores(S) -> Tensor:
    """``row-softmax(S S^T / sqrt(d))``."""
    S = nc.as_tensor(S)
    _check_stack(S, "attention_scores")
    return nc.softmax(nc.scale(nc.matmul(S, nc.transpose(S)), 1.0 / math.sqrt(S.shape[-1])))


def self_attention(S) -> Tensor:
    """Scaled dot-product self-attention with Q = K = V = S and no projections."""
    S = nc.as_tensor(S)
    return nc.matmul(attention_scores(S), S)


def relevance_weights(A, m1: MLP) -> Tensor:
    """Per-modality relevance ``h = softmax(m1(flatten(A)))``, on the 3-simplex."""
    A = nc.as_tensor(A)
    _check_stack(A, "relevance_weights")
    return nc.softmax(m1(_flatten(A)))


def category_estimates(A, heads: RelevanceHeads) -> CategoryEstimates:
    A = nc.as_tensor(A)
    _check_stack(A, "category_estimates")
    return CategoryEstimates(heads.m2(A), heads.pm(_flatten(A)))


def weighted_embedding(pooled, h) -> Tensor:
    """Scale each modality row of ``pooled`` by its relevance weight."""
    pooled, h = nc.as_tensor(pooled), nc.as_tensor(h)
    _check_stack(pooled, "weighted_embedding")
    if h.shape != pooled.shape[:-1]:
        raise ShapeError(f"weighted_embedding: weights {h.shape} do not match stack {pooled.shape}")
    return nc.expand(nc.expand_dims(h, -1), pooled.shape) * pooled


def relevant_semantic_loss(est: CategoryEstimates, h, labels) -> Tensor:
    """Relevance-weighted weak-supervision loss, averaged over the batch.

    Each modality row is supervised with the bag label as pseudo-label and
    its cross-entropy is weighted by ``1 + h_m``; the multimodal head adds an
    unweighted cross-entropy term.
    """
    h = nc.as_tensor(h)
    mod = est.modality_logits
    if mod.ndim == 2:
        mod = nc.expand_dims(mod, 0)
        h = nc.expand_dims(h, 0)
        multi = nc.expand_dims(est.multimodal_logits, 0)
    else:
        multi = est.multimodal_logits
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (mod.shape[0],) or h.shape != mod.shape[:2]:
        raise ShapeError(f"relevant_semantic_loss: labels {labels.shape}, weights {h.shape} "
                         f"and estimates {mod.shape} do not conform")
    bag = np.repeat(labels[:, None], N_MODALITIES, axis=1)
    per_modality = nc.cross_entropy(mod, bag, reduce=False)  # (B, 3)
    weighted = nc.sum_((h + 1.0) * per_modality, axis=-1)
    return nc.mean(weighted + nc.cross_entropy(multi, labels, reduce=False))
