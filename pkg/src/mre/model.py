"""The full network: encode -> pool -> attend -> weight -> fuse -> classify."""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from . import numcore as nc
from .contrastive import cnce_loss
from .data import Batch, collate
from .encoders import DNNEncoder, LSTMEncoder, mean_pool
from .exceptions import ConfigError
from .fusion import Classifier, LossBundle, LowRankFusion, total_loss
from .layers import Module
from .numcore import Tensor
from .relevance import (CategoryEstimates, RelevanceHeads, attention_scores, category_estimates,
                        relevance_weights, relevant_semantic_loss, weighted_embedding)

DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class ModelConfig:
    dims: tuple
    n_classes: int
    d_model: int = 32
    rank: int = 4
    d_out: Optional[int] = None
    head_hidden: Optional[int] = None
    dropout: float = 0.2
    dtype: str = "float64"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive ints, got {self.dims}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if self.d_model < 1 or self.rank < 1:
            raise ConfigError("d_model and rank must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    @property
    def fusion_width(self) -> int:
        return self.d_out or self.n_classes

    @property
    def hidden_width(self) -> int:
        return self.head_hidden or self.d_model

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dims"] = list(self.dims)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardOutput:
    pooled: Tensor  # (B, 3, d_model)
    attention: Tensor  # (B, 3, 3)
    attended: Tensor  # (B, 3, d_model)
    relevance: Tensor  # (B, 3)
    estimates: CategoryEstimates
    weighted: Tensor  # (B, 3, d_model)
    fused: Tensor  # (B, d_out)
    logits: Tensor  # (B, C)


class MRENetwork(Module):
    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        dt = DTYPES[config.dtype]
        d_v, d_a, d_t = config.dims
        self.vision = DNNEncoder(d_v, config.d_model, rng, dt)
        self.audio = DNNEncoder(d_a, config.d_model, rng, dt)
        self.text = LSTMEncoder(d_t, config.d_model, rng, dt)
        self.heads = RelevanceHeads(config.d_model, config.n_classes, config.hidden_width, rng, dt)
        self.fusion = LowRankFusion(config.d_model, config.rank, config.fusion_width, rng, dt)
        self.classifier = Classifier(config.fusion_width, config.n_classes, rng, dt)

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    def forward(self, batch, *, training=False, rng=None) -> ForwardOutput:
        if not isinstance(batch, Batch):
            batch = collate(batch, dtype=self.dtype)
        kw = dict(training=training, dropout=self.config.dropout, rng=rng)
        xv, xa, xt = (Tensor(f.astype(self.dtype, copy=False)) for f in batch.features)
        lv, la, lt = batch.lengths
        pooled = nc.stack([
            mean_pool(self.vision(xv, **kw), lv),
            mean_pool(self.audio(xa, **kw), la),
            mean_pool(self.text(xt), lt),
        ], axis=1)
        scores = attention_scores(pooled)
        attended = nc.matmul(scores, pooled)
        h = relevance_weights(attended, self.heads.m1)
        est = category_estimates(attended, self.heads)
        weighted = weighted_embedding(pooled, h)
        fused = self.fusion(weighted[:, 0, :], weighted[:, 1, :], weighted[:, 2, :])
        logits = self.classifier(fused)
        return ForwardOutput(pooled, scores, attended, h, est, weighted, fused, logits)

    __call__ = forward

    def loss(self, out: ForwardOutput, labels, *, lambda_rs=1.0, lambda_cnce=1.0, tau=0.1) -> LossBundle:
        """Total objective; auxiliary terms with a zero coefficient are kept off the graph."""
        labels = np.asarray(labels)
        with _grad_if(lambda_rs != 0):
            l_rs = relevant_semantic_loss(out.estimates, out.relevance, labels)
        with _grad_if(lambda_cnce != 0):
            l_cnce = cnce_loss(out.weighted, labels, tau)
        return total_loss(out.logits, labels, l_rs, l_cnce, lambda_rs, lambda_cnce)

    def predict_proba(self, batch) -> np.ndarray:
        with nc.no_grad():
            logits = self.forward(batch).logits.data
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def predict(self, batch) -> np.ndarray:
        with nc.no_grad():
            return np.argmax(self.forward(batch).logits.data, axis=-1)


def _grad_if(enabled):
    return contextlib.nullcontext() if enabled else nc.no_grad()
