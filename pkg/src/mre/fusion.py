"""Low-rank multimodal fusion, the classification head and the total objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .exceptions import ShapeError
from .layers import Linear, Module
from .numcore import Tensor


class LowRankFusion(Module):
    """Rank-``R`` factors per modality, each of shape (R, d_out, d_model + 1)."""

    def __init__(self, d_model, rank, d_out, rng, dtype=np.float64):
        std = (1.0 / (d_model + 1)) ** 0.5
        shape = (rank, d_out, d_model + 1)
        self.factor_v = nc.parameter(rng.normal(0.0, std, shape).astype(dtype))
        self.factor_a = nc.parameter(rng.normal(0.0, std, shape).astype(dtype))
        self.factor_t = nc.parameter(rng.normal(0.0, std, shape).astype(dtype))
        self.bias = nc.parameter(np.zeros(d_out, dtype=dtype))

    @property
    def rank(self):
        return self.factor_v.shape[0]

    @property
    def d_out(self):
        return self.factor_v.shape[1]

    @property
    def d_model(self):
        return self.factor_v.shape[2] - 1

    def factors(self):
        return self.factor_v, self.factor_a, self.factor_t

    def __call__(self, s_v, s_a, s_t):
        return low_rank_fuse(s_v, s_a, s_t, self)


def _project(s: Tensor, factor: Tensor) -> Tensor:
    """Append a constant 1 to ``s`` and apply every rank factor: (..., R, d_out)."""
    rank, d_out, width = factor.shape
    if s.shape[-1] + 1 != width:
        raise ShapeError(f"low_rank_fuse: input {s.shape} does not match factor {factor.shape}")
    ones = np.ones(s.shape[:-1] + (1,), dtype=s.dtype)
    aug = nc.concat([s, Tensor(ones)], axis=-1)
    # (R, d_out, d+1) -> (d+1, R * d_out)
    w = nc.reshape(nc.transpose(factor, (2, 0, 1)), (width, rank * d_out))
    return nc.reshape(nc.matmul(aug if aug.ndim > 1 else nc.expand_dims(aug, 0), w),
                      s.shape[:-1] + (rank, d_out))


def low_rank_fuse(s_v, s_a, s_t, params: LowRankFusion) -> Tensor:
    """``sum_r (W_v^r z_v) * (W_a^r z_a) * (W_t^r z_t) + bias`` with ``z_m = [s_m; 1]``."""
    s_v, s_a, s_t = (nc.as_tensor(s) for s in (s_v, s_a, s_t))
    if not s_v.shape == s_a.shape == s_t.shape:
        raise ShapeError(f"low_rank_fuse: shapes {s_v.shape}, {s_a.shape}, {s_t.shape} do not conform")
    zv, za, zt = (_project(s, w) for s, w in zip((s_v, s_a, s_t), params.factors()))
    return nc.sum_(zv * za * zt, axis=-2) + params.bias


class Classifier(Module):
    """Affine map from the fused vector to class logits; identity when absent."""

    def __init__(self, d_in, n_classes, rng, dtype=np.float64):
        self.linear = Linear(d_in, n_classes, rng, dtype) if d_in != n_classes else None

    def __call__(self, F):
        return classify(F, self)


def classify(F, params: Classifier | Linear | None) -> Tensor:
    F = nc.as_tensor(F)
    linear = params.linear if isinstance(params, Classifier) else params
    if linear is None:
        return F
    if F.ndim == 1:
        return nc.matmul(nc.expand_dims(F, 0), linear.weight)[0] + linear.bias
    return linear(F)


@dataclass
class LossBundle:
    ce: Tensor
    l_rs: Tensor
    l_cnce: Tensor
    total: Tensor
    lambda_rs: float = 1.0
    lambda_cnce: float = 1.0

    def values(self) -> dict:
        return {"ce": self.ce.item(), "l_rs": self.l_rs.item(),
                "l_cnce": self.l_cnce.item(), "total": self.total.item()}


def total_loss(logits, labels, l_rs, l_cnce, lambda_rs=1.0, lambda_cnce=1.0) -> LossBundle:
    """Batch-mean cross-entropy plus the weighted auxiliary losses."""
    logits = nc.as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels))
    if logits.ndim == 1:
        logits = nc.expand_dims(logits, 0)
    ce = nc.cross_entropy(logits, labels)
    l_rs, l_cnce = nc.as_tensor(l_rs, like=ce), nc.as_tensor(l_cnce, like=ce)
    total = ce + nc.scale(l_rs, lambda_rs) + nc.scale(l_cnce, lambda_cnce)
    return LossBundle(ce, l_rs, l_cnce, total, float(lambda_rs), float(lambda_cnce))
