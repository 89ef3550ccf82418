"""Per-modality encoders into the shared ``d_model`` space.

Vision and audio sequences go through a timestep-local 3-layer DNN, text
through a single-layer LSTM. Every encoder accepts either one sequence of
shape ``(T, d_in)`` or a padded batch ``(B, T, d_in)``.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .exceptions import ContractError, ShapeError
from .layers import Linear, Module, uniform_init
from .numcore import Tensor


def _check_sequence(x: Tensor, d_in: int, who: str):
    if x.ndim not in (2, 3):
        raise ShapeError(f"{who}: expected (T, d) or (B, T, d), got shape {x.shape}")
    if x.shape[-2] < 1:
        raise ContractError(f"{who}: empty sequence")
    if x.shape[-1] != d_in:
        raise ShapeError(f"{who}: input shape {x.shape} does not match d_in={d_in}")


class DNNEncoder(Module):
    """affine -> ReLU -> affine -> ReLU -> affine, applied at every timestep."""

    def __init__(self, d_in, d_model, rng, dtype=np.float64):
        self.layers = [
            Linear(d_in, d_model, rng, dtype),
            Linear(d_model, d_model, rng, dtype),
            Linear(d_model, d_model, rng, dtype),
        ]

    @property
    def d_in(self):
        return self.layers[0].d_in

    def __call__(self, x, *, training=False, dropout=0.0, rng=None):
        return dnn_encode(x, self, training=training, dropout=dropout, rng=rng)


def dnn_encode(x, params: DNNEncoder, *, training=False, dropout=0.0, rng=None) -> Tensor:
    x = nc.as_tensor(x)
    _check_sequence(x, params.d_in, "dnn_encode")
    h = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        h = layer(h)
        if i < last:
            h = nc.dropout(nc.relu(h), 1.0 - dropout, rng, training)
    return h


class LSTMEncoder(Module):
    """Single-layer LSTM; gate blocks are ordered (input, forget, candidate, output)."""

    def __init__(self, d_in, d_hidden, rng, dtype=np.float64):
        self.w_input = nc.parameter(uniform_init(rng, (d_in, 4 * d_hidden), d_hidden, dtype))
        self.w_hidden = nc.parameter(uniform_init(rng, (d_hidden, 4 * d_hidden), d_hidden, dtype))
        self.bias = nc.parameter(uniform_init(rng, (4 * d_hidden,), d_hidden, dtype))

    @property
    def d_in(self):
        return self.w_input.shape[0]

    @property
    def d_hidden(self):
        return self.w_hidden.shape[0]

    def __call__(self, x, **_):
        return lstm_encode(x, self)


def lstm_cell(x_proj: Tensor, h: Tensor, c: Tensor, params: LSTMEncoder):
    """One recurrence step given the precomputed input projection ``x W_x + b``."""
    n = params.d_hidden
    gates = x_proj + nc.matmul(h, params.w_hidden)
    i = nc.sigmoid(gates[..., 0:n])
    f = nc.sigmoid(gates[..., n:2 * n])
    g = nc.tanh(gates[..., 2 * n:3 * n])
    o = nc.sigmoid(gates[..., 3 * n:4 * n])
    c = f * c + i * g
    h = o * nc.tanh(c)
    return h, c


def lstm_encode(x, params: LSTMEncoder) -> Tensor:
    """Run the LSTM from zero state and return every hidden state, shape (..., T, d_hidden)."""
    x = nc.as_tensor(x)
    _check_sequence(x, params.d_in, "lstm_encode")
    single = x.ndim == 2
    if single:
        x = nc.expand_dims(x, 0)
    batch, steps = x.shape[0], x.shape[1]
    proj = nc.matmul(x, params.w_input) + params.bias
    zeros = np.zeros((batch, params.d_hidden), dtype=x.dtype)
    h, c = Tensor(zeros), Tensor(zeros)
    outputs = []
    for t in range(steps):
        h, c = lstm_cell(proj[:, t, :], h, c, params)
        outputs.append(h)
    seq = nc.stack(outputs, axis=1)
    return seq[0] if single else seq


def mean_pool(seq, lengths=None) -> Tensor:
    """Temporal mean of a (T, d) sequence or a padded (B, T, d) batch.

    ``lengths`` gives the valid prefix of each padded sequence; padding rows
    are excluded from the mean.
    """
    seq = nc.as_tensor(seq)
    if seq.ndim not in (2, 3) or seq.shape[-2] < 1:
        raise ContractError(f"mean_pool: expected a non-empty (T, d) or (B, T, d) input, got {seq.shape}")
    if lengths is None:
        return nc.mean(seq, axis=-2)
    lengths = np.asarray(lengths)
    steps = seq.shape[-2]
    if seq.ndim != 3 or lengths.shape != (seq.shape[0],):
        raise ShapeError(f"mean_pool: lengths {lengths.shape} do not match batch of shape {seq.shape}")
    if lengths.min() < 1 or lengths.max() > steps:
        raise ContractError(f"mean_pool: lengths must lie in [1, {steps}]")
    if (lengths == steps).all():
        return nc.mean(seq, axis=-2)
    weights = (np.arange(steps)[None, :] < lengths[:, None]) / lengths[:, None]
    weights = weights.astype(seq.dtype)[:, :, None]
    return nc.sum_(seq * Tensor(np.broadcast_to(weights, seq.shape).copy()), axis=1)
