"""scikit-learn compatible wrapper around :class:`~mre.model.MRENetwork`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import numcore as nc
from .data import Dataset, InstanceBag, collate
from .exceptions import ValidationError
from .harness import TrainConfig, fit_network
from .model import MRENetwork


def check_bags(X, y=None):
    """Normalise estimator input to ``(list of InstanceBag, labels or None)``.

    ``X`` may be a :class:`Dataset`, a list of :class:`InstanceBag`, or a
    3-tuple ``(vision, audio, text)`` of arrays shaped ``(n, T, d)`` or
    sequences of per-sample ``(T, d)`` arrays. When ``y`` is omitted the bag
    labels are used.
    """
    if isinstance(X, Dataset):
        bags = list(X.bags)
    elif isinstance(X, (list, tuple)) and X and all(isinstance(b, InstanceBag) for b in X):
        bags = list(X)
    elif isinstance(X, (list, tuple)) and len(X) == 3:
        mods = [[np.asarray(s, dtype=np.float64) for s in m] for m in X]
        n = len(mods[0])
        if n == 0 or any(len(m) != n for m in mods):
            raise ValidationError(f"modalities have different sample counts: {[len(m) for m in mods]}")
        for m in mods:
            if any(s.ndim != 2 or s.shape[0] < 1 for s in m):
                raise ValidationError("every sample must be a non-empty (T, d) matrix")
            if len({s.shape[1] for s in m}) != 1:
                raise ValidationError("feature width differs across samples within a modality")
        # placeholder labels; the caller's y is returned separately
        bags = [InstanceBag(id=str(i), vision=mods[0][i], audio=mods[1][i], text=mods[2][i], label=0)
                for i in range(n)]
        if y is None:
            return bags, None
    else:
        raise ValidationError("X must be a Dataset, a list of InstanceBag, or a (vision, audio, text) triple")
    if not bags:
        raise ValidationError("X is empty")
    if y is None:
        y = np.array([b.label for b in bags])
    y = np.asarray(y)
    if y.shape != (len(bags),):
        raise ValidationError(f"y has shape {y.shape}, expected ({len(bags)},)")
    return bags, y


class MREClassifier(ClassifierMixin, BaseEstimator):
    """Multimodal relevance estimation classifier.

    Parameters mirror :class:`~mre.harness.TrainConfig`; a held-out
    ``validation_fraction`` of the training data drives early stopping.
    """

    def __init__(self, d_model=32, rank=4, d_out=None, head_hidden=None, tau=0.1,
                 lambda_rs=1.0, lambda_cnce=1.0, learning_rate=5e-5, dropout=0.2,
                 batch_size=64, epochs=100, patience=8, validation_fraction=0.1,
                 random_state=0, dtype="float64"):
        self.d_model = d_model
        self.rank = rank
        self.d_out = d_out
        self.head_hidden = head_hidden
        self.tau = tau
        self.lambda_rs = lambda_rs
        self.lambda_cnce = lambda_cnce
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.dtype = dtype

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, dropout=self.dropout,
                           batch_size=self.batch_size, epochs=self.epochs, patience=self.patience,
                           d_model=self.d_model, rank=self.rank, d_out=self.d_out,
                           head_hidden=self.head_hidden, tau=self.tau, lambda_rs=self.lambda_rs,
                           lambda_cnce=self.lambda_cnce, seeds=[self.random_state], dtype=self.dtype)

    def fit(self, X, y=None):
        bags, y = check_bags(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValidationError("need samples from at least 2 classes")
        bags = [InstanceBag(b.id, b.vision, b.audio, b.text, int(c)) for b, c in zip(bags, encoded)]
        dims = tuple(b.modality(k).shape[1] for b in bags[:1] for k in ("vision", "audio", "text"))
        cfg = self._train_config()
        seed = int(self.random_state)
        order = np.random.default_rng(seed).permutation(len(bags))
        n_val = int(round(self.validation_fraction * len(bags)))
        if not 0 < n_val < len(bags):
            raise ValidationError(f"validation_fraction={self.validation_fraction} leaves an empty split")
        val = [bags[i] for i in order[:n_val]]
        train = [bags[i] for i in order[n_val:]]
        self.network_ = MRENetwork(cfg.model_config(dims, len(self.classes_)), seed=seed)
        self.history_, best = fit_network(self.network_, cfg, train, val, seed)
        self.best_epoch_ = best["epoch"]
        self.n_dims_in_ = dims
        return self

    def _forward(self, X):
        check_is_fitted(self, "network_")
        bags, _ = check_bags(X)
        dims = tuple(bags[0].modality(k).shape[1] for k in ("vision", "audio", "text"))
        if dims != self.n_dims_in_:
            raise ValidationError(f"feature dims {dims} differ from those seen in fit {self.n_dims_in_}")
        with nc.no_grad():
            return self.network_.forward(collate(bags, dtype=self.network_.dtype))

    def predict_proba(self, X) -> np.ndarray:
        logits = self._forward(X).logits.data
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        logits = self._forward(X).logits.data
        return self.classes_[np.argmax(logits, axis=1)]

    def transform(self, X) -> np.ndarray:
        """Fused low-rank representation, shape (n_samples, d_out)."""
        return self._forward(X).fused.data.copy()

    def relevance_weights(self, X) -> np.ndarray:
        """Per-sample modality weights (vision, audio, text), rows on the simplex."""
        return self._forward(X).relevance.data.copy()

