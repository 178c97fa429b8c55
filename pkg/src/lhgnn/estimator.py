"""Scikit-learn style wrapper around the network and trainer.

`X` is an array of shape (n_samples, frames, mels); `y` is either a
multi-hot matrix (tagging, scored by mAP) or a 1-D integer label vector
(classification, scored by accuracy).  Architecture defaults are the
small configuration, sized to whatever input shape `fit` receives.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DimensionError
from .metrics import accuracy, mean_average_precision
from .model import ModelConfig, forward
from .training import AugmentConfig, OptimConfig, TrainConfig, train_arrays
from . import tensor as T


class LHGNNClassifier(BaseEstimator, ClassifierMixin):
    def __init__(
        self,
        channels=(8, 16, 32, 64),
        depths=(1, 1, 1, 1),
        k: int = 3,
        top_k: int = 2,
        clusters: int = 4,
        variant: str = "local_higher",
        cluster_backend: str = "fcm",
        head_hidden: int = 32,
        epochs: int = 20,
        batch_size: int = 8,
        lr: float = 1e-3,
        weight_decay: float = 0.05,
        augment: bool = False,
        seed: int = 0,
    ):
        self.channels = channels
        self.depths = depths
        self.k = k
        self.top_k = top_k
        self.clusters = clusters
        self.variant = variant
        self.cluster_backend = cluster_backend
        self.head_hidden = head_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.augment = augment
        self.seed = seed

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise DimensionError(f"X must be (n_samples, frames, mels), got shape {X.shape}")
        return X

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y)
        if y.ndim == 2:
            self.task_ = "multilabel"
            num_classes = y.shape[1]
            self.classes_ = np.arange(num_classes)
            targets = y.astype(np.float32)
        elif y.ndim == 1:
            self.task_ = "multiclass"
            self.classes_, targets = np.unique(y, return_inverse=True)
            num_classes = len(self.classes_)
        else:
            raise DimensionError(f"y must be 1-D labels or a 2-D multi-hot matrix, got {y.shape}")
        if len(X) != len(targets):
            raise DimensionError(f"{len(X)} samples but {len(targets)} targets")

        self.config_ = ModelConfig(
            channels=tuple(self.channels),
            depths=tuple(self.depths),
            k=self.k,
            K=self.top_k,
            P=self.clusters,
            num_classes=num_classes,
            in_frames=X.shape[1],
            in_mels=X.shape[2],
            head_hidden=self.head_hidden,
            variant=self.variant,
            cluster_backend=self.cluster_backend,
        )
        train_cfg = TrainConfig(
            model=self.config_,
            augment=AugmentConfig(enabled=self.augment,
                                  time_mask=min(192, X.shape[1]),
                                  freq_mask=min(48, X.shape[2])),
            optimizer=OptimConfig(lr=self.lr, weight_decay=self.weight_decay),
            task=self.task_,
            batch_size=self.batch_size,
            epochs=self.epochs,
        )
        self.params_, self.history_ = train_arrays(X, targets, train_cfg, seed=self.seed)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        with T.no_grad():
            logits = forward(X, self.params_, self.config_, training=False)
        return logits.data.copy()

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X).astype(np.float64)
        if self.task_ == "multilabel":
            return 1.0 / (1.0 + np.exp(-z))
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        if self.task_ == "multilabel":
            return (proba >= 0.5).astype(np.int64)
        return self.classes_[proba.argmax(axis=1)]

    def score(self, X, y) -> float:
        """mAP for multilabel targets, accuracy for class labels."""
        check_is_fitted(self, "params_")
        y = np.asarray(y)
        if self.task_ == "multilabel":
            return mean_average_precision(self.decision_function(X), y)
        mapped = np.searchsorted(self.classes_, y)
        return accuracy(self.decision_function(X), mapped)
