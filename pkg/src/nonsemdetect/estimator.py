"""Scikit-learn style front door around the detector and training recipe.

SpoofDetector.fit consumes a stack of embedding matrices plus binary
labels (0/"spoof", 1/"bonafide"), trains with the class-weighted recipe,
keeps the epoch with the best held-out EER, and fixes the decision
threshold at that operating point. decision_function returns the
detection score (higher = more bonafide).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split

from .datasets import DatasetSplit, TrialRecord
from .detector import DetectorConfig, DetectorModel, score
from .errors import ConfigurationError
from .features import EmbeddingMatrix
from .metrics import compute_eer
from .nn import Tensor
from .training import TrainConfig, score_split, train
from .validation import check_binary_labels, check_embedding_stack


def _as_split(x: np.ndarray, y: np.ndarray, name: str) -> DatasetSplit:
    records = []
    for i in range(x.shape[0]):
        matrix = EmbeddingMatrix(x[i], window_ms=0, frontend_id="in-memory")
        label = "bonafide" if y[i] == 1 else "spoof"
        attack = None if label == "bonafide" else "unknown"
        records.append(TrialRecord(f"{name}-{i:06d}", label, attack, matrix=matrix))
    return DatasetSplit(name, records)


class SpoofDetector(BaseEstimator, ClassifierMixin):
    """Binary spoofing detector over stacked chunk embeddings.

    Parameters mirror the detector and training configuration; all are
    plain values so the estimator clones and grid-searches cleanly.
    """

    def __init__(
        self,
        use_delta=False,
        conv_kernel=3,
        lstm_hidden=32,
        projection_dim=128,
        attention_heads=4,
        mlp_hidden=128,
        epochs=10,
        batch_size=64,
        learning_rate=1e-4,
        lr_decay=0.05,
        class_weight_spoof=0.1,
        class_weight_bonafide=0.9,
        loss_reduction="weighted-mean",
        validation_fraction=0.2,
        random_state=0,
    ):
        self.use_delta = use_delta
        self.conv_kernel = conv_kernel
        self.lstm_hidden = lstm_hidden
        self.projection_dim = projection_dim
        self.attention_heads = attention_heads
        self.mlp_hidden = mlp_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.class_weight_spoof = class_weight_spoof
        self.class_weight_bonafide = class_weight_bonafide
        self.loss_reduction = loss_reduction
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, dev=None):
        """Train on (X, y); dev, if given, is an (X_dev, y_dev) pair used for
        best-epoch selection instead of an internal stratified split."""
        x = check_embedding_stack(X)
        labels = check_binary_labels(y, x.shape[0])
        if len(np.unique(labels)) < 2:
            raise ConfigurationError("fit needs both classes present in y")

        if dev is not None:
            x_dev = check_embedding_stack(dev[0])
            y_dev = check_binary_labels(dev[1], x_dev.shape[0])
            x_tr, y_tr = x, labels
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ConfigurationError("validation_fraction must be in (0, 1) when dev is not given")
            x_tr, x_dev, y_tr, y_dev = train_test_split(
                x,
                labels,
                test_size=self.validation_fraction,
                stratify=labels,
                random_state=self.random_state,
            )

        config = DetectorConfig(
            input_dim=x.shape[1],
            conv_kernel=self.conv_kernel,
            use_delta=self.use_delta,
            lstm_hidden=self.lstm_hidden,
            projection_dim=self.projection_dim,
            attention_heads=self.attention_heads,
            mlp_hidden=self.mlp_hidden,
            seed=self.random_state,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.learning_rate,
            decay=self.lr_decay,
            class_weights=(self.class_weight_spoof, self.class_weight_bonafide),
            loss_reduction=self.loss_reduction,
            seed=self.random_state,
        )
        model = DetectorModel(config)
        dev_split = _as_split(x_dev, y_dev, "dev")
        _, log = train(model, _as_split(x_tr, y_tr, "train"), dev_split, train_cfg)

        entries = score_split(model, dev_split, self.batch_size)
        by_id = {r.utt_id: r.label for r in dev_split.records}
        bon = [e.score for e in entries if by_id[e.utt_id] == "bonafide"]
        spf = [e.score for e in entries if by_id[e.utt_id] == "spoof"]
        operating = compute_eer(bon, spf)

        self.model_ = model
        self.train_log_ = log
        self.best_epoch_ = log.best_epoch
        self.dev_eer_ = log.best_dev_eer
        self.threshold_ = operating.threshold
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = x.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigurationError("this SpoofDetector instance is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        x = check_embedding_stack(X)
        if x.shape[1] != self.n_features_in_:
            raise ConfigurationError(
                f"X has d={x.shape[1]} but the model was fitted with d={self.n_features_in_}"
            )
        scores = []
        for start in range(0, x.shape[0], self.batch_size):
            logits = self.model_.forward(Tensor(x[start : start + self.batch_size]), training=False)
            scores.append(score(logits))
        return np.concatenate(scores)

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= self.threshold_).astype(np.int64)

    def eer(self, X, y) -> float:
        """Pooled EER of the fitted model on (X, y)."""
        scores = self.decision_function(X)
        labels = check_binary_labels(y, len(scores))
        return compute_eer(scores[labels == 1], scores[labels == 0]).eer
