"""Task-blind success classifier over imagined latents (baseline)."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .._validation import check_is_fitted
from ..exceptions import ConfigurationError


def rollout_features(rollout):
    """Mean of the downsampled ``[h, z]`` latents, followed by the last one."""
    seq = rollout.features("downsampled")
    return np.concatenate([seq.mean(axis=0), seq[-1]])


def _design(rollouts):
    if len(rollouts) == 0:
        raise ConfigurationError("no rollouts given")
    return np.stack([rollout_features(r) for r in rollouts])


class LatentClassifier(ClassifierMixin, BaseEstimator):
    """Logistic regression on pooled imagined latents; label 1 means success.

    Parameters
    ----------
    C : float
        Inverse L2 regularization strength.
    max_iter : int
    """

    def __init__(self, C=1.0, max_iter=2000):
        self.C = C
        self.max_iter = max_iter

    def fit(self, rollouts, y):
        X = _design(rollouts)
        y = np.asarray(y).astype(int)
        if y.shape != (len(X),):
            raise ConfigurationError("need one label per rollout")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ConfigurationError("training labels contain a single class")
        self.pipeline_ = make_pipeline(
            StandardScaler(), LogisticRegression(C=self.C, max_iter=self.max_iter)
        ).fit(X, y)
        return self

    def predict_proba(self, rollouts):
        check_is_fitted(self, "pipeline_")
        return self.pipeline_.predict_proba(_design(rollouts))

    def predict(self, rollouts):
        return self.classes_[np.argmax(self.predict_proba(rollouts), axis=1)]

    def classify(self, rollout):
        """Probability of success for one rollout."""
        return float(self.predict_proba([rollout])[0, 1])


def train_latent_classifier(rollouts, labels, **params):
    return LatentClassifier(**params).fit(rollouts, labels)
