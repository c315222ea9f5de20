"""scikit-learn compatible wrappers so the pieces compose with pipelines and grid search."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .embedding import EmbeddingModels, classify_features, extract_features
from .nn import TrainConfig, init_network, predict_proba, train_classifier
from .pca import fit_pca, project, reconstruct
from .siamese import SiameseConfig, finetune_siamese


class FeedForwardClassifier(ClassifierMixin, BaseEstimator):
    """Dense ReLU network trained with plain mini-batch SGD on cross-entropy."""

    def __init__(self, hidden_layer_sizes=(32, 16), learning_rate=0.1, epochs=60,
                 batch_size=32, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        net = init_network([X.shape[1], *self.hidden_layer_sizes, len(self.classes_)],
                           seed=self.random_state)
        cfg = TrainConfig(self.learning_rate, self.epochs, min(self.batch_size, len(X)),
                          self.random_state)
        self.network_ = train_classifier(X, y_enc, net, cfg)
        self.loss_curve_ = list(self.network_.train_losses)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return predict_proba(self.network_, X)

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class PCAReducer(TransformerMixin, BaseEstimator):
    """Covariance-eigendecomposition PCA with a deterministic sign convention."""

    def __init__(self, n_components=4):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.pca_ = fit_pca(X, self.n_components)
        self.n_features_in_ = X.shape[1]
        self.components_ = self.pca_.components
        self.mean_ = self.pca_.mean
        self.explained_variance_ = self.pca_.eigenvalues
        return self

    def transform(self, X):
        check_is_fitted(self, "pca_")
        return project(self.pca_, check_array(X, dtype=np.float64))

    def inverse_transform(self, Z):
        check_is_fitted(self, "pca_")
        return reconstruct(self.pca_, check_array(Z, dtype=np.float64))


class GaussianNoise(TransformerMixin, BaseEstimator):
    """Adds i.i.d. ``Normal(0, sigma^2)`` noise; stateless apart from the seed."""

    def __init__(self, sigma=0.1, random_state=None):
        self.sigma = sigma
        self.random_state = random_state

    def fit(self, X, y=None):
        self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        rng = np.random.default_rng(self.random_state)
        return X + self.sigma * rng.standard_normal(X.shape)


class PrivacyEmbedding(TransformerMixin, BaseEstimator):
    """Client-side feature extractor of the split network.

    ``fit(X, y, groups)`` trains a classifier on ``y`` (the approved label),
    optionally fine-tunes it with the Siamese objective using ``groups`` as
    identities, and fits PCA on the features at ``split``.  ``transform``
    returns what a client would transmit; ``predict``/``predict_proba`` run
    the server half on those features.
    """

    def __init__(self, split=4, n_components=4, sigma=0.0, siamese=True,
                 hidden_layer_sizes=(32, 16), learning_rate=0.1, epochs=60, batch_size=32,
                 siamese_epochs=40, siamese_learning_rate=0.05, margin=1.0,
                 lambda_contrastive=1.0, random_state=0):
        self.split = split
        self.n_components = n_components
        self.sigma = sigma
        self.siamese = siamese
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.siamese_epochs = siamese_epochs
        self.siamese_learning_rate = siamese_learning_rate
        self.margin = margin
        self.lambda_contrastive = lambda_contrastive
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        net = init_network([X.shape[1], *self.hidden_layer_sizes, len(self.classes_)],
                           seed=self.random_state)
        net = train_classifier(X, y_enc, net, TrainConfig(
            self.learning_rate, self.epochs, min(self.batch_size, len(X)), self.random_state))
        tuned = None
        if self.siamese:
            if groups is None:
                raise ValueError("Siamese fine-tuning needs identity labels in `groups`")
            _, g_enc = np.unique(np.asarray(groups), return_inverse=True)
            data = Dataset(X, y_enc, g_enc, len(self.classes_), int(g_enc.max()) + 1)
            tuned = finetune_siamese(net, data, SiameseConfig(
                split_layer=self.split - 1, margin=self.margin,
                lambda_contrastive=self.lambda_contrastive, epochs=self.siamese_epochs,
                learning_rate=self.siamese_learning_rate, seed=self.random_state))
        front = "siamese" if tuned is not None else "simple"
        models = EmbeddingModels.build(net, tuned, self.split, X)
        self.split_model_ = models.split_model(front)
        self.pca_ = models.fit_pca(front, self.n_components, X) if self.n_components else None
        return self

    def transform(self, X, seed=None):
        check_is_fitted(self, "split_model_")
        X = check_array(X, dtype=np.float64)
        if seed is None:
            seed = self.random_state
        return extract_features(self.split_model_, self.pca_, self.sigma, X, seed)

    def predict_proba(self, Z):
        check_is_fitted(self, "split_model_")
        return classify_features(self.split_model_, self.pca_, check_array(Z, dtype=np.float64))

    def predict(self, Z):
        return self.classes_[self.predict_proba(Z).argmax(axis=1)]
