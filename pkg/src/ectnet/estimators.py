"""scikit-learn compatible wrappers.

Samples are 3-d arrays ``(n_samples, n_timesteps, 2)``, so these work inside
a :class:`sklearn.pipeline.Pipeline` such as
``make_pipeline(Decimator(5), ZNormalizer(), ResNet1DClassifier())``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .architectures import build_network, get_spec
from .data import Dataset, NormStats, apply_znorm, compute_norm_stats
from .data.dataset import decimate as _decimate
from .errors import DataError
from .evaluation import predict_crops
from .numerics import Rng
from .training import TrainConfig, train


def _check_scans(X, min_length: int = 1) -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=(np.float32, np.float64))
    if X.ndim != 3 or X.shape[2] != 2:
        raise DataError(f"expected scans shaped (n, T, 2), got {X.shape}")
    if X.shape[1] < min_length:
        raise DataError(f"scans of length {X.shape[1]} are shorter than {min_length}")
    return X


def _as_dataset(X, y=None) -> Dataset:
    n = X.shape[0]
    labels = np.zeros(n, dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
    return Dataset(X, labels, np.zeros((n, 4), dtype=np.int64))


class ZNormalizer(TransformerMixin, BaseEstimator):
    """Per-channel standardisation with statistics from ``fit``."""

    def fit(self, X, y=None):
        X = _check_scans(X)
        self.stats_ = compute_norm_stats(X)
        self.mean_ = self.stats_.mu
        self.scale_ = self.stats_.sigma
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_znorm(_check_scans(X), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        X = _check_scans(X)
        return (X * self.scale_ + self.mean_).astype(X.dtype)

    def get_stats(self) -> NormStats:
        check_is_fitted(self, "stats_")
        return self.stats_


class Decimator(TransformerMixin, BaseEstimator):
    """Keep every ``factor``-th time step (optionally after an anti-alias FIR)."""

    def __init__(self, factor: int = 5, lowpass: bool = False):
        self.factor = factor
        self.lowpass = lowpass

    def fit(self, X, y=None):
        _check_scans(X)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        X = _check_scans(X)
        return _decimate(_as_dataset(X), self.factor, self.lowpass).samples


class ResNet1DClassifier(ClassifierMixin, BaseEstimator):
    """Residual 1-d CNN trained with random crops and scored with multi-crop averaging.

    ``X_val``/``y_val`` passed to :meth:`fit` enable best-on-validation
    selection; without them the final weights are kept.
    """

    def __init__(self, arch: str = "ResNeXt1D-14", epochs: int = 40, batch_size: int = 128,
                 lr_initial: float = 1e-3, lr_schedule=(), n_crops: int = 10, crop_length: int = 224,
                 val_every: int = 1, seed: int = 0, dtype: str = "float32", threads: int = 1):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_initial = lr_initial
        self.lr_schedule = lr_schedule
        self.n_crops = n_crops
        self.crop_length = crop_length
        self.val_every = val_every
        self.seed = seed
        self.dtype = dtype
        self.threads = threads

    def _config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr_initial=self.lr_initial,
                           lr_schedule=tuple(self.lr_schedule), seed=self.seed, checkpoint_every=0,
                           crop_length=self.crop_length, n_crops=self.n_crops, val_every=self.val_every,
                           threads=self.threads)

    def fit(self, X, y, X_val=None, y_val=None):
        cfg = self._config()
        X = _check_scans(X, cfg.crop_length)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        spec = get_spec(self.arch)
        self.classes_ = np.arange(spec.num_classes)
        if y.min() < 0 or y.max() >= spec.num_classes:
            raise DataError(f"labels must be class indices in [0, {spec.num_classes})")
        val = None
        if X_val is not None:
            val = _as_dataset(_check_scans(X_val, cfg.crop_length), y_val)
        net = build_network(spec, rng=self.seed, dtype=np.dtype(self.dtype))
        self.result_ = train(net, _as_dataset(X.astype(self.dtype, copy=False), y), val, cfg)
        self.network_ = self.result_.best_network()
        self.n_features_in_ = 2
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = _check_scans(X, self.crop_length)
        return predict_crops(self.network_, X, self.n_crops, Rng(self.seed).stream("predict"), self.crop_length)

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
