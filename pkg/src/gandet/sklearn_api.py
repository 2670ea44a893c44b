"""scikit-learn style wrappers: transformers for degradations, estimators
for the detector and the robustifying trainers.

These compose with the wider ecosystem (get_params/set_params/clone,
Pipeline-compatible transforms) while delegating the actual work to the
functional core.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import detector as det
from .config import ExperimentConfig
from .degrade import BLUR_RADII, DistortionPool, apply_random_level
from .metrics import predict_split, voc_ap
from .rng import substream
from .train import TrainConfig, TrainValData, train_baseline, train_finetune, train_gando


def check_image_batch(X, image_size=None, channels=3):
    """Validate (N,H,W,C) float images in [0,1]; returns a float32 array."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[3] != channels:
        raise ValueError(f"expected images shaped (N,H,W,{channels}), got {X.shape}")
    if image_size is not None and X.shape[1:3] != (image_size, image_size):
        raise ValueError(f"expected {image_size}x{image_size} images, got {X.shape[1:3]}")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if X.min() < -1e-6 or X.max() > 1 + 1e-6:
        raise ValueError("pixel values must lie in [0,1]")
    return X.astype(np.float32, copy=False)


def check_label_list(y, n_images, num_classes=3):
    """Validate a list of (k,5) [class, cx, cy, w, h] label arrays."""
    if len(y) != n_images:
        raise ValueError(f"got {len(y)} label arrays for {n_images} images")
    out = []
    for i, lab in enumerate(y):
        lab = np.asarray(lab, dtype=float).reshape(-1, 5)
        if lab.size and (lab[:, 0].min() < 0 or lab[:, 0].max() >= num_classes):
            raise ValueError(f"labels[{i}]: class ids must be in [0,{num_classes})")
        if lab.size and (lab[:, 3:].min() <= 0 or lab[:, 1:].max() > 1 + 1e-6):
            raise ValueError(f"labels[{i}]: boxes must be normalized (cx,cy,w,h)")
        out.append(lab)
    return out


class ImageDegrader(BaseEstimator, TransformerMixin):
    """Stateless transformer applying one distortion family to image batches.

    ``level=None`` draws a uniform level per image (seeded); an integer
    pins the 1-based level index.
    """

    def __init__(self, family="gaussian", level=None, seed=0):
        self.family = family
        self.level = level
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def _pool(self):
        return DistortionPool.from_name(self.family)

    def transform(self, X):
        X = check_image_batch(X)
        pool = self._pool()
        out = np.empty_like(X)
        for i in range(len(X)):
            rng = substream(self.seed, "degrader", i)
            if self.level is None:
                out[i] = apply_random_level(X[i], pool, rng)[0]
            else:
                out[i] = pool.apply(X[i], self.level, rng)
        return out


class ShapeTinyDetector(BaseEstimator):
    """fit/predict detector over small RGB scenes.

    ``fit(X, y)`` trains on clean images with the task loss;
    ``predict(X)`` returns one (m,6) array [class, score, cx, cy, w, h] per
    image; ``score(X, y)`` is mAP at IoU 0.5.
    """

    def __init__(self, image_size=96, channels=(12, 24, 36, 48), num_classes=3,
                 learning_rate=1e-3, batch_size=16, max_epochs=20, patience=4,
                 seed=0, conf_threshold=0.05, nms_iou=0.45, max_dets=100,
                 validation_fraction=0.15):
        self.image_size = image_size
        self.channels = channels
        self.num_classes = num_classes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.max_dets = max_dets
        self.validation_fraction = validation_fraction

    def _detector_config(self):
        return det.DetectorConfig(image_size=self.image_size,
                                  channels=tuple(self.channels),
                                  num_classes=self.num_classes)

    def _split(self, X, y):
        n_val = max(2, int(round(len(X) * self.validation_fraction)))
        n_val += (len(X) - n_val) % 2  # keep the train part even-sized
        if n_val >= len(X):
            raise ValueError("not enough images to carve out a validation split")
        return TrainValData(X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:])

    def fit(self, X, y):
        X = check_image_batch(X, self.image_size)
        y = check_label_list(y, len(X), self.num_classes)
        cfg = self._detector_config()
        tcfg = TrainConfig(seed=self.seed, batch_size=min(self.batch_size, len(X) // 2 * 2),
                           max_epochs=self.max_epochs, lr=self.learning_rate,
                           patience_finetune=self.patience)
        self.params_, self.log_ = train_baseline(cfg, tcfg, self._split(X, y),
                                                 init_seed=self.seed)
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit first")

    def predict(self, X):
        self._check_fitted()
        X = check_image_batch(X, self.image_size)
        dets = predict_split(self.params_, self.config_, X, self.conf_threshold,
                             self.nms_iou, self.max_dets)
        return [dets[i] for i in range(len(X))]

    def score(self, X, y):
        """mAP at IoU 0.5 (classes without ground truth excluded)."""
        self._check_fitted()
        X = check_image_batch(X, self.image_size)
        y = check_label_list(y, len(X), self.num_classes)
        dets = predict_split(self.params_, self.config_, X, self.conf_threshold,
                             self.nms_iou, self.max_dets)
        _, m = voc_ap(dets, {i: y[i] for i in range(len(y))}, self.num_classes)
        return m if m is not None else 0.0


class RobustifiedDetector(BaseEstimator):
    """Re-trains a fitted detector for robustness to a distortion family.

    ``method="gando"`` uses the adversarial trainer (frozen copy of the base
    detector as reference, single-layer discriminator over raw outputs);
    ``method="finetune"`` continues with the task loss on the same 1:1
    clean/degraded batches.
    """

    def __init__(self, base, method="gando", family="defocus", learning_rate=1e-5,
                 d_learning_rate=None, adversarial_weight=1.0, batch_size=16,
                 max_epochs=12, patience=10, d_period=2, freeze_after=None, seed=0):
        self.base = base
        self.method = method
        self.family = family
        self.learning_rate = learning_rate
        self.d_learning_rate = d_learning_rate
        self.adversarial_weight = adversarial_weight
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.d_period = d_period
        self.freeze_after = freeze_after
        self.seed = seed

    def fit(self, X, y):
        if self.method not in ("gando", "finetune"):
            raise ValueError(f"unknown method {self.method!r}")
        if not hasattr(self.base, "params_"):
            raise NotFittedError("base detector must be fitted first")
        cfg = self.base.config_
        X = check_image_batch(X, cfg.image_size)
        y = check_label_list(y, len(X), cfg.num_classes)
        data = self.base._split(X, y)
        tcfg = TrainConfig(
            seed=self.seed,
            batch_size=min(self.batch_size, len(data.train_images) // 2 * 2),
            max_epochs=self.max_epochs,
            lam=self.adversarial_weight,
            lr=self.learning_rate,
            lr_d=self.d_learning_rate or self.learning_rate,
            patience_finetune=self.patience,
            patience_gando=self.patience,
            d_period=self.d_period,
            freeze_after_layer=self.freeze_after,
        )
        pool = DistortionPool.from_name(self.family)
        trainer = train_gando if self.method == "gando" else train_finetune
        self.params_, self.log_ = trainer(cfg, tcfg, self.base.params_, data, pool)
        self.config_ = cfg
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit first")
        X = check_image_batch(X, self.config_.image_size)
        dets = predict_split(self.params_, self.config_, X)
        return [dets[i] for i in range(len(X))]

    def score(self, X, y):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit first")
        X = check_image_batch(X, self.config_.image_size)
        y = check_label_list(y, len(X), self.config_.num_classes)
        dets = predict_split(self.params_, self.config_, X)
        _, m = voc_ap(dets, {i: y[i] for i in range(len(y))}, self.config_.num_classes)
        return m if m is not None else 0.0
