"""scikit-learn wrappers around a frozen backbone.

``SaSClassifier`` fine-tunes one ablation variant on top of the backbone;
``BackboneFeatures`` exposes the frozen class-token features as a
transformer so any sklearn model can act as the probe.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .sas import SasConfig
from .tensor import Rng
from .training import TrainConfig, predict_logits, train_loop
from .validation import as_images, check_frozen_backbone, check_images_labels
from .variants import VariantKind, build_variant, trainable_params


class SaSClassifier(ClassifierMixin, BaseEstimator):
    """Parameter-efficient classifier on a frozen backbone.

    Parameters
    ----------
    backbone : Backbone
        Frozen encoder; never modified by ``fit``.
    variant : str
        One of ``linear_probe``, ``bias_only``, ``shared_only``,
        ``shared_plus_bias``, ``specific_only``, ``full_sas``.
    d_prime, r, r_prime, M : int
        Shared bottleneck width, hypernet rank, layer-input rank and number
        of hypernets. Ignored by variants without those modules.
    activation : str
        Nonlinearity of the shared module, ``gelu`` or ``relu``.
    lr, beta1, beta2, weight_decay, warmup_frac, epochs, batch_size, precision
        AdamW / cosine-schedule recipe, see :class:`TrainConfig`.
    random_state : int
        Seeds adapter initialisation and batch order.

    Attributes
    ----------
    classes_ : ndarray
    model_ : VariantModel
    loss_curve_ : list of float
    n_adapter_params_, n_head_params_ : int
    """

    def __init__(self, backbone=None, variant="full_sas", d_prime=8, r=4, r_prime=8, M=6,
                 activation="gelu", lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=1e-4,
                 warmup_frac=0.1, epochs=100, batch_size=32, precision="float32", random_state=0):
        self.backbone = backbone
        self.variant = variant
        self.d_prime = d_prime
        self.r = r
        self.r_prime = r_prime
        self.M = M
        self.activation = activation
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.epochs = epochs
        self.batch_size = batch_size
        self.precision = precision
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                           weight_decay=self.weight_decay, warmup_frac=self.warmup_frac,
                           epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.random_state, precision=self.precision)

    def sas_config(self) -> SasConfig | None:
        kind = VariantKind.parse(self.variant)
        if not (kind.uses_shared or kind.uses_specific):
            return None
        cfg = self.backbone.config
        return SasConfig(d=cfg.d, L=cfg.L, d_prime=self.d_prime, r=self.r,
                         r_prime=self.r_prime, M=self.M, activation=self.activation)

    def fit(self, X, y):
        backbone = check_frozen_backbone(self.backbone)
        images, y = check_images_labels(X, y, backbone.config)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        cfg = self.train_config()
        self.model_ = build_variant(self.variant, backbone, Rng(self.random_state).spawn(1),
                                    len(self.classes_), self.sas_config())
        self.loss_curve_ = train_loop(self.model_, self.model_.trainable_parameters(),
                                      images, encoded, cfg, stream=2)
        self.n_adapter_params_, self.n_head_params_ = trainable_params(self.model_)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, as_images(X, self.backbone.config))

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class BackboneFeatures(TransformerMixin, BaseEstimator):
    """Frozen class-token features, (N, d). ``fit`` only validates."""

    def __init__(self, backbone=None, batch_size=256):
        self.backbone = backbone
        self.batch_size = batch_size

    def fit(self, X, y=None):
        backbone = check_frozen_backbone(self.backbone)
        as_images(X, backbone.config)
        self.n_features_out_ = backbone.config.d
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_out_")
        return predict_logits(self.backbone, as_images(X, self.backbone.config), self.batch_size)
