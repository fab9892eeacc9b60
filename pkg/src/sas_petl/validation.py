"""Input checks for the estimator API."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_X_y

from .backbone import Backbone, BackboneConfig
from .errors import ConfigError, DataError


def as_images(X, config: BackboneConfig) -> np.ndarray:
    """Accept (N, C, H, W) images or their (N, C*H*W) flattening."""
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_2d=False)
    shape = (config.channels, config.image_side, config.image_side)
    if X.ndim == 2 and X.shape[1] == int(np.prod(shape)):
        return X.reshape((len(X),) + shape)
    if X.ndim == 3 and config.channels == 1 and X.shape[1:] == shape[1:]:
        return X[:, None]
    if X.ndim == 4 and X.shape[1:] == shape:
        return X
    raise DataError(f"expected images of shape (N, {shape[0]}, {shape[1]}, {shape[2]}) "
                    f"or (N, {int(np.prod(shape))}), got {X.shape}")


def check_images_labels(X, y, config: BackboneConfig):
    X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32)
    return as_images(X, config), y


def check_frozen_backbone(backbone) -> Backbone:
    if not isinstance(backbone, Backbone):
        raise ConfigError(f"backbone must be a Backbone instance, got {type(backbone).__name__}")
    if not backbone.frozen:
        raise ConfigError("backbone must be frozen before adapting it")
    return backbone
