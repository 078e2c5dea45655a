"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils import check_array

from .core import BagDataset

__all__ = ["check_bags", "check_instances"]


def check_bags(X, y=None, k=None) -> BagDataset:
    """Coerce estimator input into a :class:`BagDataset`.

    Accepted forms:

    * a ``BagDataset`` (``y`` must be None);
    * ``X`` of shape (n, k, d) with ``y`` the per-bag label counts;
    * ``X`` of shape (n * k, d), bag-major, with ``k`` given and ``y`` the
      per-bag label counts.
    """
    if isinstance(X, BagDataset):
        if y is not None:
            raise ValueError("y must be None when X is a BagDataset")
        return X
    if y is None:
        raise ValueError("bag label counts y are required")
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim == 2:
        if k is None:
            raise ValueError("k is required when X is given as a flat (n * k, d) array")
        if X.shape[0] % k:
            raise ValueError(f"{X.shape[0]} instances is not a multiple of k={k}")
        X = X.reshape(X.shape[0] // k, k, X.shape[1])
    elif X.ndim != 3:
        raise ValueError(f"X must be 2-D or 3-D, got {X.ndim}-D")
    elif k is not None and X.shape[1] != k:
        raise ValueError(f"X has bags of size {X.shape[1]}, expected k={k}")
    y = check_array(y, ensure_2d=False, dtype=None)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError(f"y must hold one label count per bag ({X.shape[0]}), got shape {y.shape}")
    return BagDataset(X, y)


def check_instances(X, feature_dim=None) -> np.ndarray:
    """Return instance features as an (N, d) float array."""
    if isinstance(X, BagDataset):
        X = X.instances
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(-1, X.shape[-1])
    if feature_dim is not None and X.shape[1] != feature_dim:
        raise ValueError(f"X has {X.shape[1]} features, but the estimator expects {feature_dim}")
    return X
