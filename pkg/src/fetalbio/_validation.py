"""Input validation helpers for array-shaped estimator inputs."""

import numpy as np

from .exceptions import DomainError


def check_pairs(X, name="X"):
    """Coerce landmark pairs to a finite float array of shape ``(n, 2, 2)``.

    Accepts ``(n, 2, 2)`` arrays, ``(n, 4)`` rows of ``x1, y1, x2, y2``, or a
    sequence of :class:`~fetalbio.core.LandmarkPair`.
    """
    if len(X) and hasattr(X[0], "first"):
        X = [p.as_array() for p in X]
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 4:
        X = X.reshape(-1, 2, 2)
    if X.ndim != 3 or X.shape[1:] != (2, 2):
        raise DomainError(f"{name} must have shape (n, 2, 2) or (n, 4), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError(f"{name} contains non-finite values")
    return X


def check_points(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DomainError(f"{name} must have shape (n, 2), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError(f"{name} contains non-finite values")
    return X


def check_image(image, name="image"):
    image = np.asarray(image)
    if image.ndim != 2:
        raise DomainError(f"{name} must be a 2D grayscale array, got shape {image.shape}")
    image = image.astype(np.float64, copy=False)
    if not np.all(np.isfinite(image)):
        raise DomainError(f"{name} contains non-finite values")
    return image


def check_positive(value, name):
    if value is None or not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_random_state(seed):
    """Return a ``numpy.random.Generator`` from a seed, generator or ``None``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
