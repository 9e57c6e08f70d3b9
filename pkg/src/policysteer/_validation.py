"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import ConfigurationError

D_OBS = 10
D_ACT = 3


def check_observation(obs, name="obs"):
    arr = np.asarray(obs, dtype=np.float64)
    if arr.shape != (D_OBS,):
        raise ConfigurationError(f"{name} must have shape ({D_OBS},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_observations(obs, name="observations"):
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != D_OBS or arr.shape[0] == 0:
        raise ConfigurationError(f"{name} must have shape (n, {D_OBS}) with n >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_actions(actions, length=None, name="actions"):
    arr = np.asarray(actions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != D_ACT or arr.shape[0] == 0:
        raise ConfigurationError(f"{name} must have shape (T, {D_ACT}) with T >= 1, got {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ConfigurationError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(seed)


def check_is_fitted(estimator, attribute):
    from sklearn.exceptions import NotFittedError

    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. Call 'fit' first."
        )
