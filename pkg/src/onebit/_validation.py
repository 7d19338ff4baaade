"""Input validation helpers shared by the solvers and estimators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["as_generator", "check_system", "check_signs", "check_fraction", "spawn"]


def as_generator(seed) -> np.random.Generator:
    """Turn ``None``, an int, a ``SeedSequence`` or a ``Generator`` into a
    ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.RandomState):
        return np.random.default_rng(seed.randint(0, 2**31 - 1))
    return np.random.default_rng(seed)


def spawn(master_seed, *keys) -> np.random.Generator:
    """Independent stream for ``(master_seed, *keys)``."""
    return np.random.default_rng([int(master_seed)] + [int(k) for k in keys])


def check_system(C, b):
    C = check_array(C, dtype=float, ensure_min_samples=1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != C.shape[0]:
        raise ValueError(f"rhs has {b.shape[0]} entries, matrix has {C.shape[0]} rows")
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs contains non-finite values")
    return C, b


def check_signs(signs, n_rows):
    signs = np.asarray(signs)
    if signs.ndim == 1:
        signs = signs[:, None]
    if signs.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} rows of signs, got {signs.shape[0]}")
    if not np.all(np.isin(signs, (-1, 1))):
        raise ValueError("signs must be +1 or -1")
    return signs.astype(np.int8)


def check_fraction(value, name, low=0.0, high=1.0, closed=False):
    if not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number")
    ok = low <= value <= high if closed else low < value < high
    if not ok:
        raise ValueError(f"{name}={value} outside {'[' if closed else '('}{low}, {high}{']' if closed else ')'}")
    return float(value)
