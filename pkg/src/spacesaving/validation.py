"""Input validation helpers and the package's exception types."""

import numbers

import numpy as np


class SketchError(ValueError):
    """Base class for invalid arguments to sketch operations."""


class InvalidCapacityError(SketchError):
    pass


class InvalidWeightError(SketchError):
    pass


class InvalidThresholdError(SketchError):
    pass


class InvalidInputError(SketchError):
    pass


class SchemaError(SketchError):
    """A named column is missing from an input file."""

    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {column!r}{where}")


class RowError(SketchError):
    """A row of an input file could not be parsed."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigError(SketchError):
    """An experiment config is invalid; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


def check_capacity(m, name="capacity"):
    if isinstance(m, bool) or not isinstance(m, numbers.Integral) or m < 1:
        raise InvalidCapacityError(f"{name} must be a positive integer, got {m!r}")
    return int(m)


def check_weight(w):
    try:
        w = float(w)
    except (TypeError, ValueError):
        raise InvalidWeightError(f"weight must be a positive number, got {w!r}") from None
    if not np.isfinite(w) or w <= 0:
        raise InvalidWeightError(f"weight must be a positive number, got {w!r}")
    return w


def check_weights(sample_weight, n):
    w = np.asarray(sample_weight, dtype=np.float64).ravel()
    if w.shape[0] != n:
        raise InvalidWeightError(
            f"sample_weight has {w.shape[0]} entries for {n} rows")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidWeightError("all weights must be finite and positive")
    return w


def check_threshold(phi):
    if not (0.0 < phi <= 1.0):
        raise InvalidThresholdError(f"threshold must lie in (0, 1], got {phi!r}")
    return float(phi)


def check_level(level):
    if not (0.0 < level < 1.0):
        raise InvalidInputError(f"confidence level must lie in (0, 1), got {level!r}")
    return float(level)


def check_items(X):
    """Return the rows of ``X`` as a 1-d array (object dtype for non-integer ids)."""
    if isinstance(X, (str, bytes)):
        raise InvalidInputError("expected a sequence of items, got a single string")
    if isinstance(X, np.ndarray):
        arr = X
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
    else:
        X = list(X)
        if all(isinstance(x, numbers.Integral) and not isinstance(x, bool) for x in X):
            try:
                arr = np.array(X, dtype=np.int64)
            except OverflowError:
                arr = np.empty(len(X), dtype=object)
                arr[:] = [int(x) for x in X]
        else:
            if any(isinstance(x, (float, complex, bool, np.floating, np.bool_)) for x in X):
                raise InvalidInputError("item identifiers must be integers, strings or bytes")
            arr = np.empty(len(X), dtype=object)
            arr[:] = X
    if arr.ndim != 1:
        raise InvalidInputError(f"expected a 1-d stream of items, got shape {arr.shape}")
    if arr.dtype.kind in "fcb":
        raise InvalidInputError("item identifiers must be integers, strings or bytes")
    if arr.dtype.kind in "US":
        arr = arr.astype(object)
    return arr


def check_random_state(seed):
    """Normalize a seed into a non-negative int (None draws fresh entropy)."""
    if seed is None:
        return int(np.random.SeedSequence().entropy % (1 << 64))
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, np.uint64)[0])
    if isinstance(seed, numbers.Integral) and not isinstance(seed, bool):
        return int(seed) % (1 << 64)
    raise InvalidInputError(f"random_state must be an int or None, got {seed!r}")


def rng_words(seed, *path):
    """xoshiro256** state words derived from ``seed`` and an optional spawn path."""
    ss = np.random.SeedSequence([int(seed) % (1 << 64), *path])
    words = ss.generate_state(4, np.uint64)
    if not words.any():
        words[0] = 1
    return words
