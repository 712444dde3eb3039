"""Input validation helpers used across the package."""

import numpy as np

from .exceptions import DataStateError, DesignError


def check_design(A, name="X", n_rows=None):
    """Return ``A`` as a finite 2-D float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if n_rows is not None and A.shape[0] != n_rows:
        raise ValueError(f"{name} has {A.shape[0]} rows, expected {n_rows}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def check_counts(y, allow_missing=False, name="y"):
    """Return ``y`` as a 1-D float array of nonnegative integers.

    Missing responses are encoded as NaN and are only accepted when
    ``allow_missing`` is true.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        y = y.ravel()
    miss = np.isnan(y)
    if miss.any() and not allow_missing:
        raise DataStateError(f"{name} contains {int(miss.sum())} missing responses")
    obs = y[~miss]
    if not np.all(np.isfinite(obs)):
        raise ValueError(f"{name} contains infinite values")
    if np.any(obs < 0) or np.any(obs != np.floor(obs)):
        raise ValueError(f"{name} must hold nonnegative integer counts")
    return y


def check_vector(v, length, name):
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != length:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def dependent_columns(A, tol=1e-10):
    """Indices of columns of ``A`` that are linear combinations of earlier ones.

    Greedy left-to-right scan so the reported columns are the later,
    redundant members of each dependent set.
    """
    kept = []
    bad = []
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    for j in range(A.shape[1]):
        trial = A[:, kept + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s.size == 0 or s[-1] <= tol * scale * max(A.shape):
            bad.append(j)
        else:
            kept.append(j)
    return bad


def check_full_rank(A, name="X", columns=None):
    bad = dependent_columns(A)
    if bad:
        labels = [columns[j] if columns is not None else j for j in bad]
        raise DesignError(
            f"{name} is rank deficient; offending columns: {labels}", columns=labels
        )
