"""
Utility checks for the REDDA toolkit.
Contains reusable argument validation functions shared by all estimators.
"""

import math
from typing import Iterable, Sequence

import numpy as np

from src.errors import ValidationError


def check_gamma(gamma: float) -> float:
    """Check that a trimming level lies in [0, 0.5).

    Args:
        gamma: Requested trimming level

    Returns:
        float: The trimming level as a float

    Raises:
        ValidationError: If gamma is not a finite number in [0, 0.5)
    """
    try:
        value = float(gamma)
    except (TypeError, ValueError):
        raise ValidationError(f"Trimming level must be a number, got {gamma!r}")
    if not math.isfinite(value) or value < 0.0 or value >= 0.5:
        raise ValidationError(f"Trimming level must lie in [0, 0.5), got {value}")
    return value


def check_probability(prob: float) -> float:
    """Check that a probability lies strictly inside (0, 1).

    Raises:
        ValidationError: If prob is outside the open unit interval
    """
    value = float(prob)
    if not 0.0 < value < 1.0:
        raise ValidationError(f"Probability must lie in (0, 1), got {prob}")
    return value


def check_positive_int(value: int, name: str) -> int:
    """Check that a count argument is a positive integer."""
    if isinstance(value, bool) or int(value) != value or int(value) <= 0:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_symmetric(matrix: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Check that a matrix is square and symmetric.

    Args:
        matrix: Candidate covariance matrix
        atol: Absolute tolerance, scaled by the largest entry

    Returns:
        np.ndarray: The matrix as a float array

    Raises:
        ValidationError: If the matrix is not square, not finite or not symmetric
    """
    sigma = np.asarray(matrix, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValidationError(f"Expected a square matrix, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ValidationError("Matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(sigma))) if sigma.size else 1.0)
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=atol * scale):
        raise ValidationError("Matrix is not symmetric")
    return sigma


def check_dimension(actual: int, expected: int, what: str) -> None:
    """Check that a dimension matches the fitted model.

    Raises:
        ValidationError: If the dimensions differ
    """
    if actual != expected:
        raise ValidationError(f"Dimension mismatch for {what}: expected {expected}, got {actual}")


def check_feature_indices(indices: Iterable[int], n_features: int) -> Sequence[int]:
    """Check that 0-based feature indices are unique and in range."""
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValidationError(f"Duplicate feature indices: {idx}")
    for i in idx:
        if i < 0 or i >= n_features:
            raise ValidationError(f"Feature index {i + 1} outside 1..{n_features}")
    return idx


def check_subset_size(p: int, n_features: int) -> int:
    """Check that a relevant-subset size satisfies 1 <= p <= P."""
    p = check_positive_int(p, "Subset size p")
    if p > n_features:
        raise ValidationError(f"Subset size p={p} exceeds the number of variables P={n_features}")
    return p
