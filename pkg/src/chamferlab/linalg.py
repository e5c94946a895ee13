"""Symmetric eigendecomposition with validation.

Backed by LAPACK via numpy.linalg.eigh; eigenvalues are returned in
descending order to match the rest of the codebase.
"""

from __future__ import annotations

import numpy as np


class DimensionError(Exception):
    pass


def sym_eig(a: np.ndarray, tol: float = 1e-10):
    """Eigendecomposition a = V diag(w) V^T for symmetric a.

    Returns (w, V) with w sorted descending and V's columns the matching
    eigenvectors. Raises DimensionError for non-square or asymmetric input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected square matrix, got shape {a.shape}")
    scale = max(1.0, np.abs(a).max())
    if np.abs(a - a.T).max() > tol * scale:
        raise DimensionError("matrix is not symmetric within tolerance")
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    """Matrix square root of a PSD symmetric matrix; tiny negative
    eigenvalues from roundoff are clipped to zero."""
    w, v = sym_eig(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
