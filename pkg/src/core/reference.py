"""
Offline reference separation: one-shot PCA whitening plus batch natural-gradient
Infomax. Used to certify that a synthetic recording is separable at all before
the streaming algorithms are judged on it, and as the oracle in tests.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from src.core.signals import FloatArray
from src.errors import ShapeError
from src.observability.structured_logging import get_logger

logger = get_logger(__name__)


def batch_whiten(
    X: FloatArray, n_components: Optional[int] = None
) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """
    PCA whitening from the sample covariance.

    Args:
        X: Observations (n_ch, N).
        n_components: Keep the leading components only.

    Returns:
        (Z, K, mean) with Z = K (X - mean) and cov(Z) = I.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ShapeError(f"need (n_ch, N >= 2) data, got shape {X.shape}")
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    cov = Xc @ Xc.T / Xc.shape[1]
    s, u = linalg.eigh(cov)
    order = np.argsort(s)[::-1]
    s, u = s[order], u[:, order]
    if n_components is not None:
        s, u = s[:n_components], u[:, :n_components]
    s = np.maximum(s, np.finfo(np.float64).tiny)
    K = (u / np.sqrt(s)).T
    return K @ Xc, K, mean


def batch_infomax(
    Z: FloatArray,
    max_iter: int = 400,
    learning_rate: float = 0.1,
    tol: float = 1e-7,
) -> FloatArray:
    """
    Natural-gradient Infomax on whitened data: W <- W + eta (I - tanh(Y) Y^T / T) W.

    Returns:
        Unmixing matrix W (n, n) for the whitened data.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n, T = Z.shape
    W = np.eye(n)
    eye = np.eye(n)
    for it in range(max_iter):
        Y = W @ Z
        delta = learning_rate * (eye - np.tanh(Y) @ Y.T / T) @ W
        W = W + delta
        step = float(np.linalg.norm(delta))
        if not np.isfinite(step):
            logger.warning("batch_infomax_diverged", iteration=it)
            break
        if step < tol:
            logger.debug("batch_infomax_converged", iterations=it + 1)
            break
    return W


def separate_offline(
    X: FloatArray,
    n_components: Optional[int] = None,
    max_iter: int = 400,
) -> Tuple[FloatArray, FloatArray]:
    """
    Batch separation of a whole recording.

    Returns:
        (sources, unmixing) with sources = unmixing (X - mean).
    """
    Z, K, mean = batch_whiten(X, n_components)
    W = batch_infomax(Z, max_iter=max_iter)
    unmixing = W @ K
    return W @ Z, unmixing


__all__ = ["batch_infomax", "batch_whiten", "separate_offline"]
