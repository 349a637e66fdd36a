"""Linear self-attention forward pass and the pretrained-optimal weights."""

from __future__ import annotations

import numpy as np

from .config import WeightMatrix, as_matrix


def predict(W, sample) -> float:
    """y_hat = x_q^T W X^T y with X the ICL rows stacked over the retrieved rows."""
    W = as_matrix(W)
    X, y = sample.X, sample.y
    if X.shape[0] < 1:
        raise ValueError("prompt has no context rows")
    if W.shape != (X.shape[1], X.shape[1]) or sample.x_q.shape != (X.shape[1],):
        raise ValueError(f"dimension mismatch: W {W.shape}, X {X.shape}, x_q {sample.x_q.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError(f"label vector has shape {y.shape}, expected ({X.shape[0]},)")
    return float(sample.x_q @ (W @ (X.T @ y)))


def predict_batch(W, X: np.ndarray, y: np.ndarray, x_q: np.ndarray) -> np.ndarray:
    """Vectorized predict over a leading batch axis."""
    W = as_matrix(W)
    Xty = np.einsum("bki,bk->bi", X, y)
    return np.einsum("bi,ij,bj->b", x_q, W, Xty)


def attention_readout(W, sample) -> float:
    """The same prediction read off the full block-parameterized attention product.

    Builds the (m+n+1) x (d+1) prompt matrix P (rows [x_i, y_i], query row [x_q, 0]),
    W_Q W_K^T = diag(W, 0), W_V = e_{d+1} e_{d+1}^T, and returns the bottom-right
    entry of P (W_Q W_K^T) P^T P W_V.
    """
    W = as_matrix(W)
    d = W.shape[0]
    X = sample.X
    P = np.zeros((X.shape[0] + 1, d + 1))
    P[:-1, :d] = X
    P[:-1, d] = sample.y
    P[-1, :d] = sample.x_q
    QK = np.zeros((d + 1, d + 1))
    QK[:d, :d] = W
    V = np.zeros((d + 1, d + 1))
    V[d, d] = 1.0
    return float((P @ QK @ P.T @ P @ V)[-1, -1])


def adapt_weight(W_bar, m: int, m_prime: int) -> WeightMatrix:
    """Rescale a weight learned at context length ``m`` for use at length ``m_prime``."""
    if m < 1 or m_prime < 1:
        raise ValueError("context lengths must be >= 1")
    if not isinstance(W_bar, WeightMatrix):
        W_bar = WeightMatrix(W_bar)
    return W_bar.scaled(m / m_prime)


def pretrained_weight(m: int, d: int) -> WeightMatrix:
    """Isotropic pretraining optimum I / (m + d + 1) at context length ``m``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return WeightMatrix.isotropic(1.0 / (m + d + 1), d)


def optimal_pretrained_weight(m: int, n: int, d: int) -> WeightMatrix:
    """W* = m / ((m + d + 1)(m + n)) I: the pretrained optimum rescaled to m + n context rows."""
    if m < 1:
        raise ValueError("m must be >= 1 (no pretrained weight without ICL examples)")
    if n < 0:
        raise ValueError("n must be >= 0")
    return WeightMatrix.isotropic(m / ((m + d + 1) * (m + n)), d)
