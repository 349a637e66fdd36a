"""Closed-form Gaussian moment kernels and two independent oracles for them.

All expectations are over ``x ~ N(0, I_d)`` (and ``r ~ N(0, delta2 I_d)`` for the
mixed kernels).  The oracles are a perfect-matching enumeration (Isserlis) and
plain Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORACLE_DIM = 8


def _square(A, label="matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{label} must be square, got shape {A.shape}")
    return A


def _pair(A, B):
    A, B = _square(A, "A"), _square(B, "B")
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def fourth_moment_vec(W) -> np.ndarray:
    """E[x x^T W x x^T] = W + W^T + tr(W) I."""
    W = _square(W, "W")
    return W + W.T + np.trace(W) * np.eye(W.shape[0])


def fourth_moment_design(W, m: int) -> np.ndarray:
    """E[X^T X W X^T X] for X with ``m`` i.i.d. standard-normal rows."""
    W = _square(W, "W")
    if m < 1:
        raise ValueError("m must be >= 1")
    return m * m * W + m * W.T + m * np.trace(W) * np.eye(W.shape[0])


def scalar_fourth_moment(A, B) -> float:
    """E[x^T A x x^T B x] = tr(A (B + B^T)) + tr(A) tr(B)."""
    A, B = _pair(A, B)
    return float(np.trace(A @ (B + B.T)) + np.trace(A) * np.trace(B))


def mixed_fourth_moments(W, delta2: float) -> tuple[np.ndarray, ...]:
    """The five mixed fourth-order kernels in x and r, in this order:

    1. E[r r^T W^T x x^T W r r^T]
    2. E[r x^T W^T x x^T W x r^T]
    3. E[x r^T W^T x x^T W r x^T]
    4. E[r x^T W^T x x^T W r x^T]
    5. E[r r^T W^T x x^T W x x^T]
    """
    W = _square(W, "W")
    if delta2 < 0:
        raise ValueError("delta2 must be >= 0")
    eye = np.eye(W.shape[0])
    WtW = W.T @ W
    t = np.trace(W)
    d4 = delta2 * delta2
    k1 = 2 * d4 * WtW + d4 * np.trace(WtW) * eye
    k2 = delta2 * (np.trace(W @ W) + np.trace(WtW) + t * t) * eye
    k3 = 2 * delta2 * (W @ W.T) + delta2 * np.trace(WtW) * eye
    k45 = delta2 * (WtW + W.T @ W.T + t * W.T)
    return k1, k2, k3, k45, k45.copy()


def sixth_moment(A, B) -> np.ndarray:
    """E[x x^T A x x^T B x x^T] as the fifteen-term sum of matrix products and traces."""
    A, B = _pair(A, B)
    tA, tB = np.trace(A), np.trace(B)
    eye = np.eye(A.shape[0])
    return (
        A @ B + A @ B.T + A.T @ B + A.T @ B.T
        + B.T @ A + B.T @ A.T + B @ A + B @ A.T
        + tB * (A + A.T) + tA * (B + B.T)
        + (tA * tB + np.trace(A @ B.T) + np.trace(A @ B)) * eye
    )


def perfect_matchings(items):
    """All ways to split ``items`` into unordered pairs."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, partner in enumerate(rest):
        for tail in perfect_matchings(rest[:i] + rest[i + 1:]):
            yield [(first, partner)] + tail


@lru_cache(maxsize=None)
def _sixth_moment_tensor(d: int) -> np.ndarray:
    """T[i,k,l,m,n,j] = E[x_i x_k x_l x_m x_n x_j] summed over the 15 matchings of 6 slots."""
    matchings = list(perfect_matchings(range(6)))
    assert len(matchings) == 15
    eye = np.eye(d)
    T = np.zeros((d,) * 6)
    letters = "abcdef"
    for matching in matchings:
        # each pair contributes a Kronecker delta between its two slots
        subs = ",".join(letters[a] + letters[b] for a, b in matching)
        T += np.einsum(f"{subs}->{letters}", *([eye] * 3))
    return T


def matching_count(order: int = 6) -> int:
    return sum(1 for _ in perfect_matchings(range(order)))


def isserlis_sixth_oracle(A, B) -> np.ndarray:
    """E[x x^T A x x^T B x x^T] entrywise from the Isserlis pairing expansion."""
    A, B = _pair(A, B)
    d = A.shape[0]
    if d > MAX_ORACLE_DIM:
        raise ValueError(f"pairing oracle is capped at d <= {MAX_ORACLE_DIM}, got {d}")
    T = _sixth_moment_tensor(d)
    # T_ij = sum_{k,l,m,n} A_kl B_mn E[x_i x_k x_l x_m x_n x_j]
    return np.einsum("kl,mn,iklmnj->ij", A, B, T)


# Monte Carlo ------------------------------------------------------------------


@dataclass(frozen=True)
class MomentResult:
    value: np.ndarray | float
    order: int
    source: str
    stderr: np.ndarray | float | None = None

    @property
    def degenerate(self) -> bool:
        """True when the standard error is undefined (fewer than two draws)."""
        return self.stderr is None or bool(np.any(np.isnan(self.stderr)))


def _chunk_sizes(trials, chunk):
    full, rest = divmod(trials, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _kernel_samples(kernel, params, rng, size):
    """Return per-draw values of the requested monomial, shape (size, ...)."""
    d = params["d"]
    if kernel == "fourth_vec":
        W = params["W"]
        x = rng.standard_normal((size, d))
        s = np.einsum("bi,ij,bj->b", x, W, x)
        return x[:, :, None] * x[:, None, :] * s[:, None, None]
    if kernel == "fourth_design":
        W, m = params["W"], params["m"]
        X = rng.standard_normal((size, m, d))
        G = np.einsum("bki,bkj->bij", X, X)
        return G @ W @ G
    if kernel == "scalar_fourth":
        A, B = params["A"], params["B"]
        x = rng.standard_normal((size, d))
        return np.einsum("bi,ij,bj->b", x, A, x) * np.einsum("bi,ij,bj->b", x, B, x)
    if kernel == "sixth":
        A, B = params["A"], params["B"]
        x = rng.standard_normal((size, d))
        s = np.einsum("bi,ij,bj->b", x, A, x) * np.einsum("bi,ij,bj->b", x, B, x)
        return x[:, :, None] * x[:, None, :] * s[:, None, None]
    if kernel == "third_vec":
        W = params["W"]
        x = rng.standard_normal((size, d))
        return x * np.einsum("bi,ij,bj->b", x, W, x)[:, None]
    if kernel.startswith("mixed"):
        W, delta2 = params["W"], params["delta2"]
        x = rng.standard_normal((size, d))
        r = np.sqrt(delta2) * rng.standard_normal((size, d))
        Wt = W.T

        def outer(a, b):
            return a[:, :, None] * b[:, None, :]

        def quad(a, M, b):
            return np.einsum("bi,ij,bj->b", a, M, b)

        # every kernel is u v^T W^T x x^T W w z^T = (v^T W^T x)(x^T W w) u z^T
        u, v, w, z = {
            "mixed1": (r, r, r, r),
            "mixed2": (r, x, x, r),
            "mixed3": (x, r, r, x),
            "mixed4": (r, x, r, x),
            "mixed5": (r, r, x, x),
        }[kernel]
        s = quad(v, Wt, x) * quad(x, W, w)
        return outer(u, z) * s[:, None, None]
    raise ValueError(f"unknown kernel descriptor {kernel!r}")


MC_KERNELS = ("fourth_vec", "fourth_design", "scalar_fourth", "sixth", "third_vec",
              "mixed1", "mixed2", "mixed3", "mixed4", "mixed5")

_ORDERS = {"third_vec": 3, "sixth": 6}


def mc_moment(kernel: str, params: dict, trials: int, stream: np.random.Generator,
              chunk: int = 100_000) -> MomentResult:
    """Sample-mean estimate of a moment kernel with per-entry standard error.

    ``params`` carries the matrices the kernel needs (``W``, ``A``, ``B``, ``m``,
    ``delta2``); ``d`` is inferred from them.
    """
    if kernel not in MC_KERNELS:
        raise ValueError(f"unknown kernel descriptor {kernel!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = {k: (np.asarray(v, dtype=float) if k in ("W", "A", "B") else v) for k, v in params.items()}
    params["d"] = next(params[k] for k in ("W", "A") if k in params).shape[0]

    count, mean, m2 = 0, None, None
    for size in _chunk_sizes(trials, chunk):
        s = _kernel_samples(kernel, params, stream, size)
        c_mean = s.mean(axis=0)
        c_m2 = ((s - c_mean) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = size, c_mean, c_m2
        else:
            # Chan et al. pairwise combination of (count, mean, M2)
            delta = c_mean - mean
            total = count + size
            mean = mean + delta * size / total
            m2 = m2 + c_m2 + delta**2 * count * size / total
            count = total
    if count > 1:
        stderr = np.sqrt(m2 / (count - 1) / count)
    else:
        stderr = np.full_like(np.asarray(mean, dtype=float), np.nan)
    if np.ndim(mean) == 0:
        mean, stderr = float(mean), float(stderr)
    return MomentResult(mean, _ORDERS.get(kernel, 4), "monte-carlo", stderr)


def within_stderr(estimate: MomentResult, target, sigmas: float = 4.0, atol: float = 1e-12) -> bool:
    """True when every entry of ``target`` is within ``sigmas`` standard errors of the estimate."""
    diff = np.abs(np.asarray(estimate.value) - np.asarray(target))
    return bool(np.all(diff <= sigmas * np.asarray(estimate.stderr) + atol))


def pairing_oracle_result(A, B) -> MomentResult:
    return MomentResult(isserlis_sixth_oracle(A, B), 6, "pairing-oracle")


def closed_form_result(A, B) -> MomentResult:
    return MomentResult(sixth_moment(A, B), 6, "closed-form")
