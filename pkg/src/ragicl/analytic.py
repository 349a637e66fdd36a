"""Exact population loss of the linear-attention predictor with retrieved examples.

The loss splits as ``variance_err + bias_err + sigma2`` where

    variance_err = E (x_q^T W X^T eps)^2
    bias_err     = beta^T M beta,   M = E (I - W G)^T x_q x_q^T (I - W G),  G = X^T X.

``M`` is written on the basis

    (W + W^T), tr(W) I, W^2 + (W^2)^T, W W^T, W^T W, tr(W)(W + W^T),
    (tr(W)^2 + tr(W^2)) I, tr(W^T W) I

with scalar coefficients depending on m, n and the offset variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import moments
from .config import (
    DistanceProportional,
    ExperimentConfig,
    Mixture,
    Uniform,
    as_matrix,
    validate,
)
from .datagen import delta_schedule, rag_noise_variances, small_noise_probability
from .predictor import optimal_pretrained_weight


@dataclass(frozen=True)
class LossBreakdown:
    variance_err: float
    bias_err: float
    irreducible: float
    total: float
    source: str = "analytic"
    stderr: dict | None = None

    @classmethod
    def analytic(cls, variance_err, bias_err, sigma2) -> "LossBreakdown":
        variance_err, bias_err, sigma2 = float(variance_err), float(bias_err), float(sigma2)
        return cls(variance_err, bias_err, sigma2, variance_err + bias_err + sigma2)


@dataclass(frozen=True)
class BiasKernel:
    M: np.ndarray
    coefficients: dict = field(default_factory=dict)
    m: int = 0
    n: int = 0
    schedule: np.ndarray | None = None

    def __call__(self, beta) -> float:
        beta = np.asarray(getattr(beta, "beta", beta), dtype=float)
        return float(beta @ self.M @ beta)


def _traces(W):
    return float(np.trace(W.T @ W)), float(np.trace(W @ W)), float(np.trace(W))


def _rag_variance(W, m, sigma2, schedule, rag_vars) -> float:
    tWtW, tW2, tW = _traces(W)
    schedule = np.asarray(schedule, dtype=float)
    per_index = (1.0 + schedule) * tWtW + tW2 + tW * tW
    return m * sigma2 * tWtW + float(np.sum(np.asarray(rag_vars) * per_index))


def variance_error_general(W, m, n, delta2, sigma2, sigma2_rag) -> float:
    """E (x_q^T W X^T eps)^2 under uniform retrieval noise."""
    if min(delta2, sigma2, sigma2_rag) < 0:
        raise ValueError("variances must be >= 0")
    W = as_matrix(W)
    tWtW, tW2, tW = _traces(W)
    return (m * sigma2 + (1.0 + delta2) * n * sigma2_rag) * tWtW + n * sigma2_rag * (tW2 + tW * tW)


def dpn_variance_error(W, m, sigma2, gamma1, schedule) -> float:
    """Variance error when each retrieved label has noise gamma1 * sigma2 * delta_i^2."""
    schedule = np.asarray(schedule, dtype=float)
    return _rag_variance(as_matrix(W), m, sigma2, schedule, gamma1 * sigma2 * schedule)


def mixture_variance_error(W, m, sigma2, c_s, c_l, q_tilde, schedule) -> float:
    """Variance error under the distance-weighted small/large noise mixture."""
    if c_l < c_s:
        raise ValueError(f"c_l must be >= c_s, got c_s={c_s}, c_l={c_l}")
    schedule = np.asarray(schedule, dtype=float)
    p = small_noise_probability(schedule, q_tilde)
    rag_vars = (p * c_s + (1.0 - p) * c_l) * sigma2
    return _rag_variance(as_matrix(W), m, sigma2, schedule, rag_vars)


def _kernel_from_coefficients(W, coef) -> np.ndarray:
    d = W.shape[0]
    eye = np.eye(d)
    W2 = W @ W
    tW = np.trace(W)
    return (
        eye
        - coef["linear"] * (W + W.T)
        - coef["trace"] * tW * eye
        + coef["c1"] * (W2 + W2.T)
        + coef["c2"] * (W @ W.T)
        + coef["c3"] * (W.T @ W)
        + coef["c4"] * tW * (W + W.T)
        + coef["c5"] * (tW * tW + np.trace(W2)) * eye
        + coef["c6"] * np.trace(W.T @ W) * eye
    )


def uniform_coefficients(m, n, delta2) -> dict:
    d2, d4 = delta2, delta2 * delta2
    c1 = n * n * (2 + d2) + n * (m + d2)
    return {
        "linear": n * d2 + 2 * n + m,
        "trace": 2 * n,
        "c1": c1,
        "c2": 2 * n * (n + d2),
        "c3": m * m + m + m * n * (2 + 2 * d2) + n * n * (2 + 2 * d2 + d4) + n * (2 * d2 + d4),
        "c4": c1,
        "c5": n * n + n * d2,
        "c6": m + n * n + n * (2 * d2 + d4),
    }


def nonuniform_coefficients(m, schedule) -> dict:
    """Coefficients for per-index offsets, through s = sum delta_i^2 and S = sum delta_i^4."""
    schedule = np.asarray(schedule, dtype=float)
    n = schedule.size
    s = float(np.sum(schedule))
    S = float(np.sum(schedule**2))
    c1 = m * n + 2 * n * n + (n + 1) * s
    return {
        "linear": m + 2 * n + s,
        "trace": 2 * n,
        "c1": c1,
        "c2": 2 * n * n + 2 * s,
        "c3": m * m + m + 2 * m * n + 2 * m * s + 2 * n * n + (2 * n + 2) * s + s * s + S,
        "c4": c1,
        "c5": n * n + s,
        "c6": m + n * n + 2 * s + S,
        "s_delta": s,
        "S_delta": S,
    }


def bias_kernel_uniform(W, m, n, delta2) -> BiasKernel:
    W = as_matrix(W)
    coef = uniform_coefficients(m, n, delta2)
    return BiasKernel(_kernel_from_coefficients(W, coef), coef, m, n, np.full(n, float(delta2)))


def assemble_bias_kernel(W, m, schedule) -> np.ndarray:
    """Build M = M1 - M2 - M3 + M4 directly from the Gaussian moment kernels.

    G = G0 + sum_i G_i with G0 = X_icl^T X_icl and G_i = (x_q + r_i)(x_q + r_i)^T.
    Terms odd in any r_i vanish; independent r_i, r_j enter only through delta_i^2 I.
    """
    W = as_matrix(W)
    schedule = np.asarray(schedule, dtype=float)
    n = schedule.size
    d = W.shape[0]
    eye = np.eye(d)
    s = float(np.sum(schedule))
    S = float(np.sum(schedule**2))

    F4 = moments.fourth_moment_vec(W)          # E x x^T W x x^T (symmetric)
    S6 = moments.sixth_moment(W.T, W)          # E x x^T W^T x x^T W x x^T
    WtW = W.T @ W

    M2 = m * W + n * F4 + s * W                # E x_q x_q^T W G
    M4 = np.zeros((d, d))
    if m > 0:
        M4 += moments.fourth_moment_design(WtW, m)          # G0 ... G0
    M42 = m * W.T @ (n * F4 + s * W)                        # sum_i G0 ... G_i
    M4 += M42 + M42.T
    if n > 0:
        k1, k2, k3, k4, k5 = moments.mixed_fourth_moments(W, 1.0)
        # sum_i G_i ... G_i: k1 scales with delta_i^4, the rest with delta_i^2
        M4 += n * S6 + S * k1 + s * (k2 + k3 + k4 + k4.T + k5 + k5.T)
        # sum_{i != j} G_i ... G_j
        M4 += n * (n - 1) * S6 + (n - 1) * s * (F4 @ W + W.T @ F4) + (s * s - S) * WtW
    return eye - M2 - M2.T + M4


def bias_kernel_nonuniform(W, m, schedule) -> BiasKernel:
    W = as_matrix(W)
    schedule = np.asarray(schedule, dtype=float)
    return BiasKernel(assemble_bias_kernel(W, m, schedule), nonuniform_coefficients(m, schedule),
                      m, schedule.size, schedule)


def population_loss_uniform(W, config: ExperimentConfig) -> LossBreakdown:
    r = config.regime
    if not isinstance(r, Uniform):
        raise ValueError("population_loss_uniform needs the uniform regime")
    var = variance_error_general(W, config.m, config.n, r.delta2, config.sigma2, r.sigma2_rag)
    bias = bias_kernel_uniform(W, config.m, config.n, r.delta2)(config.beta)
    return LossBreakdown.analytic(var, bias, config.sigma2)


def regime_loss(W, config: ExperimentConfig) -> LossBreakdown:
    """Analytic loss for any noise regime."""
    validate(config)
    r = config.regime
    if isinstance(r, Uniform):
        return population_loss_uniform(W, config)
    schedule = delta_schedule(r, config.n)
    if isinstance(r, DistanceProportional):
        var = dpn_variance_error(W, config.m, config.sigma2, r.gamma1, schedule)
    elif isinstance(r, Mixture):
        var = mixture_variance_error(W, config.m, config.sigma2, r.c_s, r.c_l, r.q_tilde, schedule)
    else:
        raise ValueError(f"unknown regime {r!r}")
    bias = bias_kernel_nonuniform(W, config.m, schedule)(config.beta)
    return LossBreakdown.analytic(var, bias, config.sigma2)


def regime_variance_at_optimum(config: ExperimentConfig, n: int) -> float:
    """Variance error at W*(m, n, d), without building the bias kernel.  Cheap for large n."""
    r = config.regime
    W = optimal_pretrained_weight(config.m, n, config.d)
    schedule = delta_schedule(r, n)
    return _rag_variance(W.entries, config.m, config.sigma2, schedule,
                         rag_noise_variances(r, schedule, config.sigma2))


# isotropic closed form ----------------------------------------------------------


def isotropic_P(m, n, d, delta2) -> float:
    dl, dl2 = delta2, delta2 * delta2
    return (
        6 * n * n + 4 * n * dl + m * m + m + (4 + 2 * dl) * m * n
        + n * n * (2 + 4 * dl + dl2) + n * (2 * dl + dl2)
        + 2 * d * n * n * (2 + dl) + 2 * d * n * (m + dl)
        + d * (d + 1) * (n * n + n * dl) + d * m + d * n * n + d * n * (2 * dl + dl2)
    )


def isotropic_loss(m, n, d, delta2, sigma2, sigma2_rag, beta_norm2) -> LossBreakdown:
    """Loss at W* = m / ((m + d + 1)(m + n)) I under uniform retrieval noise."""
    if m < 1:
        raise ValueError("m must be >= 1")
    D = (m + d + 1) * (m + n)
    var = (m**3 * d * sigma2 + d * m * m * n * (2 + delta2 + d) * sigma2_rag) / D**2
    bias = beta_norm2 * (
        1.0
        - 2.0 * m * (n * delta2 + 2 * n + m + n * d) / D
        + isotropic_P(m, n, d, delta2) * m * m / D**2
    )
    return LossBreakdown.analytic(var, bias, sigma2)


def isotropic_bias_limit(m, d, delta2, beta_norm2) -> float:
    """lim_{n -> inf} of the isotropic bias error at fixed m."""
    dl = delta2
    # coefficient of n^2 in P
    p_nn = 6 + (2 + 4 * dl + dl * dl) + 2 * d * (2 + dl) + d * (d + 1) + d
    k = m + d + 1
    return beta_norm2 * (1.0 - 2.0 * m * (dl + 2 + d) / k + p_nn * m * m / k**2)


# optimal number of retrieved examples ---------------------------------------------


@dataclass(frozen=True)
class OptimalNCoefficients:
    A: float
    B: float
    C: float
    omega1: float
    omega2: float
    tau30: float
    tau22: float
    tau21: float
    tau12: float
    tau2: float

    def approx_loss(self, m, n) -> float:
        """(A + B n + C n^2) / (m + n)^2, the leading-order loss used to seed the search."""
        return (self.A + self.B * n + self.C * n * n) / (m + n) ** 2


@dataclass(frozen=True)
class OptimalN:
    n_star: int
    n_real: float
    coefficients: OptimalNCoefficients
    loss_at_zero: float
    loss_at_star: float
    improvement: float
    fallback: bool = False


def optimal_n_coefficients(m, d, sigma2, sigma2_rag, beta_norm2) -> OptimalNCoefficients:
    w1, w2 = d, d * d
    t30, t22, t21, t12, t2 = d, d * d, -2 * d * d, -2 * d * d, d * d
    A = m**3 * w1 * sigma2 + beta_norm2 * t30 * m**3 + beta_norm2 * t2 * m * m
    B = m * m * (w2 * sigma2_rag + beta_norm2 * t21)
    C = beta_norm2 * (t22 * m * m + t12 * m + t2)
    return OptimalNCoefficients(A, B, C, w1, w2, t30, t22, t21, t12, t2)


def optimal_n(m, d, sigma2, sigma2_rag, beta_norm2, delta2=0.0, grid_max=1024) -> OptimalN:
    """Integer n minimizing the exact isotropic loss, seeded by the stationary point of (A + Bn + Cn^2)/(m+n)^2."""
    coef = optimal_n_coefficients(m, d, sigma2, sigma2_rag, beta_norm2)

    def loss(k):
        return isotropic_loss(m, k, d, delta2, sigma2, sigma2_rag, beta_norm2).total

    denom = coef.B - 2 * coef.C * m
    n_real = (coef.B * m - 2 * coef.A) / denom if denom != 0 else math.nan
    fallback = not math.isfinite(n_real) or abs(denom) < 1e-12 * max(abs(coef.B), abs(coef.C * m), 1.0)

    if fallback:
        candidates = range(0, grid_max + 1)
    else:
        n_real = max(n_real, 0.0)
        lo, hi = math.floor(n_real), math.ceil(n_real)
        candidates = sorted({0, *range(max(lo - 2, 0), hi + 3)})
    cache = {k: loss(k) for k in candidates}
    best = min(cache, key=lambda k: (cache[k], k))

    # walk downhill in case the seed was off by more than the window
    def value(k):
        if k not in cache:
            cache[k] = loss(k)
        return cache[k]

    while value(best + 1) < value(best):
        best += 1
    while best > 0 and value(best - 1) < value(best):
        best -= 1

    l0 = value(0)
    return OptimalN(int(best), float(n_real), coef, l0, value(best), l0 - value(best), fallback)
