"""Prompt samplers for pretraining, test-time and retrieval-augmented contexts."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import (
    DistanceProportional,
    ExperimentConfig,
    Mixture,
    NoiseRegime,
    TaskVector,
    Uniform,
    validate,
)


def delta_schedule(regime: NoiseRegime, n: int) -> np.ndarray:
    """Offset variances delta_i^2 for i = 1..n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if isinstance(regime, Uniform):
        return np.full(n, float(regime.delta2))
    i = np.arange(1, n + 1, dtype=float)
    return regime.gamma2 * i**regime.q


@dataclass(frozen=True)
class RagNoise:
    """Per-example label noise: Gaussian with ``variance``, or a two-branch mixture.

    For the mixture, ``p_small`` is the probability of the small branch.
    """

    variance: float | None = None
    p_small: float | None = None
    small: float | None = None
    large: float | None = None

    @property
    def mean_variance(self) -> float:
        if self.variance is not None:
            return self.variance
        return self.p_small * self.small + (1.0 - self.p_small) * self.large


def small_noise_probability(delta2_i, q_tilde: float):
    return (1.0 + np.asarray(delta2_i, dtype=float)) ** (-q_tilde)


def rag_noise_params(regime: NoiseRegime, delta2_i: float, sigma2: float) -> RagNoise:
    if delta2_i < 0:
        raise ValueError("delta2_i must be >= 0")
    if isinstance(regime, Uniform):
        return RagNoise(variance=float(regime.sigma2_rag))
    if isinstance(regime, DistanceProportional):
        return RagNoise(variance=float(regime.gamma1 * sigma2 * delta2_i))
    if isinstance(regime, Mixture):
        p = float(small_noise_probability(delta2_i, regime.q_tilde))
        return RagNoise(p_small=p, small=regime.c_s * sigma2, large=regime.c_l * sigma2)
    raise ValueError(f"unknown regime {regime!r}")


def rag_noise_variances(regime: NoiseRegime, schedule: np.ndarray, sigma2: float) -> np.ndarray:
    """Expected RAG label-noise variance per index (mixture averaged over its branch)."""
    schedule = np.asarray(schedule, dtype=float)
    if isinstance(regime, Uniform):
        return np.full(schedule.shape, float(regime.sigma2_rag))
    if isinstance(regime, DistanceProportional):
        return regime.gamma1 * sigma2 * schedule
    p = small_noise_probability(schedule, regime.q_tilde)
    return (p * regime.c_s + (1.0 - p) * regime.c_l) * sigma2


@dataclass(frozen=True)
class PromptSample:
    X_icl: np.ndarray
    X_rag: np.ndarray
    offsets: np.ndarray
    eps_icl: np.ndarray
    eps_rag: np.ndarray
    y: np.ndarray
    x_q: np.ndarray
    y_q: float
    eps_q: float
    beta: TaskVector
    delta2_schedule: np.ndarray
    small_branch: np.ndarray | None = None

    @property
    def X(self) -> np.ndarray:
        return np.vstack([self.X_icl, self.X_rag])

    @property
    def eps(self) -> np.ndarray:
        return np.concatenate([self.eps_icl, self.eps_rag])

    @property
    def m(self) -> int:
        return self.X_icl.shape[0]

    @property
    def n(self) -> int:
        return self.X_rag.shape[0]


@dataclass(frozen=True)
class PromptBatch:
    """``size`` independent test prompts stacked along the leading axis."""

    X: np.ndarray        # (size, m + n, d), ICL rows first
    offsets: np.ndarray  # (size, n, d)
    eps: np.ndarray      # (size, m + n)
    y: np.ndarray        # (size, m + n)
    x_q: np.ndarray      # (size, d)
    eps_q: np.ndarray    # (size,)
    y_q: np.ndarray      # (size,)
    small_branch: np.ndarray | None  # (size, n) for the mixture regime
    m: int

    @property
    def size(self) -> int:
        return self.X.shape[0]


def sample_test_batch(config: ExperimentConfig, stream: np.random.Generator, size: int) -> PromptBatch:
    """Draw ``size`` test prompts; the draw order is fixed so a stream reproduces a batch exactly."""
    m, n, d = config.m, config.n, config.d
    sigma = np.sqrt(config.sigma2)
    beta = config.beta.beta
    schedule = delta_schedule(config.regime, n)

    x_icl = stream.standard_normal((size, m, d))
    x_q = stream.standard_normal((size, d))
    offsets = stream.standard_normal((size, n, d)) * np.sqrt(schedule)[None, :, None]
    eps_icl = sigma * stream.standard_normal((size, m))

    small = None
    z = stream.standard_normal((size, n))
    if isinstance(config.regime, Mixture):
        u = stream.random((size, n))
        small = u < small_noise_probability(schedule, config.regime.q_tilde)[None, :]
        sd = np.where(small, np.sqrt(config.regime.c_s * config.sigma2), np.sqrt(config.regime.c_l * config.sigma2))
        eps_rag = sd * z
    else:
        eps_rag = np.sqrt(rag_noise_variances(config.regime, schedule, config.sigma2))[None, :] * z
    eps_q = sigma * stream.standard_normal(size)

    X = np.concatenate([x_icl, x_q[:, None, :] + offsets], axis=1)
    # stored offsets are recomputed so that X_rag - x_q reproduces them bit-for-bit
    offsets = X[:, m:] - x_q[:, None, :]
    eps = np.concatenate([eps_icl, eps_rag], axis=1)
    y = X @ beta + eps
    y_q = x_q @ beta + eps_q
    return PromptBatch(X=X, offsets=offsets, eps=eps, y=y, x_q=x_q, eps_q=eps_q, y_q=y_q,
                       small_branch=small, m=m)


def sample_test_prompt(config: ExperimentConfig, stream: np.random.Generator) -> PromptSample:
    validate(config)
    b = sample_test_batch(config, stream, 1)
    m = config.m
    return PromptSample(
        X_icl=b.X[0, :m],
        X_rag=b.X[0, m:],
        offsets=b.offsets[0],
        eps_icl=b.eps[0, :m],
        eps_rag=b.eps[0, m:],
        y=b.y[0],
        x_q=b.x_q[0],
        y_q=float(b.y_q[0]),
        eps_q=float(b.eps_q[0]),
        beta=config.beta,
        delta2_schedule=delta_schedule(config.regime, config.n),
        small_branch=None if b.small_branch is None else b.small_branch[0],
    )


def sample_pretrain_prompt(m: int, d: int, sigma2: float, stream: np.random.Generator) -> PromptSample:
    """Pretraining prompt: fresh task beta_pt ~ N(0, I), no retrieved rows."""
    if m < 1:
        raise ValueError("m must be >= 1")
    sigma = np.sqrt(sigma2)
    beta = TaskVector.from_stream(d, stream)
    X = stream.standard_normal((m, d))
    x_q = stream.standard_normal(d)
    eps = sigma * stream.standard_normal(m)
    eps_q = float(sigma * stream.standard_normal())
    return PromptSample(
        X_icl=X,
        X_rag=np.zeros((0, d)),
        offsets=np.zeros((0, d)),
        eps_icl=eps,
        eps_rag=np.zeros(0),
        y=X @ beta.beta + eps,
        x_q=x_q,
        y_q=float(x_q @ beta.beta + eps_q),
        eps_q=eps_q,
        beta=beta,
        delta2_schedule=np.zeros(0),
    )


def dump_samples(samples, path) -> None:
    """Write prompts as CSV, one row per example: sample, role, index, x_1..x_d, y, eps, delta2."""
    samples = list(samples)
    d = samples[0].x_q.shape[0] if samples else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "role", "index"] + [f"x{j + 1}" for j in range(d)] + ["y", "eps", "delta2"])
        for s_idx, s in enumerate(samples):
            for i in range(s.m):
                w.writerow([s_idx, "icl", i + 1, *map(repr, s.X_icl[i].tolist()),
                            repr(float(s.y[i])), repr(float(s.eps_icl[i])), ""])
            for i in range(s.n):
                w.writerow([s_idx, "rag", i + 1, *map(repr, s.X_rag[i].tolist()),
                            repr(float(s.y[s.m + i])), repr(float(s.eps_rag[i])),
                            repr(float(s.delta2_schedule[i]))])
            w.writerow([s_idx, "query", 0, *map(repr, s.x_q.tolist()),
                        repr(s.y_q), repr(s.eps_q), ""])
