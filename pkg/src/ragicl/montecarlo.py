"""Monte Carlo estimates of the loss and its components.

Trials are split into fixed-size blocks; block ``b`` draws from
``derive_stream(config.seed, b)``.  Block statistics are merged with a
fixed-order pairwise tree, so the result does not depend on how many
workers evaluated the blocks.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analytic import LossBreakdown, isotropic_loss, regime_loss
from .config import ExperimentConfig, Uniform, as_matrix, derive_stream, validate
from .datagen import sample_test_batch
from .predictor import optimal_pretrained_weight

BLOCK_SIZE = 8192
COMPONENTS = ("total", "variance", "bias", "cross")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    trials: int
    component: str

    def contains(self, value: float, sigmas: float = 4.0, atol: float = 1e-12) -> bool:
        return abs(self.mean - value) <= sigmas * self.stderr + atol


@dataclass(frozen=True)
class _Moments:
    """Running (count, mean, M2) per component, plus the decomposition residual."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, samples: np.ndarray) -> "_Moments":
        mean = samples.mean(axis=1)
        return cls(samples.shape[1], mean, ((samples - mean[:, None]) ** 2).sum(axis=1))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return _Moments(n, mean, m2)


def _tree_reduce(parts):
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def component_samples(W, batch, beta, sigma2) -> np.ndarray:
    """Rows: total, variance, bias, cross, residual = total - variance - bias - sigma2."""
    W = as_matrix(W)
    X, x_q = batch.X, batch.x_q
    Gbeta = np.einsum("bki,bk->bi", X, X @ beta)
    b = x_q @ beta - np.einsum("bi,ij,bj->b", x_q, W, Gbeta)
    Xte = np.einsum("bki,bk->bi", X, batch.eps)
    v = np.einsum("bi,ij,bj->b", x_q, W, Xte)
    e = batch.eps_q
    total = (b - v + e) ** 2
    var = v * v
    bias = b * b
    return np.stack([total, var, bias, -2.0 * b * v, total - var - bias - sigma2])


def _block_sizes(trials, block_size):
    full, rest = divmod(trials, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _run_block(args):
    W, config, index, size = args
    batch = sample_test_batch(config, derive_stream(config.seed, index), size)
    return _Moments.of(component_samples(W, batch, config.beta.beta, config.sigma2))


def _run_blocks(args_list):
    return [_run_block(a) for a in args_list]


def _accumulate(W, config, trials, workers, block_size):
    W = as_matrix(W)
    jobs = [(W, config, i, s) for i, s in enumerate(_block_sizes(trials, block_size))]
    if workers <= 1 or len(jobs) == 1:
        parts = _run_blocks(jobs)
    else:
        # contiguous slices keep per-task overhead low; order is restored by position
        k = min(workers, len(jobs))
        slices = [jobs[i::k] for i in range(k)]
        with ProcessPoolExecutor(max_workers=k) as pool:
            results = list(pool.map(_run_blocks, slices))
        parts = [None] * len(jobs)
        for i, res in enumerate(results):
            parts[i::k] = res
    return _tree_reduce(parts)


def estimate_components(W, config: ExperimentConfig, trials: int | None = None, workers: int = 1,
                        block_size: int = BLOCK_SIZE) -> dict[str, McEstimate]:
    """Monte Carlo means of (b - v + e)^2, v^2, b^2 and -2bv with standard errors.

    b = x_q^T (I - W G) beta, v = x_q^T W X^T eps, e = eps_q; beta is fixed by the config.
    The extra key ``residual`` estimates total - variance - bias - sigma2 on the same draws.
    """
    validate(config)
    trials = config.trials if trials is None else trials
    if trials < 2:
        raise ValueError("need at least 2 trials for a standard error")
    acc = _accumulate(W, config, trials, workers, block_size)
    stderr = np.sqrt(acc.m2 / (acc.count - 1) / acc.count)
    names = COMPONENTS + ("residual",)
    return {name: McEstimate(float(acc.mean[i]), float(stderr[i]), acc.count, name)
            for i, name in enumerate(names)}


def estimate_loss(W, config: ExperimentConfig, trials: int | None = None, workers: int = 1,
                  block_size: int = BLOCK_SIZE) -> LossBreakdown:
    est = estimate_components(W, config, trials, workers, block_size)
    return LossBreakdown(
        variance_err=est["variance"].mean,
        bias_err=est["bias"].mean,
        irreducible=float(config.sigma2),
        total=est["total"].mean,
        source="monte-carlo",
        stderr={k: est[k].stderr for k in ("total", "variance", "bias", "cross", "residual")},
    )


def empirical_argmin_n(config: ExperimentConfig, n_grid, mode: str = "analytic",
                       trials: int | None = None, workers: int = 1) -> int:
    """Grid argmin over n of the loss at W*(m, n, d); ties go to the smaller n."""
    grid = sorted(int(k) for k in n_grid)
    if not grid:
        raise ValueError("empty n grid")
    losses = []
    for k in grid:
        cfg = config.with_(n=k)
        if mode == "analytic":
            r = cfg.regime
            if isinstance(r, Uniform):
                val = isotropic_loss(cfg.m, k, cfg.d, r.delta2, cfg.sigma2, r.sigma2_rag, cfg.beta.norm2).total
            else:
                val = regime_loss(optimal_pretrained_weight(cfg.m, k, cfg.d), cfg).total
        elif mode == "mc":
            val = estimate_loss(optimal_pretrained_weight(cfg.m, k, cfg.d), cfg, trials, workers).total
        else:
            raise ValueError(f"unknown mode {mode!r}")
        losses.append(val)
    return grid[int(np.argmin(losses))]
