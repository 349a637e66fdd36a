"""Oracle battery run by ``ragicl verify`` and ``ragicl moments-check``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import (
    bias_kernel_nonuniform,
    bias_kernel_uniform,
    isotropic_loss,
    population_loss_uniform,
    regime_loss,
    uniform_coefficients,
)
from .config import ExperimentConfig, TaskVector, Uniform, derive_stream
from .moments import (
    fourth_moment_design,
    fourth_moment_vec,
    isserlis_sixth_oracle,
    matching_count,
    mc_moment,
    mixed_fourth_moments,
    scalar_fourth_moment,
    sixth_moment,
    within_stderr,
)
from .montecarlo import estimate_components
from .predictor import optimal_pretrained_weight


@dataclass(frozen=True)
class Tolerances:
    mc_sigmas: float = 4.0
    exact_atol: float = 1e-9
    moment_trials: int = 200_000
    loss_trials: int = 50_000


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def default_grid(seed: int = 0) -> list[ExperimentConfig]:
    grid = []
    for d in (1, 2):
        for n in (0, 4):
            for delta2 in (0.0, 0.1):
                grid.append(ExperimentConfig(m=8, n=n, d=d, sigma2=0.25,
                                             regime=Uniform(delta2=delta2, sigma2_rag=0.1), seed=seed))
    return grid


def check_pairings() -> CheckResult:
    k = matching_count(6)
    return CheckResult("pairing-count", k == 15, f"{k} perfect matchings of 6 indices")


def check_sixth_moment(tol: Tolerances, seed: int = 0, per_dim: int = 20) -> CheckResult:
    rng = derive_stream(seed, 10_001)
    worst = 0.0
    for d in range(1, 6):
        for _ in range(per_dim):
            A, B = rng.standard_normal((2, d, d))
            worst = max(worst, float(np.max(np.abs(sixth_moment(A, B) - isserlis_sixth_oracle(A, B)))))
    return CheckResult("sixth-moment-vs-pairings", worst <= tol.exact_atol, f"max abs diff {worst:.3e}")


def check_fourth_moments_mc(tol: Tolerances, seed: int = 0, d: int = 2) -> list[CheckResult]:
    rng = derive_stream(seed, 10_002)
    W = rng.standard_normal((d, d))
    A, B = rng.standard_normal((2, d, d))
    delta2 = 0.3
    cases = [
        ("fourth_vec", {"W": W}, fourth_moment_vec(W)),
        ("fourth_design", {"W": W, "m": 3}, fourth_moment_design(W, 3)),
        ("scalar_fourth", {"A": A, "B": B}, scalar_fourth_moment(A, B)),
        ("sixth", {"A": A, "B": B}, sixth_moment(A, B)),
    ]
    for i, k in enumerate(mixed_fourth_moments(W, delta2), 1):
        cases.append((f"mixed{i}", {"W": W, "delta2": delta2}, k))
    out = []
    for j, (kernel, params, target) in enumerate(cases):
        est = mc_moment(kernel, params, tol.moment_trials, derive_stream(seed, 10_100 + j))
        z = np.max(np.abs(np.asarray(est.value) - target) / np.maximum(np.asarray(est.stderr), 1e-300))
        ok = within_stderr(est, target, tol.mc_sigmas)
        out.append(CheckResult(f"moment-mc[{kernel}]", ok, f"max |z| {z:.2f}"))
    return out


def check_icl_reduction(tol: Tolerances, m: int = 8, d: int = 3) -> CheckResult:
    c = uniform_coefficients(m, 0, 0.0)
    ident = (c["c1"] == 0 and c["c2"] == 0 and c["c4"] == 0 and c["c5"] == 0
             and c["c3"] == m * m + m and c["c6"] == m)
    beta = np.arange(1.0, d + 1)
    worst = 0.0
    for w in (0.01, 0.1, 1.0 / (m + d + 1)):
        M = bias_kernel_uniform(w * np.eye(d), m, 0, 0.0).M
        scalar = (1 - 2 * m * w + (m * m + m + m * d) * w * w) * beta @ beta
        worst = max(worst, abs(beta @ M @ beta - scalar))
    return CheckResult("icl-reduction", ident and worst <= tol.exact_atol,
                       f"coefficient identity {'holds' if ident else 'broken'}, max diff {worst:.3e}")


def check_isotropic(tol: Tolerances, seed: int = 0, count: int = 20) -> CheckResult:
    rng = derive_stream(seed, 10_003)
    worst = 0.0
    for _ in range(count):
        m, n, d = int(rng.integers(1, 40)), int(rng.integers(0, 40)), int(rng.integers(1, 6))
        delta2, s2, s2r = rng.uniform(0, 1, 3)
        beta = TaskVector(rng.standard_normal(d))
        cfg = ExperimentConfig(m, n, d, s2, Uniform(delta2, s2r), beta)
        general = population_loss_uniform(optimal_pretrained_weight(m, n, d), cfg).total
        iso = isotropic_loss(m, n, d, delta2, s2, s2r, beta.norm2).total
        worst = max(worst, abs(general - iso) / abs(general))
    return CheckResult("isotropic-vs-general", worst <= tol.exact_atol, f"max rel diff {worst:.3e}")


def check_nonuniform_consistency(tol: Tolerances, seed: int = 0) -> CheckResult:
    rng = derive_stream(seed, 10_004)
    worst = 0.0
    for d, m, n in ((1, 4, 3), (2, 8, 5), (3, 5, 7)):
        W = rng.standard_normal((d, d))
        delta2 = float(rng.uniform(0, 1))
        a = bias_kernel_uniform(W, m, n, delta2).M
        b = bias_kernel_nonuniform(W, m, np.full(n, delta2)).M
        worst = max(worst, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(a)))))
    return CheckResult("nonuniform-vs-uniform-kernel", worst <= tol.exact_atol, f"max rel diff {worst:.3e}")


def check_loss_mc(config: ExperimentConfig, tol: Tolerances, workers: int = 1) -> CheckResult:
    W = optimal_pretrained_weight(config.m, config.n, config.d)
    an = regime_loss(W, config)
    est = estimate_components(W, config, trials=tol.loss_trials, workers=workers)
    parts = {"total": an.total, "variance": an.variance_err, "bias": an.bias_err, "cross": 0.0}
    zs = {k: (est[k].mean - v) / est[k].stderr if est[k].stderr > 0 else 0.0 for k, v in parts.items()}
    ok = all(est[k].contains(v, tol.mc_sigmas) for k, v in parts.items())
    label = f"m={config.m} n={config.n} d={config.d} {config.regime.name}"
    if isinstance(config.regime, Uniform):
        label += f" delta2={config.regime.delta2:g}"
    detail = ", ".join(f"z_{k}={z:+.2f}" for k, z in zs.items())
    return CheckResult(f"loss-mc[{label}]", ok, detail)


def moment_checks(tol: Tolerances, seed: int = 0) -> list[CheckResult]:
    return [check_pairings(), check_sixth_moment(tol, seed), *check_fourth_moments_mc(tol, seed)]


def full_battery(configs, tol: Tolerances, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    results = moment_checks(tol, seed)
    results += [check_icl_reduction(tol), check_isotropic(tol, seed), check_nonuniform_consistency(tol, seed)]
    results += [check_loss_mc(c, tol, workers) for c in configs]
    return results
