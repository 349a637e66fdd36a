"""Shared domain types, validation and the seeded random-stream contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np


class ConfigError(ValueError):
    """Raised when an experiment configuration violates an invariant."""


@dataclass(frozen=True)
class Uniform:
    """Every retrieved example shares offset variance ``delta2`` and noise ``sigma2_rag``."""

    delta2: float = 0.0
    sigma2_rag: float = 0.0
    name = "uniform"


@dataclass(frozen=True)
class DistanceProportional:
    """RAG noise variance ``gamma1 * sigma2 * delta_i^2`` with ``delta_i^2 = gamma2 * i**q``."""

    gamma1: float = 1.0
    gamma2: float = 1.0
    q: float = 0.0
    name = "dpn"


@dataclass(frozen=True)
class Mixture:
    """Small noise ``c_s * sigma2`` w.p. ``(1 + delta_i^2)**-q_tilde``, else ``c_l * sigma2``."""

    c_s: float = 0.0
    c_l: float = 1.0
    q_tilde: float = 0.0
    gamma2: float = 1.0
    q: float = 0.0
    name = "mixture"


NoiseRegime = Union[Uniform, DistanceProportional, Mixture]

REGIMES = {cls.name: cls for cls in (Uniform, DistanceProportional, Mixture)}


@dataclass(frozen=True)
class TaskVector:
    beta: np.ndarray
    from_prior: bool = False

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @property
    def norm2(self) -> float:
        return float(self.beta @ self.beta)

    @classmethod
    def ones(cls, d: int) -> "TaskVector":
        return cls(np.ones(d))

    @classmethod
    def from_stream(cls, d: int, stream: np.random.Generator) -> "TaskVector":
        """Draw once from the N(0, I) task prior."""
        return cls(stream.standard_normal(d), from_prior=True)

    def __eq__(self, other):
        if not isinstance(other, TaskVector):
            return NotImplemented
        return self.from_prior == other.from_prior and np.array_equal(self.beta, other.beta)

    def __hash__(self):
        return hash((self.beta.tobytes(), self.from_prior))


@dataclass(frozen=True)
class WeightMatrix:
    """The d x d attention kernel W.  ``w`` is set only for the isotropic variant ``w * I``."""

    entries: np.ndarray
    w: float | None = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"weight matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ConfigError("weight matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def kind(self) -> str:
        return "general" if self.w is None else "isotropic"

    @classmethod
    def isotropic(cls, w: float, d: int) -> "WeightMatrix":
        return cls(w * np.eye(d), w=float(w))

    def scaled(self, factor: float) -> "WeightMatrix":
        if self.w is None:
            return WeightMatrix(factor * self.entries)
        return WeightMatrix.isotropic(factor * self.w, self.d)


def as_matrix(W) -> np.ndarray:
    """Accept a WeightMatrix or anything array-like."""
    if isinstance(W, WeightMatrix):
        return W.entries
    return np.asarray(W, dtype=float)


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n: int
    d: int
    sigma2: float = 0.0
    regime: NoiseRegime = field(default_factory=Uniform)
    beta: TaskVector | None = None
    seed: int = 0
    trials: int = 200_000

    def __post_init__(self):
        if self.beta is None and self.d >= 1:
            object.__setattr__(self, "beta", TaskVector.ones(self.d))

    def with_(self, **changes) -> "ExperimentConfig":
        """Copy with changes; swapping ``d`` without a new beta resets beta to ones."""
        if "d" in changes and "beta" not in changes and changes["d"] != self.d:
            changes["beta"] = TaskVector.ones(changes["d"])
        return replace(self, **changes)


def _nonneg(value, label):
    if not math.isfinite(value) or value < 0:
        raise ConfigError(f"{label} must be a finite value >= 0, got {value}")


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Return ``config`` unchanged if every invariant holds; raise ConfigError on the first violation."""
    for label in ("m", "n", "d", "trials"):
        v = getattr(config, label)
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise ConfigError(f"{label} must be an integer, got {v!r}")
    if config.m < 0 or config.n < 0:
        raise ConfigError("m and n must be >= 0")
    if config.m + config.n < 1:
        raise ConfigError("empty context: m + n must be >= 1")
    if config.d < 1:
        raise ConfigError("d must be >= 1")
    if config.trials < 1:
        raise ConfigError("trials must be >= 1")
    if not 0 <= config.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    _nonneg(config.sigma2, "sigma2")

    r = config.regime
    if isinstance(r, Uniform):
        _nonneg(r.delta2, "delta2")
        _nonneg(r.sigma2_rag, "sigma2_rag")
    elif isinstance(r, DistanceProportional):
        for label in ("gamma1", "gamma2"):
            v = getattr(r, label)
            if not math.isfinite(v) or v <= 0:
                raise ConfigError(f"{label} must be > 0, got {v}")
        _nonneg(r.q, "q")
    elif isinstance(r, Mixture):
        _nonneg(r.c_s, "c_s")
        _nonneg(r.c_l, "c_l")
        if r.c_l < r.c_s:
            raise ConfigError(f"c_l must be >= c_s, got c_s={r.c_s}, c_l={r.c_l}")
        _nonneg(r.q_tilde, "q_tilde")
        if not math.isfinite(r.gamma2) or r.gamma2 <= 0:
            raise ConfigError(f"gamma2 must be > 0, got {r.gamma2}")
        _nonneg(r.q, "q")
    else:
        raise ConfigError(f"unknown noise regime {r!r}")

    if config.beta is None or config.beta.beta.shape != (config.d,):
        raise ConfigError("beta must be a vector of length d")
    if not np.all(np.isfinite(config.beta.beta)):
        raise ConfigError("beta has non-finite entries")
    return config


def derive_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for ``(seed, index)``; identical pairs give identical sequences."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


# key = value serialization ---------------------------------------------------

_REGIME_KEYS = {
    "uniform": ("delta2", "sigma2_rag"),
    "dpn": ("gamma1", "gamma2", "q"),
    "mixture": ("c_s", "c_l", "q_tilde", "gamma2", "q"),
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_dict(config: ExperimentConfig) -> dict[str, str]:
    out = {
        "m": str(config.m),
        "n": str(config.n),
        "d": str(config.d),
        "sigma2": _fmt(float(config.sigma2)),
        "regime": config.regime.name,
    }
    for key in _REGIME_KEYS[config.regime.name]:
        out[key] = _fmt(float(getattr(config.regime, key)))
    out["beta"] = ",".join(repr(float(b)) for b in config.beta.beta)
    if config.beta.from_prior:
        out["beta_from_prior"] = "true"
    out["seed"] = str(config.seed)
    out["trials"] = str(config.trials)
    return out


def dumps_config(config: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_dict(config).items())


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


CONFIG_KEYS = {"m", "n", "d", "sigma2", "regime", "beta", "beta_from_prior", "seed", "trials"} | {
    k for keys in _REGIME_KEYS.values() for k in keys
}


def config_from_dict(values: dict[str, str]) -> ExperimentConfig:
    """Build a config from string values; unknown keys are ignored so callers can share files."""
    try:
        m = int(values.get("m", 8))
        n = int(values.get("n", 0))
        d = int(values.get("d", 2))
        sigma2 = float(values.get("sigma2", 0.25))
        seed = int(values.get("seed", 0))
        trials = int(values.get("trials", 200_000))
        regime_name = values.get("regime", "uniform").strip().lower()
        if regime_name not in REGIMES:
            raise ConfigError(f"unknown regime {regime_name!r}; expected one of {sorted(REGIMES)}")
        cls = REGIMES[regime_name]
        kwargs = {k: float(values[k]) for k in _REGIME_KEYS[regime_name] if k in values}
        regime = cls(**kwargs)

        beta_raw = values.get("beta", "ones").strip().lower()
        if beta_raw == "ones":
            beta = TaskVector.ones(d)
        elif beta_raw == "prior":
            if not 0 <= seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            # stream index 2**63 is reserved for the task draw, away from trial blocks
            beta = TaskVector.from_stream(d, derive_stream(seed, 2**63)) if d >= 1 else None
        else:
            flag = values.get("beta_from_prior", "false").strip().lower() in ("1", "true", "yes")
            beta = TaskVector([float(x) for x in beta_raw.split(",")], from_prior=flag)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(m=m, n=n, d=d, sigma2=sigma2, regime=regime, beta=beta, seed=seed, trials=trials)


def loads_config(text: str) -> ExperimentConfig:
    return config_from_dict(parse_kv(text))
