"""Parameter sweeps over one axis, written as CSV or JSON tables."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import __version__
from .analytic import optimal_n, regime_loss
from .config import (
    ConfigError,
    ExperimentConfig,
    Mixture,
    Uniform,
    config_to_dict,
    validate,
)
from .montecarlo import estimate_loss
from .predictor import optimal_pretrained_weight

AXES = ("n", "m", "delta2", "q", "q_tilde", "ratio")
INTEGER_AXES = ("n", "m")
MODES = ("analytic", "mc", "both")
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: tuple
    outputs: str = "analytic"
    out_path: str | None = None
    format: str = "csv"
    workers: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown axis {self.axis!r}; expected one of {AXES}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        vals = tuple(float(v) for v in self.values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if self.axis in INTEGER_AXES:
            if any(v != int(v) or v < 0 for v in vals):
                raise ConfigError(f"axis {self.axis} takes non-negative integers")
            vals = tuple(int(v) for v in vals)
        object.__setattr__(self, "values", vals)
        if self.outputs not in MODES:
            raise ConfigError(f"unknown mode {self.outputs!r}; expected one of {MODES}")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}; expected one of {FORMATS}")


@dataclass(frozen=True)
class ResultRow:
    axis: str
    axis_value: float
    regime: str
    seed: int
    m: int
    n: int
    variance_err: float | None = None
    bias_err: float | None = None
    irreducible: float | None = None
    total: float | None = None
    mc_variance_err: float | None = None
    mc_bias_err: float | None = None
    mc_total: float | None = None
    mc_variance_stderr: float | None = None
    mc_bias_stderr: float | None = None
    mc_total_stderr: float | None = None
    n_star: int | None = None


ROW_FIELDS = tuple(f.name for f in fields(ResultRow))


def point_config(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """The config for one sweep point."""
    r = base.regime
    if axis == "n":
        cfg = base.with_(n=int(value))
    elif axis == "m":
        cfg = base.with_(m=int(value))
    elif axis == "delta2":
        if not isinstance(r, Uniform):
            raise ConfigError("axis delta2 needs the uniform regime")
        cfg = base.with_(regime=replace(r, delta2=float(value)))
    elif axis == "q":
        if isinstance(r, Uniform):
            raise ConfigError("axis q needs the dpn or mixture regime")
        cfg = base.with_(regime=replace(r, q=float(value)))
    elif axis == "q_tilde":
        if not isinstance(r, Mixture):
            raise ConfigError("axis q_tilde needs the mixture regime")
        cfg = base.with_(regime=replace(r, q_tilde=float(value)))
    elif axis == "ratio":
        # fixed budget c = m + n; value is the retrieved share n / c
        if not 0.0 <= value <= 1.0:
            raise ConfigError("ratio values must lie in [0, 1]")
        budget = base.m + base.n
        n = int(round(value * budget))
        cfg = base.with_(m=budget - n, n=n)
    else:
        raise ConfigError(f"unknown axis {axis!r}")
    validate(cfg)
    if cfg.m < 1:
        raise ConfigError(f"sweep point {axis}={value} leaves no ICL examples (m = 0)")
    return cfg


def evaluate_point(spec: SweepSpec, value) -> ResultRow:
    cfg = point_config(spec.base, spec.axis, value)
    W = optimal_pretrained_weight(cfg.m, cfg.n, cfg.d)
    row = dict(axis=spec.axis, axis_value=value, regime=cfg.regime.name, seed=cfg.seed, m=cfg.m, n=cfg.n)
    if spec.outputs in ("analytic", "both"):
        an = regime_loss(W, cfg)
        row.update(variance_err=an.variance_err, bias_err=an.bias_err, irreducible=an.irreducible, total=an.total)
    if spec.outputs in ("mc", "both"):
        est = estimate_loss(W, cfg)
        row.update(
            irreducible=est.irreducible,
            mc_variance_err=est.variance_err,
            mc_bias_err=est.bias_err,
            mc_total=est.total,
            mc_variance_stderr=est.stderr["variance"],
            mc_bias_stderr=est.stderr["bias"],
            mc_total_stderr=est.stderr["total"],
        )
    if isinstance(cfg.regime, Uniform):
        r = cfg.regime
        row["n_star"] = optimal_n(cfg.m, cfg.d, cfg.sigma2, r.sigma2_rag, cfg.beta.norm2, r.delta2).n_star
    return ResultRow(**row)


def _evaluate_many(args):
    spec, values = args
    return [evaluate_point(spec, v) for v in values]


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """Evaluate every point; rows come back in axis order regardless of worker count."""
    validate(spec.base)
    for v in spec.values:
        point_config(spec.base, spec.axis, v)
    values = list(spec.values)
    k = min(spec.workers, len(values))
    if k <= 1:
        return _evaluate_many((spec, values))
    slices = [values[i::k] for i in range(k)]
    with ProcessPoolExecutor(max_workers=k) as pool:
        results = list(pool.map(_evaluate_many, [(spec, s) for s in slices]))
    rows = [None] * len(values)
    for i, res in enumerate(results):
        rows[i::k] = res
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metadata(spec: SweepSpec) -> dict:
    return {
        "config": config_to_dict(spec.base),
        "sweep": {"axis": spec.axis, "values": [_cell(v) for v in spec.values],
                  "mode": spec.outputs, "format": spec.format},
        "versions": {"ragicl": __version__, "numpy": np.__version__},
        "seed": spec.base.seed,
    }


def render_csv(spec: SweepSpec, rows) -> str:
    buf = io.StringIO()
    meta = metadata(spec)
    for k, v in meta["config"].items():
        buf.write(f"# {k} = {v}\n")
    buf.write(f"# axis = {spec.axis}\n# mode = {spec.outputs}\n")
    buf.write(f"# ragicl = {meta['versions']['ragicl']}\n# numpy = {meta['versions']['numpy']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for row in rows:
        w.writerow([_cell(getattr(row, f)) for f in ROW_FIELDS])
    return buf.getvalue()


def render_json(spec: SweepSpec, rows) -> str:
    payload = {"metadata": metadata(spec), "rows": [asdict(r) for r in rows]}
    return json.dumps(payload, indent=2) + "\n"


def read_csv_rows(text: str) -> list[dict]:
    """Parse a CSV written by render_csv, skipping the comment block."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_sweep(spec: SweepSpec, rows) -> str:
    text = render_csv(spec, rows) if spec.format == "csv" else render_json(spec, rows)
    if spec.out_path:
        with open(spec.out_path, "w", newline="") as fh:
            fh.write(text)
    return text
