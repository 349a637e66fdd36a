"""Command-line front end.

Subcommands: ``verify``, ``moments-check``, ``sweep``, ``optimal-n``.
Settings resolve as flags > config file > built-in defaults.
Exit codes: 0 success, 1 validation error, 2 check failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .analytic import optimal_n
from .config import ConfigError, Uniform, config_from_dict, parse_kv, validate
from .montecarlo import empirical_argmin_n
from .sweep import AXES, FORMATS, MODES, SweepSpec, run_sweep, write_sweep
from .verify import Tolerances, default_grid, full_battery, moment_checks

EXIT_OK, EXIT_INVALID, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which we reserve for failed checks
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def parse_values(text: str) -> list[float]:
    """``a,b,c`` or an inclusive range ``start:stop[:step]``."""
    text = text.strip()
    if not text:
        return []
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ConfigError(f"bad range {text!r}; expected start:stop[:step]")
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0:
                raise ConfigError("range step must be > 0")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(count, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad values {text!r}: {exc}") from exc


def _read_file(path) -> dict[str, str]:
    if path is None:
        return {}
    with open(path) as fh:
        return parse_kv(fh.read())


def _resolve_config(args, file_values):
    values = dict(file_values)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "trials", None) is not None:
        values["trials"] = str(args.trials)
    return validate(config_from_dict(values))


def _tolerances(args, values) -> Tolerances:
    try:
        tol = Tolerances(
            mc_sigmas=float(values.get("mc_sigmas", Tolerances.mc_sigmas)),
            exact_atol=float(values.get("exact_atol", Tolerances.exact_atol)),
            moment_trials=int(values.get("moment_trials", Tolerances.moment_trials)),
            loss_trials=int(values.get("trials", Tolerances.loss_trials)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.trials is not None:
        tol = Tolerances(tol.mc_sigmas, tol.exact_atol, tol.moment_trials, args.trials)
    if tol.mc_sigmas <= 0 or tol.exact_atol < 0 or tol.moment_trials < 2 or tol.loss_trials < 2:
        raise ConfigError("tolerances must be positive and trial counts >= 2")
    return tol


def _report(results, out) -> int:
    for r in results:
        print(r.line(), file=out)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=out)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_verify(args, out=sys.stdout) -> int:
    values = _read_file(args.config)
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    tol = _tolerances(args, values)
    experiment_keys = {"m", "n", "d", "regime"}
    if experiment_keys & values.keys():
        configs = [_resolve_config(args, values)]
    else:
        configs = default_grid(seed)
    return _report(full_battery(configs, tol, seed, args.workers), out)


def cmd_moments_check(args, out=sys.stdout) -> int:
    values = _read_file(args.config)
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    return _report(moment_checks(_tolerances(args, values), seed), out)


def cmd_sweep(args, out=sys.stdout) -> int:
    values = _read_file(args.config)
    base = _resolve_config(args, values)
    axis = args.axis or values.get("axis", "n")
    raw = args.values if args.values is not None else values.get("values", "0:64")
    spec = SweepSpec(
        base=base,
        axis=axis,
        values=tuple(parse_values(raw)),
        outputs=args.mode or values.get("mode", "analytic"),
        out_path=args.out or values.get("out"),
        format=args.format or values.get("format", "csv"),
        workers=args.workers,
    )
    rows = run_sweep(spec)
    text = write_sweep(spec, rows)
    if spec.out_path is None:
        out.write(text)
    else:
        print(f"wrote {len(rows)} rows to {spec.out_path}", file=out)
    return EXIT_OK


def cmd_optimal_n(args, out=sys.stdout) -> int:
    cfg = _resolve_config(args, _read_file(args.config))
    r = cfg.regime
    if not isinstance(r, Uniform):
        raise ConfigError("optimal-n needs the uniform regime")
    res = optimal_n(cfg.m, cfg.d, cfg.sigma2, r.sigma2_rag, cfg.beta.norm2, r.delta2)
    grid_max = max(256, 4 * res.n_star)
    grid_best = empirical_argmin_n(cfg, range(grid_max + 1))
    agree = abs(grid_best - res.n_star) <= 1
    print(f"m = {cfg.m}  d = {cfg.d}  sigma2 = {cfg.sigma2!r}  sigma2_rag = {r.sigma2_rag!r}  "
          f"delta2 = {r.delta2!r}  |beta|^2 = {cfg.beta.norm2!r}", file=out)
    print(f"closed-form seed n = {res.n_real!r}{'  (degenerate, grid fallback)' if res.fallback else ''}",
          file=out)
    print(f"n* = {res.n_star}", file=out)
    print(f"L(0) = {res.loss_at_zero!r}", file=out)
    print(f"L(n*) = {res.loss_at_star!r}", file=out)
    print(f"improvement = {res.improvement!r}", file=out)
    print(f"grid argmin over 0..{grid_max} = {grid_best} ({'agrees' if agree else 'DISAGREES'})", file=out)
    return EXIT_OK if agree else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ragicl", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--trials", type=int, help="Monte Carlo trials per evaluation")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")

    sp = sub.add_parser("verify", help="run the oracle battery")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("moments-check", help="moment identities only")
    common(sp)
    sp.set_defaults(func=cmd_moments_check)

    sp = sub.add_parser("sweep", help="evaluate the loss along one axis")
    common(sp)
    sp.add_argument("--axis", choices=AXES)
    sp.add_argument("--values", help="comma list or inclusive start:stop[:step]")
    sp.add_argument("--mode", choices=MODES)
    sp.add_argument("--format", choices=FORMATS)
    sp.add_argument("--out", help="output path (stdout if omitted)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("optimal-n", help="optimal number of retrieved examples")
    common(sp)
    sp.set_defaults(func=cmd_optimal_n)
    return p


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return args.func(args, out)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
