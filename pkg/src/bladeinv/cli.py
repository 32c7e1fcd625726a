"""Command-line entry point: ``bladeinv {run,compare,sweep,selftest}``.

Exit codes: 0 success, 1 failed self-test, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

from bladeinv.config import RunConfig, load_config
from bladeinv.errors import ConfigError, NumericalAbort
from bladeinv.forward import ForwardModelError

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _load(path: str, seed_override: int | None) -> RunConfig:
    cfg = load_config(path)
    return cfg if seed_override is None else cfg.with_seed(seed_override)


def _out(args, cfg: RunConfig) -> str:
    out = args.out or cfg.out
    if out is None:
        raise ConfigError("out", "no output directory: pass --out or set out in the config")
    return out


def cmd_run(args) -> int:
    from bladeinv import harness

    cfg = _load(args.config, args.seed_override)
    summary = harness.run(cfg, _out(args, cfg))
    m = summary["metrics"]
    shown = {k: m[k] for k in ("kl", "swd", "crps", "ssr", "rel_l2", "mode_occupancy") if k in m}
    print(json.dumps({"method": summary["method"], "forward_evals": summary["forward_evals"], **shown}))
    return EXIT_OK


def cmd_compare(args) -> int:
    from bladeinv import harness

    truth = _load(args.truth, args.seed_override)
    cfgs = [_load(p, args.seed_override) for p in args.config]
    rows = harness.compare(cfgs, truth, _out(args, truth))
    for r in rows:
        print(json.dumps(r))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from bladeinv import harness

    cfg = _load(args.config, args.seed_override)
    rows = harness.sweep(cfg, args.parameter, args.values, _out(args, cfg), seeds=args.seeds, jobs=args.jobs)
    for r in rows:
        print(json.dumps(r))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from bladeinv.selftest import run_all

    checks = run_all(args.seed_override or 0)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bladeinv", description="Derivative-free ensemble posterior sampling benchmarks.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_multi=False):
        if config_multi:
            sp.add_argument("--config", nargs="+", required=True, help="method config files to compare")
        else:
            sp.add_argument("--config", required=True, help="TOML run config")
        sp.add_argument("--out", help="output directory (overrides the config's out)")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the run seed")

    r = sub.add_parser("run", help="execute one config")
    common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="score several methods against a truth config")
    common(c, config_multi=True)
    c.add_argument("--truth", required=True, help="oracle config providing the reference samples")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="one run per hyperparameter value")
    common(s)
    s.add_argument("parameter", help="K, gamma, rho_min, eff_sigma_y, J or schedule")
    s.add_argument("values", nargs="*", help="values to sweep")
    s.add_argument("--seeds", type=int, default=1, help="runs per value, seeds seed..seed+N-1 (averaged)")
    s.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("selftest", help="oracle triangle and metric equivalence checks")
    t.add_argument("--seed-override", type=int, default=None)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, ForwardModelError) as exc:
        it = getattr(exc, "iteration", None)
        print(f"numerical abort: {exc}" + (f" [iteration {it}]" if it is not None else ""), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
