"""Run configs end to end: build the instance, execute a method, score it
against ground truth and write the run directory."""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bladeinv import __version__
from bladeinv.config import RunConfig
from bladeinv.ensemble import write_samples_csv
from bladeinv.errors import ConfigError
from bladeinv.forward import TestInstance, make_test_instance
from bladeinv.gibbs import RunRecord, run_blade, run_eks
from bladeinv.metrics import evaluate_ensemble
from bladeinv.oracles import BoundsTooSmall, grid_posterior, rwm_sample
from bladeinv.priors import GaussianPrior
from bladeinv.rng import METRICS, ORACLE, Streams

SUMMARY_SCHEMA = 1
SWEEP_PARAMETERS = ("K", "gamma", "rho_min", "eff_sigma_y", "J", "schedule")


def build_instance(cfg: RunConfig) -> TestInstance:
    spec = cfg.instance
    H = np.loadtxt(spec.h_csv, delimiter=",", ndmin=2) if spec.h_csv else None
    try:
        return make_test_instance(spec.name, spec.n, spec.seed, sigma_y=spec.sigma_y, H=H)
    except ValueError as exc:
        raise ConfigError("instance", str(exc)) from None


def default_bounds(inst: TestInstance, width: float = 8.0) -> np.ndarray:
    """Per-dimension box covering every prior component to ``width`` standard deviations."""
    p = inst.prior
    sd = np.sqrt(np.diagonal(p.covariances, axis1=1, axis2=2))
    return np.stack([(p.means - width * sd).min(axis=0), (p.means + width * sd).max(axis=0)], axis=1)


def _grid(inst: TestInstance, cfg: RunConfig):
    bounds = default_bounds(inst) if cfg.oracle.bounds is None else np.asarray(cfg.oracle.bounds, dtype=float)
    try:
        return grid_posterior(inst.log_posterior, bounds, cfg.oracle.resolution)
    except BoundsTooSmall as exc:
        raise ConfigError("oracle.bounds", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("oracle", str(exc)) from None


@dataclass
class Reference:
    """Ground truth an ensemble is scored against."""

    kind: str  # "analytic" or "grid"
    samples: np.ndarray
    truths: np.ndarray
    state: np.ndarray | None
    gaussian: tuple[np.ndarray, np.ndarray] | None
    centers: np.ndarray | None
    weights: np.ndarray | None


def reference_posterior(inst: TestInstance, cfg: RunConfig) -> Reference:
    """Closed form for linear instances, normalized grid otherwise.

    Oracle samples come from stream ``(seed, ORACLE)``, the same stream the
    oracle methods use, and truth draws from ``(seed, ORACLE, 1)``.
    """
    streams = Streams(cfg.seed).child(ORACLE)
    count, draws = cfg.oracle.samples, cfg.metrics.truth_draws
    multimodal = inst.prior.K > 1
    if inst.is_linear:
        post = inst.analytic_posterior()
        samples = post.sample(count, streams.generator())
        truths = post.sample(draws, streams.generator(1))
        gaussian = (post.means[0], post.covariances[0]) if post.K == 1 else None
        centers = post.means if multimodal else None
        weights = post.weights if multimodal else None
        state = inst.x_true if inst.x_true is not None else post.weights @ post.means
        return Reference("analytic", samples, truths, state, gaussian, centers, weights)
    grid = _grid(inst, cfg)
    samples = grid.sample(count, streams.generator())
    truths = grid.sample(draws, streams.generator(1))
    centers = inst.prior.means if multimodal else None
    weights = grid.mode_weights(centers) if multimodal else None
    state = inst.x_true if inst.x_true is not None else grid.mean()
    return Reference("grid", samples, truths, state, None, centers, weights)


def execute(cfg: RunConfig, inst: TestInstance) -> RunRecord:
    """Run the configured method; oracle methods are wrapped in a RunRecord too."""
    fm, obs = inst.forward, inst.observation
    if cfg.method == "blade":
        return run_blade(fm, obs, inst.prior, cfg.blade, trace=True)
    if cfg.method == "eks":
        prior = inst.prior if isinstance(inst.prior, GaussianPrior) else inst.prior.moment_matched()
        return run_eks(fm, obs, prior, cfg.eks, trace=True)
    t0 = time.perf_counter()
    streams = Streams(cfg.seed).child(ORACLE)
    diag: list[dict] = []
    if cfg.method == "oracle-analytic":
        if not inst.is_linear:
            raise ConfigError("method", f"oracle-analytic needs a linear instance, {inst.name!r} is not")
        samples = inst.analytic_posterior().sample(cfg.oracle.samples, streams.generator())
    elif cfg.method == "oracle-grid":
        samples = _grid(inst, cfg).sample(cfg.oracle.samples, streams.generator())
    else:
        o = cfg.oracle
        init = inst.prior.sample(o.chains, streams.generator(2))
        try:
            res = rwm_sample(inst.log_posterior, init, o.steps, o.step_std, streams.generator(3), burn=o.burn, thin=o.thin)
        except ValueError as exc:
            raise ConfigError("oracle", str(exc)) from None
        samples = res.samples
        diag.append({"acceptance": res.acceptance, "chains": res.n_chains})
    return RunRecord(cfg.method, samples, np.array([]), 0, [], time.perf_counter() - t0, cfg.echo(), diag)


def score(samples: np.ndarray, ref: Reference, cfg: RunConfig, oracle_samples: np.ndarray | None = None) -> dict:
    sel = set(cfg.metrics.select)
    rep = evaluate_ensemble(
        samples,
        truths=ref.truths if sel & {"crps", "ssr", "rank_histogram"} else None,
        reference_state=ref.state,
        oracle_samples=(ref.samples if oracle_samples is None else oracle_samples) if "swd" in sel else None,
        gaussian_target=ref.gaussian if "kl" in sel else None,
        mode_centers=ref.centers if "mode_occupancy" in sel else None,
        L=cfg.metrics.swd_projections,
        p=cfg.metrics.swd_p,
        rng=Streams(cfg.seed).generator(METRICS),
    ).to_dict()
    if "kl_gaussian" in rep:
        rep["kl"] = rep.pop("kl_gaussian")
    keep = sel | {"swd_order", "cases"}
    out = {k: v for k, v in rep.items() if k in keep}
    if ref.weights is not None and "mode_occupancy" in sel:
        out["reference_mode_weights"] = ref.weights.tolist()
    return out


def _comment(cfg: RunConfig) -> str:
    echo = cfg.echo()
    echo.pop("out")
    return f"bladeinv {__version__} seed={cfg.seed}\nconfig={json.dumps(echo, sort_keys=True)}"


def _write_rows(path: Path, rows: list[dict], comment: str) -> None:
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def summary_dict(cfg: RunConfig, inst: TestInstance, rec: RunRecord, metrics: dict) -> dict:
    s = {
        "schema_version": SUMMARY_SCHEMA,
        "artifact_version": __version__,
        "method": cfg.method,
        "instance": {"name": inst.name, "n": inst.prior.dim, "seed": inst.seed},
        "seed": cfg.seed,
        "n_samples": int(len(rec.ensemble)),
        "forward_evals": int(rec.forward_evals),
        "wall_clock_s": rec.wall_clock,
        "metrics": metrics,
        "config": cfg.echo(),
    }
    if rec.span_ranks:
        s["span_ranks"] = rec.span_ranks
    if cfg.method == "oracle-rwm":
        s["acceptance"] = rec.diagnostics[0]["acceptance"]
    return s


def run(cfg: RunConfig, out: str | Path | None) -> dict:
    """Execute one config; writes the run directory when ``out`` is given."""
    inst = build_instance(cfg)
    rec = execute(cfg, inst)
    ref = reference_posterior(inst, cfg)
    metrics = score(rec.ensemble, ref, cfg)
    summary = summary_dict(cfg, inst, rec, metrics)
    if out is not None:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        comment = _comment(cfg)
        write_samples_csv(d / "samples.csv", rec.ensemble, comment)
        (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (d / "config.toml").write_text(cfg.to_toml())
        _write_rows(d / "diagnostics.csv", rec.diagnostics, comment)
        if "rank_histogram" in metrics:
            rows = [{"rank": i, "count": c} for i, c in enumerate(metrics["rank_histogram"])]
            _write_rows(d / "rank_histogram.csv", rows, comment)
    return summary


def compare(cfgs: list[RunConfig], truth: RunConfig, out: str | Path | None) -> list[dict]:
    """Score several methods on one instance against a truth-producing config."""
    key = (truth.instance, truth.seed)
    for c in cfgs:
        if (c.instance, c.seed) != key:
            src = c.source or c.method
            raise ConfigError("instance", f"{src} uses instance {c.instance} seed {c.seed}, truth uses {truth.instance} seed {truth.seed}")
    inst = build_instance(truth)
    truth_rec = execute(truth, inst)
    ref = reference_posterior(inst, truth)
    blocks = [(truth.method, truth_rec)]
    for c in cfgs:
        blocks.append((c.method, execute(c, build_instance(c))))
    rows = []
    for name, rec in blocks:
        m = score(rec.ensemble, ref, truth, oracle_samples=truth_rec.ensemble)
        row = {"method": name, "n_samples": len(rec.ensemble), "forward_evals": rec.forward_evals}
        for k in ("swd", "kl", "crps", "ssr", "rel_l2"):
            if k in m:
                row[k] = m[k]
        for i, v in enumerate(m.get("mode_occupancy", [])):
            row[f"occupancy_{i}"] = v
        rows.append(row)
    if ref.weights is not None:
        rows.append({"method": "reference-weights", **{f"occupancy_{i}": float(w) for i, w in enumerate(ref.weights)}})
    if out is not None:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        comment = _comment(truth)
        n = inst.prior.dim
        with open(d / "compare_samples.csv", "w", newline="") as fh:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
            fh.write(",".join(["method"] + [f"dim_{i}" for i in range(n)]) + "\n")
            for name, rec in blocks:
                for x in rec.ensemble:
                    fh.write(name + "," + ",".join(f"{v:.17g}" for v in x) + "\n")
        _write_rows(d / "compare_metrics.csv", rows, comment)
        report = {
            "schema_version": SUMMARY_SCHEMA,
            "artifact_version": __version__,
            "instance": {"name": inst.name, "n": n, "seed": inst.seed},
            "seed": truth.seed,
            "rows": rows,
            "configs": [truth.echo()] + [c.echo() for c in cfgs],
        }
        (d / "compare_summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return rows


def apply_sweep(cfg: RunConfig, parameter: str, raw) -> RunConfig:
    """Return ``cfg`` with one hyperparameter replaced; values may be CLI strings."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError("sweep.parameter", f"must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    where = f"sweep.{parameter}"
    try:
        if parameter in ("K", "J"):
            val = int(raw)
        elif parameter == "schedule":
            val = str(raw)
        else:
            val = float(raw)
    except ValueError:
        raise ConfigError(where, f"cannot parse value {raw!r}") from None
    try:
        if cfg.method == "blade":
            b = cfg.blade
            if parameter in ("gamma", "eff_sigma_y"):
                b = dataclasses.replace(b, likelihood=dataclasses.replace(b.likelihood, **{parameter: val}))
            else:
                b = dataclasses.replace(b, **{parameter: val})
            return dataclasses.replace(cfg, blade=b)
        if cfg.method == "eks":
            e = cfg.eks
            if parameter == "J":
                e = dataclasses.replace(e, J=val)
            elif parameter in ("gamma", "eff_sigma_y"):
                e = dataclasses.replace(e, stepping=dataclasses.replace(e.stepping, **{parameter: val}))
            else:
                raise ConfigError(where, f"{parameter} does not apply to eks")
            return dataclasses.replace(cfg, eks=e)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from None
    raise ConfigError(where, f"sweeps apply to blade or eks, not {cfg.method}")


SWEEP_COLUMNS = ("value", "crps", "ssr", "rel_l2", "kl", "swd", "forward_evals")


def _sweep_one(args) -> dict:
    cfg, value = args
    s = run(cfg, None)
    m = s["metrics"]
    return {"value": value, "seed": cfg.seed, **{k: m.get(k) for k in SWEEP_COLUMNS[1:-1]}, "forward_evals": s["forward_evals"]}


def sweep(cfg: RunConfig, parameter: str, values: list, out: str | Path | None, *, seeds: int = 1, jobs: int = 1) -> list[dict]:
    """One run per (value, seed); ``sweep.csv`` averages over seeds, ``sweep_runs.csv`` keeps every run."""
    if not values:
        raise ConfigError("sweep.values", "empty value list")
    if seeds < 1:
        raise ConfigError("sweep.seeds", "must be >= 1")
    tasks = []
    for v in values:
        base = apply_sweep(cfg, parameter, v)
        tasks += [(base.with_seed(cfg.seed + s), v) for s in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_one, tasks))
    else:
        runs = [_sweep_one(t) for t in tasks]
    agg = []
    for v in values:
        group = [r for r in runs if r["value"] == v]
        row = {"value": v}
        for k in SWEEP_COLUMNS[1:]:
            vals = [r[k] for r in group if r[k] is not None]
            row[k] = float(np.mean(vals)) if vals else None
        agg.append(row)
    if out is not None:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        comment = _comment(cfg) + f"\nsweep={parameter} values={list(values)} seeds={seeds}"
        _write_rows(d / "sweep.csv", agg, comment)
        _write_rows(d / "sweep_runs.csv", runs, comment)
    return agg
