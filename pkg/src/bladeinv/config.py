"""TOML run configurations.

A run file has top-level ``method``, ``seed`` and optional ``out``, plus
tables ``[instance]``, ``[blade]`` (with ``[blade.likelihood]`` and
``[blade.prior]``), ``[eks]`` (with ``[eks.stepping]``), ``[oracle]`` and
``[metrics]``. See ``configs/`` for annotated examples. Unknown keys are
errors, reported with their dotted path.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from bladeinv.errors import ConfigError
from bladeinv.forward import INSTANCES
from bladeinv.gibbs import EksConfig, GibbsConfig
from bladeinv.likelihood import LikelihoodConfig
from bladeinv.prior_step import PriorStepConfig

METHODS = ("blade", "eks", "oracle-analytic", "oracle-rwm", "oracle-grid")
METRICS = ("rel_l2", "crps", "ssr", "rank_histogram", "swd", "kl", "mode_occupancy")

# keys that may be written as ``false`` (or omitted) to mean "unset"
_NULLABLE = {"eff_sigma_y", "step_cap", "t_max"}


@dataclass(frozen=True)
class InstanceSpec:
    name: str
    n: int | None = None
    seed: int = 0
    sigma_y: float | None = None
    h_csv: str | None = None


@dataclass(frozen=True)
class OracleSpec:
    samples: int = 10_000
    # random-walk Metropolis
    chains: int = 64
    steps: int = 4000
    burn: int = 1000
    thin: int = 1
    step_std: float | None = None
    # grid
    bounds: list | None = None  # per-dimension [lo, hi]; default from the prior
    resolution: int = 400


@dataclass(frozen=True)
class MetricsSpec:
    select: tuple[str, ...] = METRICS
    truth_draws: int = 200
    swd_projections: int = 128
    swd_p: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    method: str
    instance: InstanceSpec
    seed: int = 0
    out: str | None = None
    blade: GibbsConfig = field(default_factory=GibbsConfig)
    eks: EksConfig = field(default_factory=EksConfig)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    source: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            seed=int(seed),
            blade=dataclasses.replace(self.blade, seed=int(seed)),
            eks=dataclasses.replace(self.eks, seed=int(seed)),
        )

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source")
        d["metrics"]["select"] = list(self.metrics.select)
        return d

    def to_toml(self) -> str:
        """Render a config file that parses back to this config."""
        d = self.echo()
        lines = [f"method = {_toml(d['method'])}", f"seed = {d['seed']}"]
        if d["out"] is not None:
            lines.append(f"out = {_toml(d['out'])}")
        blade = d["blade"]
        blade.pop("seed")
        eks = d["eks"]
        eks.pop("seed")
        tables = [
            ("instance", d["instance"]),
            ("blade", {k: v for k, v in blade.items() if k not in ("likelihood", "prior")}),
            ("blade.likelihood", blade["likelihood"]),
            ("blade.prior", blade["prior"]),
            ("eks", {k: v for k, v in eks.items() if k != "stepping"}),
            ("eks.stepping", eks["stepping"]),
            ("oracle", d["oracle"]),
            ("metrics", d["metrics"]),
        ]
        for name, body in tables:
            lines.append(f"\n[{name}]")
            for k, v in body.items():
                if v is None:
                    if k in _NULLABLE:
                        lines.append(f"{k} = false")
                    continue
                lines.append(f"{k} = {_toml(v)}")
        return "\n".join(lines) + "\n"


def _toml(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v) if v == v and abs(v) != float("inf") else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    return str(v)


def _build(cls, table: dict, path: str, nested: dict | None = None):
    """Instantiate a frozen dataclass from a TOML table, rejecting unknown keys."""
    if not isinstance(table, dict):
        raise ConfigError(path, "must be a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    nested = nested or {}
    kwargs = {}
    for key, val in table.items():
        where = f"{path}.{key}"
        if key not in names or key == "seed" and cls in (GibbsConfig, EksConfig):
            raise ConfigError(where, "unknown key")
        if key in nested:
            kwargs[key] = _build(nested[key], val, where)
            continue
        if key in _NULLABLE and val is False:
            val = None
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_field(path, kwargs, exc), str(exc)) from None


def _guess_field(path: str, kwargs: dict, exc: Exception) -> str:
    msg = str(exc)
    for k in kwargs:
        if k in msg:
            return f"{path}.{k}"
    return path


def _check_types(cfg: RunConfig) -> None:
    """Catch wrong value types that the dataclasses would silently accept."""
    checks = [
        ("blade.K", cfg.blade.K, int),
        ("blade.J", cfg.blade.J, int),
        ("blade.likelihood.n_steps", cfg.blade.likelihood.n_steps, int),
        ("blade.prior.n_steps", cfg.blade.prior.n_steps, int),
        ("eks.J", cfg.eks.J, int),
        ("eks.stepping.n_steps", cfg.eks.stepping.n_steps, int),
        ("instance.seed", cfg.instance.seed, int),
        ("seed", cfg.seed, int),
    ]
    for where, val, typ in checks:
        if isinstance(val, bool) or not isinstance(val, typ):
            raise ConfigError(where, f"must be an integer, got {val!r}")


def parse_config(data: dict, source: str | None = None) -> RunConfig:
    data = dict(data)
    known = {"method", "seed", "out", "instance", "blade", "eks", "oracle", "metrics"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    if "method" not in data:
        raise ConfigError("method", "missing required key")
    method = data["method"]
    if method not in METHODS:
        raise ConfigError("method", f"must be one of {METHODS}, got {method!r}")
    if "instance" not in data:
        raise ConfigError("instance", "missing required table")
    inst = _build(InstanceSpec, data["instance"], "instance")
    if inst.name not in INSTANCES:
        raise ConfigError("instance.name", f"must be one of {INSTANCES}, got {inst.name!r}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", f"must be an integer, got {seed!r}")
    blade = _build(GibbsConfig, data.get("blade", {}), "blade", {"likelihood": LikelihoodConfig, "prior": PriorStepConfig})
    eks = _build(EksConfig, data.get("eks", {}), "eks", {"stepping": LikelihoodConfig})
    oracle = _build(OracleSpec, data.get("oracle", {}), "oracle")
    metrics_tab = dict(data.get("metrics", {}))
    if "select" in metrics_tab:
        sel = metrics_tab["select"]
        if not isinstance(sel, list):
            raise ConfigError("metrics.select", "must be a list")
        for m in sel:
            if m not in METRICS:
                raise ConfigError("metrics.select", f"unknown metric {m!r}; expected {METRICS}")
        metrics_tab["select"] = tuple(sel)
    metrics = _build(MetricsSpec, metrics_tab, "metrics")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", "must be a string")
    cfg = RunConfig(method, inst, seed, out, blade, eks, oracle, metrics, source)
    _check_types(cfg)
    return cfg.with_seed(seed)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"{path}: invalid TOML: {exc}") from None
    cfg = parse_config(data, str(path))
    if cfg.instance.h_csv is not None and not Path(cfg.instance.h_csv).is_absolute():
        h = (path.parent / cfg.instance.h_csv).resolve()
        cfg = dataclasses.replace(cfg, instance=dataclasses.replace(cfg.instance, h_csv=str(h)))
    return cfg
