"""Declarative sweeps: configuration, orchestration and CSV export.

Config files are INI-style (``configparser``).  Every key lives in a
section; a key written before any section header is assigned to the
section that owns that name (names are unique across sections).

    [run]        profile = ci | paper; output_dir; master_seed
    [problem]    name = heat; theta_star; t_max
    [grid]       noise_levels = 10, 25; n = 500, 1000; cells = 10:500, 25:1000
                 replicates; modes = pinn, non_pinn
    [noise]      <level> = <sigma>      (defaults: 1, 10, 25, 50 percent)
    [network]    depth; width; activation
    [prior]      sparsity_exponent; spike_precision; theta_prior_precision;
                 pinn_strength = n | <number>; alpha_residual; alpha_boundary
    [collocation] N; B
    [chain]      iterations; burn_in; thin; step_size = auto | <number>;
                 sgld_cyclical; cycle_length; lambda_flips_per_iter; warmup;
                 warmup_lr; preconditioner; minibatch_fraction

``cells`` (``level:n`` pairs) overrides the product of ``noise_levels`` and
``n``.  Values not given come from the chosen profile.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .diagnostics import DiagnosticsReport, bvm_target, diagnose, erm_fit
from .net import ACTIVATIONS, NetworkArch
from .pde import NOISE_PRESETS, PdeSpec, generate_data, heat_spec, sample_collocation
from .prior import PriorConfig
from .sampler import MODES, ChainConfig, ChainDivergenceError, run_chain

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "RunResult",
    "AGGREGATE_COLUMNS",
    "SCHEMA_VERSION",
    "PROFILES",
    "WORKERS_ENV",
    "parse_config",
    "validate_config",
    "serialize_config",
    "run_experiment",
    "check_aggregate_schema",
    "boxplot_stats",
    "export_boxplot_data",
    "erm_baseline",
    "run_seeds",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
AGGREGATE_COLUMNS = (
    "noise_level", "sigma", "n", "mode", "rmse", "w2_sq", "tvd_lower", "tvd_upper", "mu_theta", "sd_theta",
)
RUN_COLUMNS = (
    "noise_level", "sigma", "n", "mode", "replicate", "status", "K", "rmse", "w2_sq", "tvd_lower",
    "tvd_upper", "mu_theta", "sd_theta", "hellinger_sq", "kl_fwd", "kl_rev", "message",
)
BOXPLOT_COLUMNS = (
    "noise_level", "n", "mode", "K", "q1", "median", "q3", "whisker_low", "whisker_high", "outliers",
)
WORKERS_ENV = "BPINN_WORKERS"

_FULL_CELLS = (
    (1, 50), (1, 500), (1, 1000), (1, 5000),
    (10, 500), (10, 1000), (10, 5000), (10, 10000),
    (25, 1000), (25, 5000), (50, 5000),
)
_CI_CELLS = ((10, 500), (10, 1000), (10, 5000), (25, 1000))

PROFILES = {
    "paper": {
        "cells": _FULL_CELLS, "replicates": 1, "depth": 4, "width": 64, "N": 10_000, "B": 128,
        "iterations": 250_000, "burn_in": 50_000, "thin": 20,
    },
    "ci": {
        "cells": _CI_CELLS, "replicates": 3, "depth": 4, "width": 16, "N": 2_000, "B": 128,
        "iterations": 8_000, "burn_in": 6_000, "thin": 10,
    },
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ExperimentConfig:
    cells: tuple[tuple[int, int], ...]
    noise_sd: dict[int, float]
    prior: PriorConfig
    chain: ChainConfig
    arch: NetworkArch
    profile: str = "paper"
    problem: str = "heat"
    theta_star: float = 0.5
    t_max: float = 1.0
    replicates: int = 1
    modes: tuple[str, ...] = MODES
    N: int = 10_000
    B: int = 128
    output_dir: str = "results"
    master_seed: int = 0

    def spec(self) -> PdeSpec:
        return heat_spec(theta_star=self.theta_star, t_max=self.t_max)

    def sigma_for(self, level: int) -> float:
        return self.noise_sd[level]


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_SCHEMA: dict[str, dict[str, str]] = {
    "run": {"profile": "str", "output_dir": "str", "master_seed": "int"},
    "problem": {"name": "str", "theta_star": "float", "t_max": "float"},
    "grid": {"noise_levels": "intlist", "n": "intlist", "cells": "cells", "replicates": "int", "modes": "strlist"},
    "network": {"depth": "int", "width": "int", "activation": "str"},
    "prior": {
        "sparsity_exponent": "float", "spike_precision": "float", "theta_prior_precision": "float",
        "pinn_strength": "strength", "alpha_residual": "float", "alpha_boundary": "float",
    },
    "collocation": {"N": "int", "B": "int"},
    "chain": {
        "iterations": "int", "burn_in": "int", "thin": "int", "step_size": "step", "sgld_cyclical": "bool",
        "cycle_length": "int", "lambda_flips_per_iter": "int", "warmup": "str", "warmup_lr": "float",
        "preconditioner": "str", "minibatch_fraction": "float",
    },
}
_OWNER = {key: sec for sec, keys in _SCHEMA.items() for key in keys}
_TOP = "__top__"


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "intlist":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "strlist":
        return tuple(v for v in raw.replace(",", " ").split())
    if kind == "cells":
        out = []
        for item in raw.replace(",", " ").split():
            level, _, n = item.partition(":")
            out.append((int(level.rstrip("%")), int(n)))
        return tuple(out)
    if kind == "strength":
        return None if raw.lower() == "n" else float(raw)
    if kind == "step":
        return None if raw.lower() == "auto" else float(raw)
    raise AssertionError(kind)


def _read_ini(text: str, errors: list[str]) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text)
    except configparser.Error as exc:
        errors.append(f"syntax: {exc}")
        return {}
    raw: dict[str, dict[str, str]] = {}
    for sec in cp.sections():
        for key, val in cp.items(sec):
            if sec == _TOP:
                owner = _OWNER.get(key)
                if owner is None:
                    errors.append(f"{key}: unknown key")
                    continue
                target = owner
            elif sec == "noise" or sec in _SCHEMA:
                target = sec
                if sec != "noise" and key not in _SCHEMA[sec]:
                    errors.append(f"{sec}.{key}: unknown key")
                    continue
            else:
                errors.append(f"{sec}: unknown section")
                break
            if key in raw.get(target, {}):
                errors.append(f"{target}.{key}: given more than once")
                continue
            raw.setdefault(target, {})[key] = val
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises :class:`ConfigError` listing every violation."""
    errors: list[str] = []
    raw = _read_ini(text, errors)
    vals: dict[str, dict] = {}
    for sec, keys in raw.items():
        for key, val in keys.items():
            path = f"{sec}.{key}"
            try:
                if sec == "noise":
                    vals.setdefault(sec, {})[int(key.rstrip("%"))] = float(val)
                else:
                    vals.setdefault(sec, {})[key] = _convert(_SCHEMA[sec][key], val)
            except ValueError as exc:
                errors.append(f"{path}: {exc}")

    def get(sec, key, default):
        return vals.get(sec, {}).get(key, default)

    profile = get("run", "profile", "paper")
    if profile not in PROFILES:
        errors.append(f"run.profile: must be one of {sorted(PROFILES)}, got {profile!r}")
        profile = "paper"
    prof = PROFILES[profile]

    problem = get("problem", "name", "heat")
    if problem != "heat":
        errors.append(f"problem.name: only 'heat' is supported, got {problem!r}")
    theta_star = get("problem", "theta_star", 0.5)
    t_max = get("problem", "t_max", 1.0)
    if not t_max > 0:
        errors.append("problem.t_max: must be > 0")

    noise_sd = dict(NOISE_PRESETS)
    for level, sd in vals.get("noise", {}).items():
        if level <= 0 or not sd > 0:
            errors.append(f"noise.{level}: level and sigma must be > 0")
        noise_sd[level] = sd

    if "cells" in vals.get("grid", {}):
        cells = get("grid", "cells", ())
    elif "noise_levels" in vals.get("grid", {}) or "n" in vals.get("grid", {}):
        levels = get("grid", "noise_levels", tuple(sorted({c[0] for c in prof["cells"]})))
        ns = get("grid", "n", tuple(sorted({c[1] for c in prof["cells"]})))
        cells = tuple((lv, n) for lv in levels for n in ns)
    else:
        cells = prof["cells"]
    if not cells:
        errors.append("grid: the grid is empty")
    for n in sorted({n for _, n in cells}):
        if n < 1:
            errors.append(f"grid.n: sample sizes must be >= 1, got {n}")
    for lv in sorted({lv for lv, _ in cells}):
        if lv not in noise_sd:
            errors.append(f"grid.noise_levels: no sigma for noise level {lv}; add it under [noise]")
    replicates = get("grid", "replicates", prof["replicates"])
    if replicates < 1:
        errors.append("grid.replicates: must be >= 1")
    modes = get("grid", "modes", MODES)
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        errors.append(f"grid.modes: must be a nonempty subset of {MODES}, got {modes}")
        modes = MODES

    arch = None
    depth = get("network", "depth", prof["depth"])
    width = get("network", "width", prof["width"])
    activation = get("network", "activation", "tanh")
    if activation not in ACTIVATIONS:
        errors.append(f"network.activation: must be one of {sorted(ACTIVATIONS)}")
    elif depth < 1 or width < 1:
        errors.append("network: depth and width must be >= 1")
    else:
        arch = NetworkArch.mlp(depth=depth, width=width, activation=activation)

    prior = None
    pkw = {k: v for k, v in vals.get("prior", {}).items()}
    try:
        prior = PriorConfig(q=arch.q if arch else 1, **pkw)
    except ValueError as exc:
        errors.append(f"prior: {exc}")

    N = get("collocation", "N", prof["N"])
    B = get("collocation", "B", prof["B"])
    if N < 1 or B < 1:
        errors.append("collocation: N and B must be >= 1")

    ckw = {k: prof[k] for k in ("iterations", "burn_in", "thin")}
    ckw.update(vals.get("chain", {}))
    chain = None
    try:
        chain = ChainConfig(**ckw)
    except ValueError as exc:
        errors.extend(f"chain: {e}" for e in str(exc).split("; "))

    output_dir = get("run", "output_dir", "results")
    master_seed = get("run", "master_seed", 0)
    if master_seed < 0:
        errors.append("run.master_seed: must be >= 0")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        cells=tuple(cells), noise_sd=noise_sd, prior=prior, chain=chain, arch=arch, profile=profile,
        problem=problem, theta_star=theta_star, t_max=t_max, replicates=replicates, modes=tuple(modes),
        N=N, B=B, output_dir=output_dir, master_seed=master_seed,
    )


def validate_config(path) -> ExperimentConfig | list[str]:
    """Parsed config, or the full list of violations."""
    try:
        return parse_config(Path(path).read_text())
    except ConfigError as exc:
        return exc.errors


def serialize_config(cfg: ExperimentConfig) -> str:
    """Fully explicit config text; parsing it gives back ``cfg``."""
    p, c = cfg.prior, cfg.chain

    def num(v):
        return repr(float(v))

    sections = {
        "run": {"profile": cfg.profile, "output_dir": cfg.output_dir, "master_seed": str(cfg.master_seed)},
        "problem": {"name": cfg.problem, "theta_star": num(cfg.theta_star), "t_max": num(cfg.t_max)},
        "grid": {
            "cells": ", ".join(f"{lv}:{n}" for lv, n in cfg.cells),
            "replicates": str(cfg.replicates),
            "modes": ", ".join(cfg.modes),
        },
        "noise": {str(lv): num(sd) for lv, sd in sorted(cfg.noise_sd.items())},
        "network": {"depth": str(cfg.arch.depth), "width": str(cfg.arch.layer_sizes[1]), "activation": cfg.arch.activation},
        "prior": {
            "sparsity_exponent": num(p.sparsity_exponent),
            "spike_precision": num(p.spike_precision),
            "theta_prior_precision": num(p.theta_prior_precision),
            "pinn_strength": "n" if p.pinn_strength is None else num(p.pinn_strength),
            "alpha_residual": num(p.alpha_residual),
            "alpha_boundary": num(p.alpha_boundary),
        },
        "collocation": {"N": str(cfg.N), "B": str(cfg.B)},
        "chain": {
            "iterations": str(c.iterations), "burn_in": str(c.burn_in), "thin": str(c.thin),
            "step_size": "auto" if c.step_size is None else num(c.step_size),
            "sgld_cyclical": str(c.sgld_cyclical).lower(), "cycle_length": str(c.cycle_length),
            "lambda_flips_per_iter": str(c.lambda_flips_per_iter), "warmup": c.warmup,
            "warmup_lr": num(c.warmup_lr), "preconditioner": c.preconditioner,
            "minibatch_fraction": num(c.minibatch_fraction),
        },
    }
    out = io.StringIO()
    for sec, keys in sections.items():
        out.write(f"[{sec}]\n")
        for k, v in keys.items():
            out.write(f"{k} = {v}\n")
        out.write("\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def run_seeds(master_seed: int, level: int, n: int, replicate: int) -> dict[str, int]:
    """Independent seeds for one (cell, replicate), keyed by content rather than position."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(level, n, replicate))
    data, colloc, pinn, non_pinn = (int(s) for s in ss.generate_state(4, dtype=np.uint32))
    return {"data": data, "colloc": colloc, "pinn": pinn, "non_pinn": non_pinn}


@dataclass
class RunResult:
    noise_level: int
    sigma: float
    n: int
    mode: str
    replicate: int
    status: str
    samples: np.ndarray
    report: DiagnosticsReport | None = None
    message: str = ""
    chain_summary: dict = field(default_factory=dict)
    trace_rows: list = field(default_factory=list)

    @property
    def key(self):
        return (self.noise_level, self.n, MODES.index(self.mode), self.replicate)


def _run_one(cfg: ExperimentConfig, level: int, n: int, replicate: int, mode: str) -> RunResult:
    spec = cfg.spec()
    sigma = cfg.sigma_for(level)
    seeds = run_seeds(cfg.master_seed, level, n, replicate)
    data = generate_data(spec, n, sigma, seeds["data"])
    colloc = sample_collocation(spec, cfg.N, cfg.B, seeds["colloc"])
    chain = replace(cfg.chain, seed=seeds[mode], mode=mode)
    target = bvm_target(spec, n, rho=cfg.prior.theta_prior_precision)
    status, message = "completed", ""
    try:
        out = run_chain(spec, data, colloc, cfg.prior, chain, cfg.arch)
    except ChainDivergenceError as exc:
        out, status, message = exc.partial, "diverged", str(exc)
    samples = out.theta_samples[:, 0] if out is not None else np.empty(0)
    report = diagnose(samples, target, float(spec.true_theta[0])) if samples.size >= 2 else None
    rows = []
    if out is not None:
        buf = io.StringIO()
        _write_trace(out, buf)
        rows = buf.getvalue()
    return RunResult(level, sigma, n, mode, replicate, status, samples, report, message,
                     out.summary_dict() if out is not None else {}, rows)


def _write_trace(out, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["iteration", "theta", "active_count", "log_target"])
    for it, th, a, lt in zip(out.iterations, out.theta_samples[:, 0], out.active_counts, out.log_target_trace):
        w.writerow([int(it), repr(float(th)), int(a), repr(float(lt))])


def _run_one_star(args):
    return _run_one(*args)


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def _run_dir(root: Path, r: RunResult) -> Path:
    return root / "runs" / f"noise{r.noise_level}_n{r.n}_{r.mode}_r{r.replicate}"


def _histogram_rows(r: RunResult, bins: int = 30):
    s = r.samples
    counts, edges = np.histogram(s, bins=bins)
    width = edges[1] - edges[0]
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = counts / (counts.sum() * width) if width > 0 else np.zeros(bins)
    approx = r.report.posterior.pdf(centers)
    target = r.report.target.pdf(centers)
    return [
        (edges[i], edges[i + 1], int(counts[i]), dens[i], approx[i], target[i]) for i in range(bins)
    ]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def check_aggregate_schema(path) -> None:
    """Raise ``ValueError`` unless ``path`` has the aggregate header and well-typed rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != AGGREGATE_COLUMNS:
        raise ValueError(f"{path}: header {rows[0] if rows else None} != {list(AGGREGATE_COLUMNS)}")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(AGGREGATE_COLUMNS):
            raise ValueError(f"{path}:{i}: expected {len(AGGREGATE_COLUMNS)} fields, got {len(row)}")
        int(row[0]), float(row[1]), int(row[2])
        if row[3] not in MODES:
            raise ValueError(f"{path}:{i}: unknown mode {row[3]!r}")
        for v in row[4:]:
            float(v)


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int | None = None) -> tuple[Path, list[RunResult]]:
    """Run every cell x mode x replicate and write the result directory.

    Layout: ``aggregate.csv`` (replicate means), ``aggregate_sd.csv``
    (replicate spreads), ``runs.csv`` (one row per chain), ``manifest.json``
    and ``runs/<run>/{trace.csv, summary.json, histogram.csv}``.  Results are
    written by this process only, in a fixed order, so the files do not
    depend on worker scheduling.
    """
    root = Path(output_dir or cfg.output_dir)
    (root / "runs").mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(serialize_config(cfg))
    jobs = [
        (cfg, lv, n, rep, mode)
        for lv, n in cfg.cells
        for rep in range(cfg.replicates)
        for mode in cfg.modes
    ]
    workers = _workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_star, jobs))
    else:
        results = []
        for job in jobs:
            log.info("running noise=%s%% n=%s rep=%s mode=%s", job[1], job[2], job[3], job[4])
            results.append(_run_one(*job))
    results.sort(key=lambda r: r.key)

    run_rows = []
    for r in results:
        d = _run_dir(root, r)
        d.mkdir(parents=True, exist_ok=True)
        (d / "trace.csv").write_text(r.trace_rows if r.trace_rows else "iteration,theta,active_count,log_target\n")
        summary = dict(r.chain_summary, status=r.status, message=r.message)
        if r.report is not None:
            summary["diagnostics"] = r.report.to_dict()
            _write_csv(d / "histogram.csv", ("bin_left", "bin_right", "count", "density", "approx_pdf", "target_pdf"),
                       _histogram_rows(r))
        (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        rep = r.report
        metrics = (
            (rep.rmse, rep.w2_vs_target, rep.tvd_lower, rep.tvd_upper, rep.posterior.mean, rep.posterior.sd,
             rep.hellinger_sq, rep.kl_fwd, rep.kl_rev)
            if rep is not None else (math.nan,) * 9
        )
        run_rows.append((r.noise_level, r.sigma, r.n, r.mode, r.replicate, r.status, r.samples.size, *metrics,
                         r.message))
    _write_csv(root / "runs.csv", RUN_COLUMNS, run_rows)

    agg, spread = [], []
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.noise_level, r.n, MODES.index(r.mode)), []).append(r)
    for (lv, n, mi), rs in sorted(groups.items()):
        ok = [r.report for r in rs if r.status == "completed" and r.report is not None]
        vals = np.array(
            [(x.rmse, x.w2_vs_target, x.tvd_lower, x.tvd_upper, x.posterior.mean, x.posterior.sd) for x in ok]
        ).reshape(len(ok), 6)
        mean = vals.mean(axis=0) if len(ok) else np.full(6, np.nan)
        sd = vals.std(axis=0) if len(ok) else np.full(6, np.nan)
        agg.append((lv, rs[0].sigma, n, MODES[mi], *mean))
        spread.append((lv, rs[0].sigma, n, MODES[mi], *sd))
    _write_csv(root / "aggregate.csv", AGGREGATE_COLUMNS, agg)
    _write_csv(root / "aggregate_sd.csv", AGGREGATE_COLUMNS, spread)
    check_aggregate_schema(root / "aggregate.csv")
    failed = sum(r.status != "completed" for r in results)
    manifest = {"schema_version": SCHEMA_VERSION, "runs": len(results), "failed": failed,
                "columns": list(AGGREGATE_COLUMNS)}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root, results


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------


def boxplot_stats(samples) -> dict:
    """Quartiles (linear interpolation), Tukey whiskers and outliers."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("no samples")
    q1, med, q3 = np.percentile(s, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = s[(s >= lo_fence) & (s <= hi_fence)]
    outliers = s[(s < lo_fence) | (s > hi_fence)]
    return {
        "K": int(s.size), "q1": float(q1), "median": float(med), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(v) for v in outliers],
    }


def export_boxplot_data(result_dir, path=None) -> Path:
    """Pool each cell's completed replicates per mode and write ``boxplots.csv``."""
    root = Path(result_dir)
    with open(root / "runs.csv", newline="") as fh:
        runs = list(csv.DictReader(fh))
    pooled: dict[tuple, list[np.ndarray]] = {}
    for r in runs:
        if r["status"] != "completed":
            continue
        rr = RunResult(int(r["noise_level"]), float(r["sigma"]), int(r["n"]), r["mode"], int(r["replicate"]),
                       r["status"], np.empty(0))
        with open(_run_dir(root, rr) / "trace.csv", newline="") as fh:
            th = np.array([float(row["theta"]) for row in csv.DictReader(fh)])
        pooled.setdefault((rr.noise_level, rr.n, MODES.index(rr.mode)), []).append(th)
    rows = []
    for (lv, n, mi), parts in sorted(pooled.items()):
        st = boxplot_stats(np.concatenate(parts))
        rows.append((lv, n, MODES[mi], st["K"], st["q1"], st["median"], st["q3"], st["whisker_low"],
                     st["whisker_high"], ";".join(repr(v) for v in st["outliers"])))
    out = Path(path) if path else root / "boxplots.csv"
    _write_csv(out, BOXPLOT_COLUMNS, rows)
    return out


def erm_baseline(cfg: ExperimentConfig, path=None, replicates: int | None = None) -> tuple[Path, dict[int, float]]:
    """Least-squares ``θ`` fits per grid cell; returns the log-log slope of mean ``|û - u*|²`` per noise level."""
    spec = cfg.spec()
    reps = cfg.replicates if replicates is None else replicates
    rows = []
    for lv, n in cfg.cells:
        for rep in range(reps):
            seeds = run_seeds(cfg.master_seed, lv, n, rep)
            res = erm_fit(spec, generate_data(spec, n, cfg.sigma_for(lv), seeds["data"]), seed=seeds["colloc"])
            rows.append((lv, cfg.sigma_for(lv), n, rep, res.theta_hat, res.l2_error, int(res.flagged)))
    root = Path(path) if path else Path(cfg.output_dir) / "erm.csv"
    root.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(root, ("noise_level", "sigma", "n", "replicate", "theta_hat", "l2_error", "flagged"), rows)
    slopes = {}
    for lv in sorted({r[0] for r in rows}):
        ns = sorted({r[2] for r in rows if r[0] == lv})
        if len(ns) < 2:
            continue
        err = [np.mean([r[5] ** 2 for r in rows if r[0] == lv and r[2] == n]) for n in ns]
        slopes[lv] = float(np.polyfit(np.log(ns), np.log(err), 1)[0])
    return root, slopes
