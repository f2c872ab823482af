"""Experiment configuration, seeded sweeps and report files."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis
from .barriers import Barrier
from .errors import ConfigError, DegenerateInput, NCSMDError
from .oracle import LINK_KINDS, CostFunction, build_instance
from .solver import PreconditionWarning, run, run_uniform_baseline
from .solver import derive_hyperparams as _derive_hyperparams

SCHEMA_VERSION = 1

CURVE_COLUMNS = ["T", "seed", "t", "cum_db_regret", "cum_fo_regret"]
SUMMARY_COLUMNS = [
    "T", "n_seeds", "n_ok", "precondition_ok",
    "mean_db_regret", "se_db_regret", "mean_fo_regret", "se_fo_regret",
    "mean_batch_gap", "se_batch_gap",
    "theorem1_bound", "theorem2_bound", "lower_bound_line",
    "db_exponent", "db_exponent_ci_low", "db_exponent_ci_high",
    "batch_exponent", "batch_exponent_ci_low", "batch_exponent_ci_high",
]

_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["version", "instance", "T_grid", "seeds"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "instance": {
            "type": "object",
            "required": ["set", "cost", "link"],
            "additionalProperties": False,
            "properties": {
                "set": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["kind", "center"],
                            "additionalProperties": False,
                            "properties": {
                                "kind": {"const": "ball"},
                                "center": _VECTOR,
                                "radius": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                        {
                            "type": "object",
                            "required": ["kind", "lower", "upper"],
                            "additionalProperties": False,
                            "properties": {
                                "kind": {"const": "box"},
                                "lower": _VECTOR,
                                "upper": _VECTOR,
                            },
                        },
                    ]
                },
                "cost": {
                    "type": "object",
                    "required": ["center"],
                    "additionalProperties": False,
                    "properties": {
                        "center": _VECTOR,
                        "Q": {"type": "array", "items": _VECTOR},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "offset": {"type": "number"},
                    },
                },
                "link": {"enum": list(LINK_KINDS)},
            },
        },
        "T_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0},
                  "minItems": 1, "uniqueItems": True},
        "overrides": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "mu": {"type": "number", "minimum": 0},
            },
        },
        "baseline": {"enum": [None, "uniform_random_pair"]},
        "output_dir": {"type": "string"},
        "curve_points": {"type": "integer", "minimum": 0},
        "validation": {"type": "object"},
    },
}


@dataclass
class ExperimentConfig:
    instance: dict
    T_grid: list
    seeds: list
    overrides: dict = field(default_factory=dict)
    baseline: str | None = None
    output_dir: str = "out"
    curve_points: int = 1024
    validation: dict = field(default_factory=dict)
    version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data):
        validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
        if errors:
            err = errors[0]
            path = ".".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(path, err.message)
        grid = data["T_grid"]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("T_grid", "must be strictly increasing")
        kwargs = {k: data[k] for k in ("instance", "T_grid", "seeds", "overrides", "baseline",
                                       "output_dir", "curve_points", "validation", "version")
                  if k in data}
        cfg = cls(**kwargs)
        cfg.build_instance()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("<file>", f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def build_instance(self, link=None):
        spec = self.instance
        s = spec["set"]
        try:
            if s["kind"] == "ball":
                geometry = Barrier.ball(s["center"], s.get("radius", 1.0))
            else:
                geometry = Barrier.box(s["lower"], s["upper"])
        except ValueError as exc:
            raise ConfigError("instance.set", str(exc)) from None
        c = spec["cost"]
        center = np.asarray(c["center"], dtype=float)
        if center.size != geometry.dim:
            raise ConfigError("instance.cost.center", "dimension differs from the set")
        try:
            if "Q" in c:
                cost = CostFunction(np.asarray(c["Q"], dtype=float), center, c.get("offset", 0.0))
            else:
                cost = CostFunction.isotropic(center, c.get("scale", 1.0), c.get("offset", 0.0))
            return build_instance(geometry, cost, link or spec["link"])
        except ValueError as exc:
            raise ConfigError("instance.cost", str(exc)) from None
        except NCSMDError as exc:
            raise ConfigError("instance.link", str(exc)) from None


def derive_hyperparams(*args, **kwargs):
    # sweeps cover short horizons on purpose; the flag is kept on the config
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PreconditionWarning)
        return _derive_hyperparams(*args, **kwargs)


def _curve_indices(T, max_points):
    if T == 0:
        return np.zeros(0, dtype=int)
    if max_points <= 0 or max_points >= T:
        return np.arange(T)
    idx = np.unique(np.linspace(0, T - 1, max_points).round().astype(int))
    return idx


def run_cell(inst, T, seed, overrides=None, baseline=None, curve_points=0):
    """One (T, seed) trajectory reduced to a summary row and a thinned regret curve."""
    row = {"T": int(T), "seed": int(seed), "status": "ok", "error": None}
    try:
        cfg = derive_hyperparams(inst, inst.geometry.nu, max(T, 2), seed, overrides)
    except ValueError as exc:
        row.update(status="error", error=str(exc))
        return row, None
    cfg.T = int(T)
    row["eta"] = cfg.eta
    row["precondition_ok"] = bool(cfg.precondition_ok)
    if baseline == "uniform_random_pair":
        traj = run_uniform_baseline(inst, T, seed)
    else:
        traj = run(inst, cfg)
    if traj.failure:
        row.update(status="error", error=traj.failure)
    n = traj.n_steps
    row["n_steps"] = n
    series = analysis.regret_series(traj, inst)
    sw = analysis.sandwich_check(series)
    d = inst.dim
    geo = inst.geometry
    feasible = bool(n == 0 or (geo.interior_mask(traj.a).all() and geo.interior_mask(traj.a_prime).all()))
    rel_res = traj.newton_residual / np.maximum(1.0, traj.theta_norm) if n else np.zeros(0)
    row.update(
        final_db_regret=series.total_db,
        final_fo_regret=series.total_fo,
        batch_gap=float(inst.gap(traj.a_bar)) if n else None,
        fo_over_2T=series.total_fo / (2 * n) if n else None,
        max_dual_bregman=float(traj.dual_bregman.max()) if n else 0.0,
        lemma6_bound=4.0 * d * d * cfg.eta ** 2,
        feasible=feasible,
        sandwich_ok=sw.passed,
        sandwich_min_ratio=sw.min_ratio,
        sandwich_max_ratio=sw.max_ratio,
        max_newton_iters=int(traj.newton_iters.max()) if n else 0,
        max_mirror_residual=float(traj.newton_residual.max()) if n else 0.0,
        max_mirror_residual_rel=float(rel_res.max()) if n else 0.0,
        max_theta_norm=float(traj.theta_norm.max()) if n else 0.0,
    )
    idx = _curve_indices(n, curve_points)
    curve = (idx + 1, series.cum_db[idx], series.cum_fo[idx])
    return row, curve


def _run_cell_star(args):
    return run_cell(*args)


def _mean_se(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return None, None
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return float(v.mean()), se


def run_sweep(cfg, jobs=1, seed_offset=0):
    """Run every (T, seed) cell; results are merged in (T, seed) order."""
    inst = cfg.build_instance()
    seeds = [s + seed_offset for s in cfg.seeds]
    cells = [(inst, T, s, cfg.overrides or None, cfg.baseline, cfg.curve_points)
             for T in cfg.T_grid for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, cells))
    else:
        results = [_run_cell_star(c) for c in cells]
    rows = [r for r, _ in results]
    curves = [(r["T"], r["seed"], c) for r, c in results if c is not None]
    return inst, rows, curves


def aggregate(inst, cfg, rows):
    """Per-T means, standard errors, bounds and the growth-exponent fits."""
    nu = inst.geometry.nu
    per_T = []
    for T in cfg.T_grid:
        sel = [r for r in rows if r["T"] == T]
        ok = [r for r in sel if r["status"] == "ok"]
        entry = {"T": T, "n_seeds": len(sel), "n_ok": len(ok)}
        for key, name in (("final_db_regret", "db_regret"), ("final_fo_regret", "fo_regret"),
                          ("batch_gap", "batch_gap")):
            m, se = _mean_se(r.get(key) for r in ok)
            entry[f"mean_{name}"] = m
            entry[f"se_{name}"] = se
        if T >= 2:
            hp = derive_hyperparams(inst, nu, T, overrides=cfg.overrides or None)
            entry["precondition_ok"] = bool(hp.precondition_ok) and cfg.baseline is None
            entry["theorem1_bound"] = analysis.theorem1_bound(inst, hp, T)
            entry["theorem2_bound"] = analysis.theorem2_bound(inst, nu, hp.C, T)
        else:
            entry["precondition_ok"] = False
            entry["theorem1_bound"] = entry["theorem2_bound"] = None
        entry["lower_bound_line"] = analysis.lower_bound_line(inst.dim, T)
        per_T.append(entry)

    fits = {}
    flags = []
    for label, key in (("db", "mean_db_regret"), ("batch", "mean_batch_gap")):
        pts = [(e["T"], e[key]) for e in per_T if e[key] is not None]
        try:
            fit = analysis.fit_growth_exponent(pts)
            fits[label] = asdict(fit)
            if len(cfg.seeds) < 2 or fit.ci_high - fit.ci_low > 0.2:
                flags.append(f"wide_ci:{label}")
        except DegenerateInput as exc:
            fits[label] = None
            flags.append(f"degenerate_fit:{label}:{exc}")
    return per_T, fits, flags


def instance_summary(inst):
    return {
        "dim": inst.dim, "set": inst.geometry.kind, "nu": inst.geometry.nu,
        "link": inst.link.kind, "alpha": inst.alpha, "beta": inst.beta, "L": inst.L,
        "B": inst.B, "R_diam": inst.R_diam, "l0": inst.l0, "L0": inst.L0, "B2": inst.B2,
        "L2": inst.L2, "a_star": inst.a_star.tolist(), "f_star": inst.f_star,
    }


def hyperparams_summary(inst, cfg):
    out = []
    for T in cfg.T_grid:
        if T < 2:
            continue
        hp = derive_hyperparams(inst, inst.geometry.nu, T, overrides=cfg.overrides or None)
        out.append({"T": T, "eta": hp.eta, "lam": hp.lam, "mu": hp.mu, "C": hp.C,
                    "precondition_ok": hp.precondition_ok})
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curves(path, curves):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=",")
        w.writerow(CURVE_COLUMNS)
        for T, seed, (ts, db, fo) in curves:
            for t, x, y in zip(ts, db, fo):
                w.writerow([T, seed, int(t), repr(float(x)), repr(float(y))])


def write_summary(path, per_T, fits):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=",")
        w.writerow(SUMMARY_COLUMNS)
        for e in per_T:
            vals = dict(e)
            for label in ("db", "batch"):
                fit = fits.get(label)
                vals[f"{label}_exponent"] = fit["exponent"] if fit else None
                vals[f"{label}_exponent_ci_low"] = fit["ci_low"] if fit else None
                vals[f"{label}_exponent_ci_high"] = fit["ci_high"] if fit else None
            w.writerow(["" if vals.get(c) is None else vals[c] for c in SUMMARY_COLUMNS])


def build_report(cfg, inst, rows, per_T, fits, flags, kind):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "instance": instance_summary(inst),
        "hyperparameters": hyperparams_summary(inst, cfg),
        "rows": rows,
        "aggregates": per_T,
        "fits": fits,
        "flags": flags,
    }


def cmd_run(cfg, out_dir=None, jobs=1, seed_offset=0, kind="run"):
    """Run the sweep and write ``report.json`` and ``regret_curves.csv``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inst, rows, curves = run_sweep(cfg, jobs, seed_offset)
    per_T, fits, flags = aggregate(inst, cfg, rows)
    report = build_report(cfg, inst, rows, per_T, fits, flags, kind)
    write_json(out / "report.json", report)
    write_curves(out / "regret_curves.csv", curves)
    return report


def cmd_sweep(cfg, out_dir=None, jobs=1, seed_offset=0):
    """As :func:`cmd_run`, plus ``sweep_summary.csv`` with bounds and fitted slopes."""
    grid = cfg.T_grid
    if len(grid) < 4 or math.log10(grid[-1] / grid[0]) < 2 - 1e-12:
        raise ConfigError("T_grid", "a sweep needs at least 4 horizons spanning 2 decades")
    out = Path(out_dir or cfg.output_dir)
    report = cmd_run(cfg, out, jobs, seed_offset, kind="sweep")
    write_summary(out / "sweep_summary.csv", report["aggregates"], report["fits"])
    return report


def default_jobs():
    return max(1, (os.cpu_count() or 1))
