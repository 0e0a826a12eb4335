"""Command-line front end: flat key=value configs, experiments and reproducible artifacts.

    kraichnan-lab <experiment> [--config PATH] [--seed N] [--out DIR] [--threads N] [key=value ...]

Config files hold one ``key=value`` per line with ``#`` comments; dotted
prefixes (``model.``, ``solver.``, ``mc.``, ``sweep.``, ``thresholds.``) act as
sections. Command-line pairs override the file. Every output directory gets
manifest.json, one or more CSV files and summary.json; a FAILED file marks an
aborted run. Exit codes: 0 all checks pass, 2 a threshold check failed, 1 error.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, KraichnanLabError

FORMAT_VERSION = 1
EXPERIMENTS = ("constants", "kernel", "regime", "pde", "mc", "yaglom", "dirac", "sweep")
DATUMS = ("gaussian", "stretched", "dirac")

# key -> (type, default); _REQUIRED marks keys without a default
_REQUIRED = object()

SCHEMA = {
    "experiment": (str, _REQUIRED),
    "format_version": (int, FORMAT_VERSION),
    "seed": (int, 0),
    "output_dir": (str, "out"),
    "threads": (int, 1),
    "model.d": (int, 2),
    "model.alpha": (float, _REQUIRED),
    "model.eta": (float, _REQUIRED),
    "model.m": (float, 1.0),
    "model.trace_c0": (float, None),
    "model.kernel_mode": (str, "full_kraichnan"),
    "model.self_similar_c": (float, 1.0),
    "kernel.r_min": (float, 1e-4),
    "kernel.r_max": (float, 10.0),
    "kernel.n_points": (int, 41),
    "kernel.check_radius": (float, 1e-3),
    "solver.kappa": (float, 0.0),
    "solver.mode": (str, "transport"),
    "solver.theta": (float, 0.5),
    "solver.outer_bc": (str, "dirichlet_zero"),
    "solver.dt": (float, 2e-3),
    "solver.dt_min": (float, 1e-9),
    "solver.dt_growth": (float, 0.005),
    "solver.t_first": (float, 1e-2),
    "solver.t_end": (float, 1.0),
    "solver.n_times": (int, 60),
    "solver.h_min": (float, None),
    "solver.r_max": (float, 50.0),
    "solver.growth": (float, 1.04),
    "solver.max_spacing": (float, None),
    "solver.datum": (str, "stretched"),
    "solver.datum_s": (float, 1.0),
    "solver.datum_scale": (float, 1.0),
    "solver.seminorm_delta": (float, 0.05),
    "solver.seminorm_l": (float, 1.0),
    "solver.correlation_length": (float, 1.0),
    "mc.n_paths": (int, 100_000),
    "mc.r0": (float, 1e-2),
    "mc.t_end": (float, None),
    "mc.n_times": (int, 40),
    "mc.t_first": (float, None),
    "mc.dt_max": (float, None),
    "mc.dt_min": (float, 1e-12),
    "mc.eps_dt": (float, 0.05),
    "mc.floor_eps": (float, None),
    "mc.block_size": (int, 4096),
    "sweep.n_alpha": (int, 50),
    "sweep.n_eta": (int, 50),
    "thresholds.constants_rel": (float, 1e-6),
    "thresholds.kernel_rel": (float, 1e-2),
    "thresholds.solver_residual": (float, 1e-8),
    "thresholds.yaglom_pointwise": (float, 0.03),
    "thresholds.yaglom_integrated": (float, 0.03),
    "thresholds.richardson_exponent_rel": (float, 0.05),
    "thresholds.moment_law_z": (float, 3.0),
    "thresholds.lower_bound_factor": (float, 0.9),
    "thresholds.dirac_exponent_rel": (float, 0.07),
    "thresholds.dirac_decades": (float, 1.5),
    "thresholds.mass_drift": (float, 1e-6),
}

# keys that never change results; excluded from the config hash
_NON_RESULT_KEYS = ("output_dir", "threads")
_MODEL_FREE = ("regime", "sweep")


@dataclass
class ExperimentConfig:
    """Resolved configuration; ``values`` holds every schema key."""

    values: dict
    sources: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    def section(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def canonical(self) -> str:
        return "".join(f"{k}={_render(v)}\n" for k, v in sorted(self.values.items()) if k not in _NON_RESULT_KEYS)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key: str, raw: str, where: str):
    typ = SCHEMA[key][0]
    text = raw.strip()
    if text.lower() == "none" and SCHEMA[key][1] is None:
        return None
    try:
        if typ is int:
            if text.lower().startswith(("0x", "0o", "0b")):
                raise ValueError
            return int(text)
        if typ is float:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        if typ is bool:
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError
            return text.lower() in ("true", "1")
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r} ({where})", key=key) from None
    if not text:
        raise ConfigError(f"{key}: empty value ({where})", key=key)
    return text


def _parse_pairs(pairs, label):
    """pairs: iterable of (line number, text). Returns {key: (raw, line)}."""
    out = {}
    for lineno, line in pairs:
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{label} {lineno}: expected key=value, got {body!r}", lines=(lineno,))
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} at {label} {lineno}", key=key, lines=(lineno,))
        if key in out:
            first = out[key][1]
            raise ConfigError(f"duplicate key {key!r} at {label}s {first} and {lineno}", key=key,
                              lines=(first, lineno))
        out[key] = (raw, lineno)
    return out


def parse_config(path=None, overrides=(), **flags) -> ExperimentConfig:
    """Merge a config file, key=value overrides and named flags into a validated config.

    Precedence: flags > overrides > file > defaults. Raises ConfigError naming the
    key and line on unknown keys, type mismatches, duplicates and missing keys.
    """
    raw = {}
    sources = {}
    if path is not None:
        try:
            text = Path(path).read_bytes().decode("utf-8")
        except UnicodeDecodeError:
            raise ConfigError(f"{path}: not valid UTF-8") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        for key, (v, ln) in _parse_pairs(enumerate(text.splitlines(), 1), "line").items():
            raw[key] = (v, f"line {ln}")
    for key, (v, ln) in _parse_pairs(enumerate(overrides, 1), "argument").items():
        raw[key] = (v, f"argument {ln}")
    for key, v in flags.items():
        if v is not None:
            raw[key] = (str(v), f"--{key.replace('_', '-')}")

    values = {}
    for key, (typ, default) in SCHEMA.items():
        if key in raw:
            text, where = raw[key]
            values[key] = _convert(key, text, where)
            sources[key] = where
        else:
            values[key] = default
            sources[key] = "default"
    exp = values["experiment"]
    if exp is _REQUIRED:
        raise ConfigError("missing required key 'experiment'", key="experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r} ({sources['experiment']})",
                          key="experiment")
    for key, v in values.items():
        if v is _REQUIRED:
            if exp in _MODEL_FREE and key.startswith("model."):
                values[key] = None
                continue
            raise ConfigError(f"missing required key {key!r} for experiment {exp}", key=key)
    if values["format_version"] != FORMAT_VERSION:
        raise ConfigError(f"format_version {values['format_version']} is not supported "
                          f"(expected {FORMAT_VERSION})", key="format_version")
    if values["threads"] < 1:
        raise ConfigError("threads must be positive", key="threads")
    if not 0 <= values["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer", key="seed")
    if values["solver.datum"] not in DATUMS:
        raise ConfigError(f"solver.datum must be one of {DATUMS}", key="solver.datum")
    cfg = ExperimentConfig(values, sources)
    if values["model.alpha"] is not None:
        try:
            _model(cfg)
        except KraichnanLabError as exc:
            # validation messages start with the offending field name
            words = str(exc).split()
            name = words[1] if words[0] == "unknown" else words[0]
            key = f"model.{name}" if f"model.{name}" in SCHEMA else None
            line = cfg.sources.get(key, "")
            raise ConfigError(f"{key or 'model'}: {exc} ({line})" if line else str(exc), key=key) from None
    return cfg


# artifact writing


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_bytes(header, rows, cfg: ExperimentConfig) -> bytes:
    buf = io.StringIO(newline="")
    buf.write(f"# format_version={FORMAT_VERSION} config_hash={cfg.hash}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    return buf.getvalue().encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str

    def as_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "relation": self.relation, "pass": bool(self.passed)}


def _le(name, value, threshold):
    return Check(name, float(value), float(threshold), bool(value <= threshold), "<=")


def _ge(name, value, threshold):
    return Check(name, float(value), float(threshold), bool(value >= threshold), ">=")


@dataclass
class Outcome:
    csv: dict
    results: dict
    checks: list


# experiments


def _model(cfg: ExperimentConfig):
    from .kernels import ModelParams

    m = cfg.section("model")
    return ModelParams(d=m["d"], alpha=m["alpha"], eta=m["eta"], m=m["m"], trace_c0=m["trace_c0"],
                       kernel_mode=m["kernel_mode"], self_similar_c=m["self_similar_c"])


def _kernel(cfg):
    from .kernels import IsotropicKernel

    return IsotropicKernel(_model(cfg))


def run_constants(cfg) -> Outcome:
    from .kernels import KernelMode, dissipation_constant_closed_form

    params = _model(cfg)
    const = _kernel(cfg).constants
    d = const.as_dict()
    checks = []
    if params.kernel_mode is KernelMode.FULL_KRAICHNAN and params.eta == 1.0:
        closed = dissipation_constant_closed_form(params.alpha, params.d, params.trace_c0)
        rel = abs(closed - const.c_tilde) / const.c_tilde
        d["c_tilde_closed_form"] = closed
        d["closed_form_ratio"] = closed / const.c_tilde
        checks.append(_le("c_tilde_closed_form_rel", rel, cfg["thresholds.constants_rel"]))
    rows = [(k, v) for k, v in sorted(d.items())]
    return Outcome({"constants.csv": (("name", "value"), rows)}, d, checks)


def run_kernel(cfg) -> Outcome:
    kern = _kernel(cfg)
    const = kern.constants
    p = kern.params
    r = np.geomspace(cfg["kernel.r_min"], cfg["kernel.r_max"], cfg["kernel.n_points"]) / p.m
    bl, bn = kern.coefficients(r)
    rows = [(x, a, b, a / x ** (2 * p.alpha), b / a) for x, a, b in zip(r, bl, bn)]
    rc = np.array([cfg["kernel.check_radius"] / p.m])
    bl0, bn0 = kern.coefficients(rc)
    err_c = abs(bl0[0] / rc[0] ** (2 * p.alpha) / const.c - 1)
    err_b = abs(bn0[0] / bl0[0] / const.beta - 1)
    tol = cfg["thresholds.kernel_rel"]
    checks = [_le("bL_over_r2a_rel", err_c, tol), _le("bN_over_bL_rel", err_b, tol)]
    res = {"constants": const.as_dict(), "check_radius": float(rc[0]),
           "bL_over_r2a_rel_error": err_c, "bN_over_bL_rel_error": err_b}
    return Outcome({"kernel.csv": (("r", "bL", "bN", "bL_over_r2a", "bN_over_bL"), rows)}, res, checks)


def _regime_grid(cfg):
    na, ne = cfg["sweep.n_alpha"], cfg["sweep.n_eta"]
    if na < 1 or ne < 2:
        raise ConfigError("sweep.n_alpha must be >= 1 and sweep.n_eta >= 2", key="sweep.n_alpha")
    alphas = [(i + 1) / (na + 1) for i in range(na)]
    etas = [j / (ne - 1) for j in range(ne)]
    return alphas, etas


def _reference_regime(d, a, e):
    # plain floating-point restatement of the thresholds, used as the check
    t1 = 1 - d / (4 * a * a)
    t2 = 0.5 - (d - 2) / (4 * a)
    if abs(e - t1) <= 1e-9 or abs(e - t2) <= 1e-9:
        return None
    if e < t1:
        return "coalescing"
    return "diffusive_with_hitting" if e < t2 else "diffusive_no_hitting"


def run_regime(cfg) -> Outcome:
    from .kernels import classify_regime, regime_thresholds

    d = cfg["model.d"]
    alphas, etas = _regime_grid(cfg)
    rows = []
    mismatches = 0
    counts = {}
    for a in alphas:
        t1, t2 = regime_thresholds(d, a)
        for e in etas:
            reg = classify_regime(a, e, d).value
            ref = _reference_regime(d, a, e)
            if ref is not None and ref != reg:
                mismatches += 1
            counts[reg] = counts.get(reg, 0) + 1
            rows.append((a, e, reg, t1, t2))
    res = {"d": d, "n_points": len(rows), "counts": counts, "mismatches": mismatches}
    checks = [_le("regime_mismatches", mismatches, 0)]
    return Outcome({"regimes.csv": (("alpha", "eta", "regime", "eta_coalescence", "eta_hitting"), rows)},
                   res, checks)


def _sweep_point(d, a, e):
    from .kernels import ModelParams, derived_constants

    c = derived_constants(ModelParams(d=d, alpha=a, eta=e))
    return (a, e, c.regime.value, c.c, c.beta, c.delta_star, c.c_tilde, c.k_ric)


def run_sweep(cfg) -> Outcome:
    d = cfg["model.d"]
    alphas, etas = _regime_grid(cfg)
    pts = [(a, e) for a in alphas for e in etas]
    with ThreadPoolExecutor(max_workers=cfg["threads"]) as ex:
        rows = list(ex.map(lambda p: _sweep_point(d, *p), pts))
    bad = sum(1 for (a, e, reg, *_) in rows
              if _reference_regime(d, a, e) not in (None, reg))
    header = ("alpha", "eta", "regime", "c", "beta", "delta_star", "c_tilde", "k_ric")
    return Outcome({"sweep.csv": (header, rows)}, {"d": d, "n_points": len(rows), "mismatches": bad},
                   [_le("regime_mismatches", bad, 0)])


def _datum(cfg, d):
    from .radial_pde import DiracApproxDatum, GaussianDatum, StretchedExponentialDatum

    s = cfg.section("solver")
    if s["datum"] == "gaussian":
        return GaussianDatum(sigma=s["datum_scale"])
    if s["datum"] == "dirac":
        return DiracApproxDatum(d=d, width=s["datum_scale"])
    return StretchedExponentialDatum(s=s["datum_s"], scale=s["datum_scale"])


def _pde(cfg, **over):
    from .radial_pde import PdeConfig, build_grid, evolve

    s = dict(cfg.section("solver"), **over)
    kern = _kernel(cfg)
    h_min = s["h_min"]
    if h_min is None:
        # singular layer error scales like h_min^(2-2alpha)
        h_min = min(1e-12, max(1e-8 ** (1 / (2 - 2 * kern.params.alpha)), 1e-200))
    grid = build_grid(h_min, s["r_max"], s["growth"], s["max_spacing"])
    if not 0 < s["t_first"] < s["t_end"]:
        raise ConfigError("solver.t_first must lie in (0, solver.t_end)", key="solver.t_first")
    times = tuple(np.geomspace(s["t_first"], s["t_end"], s["n_times"]))
    pc = PdeConfig(kappa=s["kappa"], mode=s["mode"], theta=s["theta"], outer_bc=s["outer_bc"], dt=s["dt"],
                   dt_min=s["dt_min"], dt_growth=s["dt_growth"], observable_times=times,
                   seminorm_delta=s["seminorm_delta"], seminorm_l=min(s["seminorm_l"], s["r_max"]),
                   correlation_length=s["correlation_length"], store_profiles=False,
                   residual_tol=cfg["thresholds.solver_residual"])
    run = evolve(kern, grid, pc, _datum(cfg, kern.params.d))
    return kern, run


_PDE_HEADER = ("t", "energy", "seminorm_minus", "seminorm_plus", "amplitude", "mass")


def _pde_rows(run):
    return list(zip(run.times, run.energy, run.seminorm_minus, run.seminorm_plus, run.amplitude, run.mass))


def run_pde(cfg) -> Outcome:
    kern, run = _pde(cfg)
    e0 = run.diagnostics["initial_energy"]
    res = {"constants": kern.constants.as_dict(), "n_nodes": len(run.grid.nodes), "n_steps": run.n_steps,
           "initial_energy": e0, "final_energy": float(run.energy[-1]),
           "relative_energy_loss": float((e0 - run.energy[-1]) / e0) if e0 else 0.0,
           "frozen_origin": run.frozen_origin, "max_residual": run.max_residual,
           "origin_exponent": run.diagnostics["origin_exponent"]}
    checks = [_le("solver_residual", run.max_residual, cfg["thresholds.solver_residual"])]
    return Outcome({"pde.csv": (_PDE_HEADER, _pde_rows(run))}, res, checks)


def run_yaglom(cfg) -> Outcome:
    from .scaling_analysis import yaglom_balance

    kern, run = _pde(cfg)
    rep = yaglom_balance(run, kern.constants)
    rows = list(zip(rep.times, rep.amplitude, -rep.energy_rate, rep.residual))
    checks = [_le("yaglom_pointwise", rep.max_residual, cfg["thresholds.yaglom_pointwise"]),
              _le("yaglom_integrated", rep.integrated_residual, cfg["thresholds.yaglom_integrated"])]
    res = rep.as_dict()
    for k in ("times", "A_t", "minus_energy_rate", "residual"):
        res.pop(k)
    res["constants"] = kern.constants.as_dict()
    return Outcome({"yaglom.csv": (("t", "A_t", "minus_energy_rate", "residual"), rows),
                    "pde.csv": (_PDE_HEADER, _pde_rows(run))}, res, checks)


def run_dirac(cfg) -> Outcome:
    from .scaling_analysis import loglog_fit

    kern, run = _pde(cfg)
    d, a = kern.params.d, kern.params.alpha
    pred = d / (2 * (1 - a))
    t = run.times
    lo = t[-1] / 10 ** cfg["thresholds.dirac_decades"]
    fit = loglog_fit(t, run.energy, window=(lo * (1 - 1e-12), t[-1]))
    decades = math.log10(fit.window[1] / max(fit.window[0], t[0]))
    rel = abs(-fit.slope - pred) / pred
    finite_mass = np.isfinite(run.mass)
    drift = float(np.ptp(run.mass) / abs(run.mass[0])) if np.all(finite_mass) and run.mass[0] else float("nan")
    checks = [_le("dirac_exponent_rel", rel, cfg["thresholds.dirac_exponent_rel"]),
              _ge("dirac_decades", decades, cfg["thresholds.dirac_decades"])]
    if np.isfinite(drift):
        checks.append(_le("mass_drift", drift, cfg["thresholds.mass_drift"]))
    res = {"constants": kern.constants.as_dict(), "exponent": -fit.slope, "exponent_ci":
           [-fit.slope_ci[1], -fit.slope_ci[0]], "predicted_exponent": pred, "window": list(fit.window),
           "mass_drift": drift}
    return Outcome({"dirac.csv": (("t", "G0", "mass"), list(zip(t, run.energy, run.mass)))}, res, checks)


def run_mc(cfg) -> Outcome:
    from .dispersion_mc import McConfig, richardson_report, simulate_separation

    kern = _kernel(cfg)
    m = cfg.section("mc")
    t_end = m["t_end"]
    if t_end is None:
        # three decades past the memory time of the initial separation
        t_end = 1000 * max(m["r0"], m["floor_eps"] or 0.0, 1e-8 ** (1 / (2 - 2 * kern.params.alpha))) \
            ** (2 - 2 * kern.params.alpha)
    mc = McConfig(n_paths=m["n_paths"], r0=m["r0"], t_end=t_end, n_times=m["n_times"],
                  t_first=m["t_first"], dt_max=m["dt_max"], dt_min=m["dt_min"], eps_dt=m["eps_dt"],
                  floor_eps=m["floor_eps"], master_seed=cfg["seed"], threads=cfg["threads"],
                  block_size=m["block_size"])
    ens = simulate_separation(kern, mc)
    const = kern.constants
    rep = richardson_report(ens, const)
    g = 2 - 2 * kern.params.alpha
    ev, se = ens.mean_variance()
    rows = list(zip(ens.times, ens.moments[g], ens.stderr[g], ev, se))
    rel = abs(rep.exponent - rep.predicted_exponent) / rep.predicted_exponent
    checks = [_le("richardson_exponent_rel", rel, cfg["thresholds.richardson_exponent_rel"]),
              _le("moment_law_max_z", rep.moment_law_max_z, cfg["thresholds.moment_law_z"])]
    if const.k_ric > 0:
        checks.append(_ge("prefactor_over_k_ric", rep.prefactor / const.k_ric, cfg["thresholds.lower_bound_factor"]))
    res = dict(rep.as_dict(), constants=const.as_dict(), n_steps=ens.n_steps)
    return Outcome({"richardson.csv": (("t", "mean_r_gamma", "stderr_r_gamma", "mean_variance",
                                        "stderr_mean_variance"), rows)}, res, checks)


RUNNERS = {
    "constants": run_constants, "kernel": run_kernel, "regime": run_regime, "sweep": run_sweep,
    "pde": run_pde, "yaglom": run_yaglom, "dirac": run_dirac, "mc": run_mc,
}


def _versions():
    import numba
    import scipy

    from . import __version__

    return {"kraichnan_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> int:
    """Run the configured experiment and write its artifacts; returns the exit code."""
    out = Path(out_dir if out_dir is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    manifest = {"format_version": FORMAT_VERSION, "config_hash": cfg.hash, "seed": cfg["seed"],
                "experiment": cfg.experiment, "config": dict(cfg.values), "config_sources": cfg.sources,
                "versions": _versions()}
    try:
        if cfg["model.alpha"] is not None:
            manifest["constants"] = _kernel(cfg).constants.as_dict()
        _atomic_write(out / "manifest.json", json_bytes(manifest))
        outcome = RUNNERS[cfg.experiment](cfg)
        for name, (header, rows) in outcome.csv.items():
            _atomic_write(out / name, csv_bytes(header, rows, cfg))
        passed = all(c.passed for c in outcome.checks)
        summary = {"format_version": FORMAT_VERSION, "config_hash": cfg.hash, "experiment": cfg.experiment,
                   "pass": passed, "checks": [c.as_dict() for c in outcome.checks], "results": outcome.results}
        _atomic_write(out / "summary.json", json_bytes(summary))
    except Exception as exc:
        _atomic_write(failed, f"{type(exc).__name__}: {exc}\n".encode("utf-8"))
        raise
    return 0 if passed else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kraichnan-lab", description="Kraichnan model experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", metavar="PATH")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--threads", type=int)
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    try:
        cfg = parse_config(args.config, args.overrides, experiment=args.experiment, seed=args.seed,
                           output_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        code = run_experiment(cfg)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.experiment}: {'pass' if code == 0 else 'threshold failure'} ({Path(cfg['output_dir'])})")
    return code


if __name__ == "__main__":
    sys.exit(main())
