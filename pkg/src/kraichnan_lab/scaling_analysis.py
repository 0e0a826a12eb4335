"""Power-law fits and consistency checks on solver output."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .errors import FitError, ValidationError


@dataclass(frozen=True)
class PowerFit:
    """y = exp(intercept) x^slope on ``window``; ``slope_ci`` is a 95% interval."""

    slope: float
    intercept: float
    slope_ci: tuple
    r_squared: float
    n_points: int
    window: tuple

    @property
    def prefactor(self) -> float:
        return float(np.exp(self.intercept))


def loglog_fit(x, y, window=None, min_points: int = 4) -> PowerFit:
    """Least-squares line through (log x, log y) restricted to ``window``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be one-dimensional arrays of equal length")
    if window is None:
        window = (float(x.min()), float(x.max()))
    lo, hi = window
    if not lo < hi:
        raise FitError(f"empty window [{lo:g}, {hi:g}]")
    if lo > x.max() or hi < x.min():
        raise FitError(f"window [{lo:g}, {hi:g}] lies outside the data range [{x.min():g}, {x.max():g}]")
    sel = (x >= lo) & (x <= hi)
    for xv, yv in zip(x[sel], y[sel]):
        if not (xv > 0 and yv > 0 and np.isfinite(yv)):
            raise FitError(f"non-positive or non-finite value {yv!r} at x={xv:g}")
    n = int(np.count_nonzero(sel))
    if n < min_points:
        raise FitError(f"only {n} points in window [{lo:g}, {hi:g}] (need {min_points})")
    res = stats.linregress(np.log(x[sel]), np.log(y[sel]))
    q = stats.t.ppf(0.975, n - 2) * res.stderr
    return PowerFit(float(res.slope), float(res.intercept), (float(res.slope - q), float(res.slope + q)),
                    float(res.rvalue ** 2), n, (float(lo), float(hi)))


@dataclass
class YaglomReport:
    """Energy balance -d/dt f(t, 0) = 2 c_tilde A_t.

    ``residual`` is |f_dot + 2 c_tilde A_t| / |f_dot| per time (0 where both
    sides vanish). The integrated form compares f(0, 0) - f(T, 0) with
    2 c_tilde int_0^T A_t dt.
    """

    times: np.ndarray
    energy_rate: np.ndarray
    amplitude: np.ndarray
    residual: np.ndarray
    max_residual: float
    integrated_lhs: float
    integrated_rhs: float
    integrated_residual: float
    window: tuple
    c_tilde: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(), "A_t": self.amplitude.tolist(),
            "minus_energy_rate": (-self.energy_rate).tolist(), "residual": self.residual.tolist(),
            "max_residual": self.max_residual, "integrated_lhs": self.integrated_lhs,
            "integrated_rhs": self.integrated_rhs, "integrated_residual": self.integrated_residual,
            "window": list(self.window), "c_tilde": self.c_tilde,
        }


def yaglom_series(times, energy, amplitude, c_tilde: float, *, initial_energy: float | None = None,
                  window=None) -> YaglomReport:
    """Check the dissipation balance on sampled energy and singular amplitude.

    The rate is a second-order finite difference on the (non-uniform) sample
    times. With ``initial_energy`` the integral starts from A = 0 at t = 0,
    valid for data that are smooth or kinked at the origin; otherwise it starts
    at the first sample.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energy, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    if not (t.shape == e.shape == a.shape) or t.ndim != 1 or t.size < 5:
        raise ValidationError("need at least five samples of time, energy and amplitude of equal length")
    if np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ValidationError("times must be positive and increasing")
    if not np.all(np.isfinite(e)):
        raise ValidationError(f"energy unavailable at t={t[~np.isfinite(e)][0]:g}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"singular amplitude unavailable at t={t[~np.isfinite(a)][0]:g}")
    rate = np.gradient(e, t)
    num = np.abs(rate + 2 * c_tilde * a)
    den = np.abs(rate)
    res = np.divide(num, den, out=np.where(num == 0, 0.0, np.inf), where=den > 0)
    if window is None:
        sel = np.ones_like(t, dtype=bool)
        sel[0] = sel[-1] = False
        window = (float(t[1]), float(t[-2]))
    else:
        sel = (t >= window[0]) & (t <= window[1])
    if not np.any(sel):
        raise FitError("no samples inside the window")
    e0 = e[0] if initial_energy is None else initial_energy
    tt = np.concatenate(([0.0], t)) if initial_energy is not None else t
    aa = np.concatenate(([0.0], a)) if initial_energy is not None else a
    lhs = float(e0 - e[-1])
    rhs = float(2 * c_tilde * integrate.trapezoid(aa, tt))
    if lhs == rhs:
        ires = 0.0
    else:
        ires = abs(lhs - rhs) / abs(lhs) if lhs else float("inf")
    return YaglomReport(t, rate, a, res, float(np.max(res[sel])), lhs, rhs, ires, tuple(window), float(c_tilde))


def yaglom_balance(run, constants, *, window=None) -> YaglomReport:
    """Dissipation balance of a PDE run with c_tilde = c d (1 - alpha) from ``constants``.

    ``run`` must carry ``times``, ``energy`` and ``amplitude`` series; the
    integrated balance starts from the recorded initial energy.
    """
    for name in ("times", "energy", "amplitude"):
        if getattr(run, name, None) is None:
            raise ValidationError(f"run has no {name} series")
    diag = getattr(run, "diagnostics", None) or {}
    return yaglom_series(run.times, run.energy, run.amplitude, constants.c_tilde,
                         initial_energy=diag.get("initial_energy"), window=window)


def predicted_blowup_exponent(alpha: float, delta: float, s: float) -> float:
    """Scaling prediction for t -> [[f_t]] at exponent 2-2alpha-2delta, datum exp(-r^s).

    The seminorm behaves as t^(-e) with e = (2-2alpha-2delta-s)/(2-2alpha) when
    2-2alpha-2delta > s, and stays bounded otherwise.
    """
    g = 2 - 2 * alpha
    return max((g - 2 * delta - s) / g, 0.0)


def seminorm_series(run, exponent: float, l: float | None = None):
    """(t, [[f_t]]) at ``exponent`` over r < l from the stored profiles of a run."""
    from .radial_pde import increment_seminorm

    if not run.profiles:
        raise ValidationError("run stored no profiles (set store_profiles=True)")
    l = run.config.seminorm_l if l is None else l
    l = min(l, float(run.grid.nodes[-1]))
    t = np.array([p.t for p in run.profiles])
    return t, np.array([increment_seminorm(p, exponent, l) for p in run.profiles])


def blowup_exponent(run, delta: float, *, t_max: float | None = None, l: float | None = None,
                    min_points: int = 4) -> PowerFit:
    """Fit [[f_t]] ~ t^(-e) at exponent 2-2alpha-2delta for t <= t_max.

    The returned slope is -e; smooth data give slope near 0. ``t_max`` defaults
    to min(1, last sample time).
    """
    g = 2 - 2 * run.alpha
    if not 0 < delta < g / 2:
        raise ValidationError(f"delta must lie in (0, {g / 2:g}), got {delta}")
    t, sn = seminorm_series(run, g - 2 * delta, l)
    if t_max is None:
        t_max = min(1.0, float(t[-1]))
    sel = t <= t_max
    if np.count_nonzero(sel) < min_points:
        raise ValidationError(f"only {np.count_nonzero(sel)} samples with t <= {t_max:g} (need {min_points})")
    return loglog_fit(t[sel], sn[sel], min_points=min_points)
