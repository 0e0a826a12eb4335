"""Monte Carlo of the pair separation r_t = |X_t - Y_t| under the Kraichnan flow.

The separation solves the one-dimensional SDE

    dr = (d-1) b_N(r) / r dt + sqrt(2 b_L(r)) dB.

Paths are advanced by Euler-Maruyama in Y = r^(2-2alpha), where the
self-similar drift is constant and the noise is sqrt(Y) dB (a squared Bessel
process). Steps are adaptive, dt = clip(eps_dt * Y, dt_min, dt_max), shortened to
land on every sample time; Y is reflected at floor_eps^(2-2alpha), by default
1e-8 so that a start from the floor carries no memory at the sample times.

Paths are split into fixed blocks with their own Philox stream derived from
(seed, block index). Block sums are combined by a fixed pairwise tree, so the
result does not depend on the number of threads.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import FitError, NumericalError, ValidationError
from .kernels import IsotropicKernel, KernelMode


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    r0: float = 1e-2
    t_end: float = 10.0
    n_times: int = 40
    t_first: float | None = None
    sample_times: Sequence[float] | None = None
    dt_max: float | None = None
    dt_min: float = 1e-12
    eps_dt: float = 0.1
    floor_eps: float | None = None
    master_seed: int = 0
    threads: int = 1
    block_size: int = 4096
    retain_samples: bool = False
    moment_orders: Sequence[float] | None = None

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 100:
            raise ValidationError(f"n_paths must be an integer >= 100, got {self.n_paths}")
        if not (math.isfinite(self.r0) and self.r0 >= 0):
            raise ValidationError(f"r0 must be non-negative, got {self.r0!r}")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValidationError("master_seed must be a 64-bit unsigned integer")
        names = ("t_end", "eps_dt", "dt_min") + (("floor_eps",) if self.floor_eps is not None else ())
        for name in names:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive, got {v!r}")
        if self.floor_eps is not None and 0 < self.r0 < self.floor_eps:
            raise ValidationError("floor_eps must not exceed r0 (use r0 = 0 for a Dirac start)")
        if self.dt_max is not None and not 0 < self.dt_max:
            raise ValidationError("dt_max must be positive")
        if self.threads < 1 or self.block_size < 1:
            raise ValidationError("threads and block_size must be positive")
        if self.n_times < 2:
            raise ValidationError("n_times must be at least 2")

    def resolved(self, alpha: float) -> "McConfig":
        """Copy with the default floor filled in: floor^(2-2alpha) = 1e-8, capped by r0."""
        if self.floor_eps is not None:
            return self
        floor = max(1e-8 ** (1 / (2 - 2 * alpha)), 1e-300)
        if self.r0 > 0:
            floor = min(floor, self.r0)
        return dataclasses.replace(self, floor_eps=floor)

    @property
    def start(self) -> float:
        """Initial separation; a Dirac start r0 = 0 begins at floor_eps."""
        if self.r0 > 0:
            return self.r0
        if self.floor_eps is None:
            raise ValidationError("floor_eps is unresolved; call resolved(alpha) first")
        return self.floor_eps

    def times(self, alpha: float) -> np.ndarray:
        if self.sample_times is not None:
            ts = np.asarray(self.sample_times, dtype=float)
            if ts.size == 0 or np.any(ts <= 0) or np.any(np.diff(ts) <= 0):
                raise ValidationError("sample_times must be positive and increasing")
            return ts
        t_first = self.t_first
        if t_first is None:
            t_first = min(self.start ** (2 - 2 * alpha), 1e-2 * self.t_end)
        if not 0 < t_first < self.t_end:
            raise ValidationError("t_first must lie in (0, t_end)")
        return np.geomspace(t_first, self.t_end, self.n_times)


@dataclass
class SeparationEnsemble:
    """Moments of r_t at the sample times.

    ``moments[q]`` and ``stderr[q]`` are the ensemble mean of r_t^q and its
    standard error. ``sup_stat`` holds, per path, the largest sampled value of
    r_t^2 / (2 t^(1/(1-alpha))), the pathwise Richardson ratio.
    """

    times: np.ndarray
    moments: dict
    stderr: dict
    n_valid: np.ndarray
    n_flagged: int
    sup_stat: np.ndarray
    samples: np.ndarray | None
    config: McConfig
    alpha: float
    d: int
    n_steps: int = 0
    extra: dict = field(default_factory=dict)

    def mean_variance(self):
        """E[Var(mu_t)] = E[r_t^2] / 2 and its standard error."""
        return 0.5 * self.moments[2.0], 0.5 * self.stderr[2.0]


def _drift_diffusion(kernel: IsotropicKernel, gam: float):
    """Functions Y -> (drift, noise amplitude) of the SDE for Y = r^gam."""
    p = kernel.params
    d = p.d
    if kernel.is_zero:
        def fn(y):
            return np.zeros_like(y), np.zeros_like(y)
        return fn
    if kernel.mode is KernelMode.SELF_SIMILAR:
        c = p.self_similar_c
        beta = kernel.constants.beta
        k = c * gam * (gam - 1 + (d - 1) * beta)
        s = gam * math.sqrt(2 * c)

        def fn(y):
            return np.full_like(y, k), s * np.sqrt(y)
        return fn

    def fn(y):
        r = y ** (1.0 / gam)
        bl, bn = kernel.coefficients(r)
        drift = gam * r ** (gam - 2) * ((gam - 1) * bl + (d - 1) * bn)
        noise = gam * r ** (gam - 1) * np.sqrt(2 * bl)
        return drift, noise
    return fn


def _tree_sum(parts: list):
    """Pairwise reduction in a fixed order."""
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _run_block(kernel, cfg: McConfig, times, orders, gam, alpha, block, n):
    ss = np.random.SeedSequence(int(cfg.master_seed), spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    fn = _drift_diffusion(kernel, gam)
    dt_max = cfg.dt_max if cfg.dt_max is not None else cfg.t_end / 500.0
    y_floor = cfg.floor_eps ** gam
    r = np.full(n, cfg.start)
    y = r ** gam
    t = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    nt = len(times)
    s1 = np.zeros((len(orders), nt))
    s2 = np.zeros((len(orders), nt))
    cnt = np.zeros(nt)
    sup = np.zeros(n)
    samples = np.empty((n, nt)) if cfg.retain_samples else None
    steps = 0
    for k, tk in enumerate(times):
        while True:
            idx = np.nonzero(ok & (t < tk))[0]
            if idx.size == 0:
                break
            yi = y[idx]
            dt = np.clip(cfg.eps_dt * yi, cfg.dt_min, dt_max)
            rem = tk - t[idx]
            land = dt >= rem
            dt = np.where(land, rem, dt)
            drift, noise = fn(yi)
            z = rng.standard_normal(idx.size)
            yn = yi + drift * dt + noise * np.sqrt(dt) * z
            yn = np.where(yn < y_floor, 2 * y_floor - yn, yn)
            bad = ~np.isfinite(yn)
            if np.any(bad):
                ok[idx[bad]] = False
            moved = yn != yi
            r[idx] = np.where(moved, np.abs(yn) ** (1.0 / gam), r[idx])
            y[idx] = yn
            t[idx] = np.where(land, tk, t[idx] + dt)
            steps += 1
        rv = r[ok]
        for j, q in enumerate(orders):
            v = rv ** q
            s1[j, k] = v.sum()
            s2[j, k] = (v * v).sum()
        cnt[k] = rv.size
        sup = np.maximum(sup, np.where(ok, r * r / (2 * tk ** (1 / (1 - alpha))), 0.0))
        if samples is not None:
            samples[:, k] = np.where(ok, r, np.nan)
    return s1, s2, cnt, sup, samples, int(np.count_nonzero(~ok)), steps


def simulate_separation(kernel: IsotropicKernel, config: McConfig) -> SeparationEnsemble:
    """Simulate ``config.n_paths`` separations started at r0.

    More than 1% of paths lost to overflow or NaN is an error.
    """
    p = kernel.params
    alpha = p.alpha
    gam = 2 - 2 * alpha
    config = config.resolved(alpha)
    times = config.times(alpha)
    orders = tuple(sorted(set(float(q) for q in (config.moment_orders or (gam, 1.0, 2.0, 4.0)))))
    n = int(config.n_paths)
    bs = int(config.block_size)
    sizes = [bs] * (n // bs) + ([n % bs] if n % bs else [])

    def work(b):
        return _run_block(kernel, config, times, orders, gam, alpha, b, sizes[b])

    if config.threads == 1:
        results = [work(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(work, range(len(sizes))))
    s1 = _tree_sum([r[0] for r in results])
    s2 = _tree_sum([r[1] for r in results])
    cnt = _tree_sum([r[2] for r in results])
    sup = np.concatenate([r[3] for r in results])
    flagged = sum(r[5] for r in results)
    steps = sum(r[6] for r in results)
    samples = np.concatenate([r[4] for r in results]) if config.retain_samples else None
    if flagged > 0.01 * n:
        raise NumericalError(f"{flagged} of {n} paths produced non-finite values", achieved=flagged / n)
    mean = s1 / cnt
    var = np.maximum(s2 / cnt - mean ** 2, 0.0) * cnt / (cnt - 1)
    se = np.sqrt(var / cnt)
    return SeparationEnsemble(
        times=times, moments={q: mean[j] for j, q in enumerate(orders)},
        stderr={q: se[j] for j, q in enumerate(orders)}, n_valid=cnt, n_flagged=flagged,
        sup_stat=sup, samples=samples, config=config, alpha=alpha, d=p.d, n_steps=steps,
    )


def moment_curve(ensemble: SeparationEnsemble, q: float):
    """(t, mean of r_t^q, standard error) from streamed sums or retained samples."""
    if q <= 0:
        raise ValidationError(f"q must be positive, got {q}")
    if ensemble.n_valid.size == 0 or np.any(ensemble.n_valid == 0):
        raise ValidationError("empty ensemble")
    q = float(q)
    if q in ensemble.moments:
        return ensemble.times.copy(), ensemble.moments[q].copy(), ensemble.stderr[q].copy()
    if ensemble.samples is None:
        raise ValidationError(f"order {q} was not streamed and samples were not retained")
    v = ensemble.samples ** q
    n = np.sum(np.isfinite(v), axis=0)
    mean = np.nanmean(v, axis=0)
    se = np.nanstd(v, axis=0, ddof=1) / np.sqrt(n)
    return ensemble.times.copy(), mean, se


def exact_moment_from_origin(kernel: IsotropicKernel, q: float, t):
    """E[r_t^q] for the self-similar kernel started at r = 0.

    Y = r^(2-2a) is a squared Bessel process: Y_t = Gamma(shape = delta/2, scale = g^2 c t)
    with g = 2-2a and dimension delta = 2 K / (g^2 c), K the constant drift of Y.
    """
    if kernel.mode is not KernelMode.SELF_SIMILAR:
        raise ValidationError("closed-form moments need the self-similar kernel")
    p = kernel.params
    g = 2 - 2 * p.alpha
    c = p.self_similar_c
    k = c * g * (g - 1 + (p.d - 1) * kernel.constants.beta)
    if k <= 0:
        raise ValidationError("the separation does not leave the origin in this regime")
    shape = k / (g * g * c)
    s = q / g
    t = np.asarray(t, dtype=float)
    return (g * g * c * t) ** s * np.exp(gammaln(shape + s) - gammaln(shape))


@dataclass
class RichardsonReport:
    exponent: float
    exponent_ci: tuple
    predicted_exponent: float
    prefactor: float
    k_ric: float
    lower_bound_fraction: float
    window: tuple
    moment_law_max_z: float
    sup_quantiles: dict
    lower_bound_pass: bool = False
    flagged_paths: int = 0

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent, "exponent_ci": list(self.exponent_ci),
            "predicted_exponent": self.predicted_exponent, "prefactor": self.prefactor,
            "k_ric": self.k_ric, "lower_bound_fraction": self.lower_bound_fraction,
            "lower_bound_pass": self.lower_bound_pass, "window": list(self.window),
            "moment_law_max_z": self.moment_law_max_z, "sup_quantiles": self.sup_quantiles,
            "flagged_paths": self.flagged_paths,
        }


def richardson_report(ensemble: SeparationEnsemble, constants, *, window: tuple | None = None) -> RichardsonReport:
    """Power-law fit of E[Var(mu_t)] against t beyond the memory of r0.

    The default window starts at 10 r0^(2-2alpha) and needs two decades of t.
    ``moment_law_max_z`` is the largest |E[r^g] - r0^g - K t| / stderr over the
    sample times, g = 2-2alpha, which vanishes for the self-similar kernel.
    """
    from .scaling_analysis import loglog_fit

    a = ensemble.alpha
    g = 2 - 2 * a
    r0 = ensemble.config.start
    ts = ensemble.times
    if window is None:
        window = (10 * r0 ** g, ts[-1])
        if window[1] / window[0] < 100 * (1 - 1e-12):
            raise FitError(f"window [{window[0]:g}, {window[1]:g}] covers less than two decades")
    ev, _ = ensemble.mean_variance()
    fit = loglog_fit(ts, ev, window=window)
    pred = 1 / (1 - a)
    sel = (ts >= window[0]) & (ts <= window[1])
    pref = float(np.exp(np.mean(np.log(ev[sel]) - pred * np.log(ts[sel]))))
    k_ric = constants.k_ric
    frac = float(np.mean(ev[sel] >= 0.9 * k_ric * ts[sel] ** pred)) if k_ric > 0 else float("nan")
    k = constants.c * g * (g - 1 + (constants.d - 1) * constants.beta)
    mg = ensemble.moments.get(g)
    if mg is not None:
        z = np.abs(mg - r0 ** g - k * ts) / np.maximum(ensemble.stderr[g], 1e-300)
        zmax = float(np.max(z))
    else:
        zmax = float("nan")
    qs = {str(q): float(np.quantile(ensemble.sup_stat, q)) for q in (0.5, 0.9, 0.99)}
    return RichardsonReport(fit.slope, fit.slope_ci, pred, pref, k_ric, frac, tuple(window), zmax, qs,
                            lower_bound_pass=bool(frac == 1.0), flagged_paths=int(ensemble.n_flagged))


def gaussian_variance_identity(sigma: float, d: int) -> float:
    """Var(mu) * ||mu||_2^(4/d) for an isotropic Gaussian density, by radial quadrature.

    Both factors are computed by one-dimensional quadrature of the density; the
    closed form is d / (4 pi) for every sigma.
    """
    from scipy import integrate

    if sigma <= 0 or int(d) != d or d < 1:
        raise ValidationError("sigma must be positive and d a positive integer")
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    norm = (2 * math.pi * sigma ** 2) ** (-d / 2)

    def dens(r):
        return norm * math.exp(-r * r / (2 * sigma ** 2))

    lim = 40 * sigma
    mass = area * integrate.quad(lambda r: dens(r) * r ** (d - 1), 0, lim, epsrel=1e-13, limit=200)[0]
    var = area * integrate.quad(lambda r: r * r * dens(r) * r ** (d - 1), 0, lim, epsrel=1e-13, limit=200)[0]
    l2sq = area * integrate.quad(lambda r: dens(r) ** 2 * r ** (d - 1), 0, lim, epsrel=1e-13, limit=200)[0]
    var = var / mass
    return var * l2sq ** (2 / d)
