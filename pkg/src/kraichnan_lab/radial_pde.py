"""Radial degenerate parabolic problem for isotropic two-point functions.

Transport form (two-point correlation f(t, r) of a passive scalar):

    f_t = B(r) f'' + (d-1) N(r) f' / r,
    B = (1-kappa) b_L + 2 c0 kappa,  N = (1-kappa) b_N + 2 c0 kappa.

Continuity form (density of the separation law, eta = 1 only):

    f_t = r^(1-d) (r^(d-1) B f')'.

Both are written as w f_t = (p f')' with a Sturm-Liouville pair (p, w) and
discretised by finite volumes on node-centred dual cells. The unknowns advanced
in time are the neighbour differences g_k = f_k - f_(k-1) rather than nodal
values. This keeps the relative precision of the tiny increments near the origin,
where the singular profile f(0) - f(r) ~ A r^(2-2alpha) lives.

The mass of the cell at the origin is the integral of w over (0, h/2). When w is
not integrable there (the coalescing phase) the origin value is frozen, which is
the exact conservation of energy in that phase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy import integrate

from .errors import FitError, NumericalError, ValidationError
from .kernels import IsotropicKernel

_MAX_NODES = 1_000_000
_MIN_NODES = 64

# 3-point Gauss-Legendre on [0, 1]
_GL_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class RadialGrid:
    """Nodes r_0 = 0 < r_1 = h_min < ... < r_N = R_max."""

    nodes: np.ndarray

    @property
    def n_intervals(self) -> int:
        return len(self.nodes) - 1

    @property
    def h_min(self) -> float:
        return float(self.nodes[1])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])


def grid_size(h_min: float, r_max: float, growth: float, max_spacing: float | None = None) -> int:
    """Number of intervals ``build_grid`` would produce, without building it."""
    cap = r_max / 128.0 if max_spacing is None else max_spacing
    cap = max(cap, h_min)
    # geometric part: spacings h, h g, ..., until the cap or R_max is reached
    k_cap = math.ceil(math.log(cap / h_min) / math.log(growth)) if cap > h_min else 0
    geo_len = h_min * (growth ** k_cap - 1) / (growth - 1) if k_cap > 0 else 0.0
    if geo_len >= r_max:
        # solve h (g^k - 1)/(g - 1) >= r_max
        return math.ceil(math.log1p(r_max * (growth - 1) / h_min) / math.log(growth))
    return k_cap + math.ceil((r_max - geo_len) / cap - 1e-9)


def build_grid(h_min: float, r_max: float, growth: float = 1.05,
               max_spacing: float | None = None) -> RadialGrid:
    """Geometrically graded grid: spacing h_min * growth^k, capped at ``max_spacing``.

    The cap defaults to r_max / 128. A final spacing shorter than half the previous
    one is merged into its neighbour so that r_max is hit exactly.
    """
    for name, v in (("h_min", h_min), ("r_max", r_max), ("growth", growth)):
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"{name} must be a finite number, got {v!r}")
    if h_min <= 0 or r_max <= 0:
        raise ValidationError("h_min and r_max must be positive")
    if h_min >= r_max:
        raise ValidationError(f"h_min={h_min} must be below r_max={r_max}")
    if not 1.0 < growth <= 1.1:
        raise ValidationError(f"growth must lie in (1, 1.1], got {growth}")
    if max_spacing is not None and max_spacing <= 0:
        raise ValidationError("max_spacing must be positive")
    n = grid_size(h_min, r_max, growth, max_spacing)
    if n > _MAX_NODES:
        raise ValidationError(f"grid would need {n} intervals (limit {_MAX_NODES})")
    if n < _MIN_NODES:
        raise ValidationError(f"grid has only {n} intervals (at least {_MIN_NODES} required)")
    cap = max(r_max / 128.0 if max_spacing is None else max_spacing, h_min)
    nodes = [0.0]
    r, h = 0.0, h_min
    while r + h < r_max:
        r += h
        nodes.append(r)
        h = min(h * growth, cap)
    if r_max - nodes[-1] < 0.5 * (nodes[-1] - nodes[-2]):
        nodes[-1] = r_max
    else:
        nodes.append(r_max)
    return RadialGrid(np.asarray(nodes))


# initial data


class Datum:
    """Initial datum with an accurate increment f(r) - f(0)."""

    def values(self, r):
        raise NotImplementedError

    def increments(self, r):
        r = np.asarray(r, dtype=float)
        return self.values(r) - self.values(np.zeros(1))[0]


@dataclass(frozen=True)
class GaussianDatum(Datum):
    """f(r) = amplitude * exp(-r^2 / (4 sigma^2))."""

    sigma: float = 1.0
    amplitude: float = 1.0

    def values(self, r):
        return self.amplitude * np.exp(-np.asarray(r, dtype=float) ** 2 / (4 * self.sigma ** 2))

    def increments(self, r):
        return self.amplitude * np.expm1(-np.asarray(r, dtype=float) ** 2 / (4 * self.sigma ** 2))


@dataclass(frozen=True)
class StretchedExponentialDatum(Datum):
    """f(r) = exp(-(r / scale)^s); s = 1 is the kinked datum, s < 1 is rough."""

    s: float = 1.0
    scale: float = 1.0

    def values(self, r):
        return np.exp(-(np.asarray(r, dtype=float) / self.scale) ** self.s)

    def increments(self, r):
        return np.expm1(-(np.asarray(r, dtype=float) / self.scale) ** self.s)


@dataclass(frozen=True)
class DiracApproxDatum(Datum):
    """Unit-mass Gaussian density in R^d of standard deviation ``width`` per coordinate."""

    d: int = 2
    width: float = 1e-3

    @property
    def peak(self) -> float:
        return (2 * math.pi * self.width ** 2) ** (-self.d / 2)

    def values(self, r):
        return self.peak * np.exp(-np.asarray(r, dtype=float) ** 2 / (2 * self.width ** 2))

    def increments(self, r):
        return self.peak * np.expm1(-np.asarray(r, dtype=float) ** 2 / (2 * self.width ** 2))


class ArrayDatum(Datum):
    """Nodal values given directly on the grid."""

    def __init__(self, values):
        self._v = np.asarray(values, dtype=float)

    def values(self, r):
        if len(r) != len(self._v):
            raise ValidationError("array datum does not match the grid")
        return self._v.copy()

    def increments(self, r):
        return self.values(r) - self._v[0]


@dataclass(frozen=True)
class FunctionDatum(Datum):
    func: Callable

    def values(self, r):
        return np.asarray(self.func(np.asarray(r, dtype=float)), dtype=float)


# configuration and results

MODES = ("transport", "continuity_divfree")
OUTER_BCS = ("dirichlet_zero", "homogeneous_neumann")


@dataclass(frozen=True)
class PdeConfig:
    """Solver settings.

    ``dt`` is the largest time step. With ``dt_growth`` set, steps follow
    dt = clip(dt_growth * t, dt_min, dt), which resolves the fast initial layer;
    otherwise steps are constant. Steps are shortened to land on every
    observation time.

    ``dirichlet_zero`` freezes f(R_max) at its initial value (zero for decaying
    data). Seminorms are recorded at exponents 2-2alpha -/+ ``seminorm_delta``.
    ``fit_window`` set to None uses [5 h_min, 0.05 min(correlation_length, l(t))]
    where l(t) = (K t)^(1/(2-2alpha)) is the self-similar spreading length.
    """

    kappa: float = 0.0
    mode: str = "transport"
    theta: float = 1.0
    outer_bc: str = "dirichlet_zero"
    dt: float = 1e-2
    dt_min: float | None = None
    dt_growth: float | None = None
    observable_times: Sequence[float] = (1.0,)
    seminorm_delta: float = 0.05
    seminorm_l: float = 1.0
    fit_window: tuple[float, float] | None = None
    correlation_length: float = 1.0
    store_profiles: bool = True
    residual_tol: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.kappa < 0.5:
            raise ValidationError(f"kappa must lie in [0, 1/2), got {self.kappa}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.5 <= self.theta <= 1.0:
            raise ValidationError(f"theta must lie in [0.5, 1], got {self.theta}")
        if self.outer_bc not in OUTER_BCS:
            raise ValidationError(f"outer_bc must be one of {OUTER_BCS}, got {self.outer_bc!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.dt_growth is not None and self.dt_growth <= 0:
            raise ValidationError("dt_growth must be positive")
        if self.dt_min is not None and not 0 < self.dt_min <= self.dt:
            raise ValidationError("dt_min must lie in (0, dt]")
        ts = np.asarray(self.observable_times, dtype=float)
        if ts.size == 0 or np.any(ts <= 0) or np.any(np.diff(ts) <= 0) or not np.all(np.isfinite(ts)):
            raise ValidationError("observable_times must be positive and strictly increasing")
        if self.seminorm_l <= 0 or self.seminorm_delta < 0 or self.correlation_length <= 0:
            raise ValidationError("seminorm_l, correlation_length must be positive, seminorm_delta >= 0")
        if self.fit_window is not None:
            lo, hi = self.fit_window
            if not 0 < lo < hi:
                raise ValidationError("fit_window must satisfy 0 < lo < hi")


@dataclass
class RadialProfile:
    """Solution at one time. ``increments`` holds f(r) - f(0) to full relative precision."""

    t: float
    r: np.ndarray
    values: np.ndarray
    increments: np.ndarray

    @classmethod
    def from_values(cls, r, values, t: float = 0.0) -> "RadialProfile":
        r = np.asarray(r, dtype=float)
        v = np.asarray(values, dtype=float)
        return cls(t, r, v, v - v[0])

    @property
    def energy(self) -> float:
        return float(self.values[0])


@dataclass
class AmplitudeFit:
    amplitude: float
    exponent: float
    free_amplitude: float
    n_points: int
    window: tuple


@dataclass
class PdeRun:
    """Observables at ``times``; ``mass`` is NaN in transport mode."""

    times: np.ndarray
    energy: np.ndarray
    seminorm_minus: np.ndarray
    seminorm_plus: np.ndarray
    amplitude: np.ndarray
    mass: np.ndarray
    profiles: list
    grid: RadialGrid
    config: PdeConfig
    alpha: float
    frozen_origin: bool
    n_steps: int
    max_residual: float
    diagnostics: dict = field(default_factory=dict)

    def profile_at(self, t: float) -> RadialProfile:
        for p in self.profiles:
            if p.t == t:
                return p
        raise ValidationError(f"no stored profile at t={t}")

def pde_coefficients(kernel: IsotropicKernel, kappa: float, r):
    """Return (B, N) at radii r."""
    bl, bn = kernel.coefficients(r)
    floor = 2 * kernel.c0 * kappa
    return (1 - kappa) * bl + floor, (1 - kappa) * bn + floor


class _Operator:
    """Face coefficients P_k (k = 1..N) and cell masses M_i (i = 0..N)."""

    def __init__(self, kernel: IsotropicKernel, grid: RadialGrid, kappa: float, mode: str):
        d = kernel.params.d
        r = grid.nodes
        mid = 0.5 * (r[1:] + r[:-1])
        self.d = d
        if mode == "continuity_divfree":
            bm, _ = pde_coefficients(kernel, kappa, mid)
            self.P = mid ** (d - 1) * bm
            edges = np.concatenate(([0.0], mid, [r[-1]]))
            self.M = (edges[1:] ** d - edges[:-1] ** d) / d
            self.M0_finite = True
            self.origin_exponent = d - 1.0
            return

        # transport: log p = int (d-1) N / (s B) ds, evaluated in log r
        def phi(x):
            b, n = pde_coefficients(kernel, kappa, np.exp(x))
            return (d - 1) * n / b

        # half-cells [r_i, mid_i] and [mid_i, r_(i+1)] for i >= 1, plus [mid_0, r_1]
        pts = np.sort(np.concatenate((r[1:], mid)))
        lp = np.log(pts)
        seg_a, seg_b = lp[:-1], lp[1:]
        xs = seg_a[:, None] + (seg_b - seg_a)[:, None] * _GL_X[None, :]
        vals = phi(xs.ravel()).reshape(xs.shape)
        seg_int = (seg_b - seg_a) * (vals @ _GL_W)
        logp = np.concatenate(([0.0], np.cumsum(seg_int)))
        # anchor log p = 0 at mid_0 = h/2 is arbitrary; p is defined up to a factor
        logp_at = dict(zip(pts.tolist(), logp.tolist()))
        self.P = np.exp(np.array([logp_at[m] for m in mid.tolist()]))

        # w = p / B; integrate w dr = w r dlog r over each half-cell by GL
        # with log p at GL points from a second cumulative pass
        sub = _GL_X[None, :] * (seg_b - seg_a)[:, None]
        lp_gl = np.empty_like(xs)
        for j in range(3):
            # integral of phi from seg_a to the j-th GL point, by 3-point GL on that sub-interval
            ys = seg_a[:, None] + sub[:, j:j + 1] * _GL_X[None, :]
            pv = phi(ys.ravel()).reshape(ys.shape)
            lp_gl[:, j] = logp[:-1] + sub[:, j] * (pv @ _GL_W)
        bgl, _ = pde_coefficients(kernel, kappa, np.exp(xs))
        wr = np.exp(lp_gl) / bgl * np.exp(xs)
        half = (seg_b - seg_a) * (wr @ _GL_W)
        # pts alternate mid_0, r_1, mid_1, r_2, ... ; half-cell j spans pts[j], pts[j+1]
        n = len(r) - 1
        M = np.zeros(n + 1)
        # cell i >= 1 is [mid_(i-1), r_i] + [r_i, mid_i]
        M[1:n] = half[0:2 * n - 2:2] + half[1:2 * n - 1:2]
        M[n] = half[2 * n - 2]
        # origin cell (0, h/2): local power law w ~ r^mu matched at h/4 and h/2
        h = r[1]
        q = np.log(np.array([0.25 * h, 0.5 * h]))
        bq, _ = pde_coefficients(kernel, kappa, np.exp(q))
        lam_q = (d - 1) * pde_coefficients(kernel, kappa, np.exp(q))[1] / bq
        # log p(h/4) from log p(h/2) = 0 using phi at the midpoint in log r
        lp_q = -0.5 * (lam_q[0] + lam_q[1]) * math.log(2.0)
        logw = np.array([lp_q, 0.0]) - np.log(bq)
        mu = (logw[1] - logw[0]) / math.log(2.0)
        self.origin_exponent = float(mu)
        if mu + 1.0 > 1e-9:
            M[0] = math.exp(logw[1]) * 0.5 * h / (mu + 1.0)
            self.M0_finite = True
        else:
            M[0] = math.inf
            self.M0_finite = False
        self.M = M


def increment_seminorm(profile: RadialProfile, gamma: float, l: float) -> float:
    """max over nodes 0 < r_i < l of |f(r_i) - f(0)| / r_i^gamma."""
    if not 0 < gamma <= 2:
        raise ValidationError(f"gamma must lie in (0, 2], got {gamma}")
    r = profile.r
    if l > r[-1]:
        raise ValidationError(f"l={l} exceeds R_max={r[-1]}")
    sel = (r > 0) & (r < l)
    if not np.any(sel):
        raise ValidationError(f"no grid nodes in (0, {l})")
    return float(np.max(np.abs(profile.increments[sel]) / r[sel] ** gamma))


def energy(run: PdeRun) -> np.ndarray:
    """f(t, 0) at the sample times."""
    return run.energy.copy()


def _amplitude_fit(profile: RadialProfile, gamma: float, window) -> AmplitudeFit:
    lo, hi = window
    r = profile.r
    sel = (r >= lo) & (r <= hi)
    n = int(np.count_nonzero(sel))
    if n < 4:
        raise FitError(f"only {n} grid nodes in window [{lo:g}, {hi:g}] at t={profile.t:g}")
    y = -profile.increments[sel]
    if np.all(y == 0):
        return AmplitudeFit(0.0, float("nan"), 0.0, n, (lo, hi))
    if np.any(y <= 0):
        raise FitError(f"non-positive difference f(0) - f(r) in window at t={profile.t:g}")
    if np.any(np.diff(y) < -1e-12 * y[1:]):
        raise FitError(f"non-monotone difference f(0) - f(r) in window at t={profile.t:g}")
    x = np.log(r[sel])
    ly = np.log(y)
    amp = float(np.exp(np.mean(ly - gamma * x)))
    slope, icept = np.polyfit(x, ly, 1)
    return AmplitudeFit(amp, float(slope), float(np.exp(icept)), n, (float(lo), float(hi)))


def singular_amplitude(run, t, gamma: float, fit_window) -> AmplitudeFit:
    """Fit f(t, 0) - f(t, r) = A r^gamma on ``fit_window``.

    ``run`` may be a PdeRun (profile at time t) or a single RadialProfile
    (t ignored). ``amplitude`` uses the prescribed exponent; ``exponent`` and
    ``free_amplitude`` come from an unconstrained log-log fit. An exactly flat
    profile gives A = 0.
    """
    profile = run if isinstance(run, RadialProfile) else run.profile_at(t)
    lo, hi = fit_window
    if not 0 < lo < hi:
        raise ValidationError("fit_window must satisfy 0 < lo < hi")
    return _amplitude_fit(profile, gamma, (lo, hi))


def spreading_rate(kernel: IsotropicKernel) -> float:
    """K with l(t) = (K t)^(1/(2-2alpha)): the drift of r^(2-2alpha) near the origin."""
    const = kernel.constants
    g = 2 - 2 * const.alpha
    return const.c * g * (g - 1 + (const.d - 1) * const.beta)


def default_fit_window(grid: RadialGrid, t: float, kernel: IsotropicKernel, correlation_length: float = 1.0):
    k = spreading_rate(kernel)
    g = 2 - 2 * kernel.params.alpha
    length = min(correlation_length, (k * t) ** (1 / g)) if k > 0 else correlation_length
    return 5 * grid.h_min, 0.05 * length


def _reconstruct(f_origin, f_outer, g, incr):
    """Nodal values from the differences, summed from whichever end loses less precision."""
    v1 = f_origin + incr
    tail = np.concatenate((np.cumsum(g[::-1])[::-1], [0.0]))
    v2 = f_outer - tail
    e1 = np.maximum.accumulate(np.abs(v1))
    e2 = np.maximum.accumulate(np.abs(v2)[::-1])[::-1]
    return np.where(e2 < e1, v2, v1)


def evolve(kernel: IsotropicKernel, grid: RadialGrid, config: PdeConfig, f0, t_end: float | None = None) -> PdeRun:
    """Integrate the radial problem with a theta scheme and record observables.

    ``f0`` is a Datum or an array of nodal values. If ``t_end`` is given it is
    appended to the observation schedule (later observation times are dropped).
    """
    p = kernel.params
    if config.mode == "continuity_divfree" and p.eta != 1.0:
        raise ValidationError("continuity_divfree mode requires eta = 1")
    r = grid.nodes
    n = len(r) - 1
    datum = f0 if isinstance(f0, Datum) else ArrayDatum(f0)
    vals0 = np.asarray(datum.values(r), dtype=float)
    inc0 = np.asarray(datum.increments(r), dtype=float)
    if vals0.shape != r.shape or not np.all(np.isfinite(vals0)) or not np.all(np.isfinite(inc0)):
        raise ValidationError("initial datum must be finite on the grid")

    obs_times = np.asarray(config.observable_times, dtype=float)
    if t_end is not None:
        if t_end <= 0:
            raise ValidationError("t_end must be positive")
        obs_times = obs_times[obs_times < t_end]
        obs_times = np.append(obs_times, float(t_end))

    op = _Operator(kernel, grid, config.kappa, config.mode)
    # flux across face k is p(mid_k) (f_k - f_(k-1)) / (r_k - r_(k-1))
    P = op.P / np.diff(r)
    invM = np.where(np.isfinite(op.M), 1.0 / op.M, 0.0)
    if config.outer_bc == "dirichlet_zero":
        invM[n] = 0.0
    if not np.all(np.isfinite(P)) or np.any(P <= 0) or np.any(op.M[1:n] <= 0):
        raise NumericalError("degenerate finite-volume coefficients")

    # tridiagonal T acting on g_k, k = 1..n
    diag = -P * (invM[1:] + invM[:-1])
    upper = invM[1:n] * P[1:]        # T[k, k+1], k = 1..n-1
    lower = invM[1:n] * P[:-1]       # T[k+1, k],  k = 1..n-1
    # I - dt theta T is column diagonally dominant for every dt > 0
    colsum = np.abs(diag).copy()
    colsum[1:] -= upper
    colsum[:-1] -= lower
    if np.any(colsum < -1e-12 * np.abs(diag)):
        raise NumericalError("finite-volume matrix lost diagonal dominance")

    g = np.diff(inc0)
    f_origin = float(vals0[0])
    f_outer = float(vals0[-1])
    bound = float(np.max(np.abs(vals0)))
    tol_mp = 1e-10 * max(bound, 1e-300)

    alpha = p.alpha
    gamma = 2 - 2 * alpha
    e_minus = gamma - config.seminorm_delta
    e_plus = gamma + config.seminorm_delta
    l_semi = min(config.seminorm_l, r[-1])
    area = 2 * math.pi ** (p.d / 2) / math.gamma(p.d / 2)
    Mfin = np.where(np.isfinite(op.M), op.M, 0.0)
    rec = {k: [] for k in ("energy", "minus", "plus", "amp", "mass")}
    profiles = []
    sens = []

    def record(t):
        incr = np.concatenate(([0.0], np.cumsum(g)))
        vals = _reconstruct(f_origin, f_outer, g, incr)
        prof = RadialProfile(t, r, vals, incr)
        rec["energy"].append(f_origin)
        rec["minus"].append(increment_seminorm(prof, e_minus, l_semi) if e_minus > 0 else float("nan"))
        rec["plus"].append(increment_seminorm(prof, min(e_plus, 2.0), l_semi))
        if config.mode == "continuity_divfree":
            rec["mass"].append(area * float(np.dot(Mfin, vals)))
        else:
            rec["mass"].append(float("nan"))
        win = config.fit_window or default_fit_window(grid, t, kernel, config.correlation_length)
        try:
            a_t = _amplitude_fit(prof, gamma, win).amplitude
            lo, hi = win
            shifted = [_amplitude_fit(prof, gamma, w).amplitude for w in ((lo, hi / 10), (lo * 10, hi))]
            sens.append(max(abs(a - a_t) / a_t for a in shifted) if a_t > 0 else 0.0)
        except FitError:
            a_t = float("nan")
            sens.append(float("nan"))
        rec["amp"].append(a_t)
        if config.store_profiles:
            profiles.append(prof)
        if np.max(np.abs(vals)) > bound + tol_mp:
            raise NumericalError(f"discrete maximum principle violated at t={t:g}",
                                 achieved=float(np.max(np.abs(vals)) - bound))

    theta = config.theta
    t = 0.0
    steps = 0
    max_res = 0.0
    ab = np.zeros((3, n))
    for t_obs in obs_times:
        while t < t_obs:
            if config.dt_growth is not None:
                dt = min(max(config.dt_growth * t, config.dt_min or 0.0), config.dt)
                if dt <= 0:
                    dt = config.dt_min or config.dt * 1e-6
            else:
                dt = config.dt
            land = t + dt >= t_obs * (1 - 1e-12)
            if land:
                dt = t_obs - t
            # (I - dt theta T) g_new = (I + dt (1-theta) T) g
            rhs = g.copy()
            flux0 = P[0] * g[0]
            if theta < 1.0:
                tg = diag * g
                tg[:-1] += upper * g[1:]
                tg[1:] += lower * g[:-1]
                rhs += dt * (1 - theta) * tg
            ab[0, 1:] = -dt * theta * upper
            ab[1, :] = 1.0 - dt * theta * diag
            ab[2, :-1] = -dt * theta * lower
            g_new = solve_banded((1, 1), ab, rhs, check_finite=False)
            res = ab[1] * g_new
            res[:-1] += ab[0, 1:] * g_new[1:]
            res[1:] += ab[2, :-1] * g_new[:-1]
            scale = np.max(np.abs(rhs)) or 1.0
            rel = float(np.max(np.abs(res - rhs)) / scale)
            max_res = max(max_res, rel)
            if not np.all(np.isfinite(g_new)) or rel > config.residual_tol:
                raise NumericalError(f"linear solve failed at t={t:g} (residual {rel:.3g})", achieved=rel)
            f_origin += dt * invM[0] * (theta * P[0] * g_new[0] + (1 - theta) * flux0)
            f_outer -= dt * invM[n] * P[-1] * (theta * g_new[-1] + (1 - theta) * g[-1])
            g = g_new
            t = float(t_obs) if land else t + dt
            steps += 1
        record(float(t_obs))

    return PdeRun(
        times=obs_times.copy(), energy=np.array(rec["energy"]), seminorm_minus=np.array(rec["minus"]),
        seminorm_plus=np.array(rec["plus"]), amplitude=np.array(rec["amp"]), mass=np.array(rec["mass"]),
        profiles=profiles, grid=grid, config=config, alpha=alpha, frozen_origin=not op.M0_finite,
        n_steps=steps, max_residual=max_res,
        diagnostics={
            "origin_exponent": op.origin_exponent,
            "initial_energy": float(vals0[0]),
            "window_sensitivity": sens,
            "outer_flux": float(P[-1] * g[-1]),
        },
    )


# stationary solution xi_delta


@dataclass
class XiDiagnostic:
    """Columns r, xi(r), xi'(r) and the ratio xi'(r) / r^(1-2alpha-delta)."""

    r: np.ndarray
    dxi: np.ndarray
    ratio: np.ndarray
    c_xi: float
    xi: np.ndarray


def xi_diagnostic(kernel: IsotropicKernel, delta: float, r_grid) -> XiDiagnostic:
    """Derivative of the stationary solution of B xi'' + (d-1) N xi'/r = -r^(-delta), kappa = 0.

        xi'(r) = int_0^r rho^(-delta) / b_L(rho) exp(-int_rho^r (d-1) b_N/(b_L u) du) drho

    evaluated by nested adaptive quadrature in s = log(r / rho). ``ratio`` is
    xi'(r) / r^(1-2alpha-delta), which tends to c_xi at the origin.
    """
    const = kernel.constants
    if not 0 < delta < const.delta_star:
        raise ValidationError(f"delta must lie in (0, {const.delta_star}), got {delta}")
    d, a = kernel.params.d, kernel.params.alpha
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or np.any(r_grid <= 0) or np.any(np.diff(r_grid) <= 0):
        raise ValidationError("r_grid must be positive and increasing")

    rate = (d - 1) * const.beta + 1 - 2 * a - delta

    def lam(rho):
        bl, bn = kernel.coefficients(np.atleast_1d(rho))
        return float((d - 1) * bn[0] / bl[0])

    def dxi_at(r):
        def inner(s):
            return integrate.quad(lambda v: lam(r * math.exp(-v)), 0.0, s, epsrel=1e-11, limit=200)[0]

        def outer(s):
            rho = r * math.exp(-s)
            bl = float(kernel.bL(np.array([rho]))[0])
            return rho ** (1 - delta) / bl * math.exp(-inner(s))

        # the integrand decays like exp(-rate s) once rho is inside the power-law range
        s_max = min(60.0 / rate + max(math.log(r), 0.0), math.log(r) + 690.0)
        val, _ = integrate.quad(outer, 0.0, s_max, epsrel=1e-10, limit=400)
        return val

    dxi = np.array([dxi_at(float(x)) for x in r_grid])
    ratio = dxi / r_grid ** (1 - 2 * a - delta)
    # xi(r) = int_0^r xi'; head from the power law at the first radius
    e = 2 - 2 * a - delta
    xi = np.empty_like(dxi)
    xi[0] = ratio[0] * r_grid[0] ** e / e
    if len(r_grid) > 1:
        xi[1:] = xi[0] + integrate.cumulative_trapezoid(dxi * r_grid, np.log(r_grid))
    return XiDiagnostic(r_grid, dxi, ratio, const.c_xi(delta), xi)
