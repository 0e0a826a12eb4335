"""Isotropic Kraichnan covariance: structure functions, constants and regimes.

The covariance is C(z) = C(0) - Q(z) with the structure matrix

    Q(z) = b_L(|z|) zhat zhat^T + b_N(|z|) (I - zhat zhat^T).

Two kernels are provided. ``full_kraichnan`` uses the spectral measure
rho^(d-1) (rho^2 + m^2)^(-d/2-alpha) drho split into a gradient part (weight a)
and a solenoidal part (weight b), with compressibility eta = b/(a+b) and a+b
fixed by the trace of C(0). ``self_similar`` is the pure power law
b_L = c r^(2 alpha), b_N = beta c r^(2 alpha).
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import beta as beta_fn

from . import _spectral
from .errors import NumericalError, ValidationError

_BAND = 1e-12


class KernelMode(str, enum.Enum):
    FULL_KRAICHNAN = "full_kraichnan"
    SELF_SIMILAR = "self_similar"


class Regime(str, enum.Enum):
    COALESCING = "coalescing"
    DIFFUSIVE_WITH_HITTING = "diffusive_with_hitting"
    DIFFUSIVE_NO_HITTING = "diffusive_no_hitting"
    BOUNDARY_CASE = "boundary_case"

    @property
    def diffusive(self) -> bool:
        return self in (Regime.DIFFUSIVE_WITH_HITTING, Regime.DIFFUSIVE_NO_HITTING)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the covariance. ``trace_c0`` defaults to 2d."""

    d: int = 2
    alpha: float = 0.5
    eta: float = 1.0
    m: float = 1.0
    trace_c0: float | None = None
    kernel_mode: KernelMode = KernelMode.FULL_KRAICHNAN
    self_similar_c: float = 1.0

    def __post_init__(self):
        if isinstance(self.d, bool) or int(self.d) != self.d or self.d < 2:
            raise ValidationError(f"d must be an integer >= 2, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        for name in ("alpha", "eta", "m", "self_similar_c"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ValidationError(f"{name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError(f"eta must lie in [0, 1], got {self.eta}")
        if self.m <= 0:
            raise ValidationError(f"m must be positive, got {self.m}")
        if self.self_similar_c <= 0:
            raise ValidationError(f"self_similar_c must be positive, got {self.self_similar_c}")
        tr = 2.0 * self.d if self.trace_c0 is None else self.trace_c0
        if not isinstance(tr, (int, float)) or not math.isfinite(tr) or tr <= 0:
            raise ValidationError(f"trace_c0 must be positive, got {self.trace_c0!r}")
        object.__setattr__(self, "trace_c0", float(tr))
        try:
            mode = KernelMode(self.kernel_mode)
        except ValueError:
            raise ValidationError(f"unknown kernel_mode {self.kernel_mode!r}") from None
        object.__setattr__(self, "kernel_mode", mode)

    @property
    def c0(self) -> float:
        """Diagonal entry of C(0); the molecular diffusivity scale."""
        return self.trace_c0 / (2.0 * self.d)


def beta_ratio(d: int, alpha: float, eta: float) -> float:
    """Limit of b_N / b_L at the origin."""
    return (d - 1 + 2 * alpha * eta) / ((d - 1) * (2 * alpha + 1 - 2 * alpha * eta))


def _exact(x) -> Fraction:
    # decimal literal of the float, so 0.1 means 1/10
    return Fraction(repr(float(x))) if not isinstance(x, (int, Fraction)) else Fraction(x)


def regime_thresholds(d: int, alpha: float) -> tuple[float, float]:
    """Compressibility thresholds (coalescence, hitting)."""
    return 1.0 - d / (4.0 * alpha * alpha), 0.5 - (d - 2) / (4.0 * alpha)


def classify_regime(alpha: float, eta: float, d: int) -> Regime:
    """Classify (alpha, eta, d) into the three phases.

    Ties are decided in exact rational arithmetic on the decimal values of the
    inputs; values within 1e-12 of a threshold are also reported as boundary cases.
    """
    ModelParams(d=d, alpha=alpha, eta=eta)
    d, a, e = Fraction(int(d)), _exact(alpha), _exact(eta)
    t1 = 1 - d / (4 * a * a)
    t2 = Fraction(1, 2) - (d - 2) / (4 * a)
    for t in (t1, t2):
        if e == t or abs(float(e - t)) <= _BAND:
            return Regime.BOUNDARY_CASE
    if e < t1:
        return Regime.COALESCING
    if e < t2:
        return Regime.DIFFUSIVE_WITH_HITTING
    return Regime.DIFFUSIVE_NO_HITTING


def _on_coalescence_threshold(params: ModelParams) -> bool:
    a, e = _exact(params.alpha), _exact(params.eta)
    t1 = 1 - Fraction(params.d) / (4 * a * a)
    return e == t1 or abs(float(e - t1)) <= _BAND


def _geom_weights(d: int, eta: float, u):
    """Angular weights of the longitudinal and normal structure functions (a+b = 1)."""
    b = eta
    a = 1.0 - eta
    u2 = u * u
    gl = b / (d - 1) * (1 - u2) + a * u2
    gn = b / (d - 1) * (1 - (1 - u2) / (d - 1)) + a * (1 - u2) / (d - 1)
    return gl, gn


def amplitude_sum(params: ModelParams) -> float:
    """a + b fixed by Tr C(0) = (a+b) m^(-2 alpha) B(d/2, alpha)/2."""
    return 2.0 * params.trace_c0 * params.m ** (2 * params.alpha) / beta_fn(params.d / 2, params.alpha)


def _alpha1(d: int, alpha: float, rtol=1e-12) -> float:
    """alpha_1 = omega * int (1-cos x) x^(-1-2a) dx * int cos^(2a) sin^(d-2) dtheta."""
    omega = 2 * math.gamma(d / 2) / (math.sqrt(math.pi) * math.gamma((d - 1) / 2))
    ix = _spectral.h_quad(0.0, d, alpha, rtol=rtol)
    ith = integrate.quad(lambda th: math.cos(th) ** (2 * alpha) * math.sin(th) ** (d - 2),
                         0.0, math.pi / 2, epsabs=0.0, epsrel=rtol, limit=200, full_output=1)[0]
    return omega * ix * ith


@dataclass(frozen=True)
class DerivedConstants:
    """Constants derived from the kernel's behaviour at the origin."""

    d: int
    alpha: float
    eta: float
    c: float
    beta: float
    delta_star: float
    c_tilde: float
    k_ric: float
    b_n0: float
    regime: Regime
    alpha1: float = field(default=float("nan"))

    def c_xi(self, delta: float) -> float:
        """Slope constant of the stationary solution xi_delta near the origin."""
        if not 0 < delta < self.delta_star:
            raise ValidationError(f"delta must lie in (0, delta_star={self.delta_star}), got {delta}")
        return 1.0 / (self.c * ((self.d - 1) * self.beta + 1 - 2 * self.alpha - delta))

    def as_dict(self) -> dict:
        return {
            "d": self.d, "alpha": self.alpha, "eta": self.eta, "c": self.c, "beta": self.beta,
            "delta_star": self.delta_star, "c_tilde": self.c_tilde, "k_ric": self.k_ric,
            "bN0": self.b_n0, "regime": self.regime.value, "alpha1": self.alpha1,
        }


def derived_constants(params: ModelParams) -> DerivedConstants:
    d, a, e = params.d, params.alpha, params.eta
    beta = beta_ratio(d, a, e)
    if params.kernel_mode is KernelMode.FULL_KRAICHNAN:
        a1 = _alpha1(d, a)
        c = a1 * amplitude_sum(params) * (2 * a + 1 - 2 * a * e) / (d + 2 * a)
    else:
        a1 = float("nan")
        c = params.self_similar_c
    regime = classify_regime(a, e, d)
    second = (d - 1) * beta + 1 - 2 * a
    if _on_coalescence_threshold(params):
        second = 0.0
    delta_star = min(1 - a, second)
    gap = c * (2 - 2 * a) * (1 - 2 * a + beta * (d - 1))
    k_ric = 0.5 * gap ** (1 / (1 - a)) if gap > 0 else 0.0
    return DerivedConstants(d=d, alpha=a, eta=e, c=c, beta=beta, delta_star=delta_star,
                            c_tilde=d * (1 - a) * c, k_ric=k_ric, b_n0=params.trace_c0 / d,
                            regime=regime, alpha1=a1)


def dissipation_constant_closed_form(alpha: float, d: int, trace_c0: float | None = None) -> float:
    """Gamma-function form of the energy dissipation constant at eta = 1.

    c_tilde = d/(d+2a) Tr C(0) K1(d) K2(a), K1 = pi^(d-1)/Gamma(d/2),
    K2 = (1-a) cos(pi a) Gamma(1-2a) Gamma(a+1/2)/Gamma(a+1), continued to
    a = 1/2 by cos(pi a) Gamma(1-2a) = pi / (2 Gamma(2a) sin(pi a)).
    """
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    tr = 2.0 * d if trace_c0 is None else float(trace_c0)
    k1 = math.pi ** (d - 1) / math.gamma(d / 2)
    cg = math.pi / (2 * math.gamma(2 * alpha) * math.sin(math.pi * alpha))
    k2 = (1 - alpha) * cg * math.gamma(alpha + 0.5) / math.gamma(alpha + 1)
    return d / (d + 2 * alpha) * tr * k1 * k2


class IsotropicKernel:
    """Structure functions b_L, b_N and their derivatives.

    In ``full_kraichnan`` mode the functions are tabulated at ``n_table``
    log-spaced radii in [r_lo/m, r_hi/m] by nested adaptive quadrature and
    interpolated by cubic splines in (log r, log b). Below the table the local
    power law is continued; above it values are held constant with a warning.
    ``tabulate=False`` skips the table and evaluates every call by quadrature.
    """

    def __init__(self, params: ModelParams, *, rtol: float = 1e-9, n_table: int = 512,
                 r_lo: float = 1e-6, r_hi: float = 1e3, tabulate: bool = True):
        self.params = params
        self.rtol = rtol
        self._constants = None
        self._table = None
        self._warned = False
        self._zero = False
        if params.kernel_mode is KernelMode.SELF_SIMILAR:
            self._c = params.self_similar_c
            self._beta = beta_ratio(params.d, params.alpha, params.eta)
        elif tabulate:
            self._build_table(n_table, r_lo / params.m, r_hi / params.m)

    @classmethod
    def zero(cls, d: int = 2, trace_c0: float | None = None) -> "IsotropicKernel":
        """Kernel with b_L = b_N = 0; only the molecular part 2 c0 kappa remains."""
        k = cls(ModelParams(d=d, trace_c0=trace_c0, kernel_mode=KernelMode.SELF_SIMILAR))
        k._zero = True
        return k

    @property
    def is_zero(self) -> bool:
        return self._zero

    @property
    def mode(self) -> KernelMode:
        return self.params.kernel_mode

    @property
    def constants(self) -> DerivedConstants:
        if self._constants is None:
            self._constants = derived_constants(self.params)
        return self._constants

    @property
    def c0(self) -> float:
        return self.params.c0

    # full kernel numerics

    def _quad_coefficients(self, r, hfun):
        p = self.params
        d, a = p.d, p.alpha
        r = np.atleast_1d(np.asarray(r, dtype=float))
        ab = amplitude_sum(p)
        norm = 2.0 / beta_fn(0.5, (d - 1) / 2)
        # per-radius scale so that the max-norm tolerance acts relatively
        rm2a = (r * p.m) ** (2 * a)
        scale = ab * p.m ** (-2 * a) * rm2a / (1.0 + rm2a)

        def integrand(th):
            u = math.cos(th)
            w = norm * math.sin(th) ** (d - 2)
            s = u * r
            S = s ** (2 * a) * hfun(s * p.m)
            gl, gn = _geom_weights(d, p.eta, u)
            return np.concatenate((gl * w * S, gn * w * S)) * (ab / scale2)

        scale2 = np.concatenate((scale, scale))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad_vec(integrand, 0.0, math.pi / 2, epsrel=self.rtol,
                                          epsabs=0.0, limit=2000, norm="max")
        val = val * scale2
        n = r.size
        bl, bn = val[:n], val[n:]
        if not (np.all(np.isfinite(val)) and np.all(val > 0)):
            raise NumericalError("structure-function quadrature failed", achieved=float(err))
        return bl, bn

    def _build_table(self, n, r_lo, r_hi):
        p = self.params
        tab = _spectral.spectral_table(p.d, p.alpha)
        r = np.geomspace(r_lo, r_hi, n)
        bl, bn = self._quad_coefficients(r, tab)
        lr = np.log(r)
        self._table = (r_lo, r_hi, CubicSpline(lr, np.log(bl)), CubicSpline(lr, np.log(bn)))
        # below the table: b = k r^(2a) + D r^2 with the exact leading constant k
        const = self.constants
        a2 = 2 * p.alpha
        lead = np.array([const.c, const.c * const.beta])
        self._lead = (lead, (np.array([bl[0], bn[0]]) - lead * r_lo ** a2) / r_lo ** 2)

    def direct(self, r):
        """Nested adaptive quadrature of (b_L, b_N) without the tabulated path."""
        p = self.params
        if p.kernel_mode is KernelMode.SELF_SIMILAR:
            return self.coefficients(r)

        def hfun(eps):
            return np.array([_spectral.h_quad(float(x), p.d, p.alpha) for x in np.ravel(eps)])

        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValidationError("radii must be finite and non-negative")
        out = [self._quad_coefficients(np.array([x]), hfun) if x > 0 else (np.zeros(1), np.zeros(1))
               for x in np.ravel(r)]
        bl = np.array([o[0][0] for o in out]).reshape(r.shape)
        bn = np.array([o[1][0] for o in out]).reshape(r.shape)
        return bl, bn

    def _tab_eval(self, r, which, deriv):
        r_lo, r_hi, sl, sn = self._table
        spl = sl if which == 0 else sn
        lr = np.log(r)
        lo = r < r_lo
        hi = r > r_hi
        if np.any(hi) and not self._warned:
            warnings.warn(f"radius beyond tabulated range {r_hi:g}; structure functions held constant",
                          RuntimeWarning, stacklevel=3)
            self._warned = True
        llo, lhi = math.log(r_lo), math.log(r_hi)
        x = np.clip(lr, llo, lhi)
        b = np.exp(spl(x))
        slope = np.where(hi, 0.0, spl(x, 1))
        out = b * slope / r if deriv else b
        if np.any(lo):
            lead, corr = self._lead
            k, dd = lead[which], corr[which]
            a2 = 2 * self.params.alpha
            rl = r[lo]
            if deriv:
                out[lo] = k * a2 * rl ** (a2 - 1) + 2 * dd * rl
            else:
                out[lo] = k * rl ** a2 + dd * rl ** 2
        return out

    def _eval(self, r, which, deriv):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValidationError("radii must be finite and non-negative")
        p = self.params
        if self._zero:
            return np.zeros_like(r)
        if p.kernel_mode is KernelMode.SELF_SIMILAR:
            k = self._c * (self._beta if which else 1.0)
            a2 = 2 * p.alpha
            if deriv:
                with np.errstate(divide="ignore"):
                    return np.where(r > 0, k * a2 * r ** (a2 - 1), np.inf)
            return k * r ** a2
        if self._table is None:
            bl, bn = self.direct(np.where(r > 0, r, 1.0))
            if deriv:
                raise ValidationError("derivatives need the tabulated kernel")
            out = bn if which else bl
            return np.where(r > 0, out, 0.0)
        safe = np.where(r > 0, r, 1.0)
        out = self._tab_eval(safe, which, deriv)
        if deriv:
            return np.where(r > 0, out, np.inf)
        return np.where(r > 0, out, 0.0)

    def bL(self, r):
        return self._eval(r, 0, False)

    def bN(self, r):
        return self._eval(r, 1, False)

    def bL_prime(self, r):
        return self._eval(r, 0, True)

    def bN_prime(self, r):
        return self._eval(r, 1, True)

    def coefficients(self, r):
        return self.bL(r), self.bN(r)


def structure_coefficients(kernel: IsotropicKernel, r, *, direct: bool = False):
    """Return (b_L(r), b_N(r)); ``direct`` bypasses the spline table."""
    if direct:
        return kernel.direct(r)
    return kernel.coefficients(r)


def q_matrix(kernel: IsotropicKernel, z) -> np.ndarray:
    """Structure matrix Q(z) for a single vector z, or a stack of shape (n, d)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != kernel.params.d:
        raise ValidationError(f"z must have {kernel.params.d} components")
    r = np.linalg.norm(z, axis=1)
    bl, bn = kernel.coefficients(r)
    zh = np.divide(z, r[:, None], out=np.zeros_like(z), where=r[:, None] > 0)
    eye = np.eye(z.shape[1])
    proj = zh[:, :, None] * zh[:, None, :]
    q = bl[:, None, None] * proj + bn[:, None, None] * (eye - proj)
    return q[0] if single else q


def ellipticity_floor(kernel: IsotropicKernel, r0: float, R: float, n_samples: int = 64) -> float:
    """Smallest eigenvalue of Q(z) over n_samples log-spaced radii in [r0, R]."""
    if not (r0 > 0 and R >= r0):
        raise ValidationError(f"need 0 < r0 <= R, got r0={r0}, R={R}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValidationError("n_samples must be a positive integer")
    radii = np.geomspace(r0, R, int(n_samples)) if R > r0 else np.array([float(r0)])
    bl, bn = kernel.coefficients(radii)
    return float(np.min(np.minimum(bl, bn)))
