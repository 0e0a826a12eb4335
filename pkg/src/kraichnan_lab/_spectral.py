"""Spectral integral h(eps) of the Kraichnan covariance and its tabulation.

    h(eps) = int_0^inf (1 - cos x) x^(d-1) (x^2 + eps^2)^(-d/2-alpha) dx

so that the isotropic increment of the energy spectrum in direction u is
S(s) = s^(2 alpha) h(s m). The integrands are compiled with numba and handed to
QUADPACK as low-level callables.
"""
from __future__ import annotations

import functools
import math

import numpy as np
from numba import cfunc, types
from scipy import LowLevelCallable, integrate
from scipy.interpolate import CubicSpline
from scipy.special import beta as beta_fn, betainc

from .errors import NumericalError

_SIG = types.double(types.intc, types.CPointer(types.double))


@cfunc(_SIG, cache=True)
def _head(n, xx):
    # integrand on (0, 1] after x = exp(s); evaluated in log form
    s = xx[0]
    eps = xx[1]
    d = xx[2]
    alpha = xx[3]
    nu = 0.5 * d + alpha
    x = math.exp(s)
    if x >= eps:
        big = x
        small = eps
    else:
        big = eps
        small = x
    logden = 2.0 * math.log(big) + math.log1p((small / big) ** 2)
    if x > 1e-8:
        sinc = math.sin(0.5 * x) / x
    else:
        sinc = 0.5
    return 2.0 * sinc * sinc * math.exp((d + 2.0) * s - nu * logden)


@cfunc(_SIG, cache=True)
def _body(n, xx):
    x = xx[0]
    eps = xx[1]
    d = xx[2]
    alpha = xx[3]
    sh = math.sin(0.5 * x)
    return 2.0 * sh * sh * x ** (d - 1.0) * (x * x + eps * eps) ** (-(0.5 * d + alpha))


@cfunc(_SIG, cache=True)
def _envelope(n, xx):
    x = xx[0]
    eps = xx[1]
    d = xx[2]
    alpha = xx[3]
    return x ** (d - 1.0) * (x * x + eps * eps) ** (-(0.5 * d + alpha))


_HEAD = LowLevelCallable(_head.ctypes)
_BODY = LowLevelCallable(_body.ctypes)
_ENV = LowLevelCallable(_envelope.ctypes)

_SPLIT = 20.0 * math.pi


def h_zero(alpha: float) -> float:
    """Closed form of h(0) = int_0^inf (1 - cos x) x^(-1-2 alpha) dx."""
    # cos(pi a) Gamma(1-2a) / (2a), written without the removable pole at a = 1/2
    return math.pi / (4.0 * alpha * math.gamma(2.0 * alpha) * math.sin(math.pi * alpha))


def h_large(eps, d: int, alpha: float):
    """Non-oscillatory part eps^(-2 alpha) B(d/2, alpha)/2 of h at large eps."""
    return np.asarray(eps, dtype=float) ** (-2.0 * alpha) * 0.5 * beta_fn(0.5 * d, alpha)


def h_quad(eps: float, d: int, alpha: float, rtol: float = 1e-12) -> float:
    """Adaptive quadrature of h(eps) for a single eps >= 0."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    args = (float(eps), float(d), float(alpha))
    g = 2.0 - 2.0 * alpha
    smin = -60.0 / g + (math.log(eps) if eps > 0 else 0.0)
    # below x = e^-700 the integrand is x^(2-2alpha)/2 (or smaller); add that piece exactly
    head_tail = 0.0
    if smin < -700.0:
        smin = -700.0
        if eps < math.exp(smin):
            head_tail = 0.5 * math.exp(g * smin) / g
    pts = [math.log(eps)] if 0 < eps < 1 else None
    # full_output suppresses IntegrationWarning without touching the (thread-unsafe) warning filters
    head = integrate.quad(_HEAD, smin, 0.0, args=args, points=pts, limit=500,
                          epsabs=0.0, epsrel=rtol, full_output=1)[0]
    body = integrate.quad(_BODY, 1.0, _SPLIT, args=args, limit=500,
                          points=[eps] if 1 < eps < _SPLIT else None,
                          epsabs=0.0, epsrel=rtol, full_output=1)[0]
    if eps > _SPLIT:
        # int_L^inf x^(d-1) (x^2+eps^2)^(-d/2-alpha) dx as an incomplete beta function
        u = eps * eps / (_SPLIT * _SPLIT + eps * eps)
        tail = 0.5 * eps ** (-2.0 * alpha) * beta_fn(alpha, 0.5 * d) * betainc(alpha, 0.5 * d, u)
    else:
        tail = integrate.quad(_ENV, _SPLIT, np.inf, args=args, limit=500,
                              epsabs=0.0, epsrel=rtol, full_output=1)[0]
    osc = integrate.quad(_ENV, _SPLIT, np.inf, args=args, weight="cos", wvar=1.0,
                         limlst=200, epsabs=1e-16, full_output=1)[0]
    val = head_tail + head + body + tail - osc
    if not math.isfinite(val) or val <= 0:
        raise NumericalError(f"spectral integral failed at eps={eps}", achieved=val)
    return val


class SpectralTable:
    """Cubic spline of h in log eps, with exact behaviour outside the grid.

    Below the grid h(eps) = h(0) - O(eps^(2-2alpha)) is continued by the power law
    matched at the first node. Above eps_hi the oscillatory part is O(eps^-2) relative
    (exponentially small in odd d), i.e. below 1e-12.
    """

    def __init__(self, d: int, alpha: float, eps_lo=1e-14, eps_hi=1e6, step=0.02):
        self.d = d
        self.alpha = alpha
        self.h0 = h_zero(alpha)
        s = np.arange(math.log(eps_lo), math.log(eps_hi) + step, step)
        vals = np.array([h_quad(math.exp(v), d, alpha) for v in s])
        self.s = s
        self._spl = CubicSpline(s, np.log(vals))
        self.eps_lo = math.exp(s[0])
        self.eps_hi = math.exp(s[-1])
        self._h_lo = vals[0]
        # keeps the continuation above the grid continuous with the spline
        self._hi_ratio = vals[-1] / float(h_large(self.eps_hi, d, alpha))

    def __call__(self, eps):
        eps = np.asarray(eps, dtype=float)
        out = np.empty_like(eps)
        lo = eps < self.eps_lo
        hi = eps > self.eps_hi
        mid = ~(lo | hi)
        out[mid] = np.exp(self._spl(np.log(eps[mid])))
        gap = self.h0 - self._h_lo
        out[lo] = self.h0 - gap * (eps[lo] / self.eps_lo) ** (2.0 - 2.0 * self.alpha)
        out[hi] = h_large(eps[hi], self.d, self.alpha) * self._hi_ratio
        return out


@functools.lru_cache(maxsize=64)
def spectral_table(d: int, alpha: float) -> SpectralTable:
    return SpectralTable(d, alpha)
