import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kraichnan_lab import (
    IsotropicKernel, KernelMode, ModelParams, Regime, ValidationError, beta_ratio, classify_regime,
    derived_constants, dissipation_constant_closed_form, ellipticity_floor, q_matrix, regime_thresholds,
    structure_coefficients,
)
from kraichnan_lab._spectral import h_large, h_quad, h_zero, spectral_table
from kraichnan_lab.kernels import amplitude_sum


@pytest.fixture(scope="module")
def full_kernels():
    return {key: IsotropicKernel(ModelParams(d=key[0], alpha=key[1], eta=key[2]))
            for key in ((2, 0.5, 0.5), (2, 0.3, 1.0), (2, 0.8, 0.2), (3, 0.5, 0.7))}


# spectral integral


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.75, 0.95])
def test_h_zero_closed_form(alpha):
    mp.mp.dps = 25
    e = -1 - 2 * mp.mpf(alpha)
    # head on (0, 1] with x^2/2 removed, power laws in closed form, oscillatory tail by quadosc
    head = 1 / (2 * (1 - 2 * mp.mpf(alpha)) + 2) - mp.quad(lambda x: (x * x / 2 - 1 + mp.cos(x)) * x ** e, [0, 1])
    osc = mp.quadosc(lambda x: mp.cos(x) * x ** e, [1, mp.inf], period=2 * mp.pi)
    ref = float(head + 1 / (2 * mp.mpf(alpha)) - osc)
    assert h_zero(alpha) == pytest.approx(ref, rel=1e-10)
    assert h_quad(0.0, 2, alpha) == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("d,alpha,eps", [(2, 0.5, 0.3), (3, 0.25, 2.0), (2, 0.75, 40.0)])
def test_h_quad_against_mpmath(d, alpha, eps):
    mp.mp.dps = 25
    a = mp.mpf(alpha)
    e = mp.mpf(eps)
    smooth = mp.quad(lambda x: x ** (d - 1) * (x * x + e * e) ** (-mp.mpf(d) / 2 - a), [0, e, mp.inf])
    osc = mp.quadosc(lambda x: mp.cos(x) * x ** (d - 1) * (x * x + e * e) ** (-mp.mpf(d) / 2 - a),
                     [0, mp.inf], period=2 * mp.pi)
    assert h_quad(eps, d, alpha) == pytest.approx(float(smooth - osc), rel=1e-10)


def test_h_large_eps_tail():
    # odd d: the oscillatory part is exponentially small
    assert h_quad(200.0, 3, 0.5) == pytest.approx(float(h_large(200.0, 3, 0.5)), rel=1e-12)


def test_spectral_table_accuracy():
    tab = spectral_table(2, 0.5)
    eps = np.array([1e-15, 1e-9, 3e-4, 0.7, 13.0, 4e4, 1e7])
    ref = np.array([h_quad(float(x), 2, 0.5) for x in eps])
    np.testing.assert_allclose(tab(eps), ref, rtol=1e-8)


# parameters and constants


def test_model_params_defaults_and_guards():
    p = ModelParams()
    assert p.trace_c0 == 4.0 and p.c0 == 1.0
    assert ModelParams(d=3).trace_c0 == 6.0
    with pytest.raises(ValidationError, match="alpha must lie in"):
        ModelParams(alpha=1.5)
    with pytest.raises(ValidationError):
        ModelParams(eta=-0.1)
    with pytest.raises(ValidationError):
        ModelParams(d=1)
    with pytest.raises(ValidationError):
        ModelParams(m=0.0)
    with pytest.raises(ValidationError):
        ModelParams(kernel_mode="other")


def test_beta_and_self_similar_constants():
    c = derived_constants(ModelParams(alpha=0.5, eta=1.0, kernel_mode="self_similar"))
    assert c.beta == 2.0
    assert c.delta_star == 0.5
    assert c.k_ric == pytest.approx(2.0, rel=1e-15)
    assert c.c_tilde == pytest.approx(1.0)
    assert c.regime is Regime.DIFFUSIVE_NO_HITTING
    assert c.c_xi(0.25) == pytest.approx(1 / (2.0 - 0.25))
    with pytest.raises(ValidationError):
        c.c_xi(0.5)
    assert c.as_dict()["bN0"] == 2.0


def test_beta_ratio_is_one_for_d2_eta_half():
    # incompressible and potential parts balance the longitudinal/normal ratio
    assert beta_ratio(2, 0.37, 0.5) == pytest.approx(1.0)
    assert beta_ratio(3, 0.5, 0.0) == pytest.approx(2 / (2 * 2.0))


def test_coalescence_threshold_snaps_delta_star():
    # d = 2, alpha = 0.8: eta = 1 - 2/(4 * 0.64) = 0.21875 exactly
    c = derived_constants(ModelParams(d=2, alpha=0.8, eta=0.21875, kernel_mode="self_similar"))
    assert c.regime is Regime.BOUNDARY_CASE
    assert c.delta_star == 0.0
    assert c.k_ric == 0.0


def test_classify_regime_examples():
    assert classify_regime(0.9, 0.2, 2) is Regime.COALESCING
    assert classify_regime(0.9, 1.0, 2) is Regime.DIFFUSIVE_NO_HITTING
    assert classify_regime(0.5, 0.25, 2) is Regime.DIFFUSIVE_WITH_HITTING
    assert classify_regime(0.5, 0.25, 3) is Regime.DIFFUSIVE_NO_HITTING
    assert classify_regime(0.5, 0.5, 2) is Regime.BOUNDARY_CASE  # hitting threshold 1/2
    assert classify_regime(0.8, 0.21875, 2) is Regime.BOUNDARY_CASE
    with pytest.raises(ValidationError):
        classify_regime(0.5, 1.2, 2)


@given(alpha=st.floats(0.01, 0.99), eta=st.floats(0.0, 1.0), d=st.integers(2, 5))
@settings(max_examples=300, deadline=None)
def test_classify_regime_matches_thresholds(alpha, eta, d):
    t1, t2 = regime_thresholds(d, alpha)
    reg = classify_regime(alpha, eta, d)
    a, e = Fraction(repr(alpha)), Fraction(repr(eta))
    r1 = 1 - Fraction(d) / (4 * a * a)
    r2 = Fraction(1, 2) - Fraction(d - 2) / (4 * a)
    if min(abs(e - r1), abs(e - r2)) <= Fraction(1, 10 ** 12):
        assert reg is Regime.BOUNDARY_CASE
    elif eta < t1:
        assert reg is Regime.COALESCING
    elif eta < t2:
        assert reg is Regime.DIFFUSIVE_WITH_HITTING
    else:
        assert reg is Regime.DIFFUSIVE_NO_HITTING


def test_closed_form_is_independent_of_quadrature_up_to_fixed_factor():
    # the Gamma form differs from d (1-alpha) c by pi^(d-1/2)/Gamma(d/2) at m = 1, any alpha
    for d in (2, 3):
        factor = math.pi ** (d - 0.5) / math.gamma(d / 2)
        for alpha in (0.2, 0.5, 0.8):
            c = derived_constants(ModelParams(d=d, alpha=alpha, eta=1.0))
            assert dissipation_constant_closed_form(alpha, d) / c.c_tilde == pytest.approx(factor, rel=1e-9)


def test_closed_form_limits():
    for d in (2, 3):
        k1 = math.pi ** (d - 1) / math.gamma(d / 2)
        assert dissipation_constant_closed_form(1e-7, d) == pytest.approx(2 * d * k1 * math.sqrt(math.pi), rel=1e-5)
        assert dissipation_constant_closed_form(1 - 1e-7, d) == pytest.approx(
            d / (d + 2) * 2 * d * k1 * math.sqrt(math.pi) / 4, rel=1e-5)


def test_closed_form_is_continuous_at_half():
    v = dissipation_constant_closed_form(0.5, 2)
    assert dissipation_constant_closed_form(0.5 - 1e-9, 2) == pytest.approx(v, rel=1e-7)
    assert dissipation_constant_closed_form(0.5 + 1e-9, 2) == pytest.approx(v, rel=1e-7)


def test_alpha1_against_double_integral_closed_form():
    # alpha_1 = omega h(0) int cos^(2a) sin^(d-2): the theta integral is B(a+1/2, (d-1)/2)/2
    for d, alpha in ((2, 0.3), (3, 0.7)):
        c = derived_constants(ModelParams(d=d, alpha=alpha))
        omega = 2 * math.gamma(d / 2) / (math.sqrt(math.pi) * math.gamma((d - 1) / 2))
        ith = 0.5 * math.gamma(alpha + 0.5) * math.gamma((d - 1) / 2) / math.gamma(alpha + d / 2)
        assert c.alpha1 == pytest.approx(omega * h_zero(alpha) * ith, rel=1e-11)


# structure functions


def _bessel_oracle_d2(alpha, eta, r, m=1.0, trace=4.0):
    """b_L, b_N for d = 2 by the Bessel form of the angular average, in mpmath.

    <u^2 (1 - cos(x u))> = 1/2 - (J0 - J2)/2 and <(1-u^2)(1 - cos(x u))> = 1/2 - (J0 + J2)/2.
    """
    mp.mp.dps = 20
    a_ = mp.mpf(alpha)
    m_ = mp.mpf(m)
    ab = mp.mpf(amplitude_sum(ModelParams(d=2, alpha=alpha, eta=eta, m=m, trace_c0=trace)))
    b = mp.mpf(eta)
    a = 1 - b
    smooth = (a + b) / 2 * m_ ** (-2 * a_) / (2 * a_)
    out = []
    for cj2 in (b - a, a - b):
        f = lambda rho: rho * (rho ** 2 + m_ ** 2) ** (-1 - a_) * ((a + b) * mp.besselj(0, rho * r)
                                                                   + cj2 * mp.besselj(2, rho * r)) / 2
        out.append(float(ab * (smooth - mp.quadosc(f, [0, mp.inf], omega=r))))
    return out


@pytest.mark.parametrize("key", [(2, 0.5, 0.5), (2, 0.3, 1.0), (2, 0.8, 0.2)])
def test_full_kernel_at_r_tenth_against_bessel_oracle(full_kernels, key):
    bl, bn = full_kernels[key].coefficients(np.array([0.1]))
    ref = _bessel_oracle_d2(key[1], key[2], mp.mpf("0.1"))
    assert bl[0] == pytest.approx(ref[0], rel=1e-9)
    assert bn[0] == pytest.approx(ref[1], rel=1e-9)


def test_table_matches_direct_quadrature(full_kernels):
    r = np.array([3e-7, 1e-4, 0.05, 1.3, 40.0])
    for k in full_kernels.values():
        bl, bn = k.coefficients(r)
        dl, dn = k.direct(r)
        np.testing.assert_allclose(bl, dl, rtol=5e-9)
        np.testing.assert_allclose(bn, dn, rtol=5e-9)


def test_derivatives_match_finite_differences(full_kernels):
    k = full_kernels[(3, 0.5, 0.7)]
    r = np.array([1e-3, 0.2, 3.0])
    h = 1e-5 * r
    fd = (k.bL(r + h) - k.bL(r - h)) / (2 * h)
    np.testing.assert_allclose(k.bL_prime(r), fd, rtol=1e-6)
    fd = (k.bN(r + h) - k.bN(r - h)) / (2 * h)
    np.testing.assert_allclose(k.bN_prime(r), fd, rtol=1e-6)


def test_saturation_at_large_r(full_kernels):
    # Q(z) -> C(0) = 2 c0 I away from the correlation length
    for k in full_kernels.values():
        bl, bn = k.coefficients(np.array([900.0]))
        assert bl[0] == pytest.approx(2 * k.c0, rel=1e-4)
        assert bn[0] == pytest.approx(2 * k.c0, rel=1e-4)


def test_small_r_asymptotic_rate(full_kernels):
    # b_L / (c r^(2 alpha)) - 1 = O((r m)^(2 - 2 alpha))
    k = full_kernels[(2, 0.3, 1.0)]
    c = k.constants
    r = np.array([1e-5, 1e-4, 1e-3])
    err = np.abs(k.bL(r) / (c.c * r ** 0.6) - 1)
    slopes = np.diff(np.log(err)) / np.diff(np.log(r))
    np.testing.assert_allclose(slopes, 1.4, atol=0.05)
    ratio = k.bN(r) / k.bL(r) / c.beta - 1
    assert np.all(np.abs(ratio) < 3 * err)


def test_self_similar_kernel_is_exact():
    k = IsotropicKernel(ModelParams(alpha=0.4, eta=0.3, kernel_mode=KernelMode.SELF_SIMILAR, self_similar_c=2.5))
    r = np.array([0.0, 1e-3, 1.0, 50.0])
    bl, bn = structure_coefficients(k, r)
    np.testing.assert_allclose(bl, 2.5 * r ** 0.8, rtol=1e-15)
    np.testing.assert_allclose(bn, beta_ratio(2, 0.4, 0.3) * bl, rtol=1e-15)


def test_zero_kernel():
    k = IsotropicKernel.zero(3)
    assert k.is_zero
    bl, bn = k.coefficients(np.array([0.0, 1.0]))
    assert np.all(bl == 0) and np.all(bn == 0)


def test_origin_values_vanish(full_kernels):
    bl, bn = full_kernels[(2, 0.5, 0.5)].coefficients(np.array([0.0]))
    assert bl[0] == 0 and bn[0] == 0
    with pytest.raises(ValidationError):
        full_kernels[(2, 0.5, 0.5)].coefficients(np.array([-1.0]))


@given(x=st.floats(-5, 5), y=st.floats(-5, 5), eta=st.sampled_from([0.0, 0.3, 1.0]))
@settings(max_examples=60, deadline=None)
def test_q_matrix_is_symmetric_psd(x, y, eta):
    k = IsotropicKernel(ModelParams(alpha=0.6, eta=eta, kernel_mode="self_similar"))
    q = q_matrix(k, np.array([x, y]))
    np.testing.assert_allclose(q, q.T, atol=0)
    assert np.min(np.linalg.eigvalsh(q)) >= -1e-12 * max(1.0, np.max(np.abs(q)))


def test_q_matrix_full_kernel_psd_and_eigenvectors(full_kernels):
    k = full_kernels[(3, 0.5, 0.7)]
    z = np.array([0.3, -0.4, 1.2])
    q = q_matrix(k, z)
    w, v = np.linalg.eigh(q)
    assert np.all(w > 0)
    bl, bn = k.coefficients(np.array([np.linalg.norm(z)]))
    np.testing.assert_allclose(q @ z, bl[0] * z, rtol=1e-12)
    assert sorted([bn[0], bn[0], bl[0]]) == pytest.approx(sorted(w), rel=1e-12)
    assert np.all(q_matrix(k, np.zeros(3)) == 0)


def test_ellipticity_floor_positive(full_kernels):
    k = full_kernels[(2, 0.8, 0.2)]
    lo = ellipticity_floor(k, 0.01, 5.0)
    bl, bn = k.coefficients(np.array([0.01]))
    assert 0 < lo <= min(bl[0], bn[0]) + 1e-15
