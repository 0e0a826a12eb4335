import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from kraichnan_lab import (
    DiracApproxDatum, FitError, GaussianDatum, IsotropicKernel, McConfig, ModelParams, NumericalError, PdeConfig,
    RadialGrid, RadialProfile, StretchedExponentialDatum, ValidationError, build_grid, evolve, increment_seminorm,
    simulate_separation, singular_amplitude, xi_diagnostic,
)
from kraichnan_lab.radial_pde import default_fit_window, grid_size, spreading_rate


def _self_similar(alpha, d=2):
    return IsotropicKernel(ModelParams(d=d, alpha=alpha, eta=1.0, kernel_mode="self_similar"))


# grid


@given(h=st.floats(1e-12, 1e-3), r_max=st.floats(1.0, 100.0), growth=st.floats(1.01, 1.1),
       cap=st.one_of(st.none(), st.floats(0.05, 1.0)))
@settings(max_examples=60, deadline=None)
def test_grid_size_predicts_build_grid(h, r_max, growth, cap):
    n = grid_size(h, r_max, growth, cap)
    if not 64 <= n <= 1_000_000:
        return
    g = build_grid(h, r_max, growth, cap)
    assert abs(g.n_intervals - n) <= 1
    sp = np.diff(g.nodes)
    assert g.nodes[0] == 0 and g.nodes[1] == h and g.nodes[-1] == r_max
    assert np.all(sp[1:-1] <= sp[:-2] * growth * (1 + 1e-12))


def test_grid_size_oracle_pure_geometric():
    # no cap reached: N = ceil(log(1 + R (g-1)/h) / log g)
    h, r_max, g = 1e-10, 1.0, 1.05
    assert grid_size(h, r_max, g, max_spacing=10.0) == math.ceil(math.log1p(r_max * (g - 1) / h) / math.log(g))
    # uniform tail after the cap
    assert grid_size(1e-2, 10.0, 1.05, max_spacing=1e-2) == 1000


def test_grid_guards():
    with pytest.raises(ValidationError):
        build_grid(1e-3, 1.0, 1.2)
    with pytest.raises(ValidationError):
        build_grid(1.0, 0.5)
    with pytest.raises(ValidationError):
        build_grid(0.1, 1.0, 1.05, max_spacing=0.1)  # fewer than 64 intervals
    with pytest.raises(ValidationError):
        build_grid(1e-9, 1e3, 1.0001, max_spacing=1e-6)


def test_config_guards():
    with pytest.raises(ValidationError):
        PdeConfig(kappa=0.5)
    with pytest.raises(ValidationError):
        PdeConfig(mode="other")
    with pytest.raises(ValidationError):
        PdeConfig(observable_times=(1.0, 0.5))
    with pytest.raises(ValidationError):
        PdeConfig(theta=0.3)
    k = IsotropicKernel(ModelParams(alpha=0.5, eta=0.5, kernel_mode="self_similar"))
    with pytest.raises(ValidationError, match="eta = 1"):
        evolve(k, build_grid(1e-3, 10.0), PdeConfig(mode="continuity_divfree"), GaussianDatum())


# closed-form oracles


@pytest.mark.parametrize("d", [2, 3])
def test_heat_kernel_oracle_second_order(d):
    k = IsotropicKernel.zero(d)
    kappa = 0.4
    diff = 2 * k.c0 * kappa
    errs = []
    for h in (4e-2, 2e-2, 1e-2):
        g = build_grid(h, 20.0, 1.05, max_spacing=h)
        run = evolve(k, g, PdeConfig(kappa=kappa, dt=h * h, theta=0.5, observable_times=(1.0,)), GaussianDatum(1.0))
        s2 = 1 + diff
        exact = s2 ** (-d / 2) * np.exp(-g.nodes ** 2 / (4 * s2))
        errs.append(np.max(np.abs(run.profiles[-1].values - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def _gamma_oracle_loss(alpha, d, t=1.0):
    """1 - E exp(-r_t^2/4) for the self-similar separation started at 0.

    Y = r^(2-2alpha) is Gamma distributed with shape K/(g^2 c) and scale g^2 c t.
    """
    k = _self_similar(alpha, d)
    c = k.constants
    g = 2 - 2 * alpha
    shape = spreading_rate(k) / (g * g * c.c)
    dist = stats.gamma(shape, scale=g * g * c.c * t)
    return integrate.quad(lambda y: -math.expm1(-y ** (2 / g) / 4) * dist.pdf(y), 0, np.inf,
                          limit=500, epsabs=0, epsrel=1e-12)[0]


@pytest.mark.parametrize("alpha,h_min", [(0.5, 1e-12), (0.9, 1e-32)])
def test_energy_loss_against_gamma_oracle(alpha, h_min):
    k = _self_similar(alpha)
    g = build_grid(h_min, 50.0, 1.025)
    cfg = PdeConfig(dt=2.5e-3, dt_min=1e-12, dt_growth=0.01, theta=0.5, observable_times=(1.0,),
                    store_profiles=False)
    run = evolve(k, g, cfg, GaussianDatum(1.0))
    loss = 1 - run.energy[-1] / run.diagnostics["initial_energy"]
    assert loss == pytest.approx(_gamma_oracle_loss(alpha, 2), rel=1e-2)


# discrete structure


def test_maximum_principle_and_monotone_energy():
    k = IsotropicKernel(ModelParams(d=2, alpha=0.6, eta=0.7))
    g = build_grid(1e-10, 20.0, 1.05)
    run = evolve(k, g, PdeConfig(dt=1e-2, dt_min=1e-8, dt_growth=0.01, observable_times=tuple(np.linspace(0.1, 1, 10))),
                 StretchedExponentialDatum(1.0, 1.0))
    for p in run.profiles:
        assert np.max(np.abs(p.values)) <= 1.0 + 1e-12
        assert np.all(np.diff(p.values) <= 1e-14)  # stays radially non-increasing
    e = np.concatenate(([run.diagnostics["initial_energy"]], run.energy))
    assert np.all(np.diff(e) < 0)
    assert run.max_residual < 1e-10


@pytest.mark.parametrize("d", [2, 3])
def test_mass_conservation_continuity_mode(d):
    k = _self_similar(0.5, d)
    g = build_grid(1e-5, 300.0, 1.03)
    cfg = PdeConfig(mode="continuity_divfree", outer_bc="homogeneous_neumann", dt=5e-3, dt_min=1e-9,
                    dt_growth=0.01, observable_times=tuple(np.geomspace(1e-3, 1.0, 10)), store_profiles=False)
    run = evolve(k, g, cfg, DiracApproxDatum(d, 1e-3))
    assert run.mass[0] == pytest.approx(1.0, rel=2e-3)
    assert np.ptp(run.mass) / run.mass[0] < 1e-10


def test_coalescing_point_freezes_energy():
    k = IsotropicKernel(ModelParams(d=2, alpha=0.9, eta=0.2))
    for h in (1e-8, 1e-16):
        run = evolve(k, build_grid(h, 20.0, 1.05), PdeConfig(dt=1e-2, observable_times=(0.5, 1.0)), GaussianDatum(1.0))
        assert run.frozen_origin
        assert run.energy[-1] == run.diagnostics["initial_energy"]
        # the profile still evolves away from the origin
        assert np.max(np.abs(run.profiles[-1].values - GaussianDatum(1.0).values(run.grid.nodes))) > 1e-3


def test_energy_is_uniform_in_kappa():
    k = IsotropicKernel(ModelParams(d=2, alpha=0.5, eta=1.0))
    g = build_grid(1e-12, 20.0, 1.04)
    cfg = PdeConfig(dt=5e-3, dt_min=1e-10, dt_growth=0.01, theta=0.5, observable_times=(1.0,), store_profiles=False)
    e = {kap: evolve(k, g, PdeConfig(**{**cfg.__dict__, "kappa": kap}), GaussianDatum(1.0)).energy[-1]
         for kap in (1e-1, 1e-2, 1e-3, 1e-4, 0.0)}
    gaps = [abs(e[kap] - e[0.0]) for kap in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3 * e[0.0]


def test_pde_second_moment_matches_monte_carlo():
    # continuity mode transports the law of the separation: E r^2 = omega int r^(d+1) G dr
    d, alpha, t = 2, 0.5, 0.5
    k = _self_similar(alpha, d)
    g = build_grid(1e-5, 300.0, 1.03)
    cfg = PdeConfig(mode="continuity_divfree", outer_bc="homogeneous_neumann", dt=5e-3, dt_min=1e-9,
                    dt_growth=0.01, observable_times=(t,))
    prof = evolve(k, g, cfg, DiracApproxDatum(d, 1e-3)).profiles[-1]
    omega = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    m2_pde = omega * integrate.trapezoid(prof.r ** (d + 1) * prof.values, prof.r)
    ens = simulate_separation(k, McConfig(n_paths=20000, r0=0.0, t_end=t, sample_times=(t,), master_seed=11))
    assert m2_pde == pytest.approx(ens.moments[2.0][-1], rel=0.05)


# observables


def test_increment_seminorm_gaussian():
    r = np.linspace(0.0, 2.0, 200001)
    prof = RadialProfile.from_values(r, GaussianDatum(1.0).values(r))
    # (1 - exp(-r^2/4))/r is increasing on (0, 0.5): the sup is approached at r = 0.5
    val = increment_seminorm(prof, 1.0, 0.5)
    assert val == pytest.approx(-math.expm1(-0.0625) / 0.5, rel=1e-4)
    with pytest.raises(ValidationError):
        increment_seminorm(prof, 2.5, 0.5)
    with pytest.raises(ValidationError):
        increment_seminorm(prof, 1.0, 5.0)


def test_singular_amplitude_exact_power_law():
    r = build_grid(1e-9, 10.0, 1.05).nodes
    prof = RadialProfile(0.0, r, 1 - 2 * r ** 1.5, -2 * r ** 1.5)
    fit = singular_amplitude(prof, None, 1.5, (1e-8, 1e-2))
    assert fit.amplitude == pytest.approx(2.0, rel=1e-12)
    assert fit.exponent == pytest.approx(1.5, rel=1e-12)
    flat = RadialProfile.from_values(r, np.ones_like(r))
    assert singular_amplitude(flat, None, 1.5, (1e-8, 1e-2)).amplitude == 0.0
    bumpy = RadialProfile.from_values(r, 1 + np.sin(50 * r))
    with pytest.raises(FitError):
        singular_amplitude(bumpy, None, 1.0, (1e-2, 1.0))
    with pytest.raises(FitError):
        singular_amplitude(prof, None, 1.5, (1e-20, 1e-19))


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_sharp_regularity_under_refinement(alpha):
    k = _self_similar(alpha)
    gam = 2 - 2 * alpha
    minus, plus, expo = [], [], []
    for h in (1e-3, 1e-10, 1e-17):
        run = evolve(k, build_grid(h, 50.0, 1.04),
                     PdeConfig(dt=2e-3, dt_min=1e-9, dt_growth=0.005, observable_times=(1.0,)),
                     StretchedExponentialDatum(1.0, 1.0))
        minus.append(run.seminorm_minus[-1])
        plus.append(run.seminorm_plus[-1])
        expo.append(singular_amplitude(run, 1.0, gam, (5 * h, 0.05)).exponent)
    assert expo[-1] == pytest.approx(gam, rel=0.05)
    assert abs(minus[2] / minus[1] - 1) < 0.1
    assert plus[1] / plus[0] >= 2 and plus[2] / plus[1] >= 2


def test_default_fit_window_tracks_spreading_length():
    k = _self_similar(0.5)
    g = build_grid(1e-12, 50.0, 1.04)
    lo, hi = default_fit_window(g, 1e-4, k, 1.0)
    assert lo == 5e-12
    assert hi == pytest.approx(0.05 * spreading_rate(k) * 1e-4)
    assert default_fit_window(g, 100.0, k, 1.0)[1] == pytest.approx(0.05)


def test_array_datum_must_match_grid():
    k = _self_similar(0.5)
    g = build_grid(1e-6, 10.0)
    with pytest.raises(ValidationError):
        evolve(k, g, PdeConfig(), np.ones(5))
    with pytest.raises(ValidationError):
        evolve(k, g, PdeConfig(), np.full(len(g.nodes), np.nan))


# stationary solution


def test_xi_ratio_tends_to_c_xi():
    k = IsotropicKernel(ModelParams(d=2, alpha=0.3, eta=0.5))
    delta = 0.5 * k.constants.delta_star
    x = xi_diagnostic(k, delta, np.array([1e-6, 1e-4, 1e-2]))
    assert abs(x.ratio[1] / x.c_xi - 1) < 1e-2
    assert abs(x.ratio[0] / x.c_xi - 1) < abs(x.ratio[2] / x.c_xi - 1)
    ss = xi_diagnostic(_self_similar(0.5), 0.2, np.array([1e-3, 1.0]))
    np.testing.assert_allclose(ss.ratio, ss.c_xi, rtol=1e-9)
    with pytest.raises(ValidationError):
        xi_diagnostic(k, k.constants.delta_star, np.array([1e-3]))
