"""Numerical laboratory for the Kraichnan passive scalar model.

Modules: ``kernels`` (covariance, constants, regimes), ``radial_pde`` (two-point
correlation solver), ``dispersion_mc`` (pair-separation Monte Carlo),
``scaling_analysis`` (power-law fits, energy balance) and ``cli``.
"""
from .errors import ConfigError, FitError, KraichnanLabError, NumericalError, ValidationError
from .kernels import (
    DerivedConstants, IsotropicKernel, KernelMode, ModelParams, Regime, beta_ratio, classify_regime,
    derived_constants, dissipation_constant_closed_form, ellipticity_floor, q_matrix, regime_thresholds,
    structure_coefficients,
)
from .radial_pde import (
    DiracApproxDatum, GaussianDatum, PdeConfig, PdeRun, RadialGrid, RadialProfile,
    StretchedExponentialDatum, build_grid, energy, evolve, increment_seminorm, singular_amplitude,
    xi_diagnostic,
)
from .dispersion_mc import (
    McConfig, SeparationEnsemble, exact_moment_from_origin, gaussian_variance_identity, moment_curve,
    richardson_report, simulate_separation,
)
from .scaling_analysis import PowerFit, YaglomReport, blowup_exponent, loglog_fit, yaglom_balance

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FitError", "KraichnanLabError", "NumericalError", "ValidationError",
    "DerivedConstants", "IsotropicKernel", "KernelMode", "ModelParams", "Regime", "beta_ratio",
    "classify_regime", "derived_constants", "dissipation_constant_closed_form", "ellipticity_floor",
    "q_matrix", "regime_thresholds", "structure_coefficients",
    "DiracApproxDatum", "GaussianDatum", "PdeConfig", "PdeRun", "RadialGrid", "RadialProfile",
    "StretchedExponentialDatum", "build_grid", "energy", "evolve", "increment_seminorm",
    "singular_amplitude", "xi_diagnostic",
    "McConfig", "SeparationEnsemble", "exact_moment_from_origin", "gaussian_variance_identity",
    "moment_curve", "richardson_report", "simulate_separation",
    "PowerFit", "YaglomReport", "blowup_exponent", "loglog_fit", "yaglom_balance",
]
