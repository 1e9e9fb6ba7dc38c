"""Numerical laboratory for entropy functionals and functional inequalities."""

from .phi_core import (
    ConditionReport, Interval, IntervalGrid, PhiFunction,
    builtin_phi, check_H1, check_H2, check_H2prime, cone_combine, phi_hat, psi,
)
from .measures import (
    Atoms, Convolution, Gaussian, Measure, Plan, PointMap, PoissonLaw, Product,
    Pushforward, ScalarField, Tilt, expect, log_concavity_rho, sample,
)
from .functionals import (
    CovarianceForm, DiffusionForm, EntropyValue, JumpForm, L1FisherForm,
    MultiTimeForm, conditional_decompose, duality_lower_bound, phi_entropy,
    phi_fisher, phi_variance, relative_phi_entropy, shannon_phi_entropy,
    variational_upper_scan,
)

__version__ = "0.1.0"
