"""Entropy-type functionals built on the expectation engine.

Everything here evaluates one fixed node set per call, so structural
facts (Jensen non-negativity, the duality bound, the variational upper
bound) hold for the discrete evaluation measure itself, not just in the
quadrature limit.  Functions dipping below the validity interval of the
convex base are clamped at a recorded epsilon, mirroring the usual
reduction to functions bounded away from the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .phi_core import DomainError, Interval, PhiFunction, phi_hat, psi
from .measures import (
    Atoms, EvaluationError, Gaussian, Measure, Plan, PoissonLaw, ScalarField,
    node_set, resolve_plan,
)

JENSEN_TOL = 1e-10
CLAMP_EPS = 1e-12


# ---------------------------------------------------------------------------
# energy forms (right-hand sides of the inequalities)


@dataclass(frozen=True)
class DiffusionForm:
    """Integrand phi''(f) |grad f|^2."""


@dataclass(frozen=True)
class CovarianceForm:
    """Integrand phi''(f) <S grad f, grad f> for a PSD matrix S."""

    S: tuple  # stored as nested tuples to stay hashable

    def matrix(self) -> np.ndarray:
        return np.asarray(self.S, dtype=float)

    @staticmethod
    def from_matrix(S) -> "CovarianceForm":
        S = np.atleast_2d(np.asarray(S, dtype=float))
        return CovarianceForm(tuple(map(tuple, S)))


@dataclass(frozen=True)
class MultiTimeForm:
    """Quadratic form sum_i (t_i - t_{i-1}) (sum_{j>=i} d_j F)^2 times phi''(F)."""

    times: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or np.any(np.diff(np.concatenate([[0.0], t])) < 0):
            raise ValueError("times must be non-decreasing and non-negative")


@dataclass(frozen=True)
class JumpForm:
    """Jump energy: rate * integral of Psi(f, D_y f) over the jump measure."""

    nu_points: tuple
    nu_weights: tuple
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("jump rate must be positive")
        if any(w < 0 for w in self.nu_weights):
            raise ValueError("jump measure weights must be non-negative")

    @staticmethod
    def from_atoms(nu: Atoms, rate: float) -> "JumpForm":
        return JumpForm(tuple(map(tuple, nu.points)), tuple(nu.weights), float(rate))

    def jumps(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.nu_points, dtype=float), np.asarray(self.nu_weights, dtype=float)


def unit_jump_form(rate: float) -> JumpForm:
    """Jump measure delta_1 on R^1: the simple counting process."""
    return JumpForm(((1.0,),), (1.0,), float(rate))


@dataclass(frozen=True)
class L1FisherForm:
    """Integrand Gamma f / f with the jump carre du champ
    Gamma f = (rate/2) * integral (D_y f)^2 dnu."""

    nu_points: tuple = ((1.0,),)
    nu_weights: tuple = (1.0,)
    rate: float = 1.0

    def jumps(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.nu_points, dtype=float), np.asarray(self.nu_weights, dtype=float)


EnergyForm = DiffusionForm | CovarianceForm | MultiTimeForm | JumpForm | L1FisherForm


# ---------------------------------------------------------------------------
# entropy


@dataclass
class EntropyValue:
    """Result of a phi-entropy evaluation (non-negative up to roundoff)."""

    value: float
    clamped: bool
    plan: dict

    def __float__(self):
        return self.value

    def to_json(self) -> str:
        return json.dumps({"value": self.value, "clamped": bool(self.clamped),
                           "plan": self.plan}, sort_keys=True)


def clamp_into(interval: Interval, values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Pull values onto the interval, epsilon inside finite endpoints."""
    lo = interval.lo + CLAMP_EPS if math.isfinite(interval.lo) else -math.inf
    hi = interval.hi - CLAMP_EPS if math.isfinite(interval.hi) else math.inf
    clipped = np.clip(values, lo, hi)
    return clipped, bool(np.any(clipped != values))


def _entropy_of_values(phi: PhiFunction, vals: np.ndarray, w: np.ndarray) -> tuple[float, bool]:
    vals, clamped = clamp_into(phi.interval, vals)
    mean = float(np.sum(w * vals))
    if not phi.interval.contains(mean):
        raise DomainError(f"mean {mean} escapes interval {phi.interval}")
    value = float(np.sum(w * phi(vals)) - phi(np.asarray(mean)))
    if value < -JENSEN_TOL:
        raise EvaluationError(f"entropy {value} below the Jensen floor")
    return value, clamped


def phi_entropy(phi: PhiFunction, mu: Measure, f: ScalarField,
                plan: Plan | None = None) -> EntropyValue:
    """E_mu phi(f) - phi(E_mu f) on one shared node set."""
    plan = resolve_plan(mu, plan)
    pts, w, _ = node_set(mu, plan)
    w = w / w.sum()
    value, clamped = _entropy_of_values(phi, f(pts), w)
    return EntropyValue(value, clamped, plan.describe())


def phi_variance(phi: PhiFunction, mu: Measure, f: ScalarField,
                 plan: Plan | None = None) -> float:
    """E_mu phi(f - E_mu f); needs the whole real line as validity interval."""
    if not phi.interval.is_reals:
        raise DomainError("phi-variance needs a base function defined on all of R")
    plan = resolve_plan(mu, plan)
    pts, w, _ = node_set(mu, plan)
    w = w / w.sum()
    vals = f(pts)
    return float(np.sum(w * phi(vals - np.sum(w * vals))))


def _atoms_table(mu: Atoms) -> dict[tuple, float]:
    table: dict[tuple, float] = {}
    for p, w in zip(mu.points, mu.weights):
        key = tuple(np.round(p, 12))
        table[key] = table.get(key, 0.0) + float(w)
    return {k: v for k, v in table.items() if v > 0.0}


def relative_phi_entropy(phi: PhiFunction, nu: Measure | None, mu: Measure,
                         plan: Plan | None = None,
                         density: ScalarField | None = None) -> float:
    """Relative entropy of nu against mu through the corrected base.

    Either both measures are atomic on a shared support (exact sums), or
    ``density`` supplies d(nu)/d(mu) explicitly.  Mass of nu outside the
    support of mu yields +inf.
    """
    if density is not None:
        pts, w, _ = node_set(mu, resolve_plan(mu, plan))
        w = w / w.sum()
        dens = density(pts)
        if np.any(dens < -CLAMP_EPS):
            raise DomainError("density must be non-negative")
        dens, _ = clamp_into(phi.interval, dens)
        return float(np.sum(w * phi_hat(phi, dens)))
    if not (isinstance(nu, Atoms) and isinstance(mu, Atoms)):
        raise DomainError("relative entropy needs atomic measures or an explicit density")
    tab_nu, tab_mu = _atoms_table(nu), _atoms_table(mu)
    if any(key not in tab_mu for key in tab_nu):
        return math.inf
    total = 0.0
    for key, wm in tab_mu.items():
        ratio = tab_nu.get(key, 0.0) / wm
        total += wm * float(phi_hat(phi, np.asarray(max(ratio, 0.0))))
    return total


# ---------------------------------------------------------------------------
# Fisher-type energies


def _check_pairing(mu: Measure, form) -> None:
    kinds = {type(leaf) for leaf in mu.leaves()}
    if isinstance(form, (JumpForm, L1FisherForm)) and Gaussian in kinds:
        raise DomainError("jump energies pair with discrete measures")
    if isinstance(form, (DiffusionForm, CovarianceForm, MultiTimeForm)) \
            and PoissonLaw in kinds:
        raise DomainError("gradient energies pair with continuous measures")


def multitime_quadratic_form(times, grads: np.ndarray) -> np.ndarray:
    """sum_i (t_i - t_{i-1}) (sum_{j>=i} g_j)^2 rowwise for gradients (n, nt)."""
    t = np.asarray(times, dtype=float)
    dt = np.diff(np.concatenate([[0.0], t]))
    suffix = np.cumsum(grads[:, ::-1], axis=1)[:, ::-1]
    return suffix ** 2 @ dt


def energy_values(phi: PhiFunction, f: ScalarField, form: EnergyForm,
                  pts: np.ndarray) -> np.ndarray:
    """Pointwise energy integrand at the given points."""
    if isinstance(form, DiffusionForm):
        vals, _ = clamp_into(phi.interval, f(pts))
        g = f.grad(pts)
        return phi.d2(vals) * np.sum(g * g, axis=1)
    if isinstance(form, CovarianceForm):
        vals, _ = clamp_into(phi.interval, f(pts))
        g = f.grad(pts)
        return phi.d2(vals) * np.einsum("ni,ij,nj->n", g, form.matrix(), g)
    if isinstance(form, MultiTimeForm):
        vals, _ = clamp_into(phi.interval, f(pts))
        g = f.grad(pts)
        return phi.d2(vals) * multitime_quadratic_form(form.times, g)
    if isinstance(form, JumpForm):
        ys, ws = form.jumps()
        vals, _ = clamp_into(phi.interval, f(pts))
        acc = np.zeros(pts.shape[0])
        for y, wy in zip(ys, ws):
            shifted, _ = clamp_into(phi.interval, f(pts + y[None, :]))
            acc += wy * psi(phi, vals, shifted - vals)
        return form.rate * acc
    if isinstance(form, L1FisherForm):
        ys, ws = form.jumps()
        vals = f(pts)
        if np.any(vals <= 0):
            raise DomainError("L1 Fisher integrand needs a positive function")
        acc = np.zeros(pts.shape[0])
        for y, wy in zip(ys, ws):
            acc += wy * (f(pts + y[None, :]) - vals) ** 2
        return (form.rate / 2.0) * acc / vals
    raise TypeError(f"unknown energy form {form!r}")


def phi_fisher(phi: PhiFunction, mu: Measure, f: ScalarField, form: EnergyForm,
               plan: Plan | None = None) -> float:
    """Expected energy: the Fisher-type right-hand side for the given form."""
    _check_pairing(mu, form)
    plan = resolve_plan(mu, plan)
    pts, w, _ = node_set(mu, plan)
    w = w / w.sum()
    vals = energy_values(phi, f, form, pts)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("non-finite energy values")
    return float(np.sum(w * vals))


# ---------------------------------------------------------------------------
# duality, variational scan, conditioning


def duality_lower_bound(phi: PhiFunction, mu: Measure, f: ScalarField,
                        h: ScalarField, plan: Plan | None = None) -> float:
    """E((phi'(h) - phi'(E h))(f - h)) + Ent(h): a lower bound for Ent(f).

    Equality at h = f.  Both fields are read on one shared node set, so
    the bound holds for the evaluation measure itself up to roundoff.
    """
    plan = resolve_plan(mu, plan)
    pts, w, _ = node_set(mu, plan)
    w = w / w.sum()
    fv, _ = clamp_into(phi.interval, f(pts))
    hv, _ = clamp_into(phi.interval, h(pts))
    ent_h, _ = _entropy_of_values(phi, hv, w)
    mean_h = float(np.sum(w * hv))
    bracket = float(np.sum(w * (phi.d1(hv) - phi.d1(np.asarray(mean_h))) * (fv - hv)))
    return bracket + ent_h


def variational_upper_scan(phi: PhiFunction, mu: Measure, f: ScalarField,
                           a_grid, plan: Plan | None = None) -> tuple[float, float]:
    """Scan a -> E(phi(f) - phi(a) - phi'(a)(f - a)); each value bounds
    Ent(f) from above, with the minimum approached on dense grids."""
    a_grid = np.asarray(a_grid, dtype=float)
    if a_grid.size == 0:
        raise ValueError("empty scan grid")
    if not np.all(phi.interval.contains(a_grid, strict=True)):
        raise DomainError("scan grid must stay inside the interval")
    plan = resolve_plan(mu, plan)
    pts, w, _ = node_set(mu, plan)
    w = w / w.sum()
    fv, _ = clamp_into(phi.interval, f(pts))
    e_phi = float(np.sum(w * phi(fv)))
    mean = float(np.sum(w * fv))
    values = e_phi - phi(a_grid) - phi.d1(a_grid) * (mean - a_grid)
    i = int(np.argmin(values))
    return float(values[i]), float(a_grid[i])


@dataclass
class ConditionalSplit:
    """Exact two-term split of the entropy over a finite joint law.

    Conditioning is on the final coordinate.  ``total`` equals
    ``mean_conditional + of_conditional_mean`` up to roundoff.
    """

    total: float
    mean_conditional: float
    of_conditional_mean: float
    skipped_slices: int = 0


def conditional_decompose(phi: PhiFunction, joint: Atoms, f: ScalarField,
                          plan: Plan | None = None) -> ConditionalSplit:
    """Split Ent(f) into averaged conditional entropy plus entropy of the
    conditional mean, conditioning on the last coordinate of the joint."""
    pts, w, _ = node_set(joint, Plan.exact())
    keep = w > 0
    skipped = int(np.sum(~keep))
    pts, w = pts[keep], w[keep]
    w = w / w.sum()
    vals, _ = clamp_into(phi.interval, f(pts))
    total, _ = _entropy_of_values(phi, vals, w)

    keys = np.round(pts[:, -1], 12)
    mean_cond = 0.0
    slice_means, slice_probs = [], []
    for key in np.unique(keys):
        mask = keys == key
        p = float(np.sum(w[mask]))
        cw = w[mask] / p
        ent, _ = _entropy_of_values(phi, vals[mask], cw)
        mean_cond += p * ent
        slice_means.append(float(np.sum(cw * vals[mask])))
        slice_probs.append(p)
    of_mean, _ = _entropy_of_values(phi, np.asarray(slice_means), np.asarray(slice_probs))
    return ConditionalSplit(total, mean_cond, of_mean, skipped)


# ---------------------------------------------------------------------------
# Shannon-style entropies


def _dirac_corrected(phi: PhiFunction, u: np.ndarray) -> np.ndarray:
    # affine correction vanishing at 0 and 1, second derivative unchanged;
    # makes the Dirac minimum exactly zero for every built-in base
    if not phi.interval.contains(0.0):
        raise DomainError("Shannon-style entropy needs 0 in the validity interval")
    u = np.asarray(u, dtype=float)
    p0 = float(phi(np.asarray(0.0)))
    p1 = float(phi(np.asarray(1.0)))
    return phi(u) - p0 - (p1 - p0) * u


def shannon_phi_entropy(phi: PhiFunction, weights) -> float:
    """Discrete Shannon-style entropy -sum psi0(p_i) over a simplex."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative weights")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    return float(-np.sum(_dirac_corrected(phi, w)))


def shannon_phi_entropy_cont(phi: PhiFunction, density, cell_volume: float) -> float:
    """Riemann-sum Shannon-style entropy of a density tabulated on a grid."""
    dens = np.asarray(density, dtype=float)
    if np.any(dens < 0):
        raise ValueError("negative density values")
    return float(-np.sum(_dirac_corrected(phi, dens)) * cell_volume)
