"""Probability measures, test functions, and a deterministic expectation engine.

Measures form a small closed family: finite atom clouds, Gaussians,
Poisson laws, products, pushforwards, exponential tilts and convolutions.
Every measure can produce a deterministic quadrature rule (``nodes``) for
a given plan, and a reproducible sample stream for a given seed, so that
repeated calls with identical inputs return bit-identical results.

Plans select the integration backend: exact atom sums, tensorised
Gauss-Hermite for Gaussian directions, truncated Poisson sums, adaptive
Gauss-Kronrod for one-dimensional Gaussians (used where quadrature must
survive kinks like |f|^q), and seeded Monte Carlo.  Reductions use
numpy's fixed-order pairwise summation, so results do not depend on
evaluation scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .phi_core import Interval

DEFAULT_GH_ORDER = 40
DEFAULT_TAIL_TOL = 1e-12
DEFAULT_MC_N = 200_000
WEIGHT_TOL = 1e-12
COV_EIG_TOL = -1e-12


class PlanError(ValueError):
    """Expectation plan incompatible with the measure it is applied to."""


class EvaluationError(RuntimeError):
    """Non-finite values or failed sampling during an expectation."""


# ---------------------------------------------------------------------------
# scalar fields


@dataclass(frozen=True)
class ScalarField:
    """Real test function on R^d with optional analytic gradient.

    ``fn`` maps arrays of shape (n, d) to shape (n,); ``grad_fn`` maps
    (n, d) to (n, d).  When the gradient is absent it falls back to
    central finite differences.
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    codomain: Optional[Interval] = None
    name: str = ""

    def _prep(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.dim == 1 else x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"field {self.name or '?'} expects points in R^{self.dim}")
        return x

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.fn(self._prep(x)), dtype=float)

    def grad(self, x) -> np.ndarray:
        x = self._prep(x)
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(x), dtype=float)
        h = np.cbrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(x))
        out = np.empty_like(x)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            out[:, j] = (self.fn(x + h[:, j:j + 1] * e) - self.fn(x - h[:, j:j + 1] * e)) \
                / (2.0 * h[:, j])
        return out

    def hessian(self, x) -> np.ndarray:
        """Finite-difference Hessians, shape (n, d, d)."""
        x = self._prep(x)
        n, d = x.shape
        h = np.finfo(float).eps ** 0.25 * np.maximum(1.0, np.abs(x))
        out = np.empty((n, d, d))
        f0 = self.fn(x)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = 1.0
            hi = h[:, i:i + 1]
            out[:, i, i] = (self.fn(x + hi * ei) - 2 * f0 + self.fn(x - hi * ei)) / hi[:, 0] ** 2
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = 1.0
                hj = h[:, j:j + 1]
                mixed = (self.fn(x + hi * ei + hj * ej) - self.fn(x + hi * ei - hj * ej)
                         - self.fn(x - hi * ei + hj * ej) + self.fn(x - hi * ei - hj * ej)) \
                    / (4.0 * hi[:, 0] * hj[:, 0])
                out[:, i, j] = mixed
                out[:, j, i] = mixed
        return out

    def shifted(self, y) -> "ScalarField":
        """The field x -> f(x + y)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        g = self.grad_fn
        return ScalarField(
            self.dim,
            lambda x, _y=y: self.fn(x + _y),
            grad_fn=None if g is None else (lambda x, _y=y: g(x + _y)),
            codomain=self.codomain,
            name=f"{self.name}(.+{y.tolist()})" if self.name else "",
        )


def field_from_scalar(fn: Callable, grad: Callable | None = None,
                      name: str = "", codomain: Interval | None = None) -> ScalarField:
    """Wrap a plain 1-d vectorised function x -> f(x) as a field on R^1."""
    gf = None
    if grad is not None:
        gf = lambda x: np.asarray(grad(x[:, 0]), dtype=float)[:, None]
    return ScalarField(1, lambda x: np.asarray(fn(x[:, 0]), dtype=float),
                       grad_fn=gf, name=name, codomain=codomain)


def linear_field(a, b: float = 0.0) -> ScalarField:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return ScalarField(
        a.size, lambda x: x @ a + b,
        grad_fn=lambda x: np.broadcast_to(a, x.shape).copy(),
        name=f"linear({a.tolist()},{b:g})",
    )


def exponential_field(a, b: float = 0.0) -> ScalarField:
    """exp(a . x + b); gradient a * f, always positive."""
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def fn(x):
        return np.exp(x @ a + b)

    return ScalarField(
        a.size, fn,
        grad_fn=lambda x: fn(x)[:, None] * a,
        codomain=Interval(0.0, math.inf),
        name=f"exp({a.tolist()}.x+{b:g})",
    )


def trig_field(a, amp: float = 1.0, phase: float = 0.0, offset: float = 0.0) -> ScalarField:
    """amp * sin(a . x + phase) + offset."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return ScalarField(
        a.size,
        lambda x: amp * np.sin(x @ a + phase) + offset,
        grad_fn=lambda x: (amp * np.cos(x @ a + phase))[:, None] * a,
        name=f"trig({a.tolist()})",
    )


def tabulated_field(xs, ys) -> ScalarField:
    """Piecewise-linear interpolant on R^1 with constant extrapolation."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return field_from_scalar(lambda x: np.interp(x, xs, ys), name="tabulated")


def validate_gradient(f: ScalarField, probes, rtol: float = 1e-5) -> float:
    """Max relative gap between analytic gradient and finite differences."""
    probes = f._prep(probes)
    ana = f.grad(probes)
    fd = ScalarField(f.dim, f.fn).grad(probes)
    gap = np.max(np.abs(ana - fd) / (1.0 + np.abs(ana)))
    return float(gap)


@dataclass(frozen=True)
class PointMap:
    """Measurable map R^d -> R^d' acting on batches of points."""

    in_dim: int
    out_dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.in_dim == 1 else x[None, :]
        out = np.asarray(self.fn(x), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (x.shape[0], self.out_dim):
            raise ValueError(f"map {self.name or '?'} returned shape {out.shape}")
        return out


def map_from_field(f: ScalarField) -> PointMap:
    return PointMap(f.dim, 1, lambda x: f(x)[:, None], name=f.name)


# ---------------------------------------------------------------------------
# expectation plans


@dataclass(frozen=True)
class Plan:
    """How to turn a measure into numbers: backend plus its parameters.

    The reduction order is always fixed (pairwise), so a plan plus a
    measure plus a field determines the result bit-for-bit.
    """

    method: str = "auto"
    order: int = DEFAULT_GH_ORDER
    tail_tol: float = DEFAULT_TAIL_TOL
    n: int = DEFAULT_MC_N
    seed: int = 0
    quad_tol: float = 1e-11

    @staticmethod
    def exact() -> "Plan":
        return Plan(method="exact_atoms")

    @staticmethod
    def gauss_hermite(order: int = DEFAULT_GH_ORDER,
                      tail_tol: float = DEFAULT_TAIL_TOL) -> "Plan":
        return Plan(method="gauss_hermite", order=order, tail_tol=tail_tol)

    @staticmethod
    def poisson_sum(tail_tol: float = DEFAULT_TAIL_TOL) -> "Plan":
        return Plan(method="poisson_sum", tail_tol=tail_tol)

    @staticmethod
    def monte_carlo(n: int = DEFAULT_MC_N, seed: int = 0) -> "Plan":
        return Plan(method="monte_carlo", n=n, seed=seed)

    @staticmethod
    def adaptive(quad_tol: float = 1e-11) -> "Plan":
        return Plan(method="adaptive", quad_tol=quad_tol)

    def describe(self) -> dict:
        d = {"method": self.method}
        if self.method in ("gauss_hermite", "auto"):
            d["order"] = self.order
        if self.method in ("poisson_sum", "gauss_hermite", "auto"):
            d["tail_tol"] = self.tail_tol
        if self.method == "monte_carlo":
            d.update(n=self.n, seed=self.seed)
        if self.method == "adaptive":
            d["quad_tol"] = self.quad_tol
        return d


# ---------------------------------------------------------------------------
# measure variants


class Measure:
    """Base class; concrete variants implement nodes() and sampling."""

    dim: int

    def nodes(self, plan: Plan) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature points (n, d) and weights (n,) for this plan."""
        raise PlanError(f"{type(self).__name__} has no deterministic nodes")

    def _sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def leaves(self) -> list["Measure"]:
        return [self]


def _simplex_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative weights")
    if abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    return w


class Atoms(Measure):
    """Finite support measure: points (n, d) with simplex weights."""

    def __init__(self, points, weights):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.weights = _simplex_weights(weights)
        if self.weights.size != pts.shape[0]:
            raise ValueError("points/weights length mismatch")
        self.dim = pts.shape[1]

    def nodes(self, plan: Plan):
        return self.points, self.weights

    def _sample(self, n, rng):
        idx = rng.choice(self.points.shape[0], size=n, p=self.weights)
        return self.points[idx]


class Gaussian(Measure):
    """Gaussian on R^d; covariance may be singular (PSD)."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov[None, None]
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape mismatch")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance not symmetric")
        eigval, eigvec = np.linalg.eigh(cov)
        if eigval.min() < COV_EIG_TOL:
            raise ValueError(f"covariance has negative eigenvalue {eigval.min()}")
        eigval = np.clip(eigval, 0.0, None)
        self.cov = cov
        self.dim = self.mean.size
        # rank-aware factor: columns span only the non-degenerate directions
        keep = eigval > 1e-14 * max(float(eigval.max()), 1.0)
        self._factor = eigvec[:, keep] * np.sqrt(eigval[keep])

    @property
    def rank(self) -> int:
        return self._factor.shape[1]

    def nodes(self, plan: Plan):
        z, w = np.polynomial.hermite_e.hermegauss(plan.order)
        w = w / w.sum()
        r = self.rank
        if r == 0:
            return self.mean[None, :], np.array([1.0])
        grids = np.meshgrid(*([z] * r), indexing="ij")
        zs = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*([w] * r), indexing="ij")
        ws = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        pts = self.mean[None, :] + zs @ self._factor.T
        return pts, ws

    def _sample(self, n, rng):
        z = rng.standard_normal((n, self.rank))
        return self.mean[None, :] + z @ self._factor.T


def standard_normal(dim: int = 1) -> Gaussian:
    return Gaussian(np.zeros(dim), np.eye(dim))


def poisson_pmf_upto(rate: float, tail_tol: float) -> np.ndarray:
    """Poisson pmf values for k = 0..K, K minimal with tail mass < tail_tol."""
    if rate <= 0:
        raise ValueError("Poisson rate must be positive")
    pmf = [math.exp(-rate)]
    cum = pmf[0]
    k = 0
    while 1.0 - cum >= tail_tol:
        k += 1
        if k > 1_000_000:
            raise EvaluationError("Poisson truncation did not converge")
        pmf.append(pmf[-1] * rate / k)
        cum += pmf[-1]
    return np.asarray(pmf)


class PoissonLaw(Measure):
    """Poisson distribution on the non-negative integers, embedded in R^1."""

    def __init__(self, rate: float):
        if rate <= 0:
            raise ValueError("Poisson rate must be positive")
        self.rate = float(rate)
        self.dim = 1

    def nodes(self, plan: Plan):
        pmf = poisson_pmf_upto(self.rate, plan.tail_tol)
        ks = np.arange(pmf.size, dtype=float)[:, None]
        return ks, pmf

    def _sample(self, n, rng):
        return rng.poisson(self.rate, size=n).astype(float)[:, None]


class Product(Measure):
    """Independent product of measures; points are concatenated blocks."""

    def __init__(self, factors: Sequence[Measure]):
        self.factors = list(factors)
        if not self.factors:
            raise ValueError("product of no factors")
        self.dim = sum(m.dim for m in self.factors)

    def nodes(self, plan: Plan):
        pts, ws = self.factors[0].nodes(plan)
        for m in self.factors[1:]:
            p2, w2 = m.nodes(plan)
            n1, n2 = pts.shape[0], p2.shape[0]
            pts = np.hstack([np.repeat(pts, n2, axis=0), np.tile(p2, (n1, 1))])
            ws = np.repeat(ws, n2) * np.tile(w2, n1)
        return pts, ws

    def _sample(self, n, rng):
        return np.hstack([m._sample(n, rng) for m in self.factors])

    def leaves(self):
        return [leaf for m in self.factors for leaf in m.leaves()]


class Pushforward(Measure):
    """Image of a base measure under a point map."""

    def __init__(self, theta: PointMap, base: Measure):
        if theta.in_dim != base.dim:
            raise ValueError("map input dimension does not match base measure")
        self.theta = theta
        self.base = base
        self.dim = theta.out_dim

    def nodes(self, plan: Plan):
        pts, ws = self.base.nodes(plan)
        return self.theta(pts), ws

    def _sample(self, n, rng):
        return self.theta(self.base._sample(n, rng))

    def leaves(self):
        return self.base.leaves()


class Tilt(Measure):
    """Exponential tilt exp(B) d(base) / Z with bounded B."""

    MAX_REJECTION_ROUNDS = 1000

    def __init__(self, B: ScalarField, base: Measure):
        if B.dim != base.dim:
            raise ValueError("tilt field dimension mismatch")
        self.B = B
        self.base = base
        self.dim = base.dim
        self._z_cache: dict[Plan, float] = {}

    def normaliser(self, plan: Plan) -> float:
        """Z = E_base exp(B), computed on the plan's nodes and cached."""
        if plan not in self._z_cache:
            pts, ws = self.base.nodes(plan)
            z = float(np.sum(ws * np.exp(self.B(pts))))
            if not (z > 0 and math.isfinite(z)):
                raise EvaluationError("tilt normaliser is not positive finite")
            self._z_cache[plan] = z
        return self._z_cache[plan]

    def nodes(self, plan: Plan):
        pts, ws = self.base.nodes(plan)
        w = ws * np.exp(self.B(pts))
        total = float(w.sum())
        if not (total > 0 and math.isfinite(total)):
            raise EvaluationError("tilt normaliser is not positive finite")
        self._z_cache.setdefault(plan, total)
        return pts, w / total

    def _sample(self, n, rng):
        # rejection against the base with envelope exp(sup B); the bound is
        # estimated on a probe cloud and padded, the loop is capped.
        probe = self.base._sample(4096, rng)
        bvals = self.B(probe)
        sup_b = float(bvals.max()) + 0.1 * max(float(bvals.max() - bvals.min()), 1e-12)
        out = np.empty((n, self.dim))
        got = 0
        for _ in range(self.MAX_REJECTION_ROUNDS):
            cand = self.base._sample(n, rng)
            acc = rng.random(n) < np.exp(self.B(cand) - sup_b)
            take = min(int(acc.sum()), n - got)
            out[got:got + take] = cand[acc][:take]
            got += take
            if got == n:
                return out
        raise EvaluationError("tilt rejection sampling exceeded its iteration cap")

    def leaves(self):
        return self.base.leaves()


class Convolution(Measure):
    """Law of the sum of independent draws from measures on a common R^d."""

    def __init__(self, factors: Sequence[Measure]):
        self.factors = list(factors)
        if not self.factors:
            raise ValueError("convolution of no factors")
        self.dim = self.factors[0].dim
        if any(m.dim != self.dim for m in self.factors):
            raise ValueError("convolution factors must share a dimension")

    def nodes(self, plan: Plan):
        pts, ws = self.factors[0].nodes(plan)
        for m in self.factors[1:]:
            p2, w2 = m.nodes(plan)
            n1, n2 = pts.shape[0], p2.shape[0]
            pts = np.repeat(pts, n2, axis=0) + np.tile(p2, (n1, 1))
            ws = np.repeat(ws, n2) * np.tile(w2, n1)
        return pts, ws

    def _sample(self, n, rng):
        out = self.factors[0]._sample(n, rng)
        for m in self.factors[1:]:
            out = out + m._sample(n, rng)
        return out

    def leaves(self):
        return [leaf for m in self.factors for leaf in m.leaves()]


# ---------------------------------------------------------------------------
# expectation engine


def _validate_plan(mu: Measure, plan: Plan) -> None:
    kinds = {type(leaf) for leaf in mu.leaves()}
    if plan.method == "exact_atoms" and kinds - {Atoms}:
        raise PlanError("exact_atoms plan needs a purely atomic measure")
    if plan.method == "gauss_hermite" and Gaussian not in kinds:
        raise PlanError("gauss_hermite plan needs a Gaussian component")
    if plan.method == "poisson_sum" and PoissonLaw not in kinds:
        raise PlanError("poisson_sum plan needs a Poisson component")
    if plan.method == "adaptive":
        if not (isinstance(mu, Gaussian) and mu.dim == 1):
            raise PlanError("adaptive plan supports one-dimensional Gaussians only")


def auto_plan(mu: Measure) -> Plan:
    """Deterministic default: exact sums and quadrature up to 3 Gaussian
    axes, seeded Monte Carlo beyond."""
    gh_axes = sum(leaf.rank if isinstance(leaf, Gaussian) else 0 for leaf in mu.leaves())
    if gh_axes > 3:
        return Plan.monte_carlo()
    return Plan()


def resolve_plan(mu: Measure, plan: Plan | None) -> Plan:
    """Fill in the backend for ``auto`` plans; validate against the measure."""
    if plan is None:
        plan = auto_plan(mu)
    if plan.method == "auto":
        resolved = auto_plan(mu)
        if resolved.method != "auto":
            plan = replace(resolved, order=plan.order, tail_tol=plan.tail_tol,
                           n=plan.n, seed=plan.seed)
    _validate_plan(mu, plan)
    return plan


def node_set(mu: Measure, plan: Plan | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Points, weights and a Monte-Carlo flag; the shared evaluation set.

    Monte-Carlo plans return equally weighted sample points so that every
    functional downstream sees one common (points, weights) contract.
    """
    plan = resolve_plan(mu, plan)
    if plan.method == "monte_carlo":
        pts = sample(mu, plan.n, plan.seed)
        return pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), True
    if plan.method == "adaptive":
        raise PlanError("adaptive plans integrate callables, not node sets")
    pts, w = mu.nodes(plan)
    return pts, w, False


def _evaluate(mu: Measure, f: ScalarField, plan: Plan) -> tuple[np.ndarray, np.ndarray, float]:
    pts, w, mc = node_set(mu, plan)
    vals = f(pts)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"non-finite values from field {f.name or '?'}")
    return vals, w, mc


def expect(mu: Measure, f: ScalarField, plan: Plan | None = None) -> float:
    """E_mu f, deterministic given (measure, field, plan)."""
    if plan is not None and plan.method == "adaptive":
        return _adaptive_expect(mu, f, plan)
    vals, w, _ = _evaluate(mu, f, plan or auto_plan(mu))
    return float(np.sum(w * vals))


def expect_with_error(mu: Measure, f: ScalarField, plan: Plan | None = None) -> tuple[float, float]:
    """E_mu f plus a standard-error estimate (zero for deterministic plans)."""
    if plan is not None and plan.method == "adaptive":
        return _adaptive_expect(mu, f, plan), 0.0
    vals, w, mc = _evaluate(mu, f, plan or auto_plan(mu))
    mean = float(np.sum(w * vals))
    if not mc:
        return mean, 0.0
    var = float(np.sum(w * (vals - mean) ** 2))
    return mean, math.sqrt(var / vals.size)


def _adaptive_expect(mu: Measure, f: ScalarField, plan: Plan) -> float:
    _validate_plan(mu, plan)
    m = float(mu.mean[0])
    s = math.sqrt(float(mu.cov[0, 0]))
    if s == 0:
        return float(f(np.array([[m]]))[0])
    norm = 1.0 / (s * math.sqrt(2.0 * math.pi))

    def integrand(x):
        v = float(f(np.array([[x]]))[0])
        return v * norm * math.exp(-0.5 * ((x - m) / s) ** 2)

    val, _ = integrate.quad(integrand, m - 12 * s, m + 12 * s,
                            epsabs=plan.quad_tol, epsrel=plan.quad_tol, limit=400)
    return float(val)


def sample(mu: Measure, n: int, seed: int) -> np.ndarray:
    """Reproducible sample of n points, shape (n, d)."""
    rng = np.random.default_rng(seed)
    return mu._sample(int(n), rng)


def save_samples_csv(points: np.ndarray, path) -> None:
    """One point per row."""
    np.savetxt(path, np.asarray(points, dtype=float), delimiter=",")


# ---------------------------------------------------------------------------
# log-concavity certification


def log_concavity_rho(W: ScalarField, grid_points) -> float:
    """Certified curvature lower bound for the potential W.

    Returns the minimum over the grid of the smallest eigenvalue of the
    finite-difference Hessian of W; this is the rho entering the
    1/(2 rho) constants for densities proportional to exp(-W).
    """
    H = W.hessian(grid_points)
    if not np.all(np.isfinite(H)):
        raise EvaluationError("non-finite Hessian entries")
    eig = np.linalg.eigvalsh(H)
    return float(eig.min())


def gaussian_potential(mean, cov) -> ScalarField:
    """The potential whose Boltzmann density is the given Gaussian."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    prec = np.linalg.inv(np.atleast_2d(np.asarray(cov, dtype=float)))

    def fn(x):
        d = x - mean[None, :]
        return 0.5 * np.einsum("ni,ij,nj->n", d, prec, d)

    return ScalarField(mean.size, fn, grad_fn=lambda x: (x - mean[None, :]) @ prec,
                       name="gaussian-potential")
