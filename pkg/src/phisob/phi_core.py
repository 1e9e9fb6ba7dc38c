"""Convex base functions and grid certificates for their convexity hypotheses.

The central object is :class:`PhiFunction`: a smooth convex function on a
closed interval, carrying derivatives up to fourth order (analytic for the
built-ins, finite-difference fallback otherwise).  From it derive the
affine-corrected function ``hat`` and the Bregman remainder ``psi``.

Three checkers certify, on a grid, the hypotheses used throughout:

* H1   -- (u, v) -> phi''(u) v^2 is non-negative and jointly convex;
* H2   -- the Bregman remainder psi(u, v) is non-negative and jointly convex;
* H2'  -- phi'' is convex, non-negative and non-increasing.

Verdicts always mean "holds on the tested grid"; reports record the grid.
All tested quantities are normalised by the magnitude of the terms that
form them before comparison against ``TOL_CONVEXITY``: several criteria
(e.g. the H1 determinant for x log x) are exact zeros produced by
cancellation of huge terms, and a raw absolute comparison would misreport
them at the edges of wide grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

TOL_CONVEXITY = 1e-9       # tolerance on normalised certificate margins
DERIV_MATCH_RTOL = 1e-6    # analytic vs finite-difference agreement
GRID_POINTS = 201
ENDPOINT_OFFSET = 1e-8     # grids never touch finite interval endpoints

_EPS = float(np.finfo(float).eps)


class DomainError(ValueError):
    """Argument outside the validity interval of a convex base function."""


# ---------------------------------------------------------------------------
# intervals and grids


@dataclass(frozen=True)
class Interval:
    """Closed interval of the real line, possibly unbounded."""

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def contains(self, x, strict: bool = False):
        x = np.asarray(x, dtype=float)
        if strict:
            return (x > self.lo) & (x < self.hi)
        return (x >= self.lo) & (x <= self.hi)

    def intersect(self, other: "Interval") -> "Interval":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if not lo < hi:
            raise ValueError("intervals intersect trivially")
        return Interval(lo, hi)

    @property
    def is_reals(self) -> bool:
        return math.isinf(self.lo) and math.isinf(self.hi)

    def __repr__(self):
        return f"[{self.lo}, {self.hi}]"


REALS = Interval()
POSITIVES = Interval(0.0, math.inf)


@dataclass(frozen=True)
class IntervalGrid:
    """Evaluation grid strictly inside an interval.

    ``log_scaled`` grids are meant for intervals of positive reals.
    """

    lo: float
    hi: float
    n: int = GRID_POINTS
    log_scaled: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.n < 3:
            raise ValueError("grid needs at least 3 points")
        if self.log_scaled and self.lo <= 0:
            raise ValueError("log-scaled grid needs lo > 0")

    def points(self) -> np.ndarray:
        if self.log_scaled:
            return np.geomspace(self.lo, self.hi, self.n)
        return np.linspace(self.lo, self.hi, self.n)

    def clipped_to(self, interval: Interval) -> "IntervalGrid":
        """Shrink the grid so every point is interior to ``interval``."""
        lo = max(self.lo, interval.lo + ENDPOINT_OFFSET)
        hi = min(self.hi, interval.hi - ENDPOINT_OFFSET)
        return IntervalGrid(lo, hi, self.n, self.log_scaled)

    @staticmethod
    def default_for(interval: Interval) -> "IntervalGrid":
        if interval.lo >= 0:
            lo = max(1e-3, interval.lo + ENDPOINT_OFFSET)
            hi = min(1e3, interval.hi - ENDPOINT_OFFSET if math.isfinite(interval.hi) else 1e3)
            return IntervalGrid(lo, hi, GRID_POINTS, log_scaled=True)
        lo = interval.lo + ENDPOINT_OFFSET if math.isfinite(interval.lo) else -1e3
        hi = interval.hi - ENDPOINT_OFFSET if math.isfinite(interval.hi) else 1e3
        return IntervalGrid(lo, hi, GRID_POINTS)

    def describe(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n, "log_scaled": self.log_scaled}


# ---------------------------------------------------------------------------
# finite-difference stencils (used for fallback derivatives and validation)

# offsets, weights, denominator power, step exponent of machine eps
_STENCILS = {
    1: ((-2, -1, 1, 2), (1.0, -8.0, 8.0, -1.0), 12.0, 1, 1.0 / 5.0),
    2: ((-2, -1, 0, 1, 2), (-1.0, 16.0, -30.0, 16.0, -1.0), 12.0, 2, 1.0 / 6.0),
    3: ((-3, -2, -1, 1, 2, 3), (1.0, -8.0, 13.0, -13.0, 8.0, -1.0), 8.0, 3, 1.0 / 7.0),
    4: ((-3, -2, -1, 0, 1, 2, 3), (-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0), 6.0, 4, 1.0 / 8.0),
}


def fd_step(order: int, x, interval: Optional["Interval"] = None) -> np.ndarray:
    """Step size for the order-``order`` central stencil at ``x``.

    The step tracks the local scale max(1, |x|) but shrinks near finite
    interval endpoints, where the functions of interest vary on the scale
    of the distance to the boundary (and where the stencil must stay
    inside the domain).
    """
    x = np.asarray(x, dtype=float)
    scale = np.maximum(1.0, np.abs(x))
    if interval is not None:
        dist = np.minimum(x - interval.lo, interval.hi - x)
        scale = np.minimum(scale, np.maximum(dist, 1e-12))
    return _EPS ** _STENCILS[order][4] * scale


def fd_derivative(fn: Callable, order: int, x,
                  interval: Optional["Interval"] = None) -> np.ndarray:
    """Fourth-order-accurate central finite difference of ``fn`` at ``x``."""
    offsets, weights, denom, power, _ = _STENCILS[order]
    x = np.asarray(x, dtype=float)
    h = fd_step(order, x, interval)
    acc = np.zeros_like(x)
    for o, w in zip(offsets, weights):
        acc = acc + w * np.asarray(fn(x + o * h), dtype=float)
    return acc / (denom * h ** power)


# ---------------------------------------------------------------------------
# the Phi object and its built-ins


@dataclass(frozen=True)
class PhiFunction:
    """Smooth convex function on ``interval`` with derivatives up to order 4.

    Derivative slots left as ``None`` fall back to central finite
    differences of ``fn`` (step recorded via :func:`fd_step`).
    """

    name: str
    interval: Interval
    fn: Callable[[np.ndarray], np.ndarray]
    d1_fn: Optional[Callable] = None
    d2_fn: Optional[Callable] = None
    d3_fn: Optional[Callable] = None
    d4_fn: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    flagged: bool = False  # built outside the documented parameter regime

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(self.interval.contains(x)):
            bad = np.asarray(x)[~self.interval.contains(x)]
            raise DomainError(
                f"{self.name}: argument {bad.flat[0]!r} outside interval {self.interval}"
            )
        return x

    def __call__(self, x):
        return np.asarray(self.fn(self._check_domain(x)), dtype=float)

    def d(self, order: int, x):
        """Derivative of the given order (1..4), analytic when available."""
        x = self._check_domain(x)
        fn = (None, self.d1_fn, self.d2_fn, self.d3_fn, self.d4_fn)[order]
        if fn is not None:
            return np.asarray(fn(x), dtype=float)
        return fd_derivative(self.fn, order, x, self.interval)

    def d1(self, x):
        return self.d(1, x)

    def d2(self, x):
        return self.d(2, x)

    def d3(self, x):
        return self.d(3, x)

    def d4(self, x):
        return self.d(4, x)

    @property
    def has_analytic_derivatives(self) -> bool:
        return None not in (self.d1_fn, self.d2_fn, self.d3_fn, self.d4_fn)


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    return out


def builtin_phi(kind: str, p: float | None = None,
                a: float | None = None, b: float = 0.0, c: float = 0.0) -> PhiFunction:
    """Construct one of the built-in convex base functions.

    ``xlogx`` and ``power`` live on the non-negative half-line, ``square``
    and ``quadratic`` on the whole real line.  For ``power``, exponents in
    (1, 2] are the documented regime; other p > 1 are allowed but flagged,
    and p <= 1 is rejected (not convex on the half-line with this
    normalisation).
    """
    if kind == "xlogx":
        return PhiFunction(
            "xlogx", POSITIVES, _xlogx,
            d1_fn=lambda x: np.log(x) + 1.0,
            d2_fn=lambda x: 1.0 / x,
            d3_fn=lambda x: -1.0 / x ** 2,
            d4_fn=lambda x: 2.0 / x ** 3,
        )
    if kind == "square":
        return PhiFunction(
            "square", REALS, lambda x: x ** 2,
            d1_fn=lambda x: 2.0 * x,
            d2_fn=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0),
            d3_fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            d4_fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        )
    if kind == "power":
        if p is None:
            raise ValueError("power kind needs exponent p")
        if p <= 1:
            raise ValueError(f"power p={p} rejected: not convex on the half-line")
        pm = [p, p - 1, p - 2, p - 3]

        def dk(k):
            coeff = float(np.prod(pm[:k]))
            return lambda x: coeff * np.power(x, p - k)

        return PhiFunction(
            f"power({p:g})", POSITIVES, lambda x: np.power(x, p),
            d1_fn=dk(1), d2_fn=dk(2), d3_fn=dk(3), d4_fn=dk(4),
            params={"p": p}, flagged=not (1.0 < p <= 2.0),
        )
    if kind == "quadratic":
        if a is None:
            raise ValueError("quadratic kind needs coefficient a")
        if a < 0:
            raise ValueError(f"quadratic a={a} rejected: not convex")
        aa, bb, cc = float(a), float(b), float(c)
        return PhiFunction(
            f"quadratic({aa:g},{bb:g},{cc:g})", REALS,
            lambda x: aa * x ** 2 + bb * x + cc,
            d1_fn=lambda x: 2.0 * aa * x + bb,
            d2_fn=lambda x: np.full_like(np.asarray(x, dtype=float), 2.0 * aa),
            d3_fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            d4_fn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            params={"a": aa, "b": bb, "c": cc},
        )
    raise ValueError(f"unknown phi kind {kind!r}")


def phi_hat(phi: PhiFunction, u):
    """Affine-corrected value phi(u) - phi(1) * u; vanishes at u = 1."""
    u = np.asarray(u, dtype=float)
    return phi(u) - phi(np.asarray(1.0)) * u


def psi(phi: PhiFunction, u, v):
    """Bregman remainder phi(u + v) - phi(u) - phi'(u) v.

    Requires both u and u + v inside the interval; non-negative whenever
    phi is convex, and psi(u, 0) = 0.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return phi(u + v) - phi(u) - phi.d1(u) * v


def cone_combine(terms: Sequence[tuple[PhiFunction, float]],
                 affine: tuple[float, float] = (0.0, 0.0)) -> PhiFunction:
    """Non-negative combination of convex bases plus an affine part.

    The hypothesis classes are convex cones, so any combination of
    certified bases with non-negative weights is re-certifiable.  The
    affine part (lam3 * x + lam4) never affects second and higher
    derivatives.
    """
    terms = [(phi, float(lam)) for phi, lam in terms]
    if not terms:
        raise ValueError("cone combination needs at least one convex term")
    for phi, lam in terms:
        if lam < 0:
            raise ValueError(f"negative coefficient {lam} on nonlinear term {phi.name}")
    interval = terms[0][0].interval
    for phi, _ in terms[1:]:
        interval = interval.intersect(phi.interval)
    lam3, lam4 = float(affine[0]), float(affine[1])

    def combo(parts, add_affine):
        def call(x):
            acc = np.zeros_like(np.asarray(x, dtype=float))
            for f, lam in parts:
                acc = acc + lam * f(x)
            return acc + add_affine(x)
        return call

    zero = lambda x: 0.0
    name = "+".join(f"{lam:g}*{phi.name}" for phi, lam in terms)
    if lam3 or lam4:
        name += f"+affine({lam3:g},{lam4:g})"
    return PhiFunction(
        name, interval,
        combo([(p.fn, l) for p, l in terms], lambda x: lam3 * np.asarray(x, dtype=float) + lam4),
        d1_fn=combo([(p.d1, l) for p, l in terms], lambda x: lam3),
        d2_fn=combo([(p.d2, l) for p, l in terms], zero),
        d3_fn=combo([(p.d3, l) for p, l in terms], zero),
        d4_fn=combo([(p.d4, l) for p, l in terms], zero),
        flagged=any(p.flagged for p, _ in terms),
    )


# ---------------------------------------------------------------------------
# hypothesis certificates


@dataclass
class ConditionReport:
    """Grid verdict for one convexity hypothesis.

    ``margin`` is the smallest normalised value of the tested quantities
    over the grid; ``holds`` iff margin >= -TOL_CONVEXITY.  ``witness``
    is the grid location where the margin is attained.  For H1 the
    verdict is cross-validated by positive-semidefinite sampling of the
    Hessian of (u, v) -> phi''(u) v^2; ``consistent`` records whether the
    two routes agree (when they do not, the PSD sampling decides and the
    report keeps the flag raised).
    """

    hypothesis: str
    holds: bool
    margin: float
    witness: tuple
    grid: dict
    consistent: bool = True
    notes: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "hypothesis": self.hypothesis,
            "holds": bool(self.holds),
            "margin": float(self.margin),
            "witness": [float(w) for w in self.witness],
            "grid": self.grid,
            "consistent": bool(self.consistent),
            "notes": self.notes,
        }, sort_keys=True)


def _normalised(quantity: np.ndarray, *parts: np.ndarray) -> np.ndarray:
    # Divide by the magnitude of the terms forming the quantity so that
    # cancellation-produced zeros stay O(eps) instead of O(eps * scale).
    scale = np.maximum(1.0, np.abs(quantity))
    for p in parts:
        scale = np.maximum(scale, np.abs(p))
    return quantity / scale


def _min_with_witness(entries: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, tuple]:
    # entries: (normalised values, witness array broadcastable to values)
    best = math.inf
    where: tuple = (math.nan,)
    for values, witness in entries:
        i = int(np.argmin(values))
        if values.flat[i] < best:
            best = float(values.flat[i])
            where = tuple(float(v) for v in np.atleast_1d(witness[i]))
    return best, where


def check_H1(phi: PhiFunction, grid: IntervalGrid | None = None) -> ConditionReport:
    """Certify H1 on a grid.

    Direct route: phi'' >= 0, phi'''' >= 0 and phi'''' phi'' >= 2 phi'''^2
    (no division performed).  Cross-check: the 2x2 Hessian of
    (u, v) -> phi''(u) v^2 is sampled for positive semidefiniteness on
    grid x grid pairs via trace and determinant.
    """
    grid = (grid or IntervalGrid.default_for(phi.interval)).clipped_to(phi.interval)
    x = grid.points()
    d2, d3, d4 = phi.d2(x), phi.d3(x), phi.d4(x)
    ode = d4 * d2 - 2.0 * d3 ** 2
    direct_entries = [
        (_normalised(d2), x),
        (_normalised(d4), x),
        (_normalised(ode, d4 * d2, 2.0 * d3 ** 2), x),
    ]
    margin, witness = _min_with_witness(direct_entries)
    direct_holds = margin >= -TOL_CONVEXITY

    # PSD sampling of the Hessian [[d4 v^2, 2 d3 v], [2 d3 v, 2 d2]]
    v = x[None, :]
    A = d4[:, None] * v ** 2
    B = 2.0 * d3[:, None] * v
    C = 2.0 * d2[:, None] + np.zeros_like(v)
    trace = _normalised(A + C, A, C)
    det = _normalised(A * C - B ** 2, A * C, B ** 2)
    psd_margin = float(min(trace.min(), det.min()))
    psd_holds = psd_margin >= -TOL_CONVEXITY

    consistent = direct_holds == psd_holds
    holds = psd_holds if not consistent else direct_holds
    notes = "" if consistent else (
        "direct criterion and PSD sampling disagree; PSD verdict reported"
    )
    return ConditionReport("H1", holds, margin, witness, grid.describe(),
                           consistent=consistent, notes=notes)


def _h2_pairs(grid: IntervalGrid) -> tuple[np.ndarray, np.ndarray]:
    # (u, v) with u and u + v both on the grid, so both stay inside I.
    x = grid.points()
    u = np.repeat(x, x.size)
    v = np.tile(x, x.size) - u
    return u, v


def h2_margin_at(phi: PhiFunction, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Normalised H2 margin at explicit (u, v) pairs.

    Tests psi >= 0 plus trace and determinant of the Hessian of psi.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    f_u, f_uv = phi(u), phi(u + v)
    dp = phi.d1(u)
    ps = f_uv - f_u - dp * v
    ps_n = _normalised(ps, f_uv, f_u, dp * v)
    a2, b2 = phi.d2(u), phi.d2(u + v)
    d3u = phi.d3(u)
    trace = _normalised(2.0 * b2 - a2 - d3u * v, b2, a2, d3u * v)
    det = a2 * (b2 - a2) - b2 * d3u * v
    det_n = _normalised(det, a2 * (b2 - a2), b2 * d3u * v)
    return np.minimum(ps_n, np.minimum(trace, det_n))


def check_H2(phi: PhiFunction, grid: IntervalGrid | None = None) -> ConditionReport:
    """Certify H2: the Bregman remainder is non-negative and convex.

    Pairs (u, v) are formed so that u and u + v both lie on the grid.
    Convexity is tested through trace and determinant of the remainder's
    Hessian.
    """
    grid = (grid or IntervalGrid.default_for(phi.interval)).clipped_to(phi.interval)
    u, v = _h2_pairs(grid)
    margins = h2_margin_at(phi, u, v)
    i = int(np.argmin(margins))
    margin = float(margins[i])
    return ConditionReport("H2", margin >= -TOL_CONVEXITY, margin,
                           (float(u[i]), float(v[i])), grid.describe())


def check_H2prime(phi: PhiFunction, grid: IntervalGrid | None = None) -> ConditionReport:
    """Certify H2': phi'' convex, non-negative and non-increasing.

    Since H2' implies H2, the checker also runs :func:`check_H2` and
    flags the (grid-artifact) inconsistency if H2' passes while H2 fails.
    """
    grid = (grid or IntervalGrid.default_for(phi.interval)).clipped_to(phi.interval)
    x = grid.points()
    d2, d3, d4 = phi.d2(x), phi.d3(x), phi.d4(x)
    entries = [
        (_normalised(d2), x),
        (_normalised(-d3), x),
        (_normalised(d4), x),
    ]
    margin, witness = _min_with_witness(entries)
    holds = margin >= -TOL_CONVEXITY
    consistent, notes = True, ""
    if holds:
        h2 = check_H2(phi, grid)
        if not h2.holds:
            consistent = False
            notes = "H2' holds on the grid but H2 does not: inconsistent certificates"
    return ConditionReport("H2prime", holds, margin, witness, grid.describe(),
                           consistent=consistent, notes=notes)


def check_all(phi: PhiFunction, grid: IntervalGrid | None = None) -> dict[str, ConditionReport]:
    return {
        "H1": check_H1(phi, grid),
        "H2": check_H2(phi, grid),
        "H2prime": check_H2prime(phi, grid),
    }


def validate_derivatives(phi: PhiFunction, grid: IntervalGrid | None = None) -> float:
    """Largest relative gap |analytic - FD| / (1 + |analytic|) over a probe grid.

    Only meaningful when analytic derivatives are present; probes stay
    away from interval endpoints so the stencils remain inside.
    """
    if grid is None:
        if phi.interval.lo >= 0:
            grid = IntervalGrid(1e-2, 1e2, 41, log_scaled=True)
        else:
            grid = IntervalGrid(-10.0, 10.0, 41)
    x = grid.clipped_to(phi.interval).points()
    worst = 0.0
    for order in (1, 2, 3, 4):
        ana = phi.d(order, x)
        fd = fd_derivative(phi.fn, order, x, phi.interval)
        gap = np.max(np.abs(ana - fd) / (1.0 + np.abs(ana)))
        worst = max(worst, float(gap))
    return worst
