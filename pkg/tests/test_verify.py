import math

import numpy as np
import pytest
from scipy import integrate

from phisob.phi_core import IntervalGrid, builtin_phi
from phisob.measures import (
    Atoms, Gaussian, Plan, PointMap, ScalarField, exponential_field,
    field_from_scalar, linear_field, standard_normal, trig_field,
)
from phisob.functionals import phi_entropy
from phisob import verify as V
from conftest import random_atoms, random_positive_field, random_smooth_field


# -- Gaussian route -----------------------------------------------------------

def test_gaussian_xlogx_saturation(xlogx):
    for theta in (0.25, 0.5, 1.0):
        f = exponential_field([theta], -theta ** 2 / 2)
        rep = V.verify_gaussian(xlogx, [0.0], [[1.0]], f, Plan.gauss_hermite(40))
        assert rep.lhs == pytest.approx(theta ** 2 / 2, rel=1e-7)
        assert rep.rhs_total == pytest.approx(theta ** 2 / 2, rel=1e-7)
        assert rep.passed


def test_gaussian_square_linear_saturation(square):
    rep = V.verify_gaussian(square, [0.0], [[1.0]], linear_field([1.0]),
                            Plan.gauss_hermite(40))
    assert rep.lhs == pytest.approx(1.0, abs=1e-10)
    assert rep.rhs_total == pytest.approx(1.0, abs=1e-10)


def test_gaussian_constant_function(xlogx):
    c = field_from_scalar(lambda x: np.full_like(x, 2.0), lambda x: np.zeros_like(x))
    rep = V.verify_gaussian(xlogx, [0.0], [[1.0]], c, Plan.gauss_hermite(20))
    assert rep.lhs == pytest.approx(0.0, abs=1e-12)
    assert rep.passed


def test_gaussian_matrix_form_is_sharper(xlogx):
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    f = ScalarField(2, lambda x: np.exp(0.2 * x[:, 0] - 0.3 * x[:, 1]),
                    grad_fn=lambda x: np.exp(0.2 * x[:, 0] - 0.3 * x[:, 1])[:, None]
                    * np.array([0.2, -0.3]))
    rep = V.verify_gaussian(xlogx, [0.0, 0.0], cov, f, Plan.gauss_hermite(40))
    assert rep.passed
    assert rep.details["sigma_form_sharper"]
    assert rep.details["rho_form_deficit"] >= rep.deficit - rep.tol


def test_gaussian_refuses_quartic():
    f = exponential_field([0.1])
    with pytest.raises(V.HypothesisRefused):
        V.verify_gaussian(builtin_phi("power", p=4.0), [0.0], [[1.0]], f)


# -- multi-time Brownian ------------------------------------------------------

def test_brownian_multitime_terminal_coordinate(square):
    F = ScalarField(2, lambda x: x[:, 1],
                    grad_fn=lambda x: np.tile([0.0, 1.0], (x.shape[0], 1)))
    rep = V.verify_brownian_multitime(square, (1.0, 2.0), F, Plan.gauss_hermite(40))
    assert rep.lhs == pytest.approx(2.0, abs=1e-9)
    assert rep.rhs_total == pytest.approx(2.0, abs=1e-9)
    assert rep.details["quadratic_form_identity_gap"] <= 1e-10


def test_brownian_multitime_repeated_times(square):
    F = ScalarField(2, lambda x: x[:, 0] + 0.5 * x[:, 1],
                    grad_fn=lambda x: np.tile([1.0, 0.5], (x.shape[0], 1)))
    rep = V.verify_brownian_multitime(square, (1.0, 1.0), F, Plan.gauss_hermite(40))
    assert rep.passed
    # degenerate-direction law: everything rides on one Gaussian factor
    var = 1.0 * (1.0 + 0.5) ** 2
    assert rep.lhs == pytest.approx(var, rel=1e-9)


def test_brownian_multitime_rejects_decreasing_times(square):
    F = ScalarField(2, lambda x: x[:, 0])
    with pytest.raises(ValueError):
        V.verify_brownian_multitime(square, (2.0, 1.0), F)


def test_increment_identity_exact():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = rng.integers(1, 6)
        times = np.sort(rng.uniform(0.0, 3.0, size=n))
        v = rng.normal(size=n)
        assert V.increment_identity_gap(times, v) <= 1e-12


# -- Poisson / Levy route -----------------------------------------------------

def test_poisson_square_linear_exact(square):
    for lam in (0.5, 1.0, 3.0):
        rep = V.verify_poisson(square, lam, field_from_scalar(lambda k: k),
                               Plan.poisson_sum(1e-12))
        # oracle: the Poisson law has variance lam and unit jumps
        assert rep.lhs == pytest.approx(lam, abs=1e-9)
        assert abs(rep.deficit) <= 1e-10


def test_poisson_xlogx_decaying(xlogx):
    rep = V.verify_poisson(xlogx, 2.0, field_from_scalar(lambda k: np.exp(-k)),
                           Plan.poisson_sum(1e-12))
    assert rep.deficit >= -rep.tol


def test_poisson_constant(xlogx):
    rep = V.verify_poisson(xlogx, 1.0, field_from_scalar(lambda k: np.full_like(k, 3.0)))
    assert rep.lhs == pytest.approx(0.0, abs=1e-12)
    assert rep.passed


def test_poisson_domain_escape_rejected(xlogx):
    from phisob.phi_core import DomainError
    f = field_from_scalar(lambda k: 1.0 - 0.3 * k)  # goes negative under shifts
    with pytest.raises(DomainError):
        V.verify_poisson(xlogx, 1.0, f)


def test_compound_poisson_law_moments():
    nu = Atoms([[1.0], [-1.0]], [0.5, 0.5])
    law = V.compound_poisson_law(1.0, nu, 1.0, 1e-14)
    pts, w = law.points[:, 0], law.weights
    # oracle: mean 0, variance = rate * t * second moment of the jump law
    assert np.sum(w * pts) == pytest.approx(0.0, abs=1e-12)
    assert np.sum(w * pts ** 2) == pytest.approx(1.0, abs=1e-10)


def test_levy_symmetric_walk_saturation(square):
    nu = Atoms([[1.0], [-1.0]], [0.5, 0.5])
    f = field_from_scalar(lambda k: k)
    rep = V.verify_levy(square, 1.0, nu, 1.0, f)
    assert rep.lhs == pytest.approx(1.0, abs=1e-9)
    assert abs(rep.deficit) <= 1e-9


def test_levy_unit_jump_recovers_poisson(xlogx):
    f = field_from_scalar(lambda k: np.exp(-k))
    levy = V.verify_levy(xlogx, 1.0, Atoms([[1.0]], [1.0]), 1.0, f)
    pois = V.verify_poisson(xlogx, 1.0, f)
    assert levy.lhs == pytest.approx(pois.lhs, abs=1e-9)
    assert levy.rhs_total == pytest.approx(pois.rhs_total, abs=1e-9)


def test_levy_constant(xlogx):
    nu = Atoms([[1.0], [2.0]], [0.5, 0.5])
    c = field_from_scalar(lambda k: np.full_like(k, 1.0))
    rep = V.verify_levy(xlogx, 2.0, nu, 0.5, c)
    assert rep.lhs == pytest.approx(0.0, abs=1e-12)


def test_levy_multitime_terminal_coordinate(square):
    nu = Atoms([[1.0]], [1.0])
    F = ScalarField(2, lambda x: x[:, 1])
    rep = V.verify_levy_multitime(square, 1.0, nu, (1.0, 2.0), F)
    assert rep.lhs == pytest.approx(2.0, abs=1e-8)
    assert rep.rhs_total == pytest.approx(2.0, abs=1e-8)
    assert rep.details["conditional_ok"] and rep.details["mean_ok"]
    assert rep.details["split_identity_gap"] <= 1e-10


def test_levy_multitime_first_coordinate_reduces(xlogx):
    nu = Atoms([[1.0]], [1.0])
    F = ScalarField(2, lambda x: np.exp(-x[:, 0]))
    rep2 = V.verify_levy_multitime(xlogx, 1.0, nu, (0.7, 1.4), F)
    rep1 = V.verify_levy(xlogx, 1.0, nu, 0.7, field_from_scalar(lambda k: np.exp(-k)))
    assert rep2.lhs == pytest.approx(rep1.lhs, abs=1e-9)


def test_levy_multitime_three_times_and_cap(square):
    nu = Atoms([[1.0]], [1.0])
    F3 = ScalarField(3, lambda x: x[:, 2] - 0.5 * x[:, 0])
    rep = V.verify_levy_multitime(square, 1.0, nu, (0.5, 1.0, 1.5), F3)
    assert rep.deficit >= -rep.tol
    with pytest.raises(ValueError):
        V.verify_levy_multitime(square, 1.0, nu, (0.5, 1.0, 1.5, 2.0),
                                ScalarField(4, lambda x: x[:, 3]))


# -- tensorisation ------------------------------------------------------------

def test_tensorisation_single_coordinate_equality(xlogx):
    rng = np.random.default_rng(1)
    m1, m2 = random_atoms(rng, 3), random_atoms(rng, 3)
    g = ScalarField(2, lambda x: np.exp(0.4 * x[:, 0]))
    rep = V.verify_tensorisation(xlogx, [m1, m2], g)
    assert abs(rep.deficit) <= 1e-12
    assert rep.details["equality"]
    coord = phi_entropy(xlogx, m1, field_from_scalar(lambda x: np.exp(0.4 * x))).value
    assert rep.lhs == pytest.approx(coord, rel=1e-12)


def test_tensorisation_additive_square_equality(square):
    rng = np.random.default_rng(2)
    m1, m2 = random_atoms(rng, 3), random_atoms(rng, 3)
    f = ScalarField(2, lambda x: np.sin(x[:, 0]) + np.cos(x[:, 1]))
    rep = V.verify_tensorisation(square, [m1, m2], f)
    assert abs(rep.deficit) <= 1e-12


def test_tensorisation_random_batches(xlogx, power15, square):
    rng = np.random.default_rng(3)
    for phi in (xlogx, power15, square):
        for shape in ((3, 3), (3, 3, 3)):
            factors = [random_atoms(rng, k) for k in shape]
            table = rng.uniform(0.4, 2.5, size=shape)
            f = _table_field(factors, table)
            rep = V.verify_tensorisation(phi, factors, f)
            assert rep.deficit >= -1e-10


def _table_field(factors, table):
    axes = [m.points[:, 0] for m in factors]

    def fn(x):
        idx = tuple(np.argmin(np.abs(x[:, j:j + 1] - axes[j][None, :]), axis=1)
                    for j in range(len(axes)))
        return table[idx]

    return ScalarField(len(axes), fn)


def test_tensorisation_gaussian_factors(xlogx):
    f = ScalarField(2, lambda x: np.exp(0.2 * x[:, 0] + 0.1 * x[:, 1] *
                                        np.tanh(x[:, 0])))
    rep = V.verify_tensorisation(xlogx, [standard_normal(1), standard_normal(1)],
                                 f, Plan.gauss_hermite(40))
    assert rep.deficit >= -rep.tol


# -- convolution / pushforward / perturbation ---------------------------------

def test_convolution_gaussian_sharpness(xlogx):
    theta = 0.4
    f = exponential_field([theta], -theta ** 2)
    rep = V.verify_convolution(xlogx, [(standard_normal(1), 0.5),
                                       (standard_normal(1), 0.5)], f,
                               Plan.gauss_hermite(40))
    assert abs(rep.deficit) <= 1e-8
    assert rep.constant == 1.0


def test_convolution_single_factor_reduces(square):
    f = trig_field([1.0])
    single = V.verify_convolution(square, [(standard_normal(1), 0.5)], f,
                                  Plan.gauss_hermite(40))
    direct = V.verify_gaussian(square, [0.0], [[1.0]], f, Plan.gauss_hermite(40))
    assert single.lhs == pytest.approx(direct.lhs, rel=1e-10)


def test_convolution_gaussian_atoms_with_bruteforce_constant(square):
    atoms = Atoms([[1.0], [-1.0]], [0.5, 0.5])
    f = trig_field([1.0])
    c_atoms = V.empirical_constant(square, atoms, f, np.linspace(0, np.pi, 181))
    # oracle: the shifted two-point ratio maximises at sin^2(1)/(1 + cos 2)
    want = math.sin(1.0) ** 2 / (1.0 + math.cos(2.0))
    assert c_atoms == pytest.approx(want, rel=1e-3)
    rep = V.verify_convolution(square, [(standard_normal(1), 0.5),
                                        (atoms, c_atoms * 1.0001)], f,
                               Plan.gauss_hermite(40), shift_probes=3, seed=4)
    assert rep.deficit >= -rep.tol


def test_convolution_factor_violation_detected(square):
    atoms = Atoms([[1.0], [-1.0]], [0.5, 0.5])
    f = trig_field([1.0])
    with pytest.raises(V.HypothesisRefused):
        V.verify_convolution(square, [(standard_normal(1), 0.5), (atoms, 1e-4)], f)


def test_pushforward_scaling_sharp(xlogx):
    theta = PointMap(1, 1, lambda x: 0.5 * x, name="halve")
    s = 0.3
    f = exponential_field([s], -s ** 2 / 8)
    rep = V.verify_pushforward(xlogx, standard_normal(1), 0.5, theta, 0.5, f,
                               Plan.gauss_hermite(40))
    assert abs(rep.deficit) <= 1e-9
    assert rep.constant == pytest.approx(0.125)


def test_pushforward_identity_reduces(square):
    theta = PointMap(1, 1, lambda x: x, name="id")
    f = trig_field([1.0])
    rep = V.verify_pushforward(square, standard_normal(1), 0.5, theta, 1.0, f,
                               Plan.gauss_hermite(40))
    direct = V.verify_gaussian(square, [0.0], [[1.0]], f, Plan.gauss_hermite(40))
    assert rep.lhs == pytest.approx(direct.lhs, rel=1e-10)
    assert rep.deficit == pytest.approx(direct.deficit, abs=1e-10)


def test_pushforward_sine_map(xlogx):
    theta = PointMap(1, 1, lambda x: np.sin(x), name="sin")
    f = exponential_field([0.1])
    rep = V.verify_pushforward(xlogx, standard_normal(1), 0.5, theta, 1.0, f,
                               Plan.gauss_hermite(40))
    assert rep.deficit >= -rep.tol


def test_pushforward_lipschitz_check_fails(square):
    theta = PointMap(1, 1, lambda x: 3.0 * x, name="triple")
    with pytest.raises(ValueError):
        V.verify_pushforward(square, standard_normal(1), 0.5, theta, 1.0,
                             trig_field([1.0]))


def test_perturbation_constant_exponent_recovers_base(square):
    B = field_from_scalar(lambda x: np.full_like(x, 0.7), lambda x: np.zeros_like(x))
    f = trig_field([1.0])
    rep = V.verify_perturbation(square, standard_normal(1), 0.5, B, f,
                                Plan.gauss_hermite(40))
    base = V.verify_gaussian(square, [0.0], [[1.0]], f, Plan.gauss_hermite(40))
    assert rep.details["osc"] == pytest.approx(0.0, abs=1e-14)
    assert rep.deficit == pytest.approx(base.deficit, abs=1e-10)


def test_perturbation_sine_exponent(square):
    B = trig_field([1.0], amp=0.3)
    rng = np.random.default_rng(5)
    for _ in range(10):
        f = random_smooth_field(rng)
        rep = V.verify_perturbation(square, standard_normal(1), 0.5, B, f,
                                    Plan.gauss_hermite(40))
        assert rep.deficit >= -1e-6
        assert rep.details["entropy_comparison_ok"]


def test_perturbation_entropy_comparison_on_atoms(xlogx):
    rng = np.random.default_rng(6)
    for _ in range(20):
        mu = random_atoms(rng, 5)
        B = field_from_scalar(lambda x, a=rng.uniform(0.1, 0.6): a * np.sin(x))
        f = random_positive_field(rng)
        rep = V.verify_perturbation(xlogx, mu, 1.0, B, f, Plan.exact())
        osc = rep.details["osc"]
        assert rep.lhs <= math.exp(osc) * rep.details["base_entropy"] + 1e-10


# -- Beckner family -----------------------------------------------------------

def test_beckner_linear_reference_values(square):
    rep = V.verify_beckner(standard_normal(1), 1.0, linear_field([1.0]))
    q1 = next(d for d in rep.details["per_q"] if d["q"] == 1.0)
    assert q1["lhs"] == pytest.approx(1.0 - 2.0 / math.pi, abs=1e-6)
    assert rep.rhs == pytest.approx(1.0, abs=1e-9)
    assert rep.passed


def test_beckner_near_two_degenerates(square):
    rep = V.verify_beckner(standard_normal(1), 1.0, trig_field([1.0]),
                           q_grid=(1.99,))
    d = rep.details["per_q"][0]
    assert abs(d["lhs"]) <= 0.05
    assert d["pass"]


def test_beckner_random_fields(square):
    rng = np.random.default_rng(7)
    for _ in range(10):
        f = random_smooth_field(rng)
        rep = V.verify_beckner(standard_normal(1), 1.0, f)
        assert rep.deficit >= -1e-6
        assert all(d["pass"] for d in rep.details["per_q"])


def test_beckner_change_of_function_identity():
    # the q-moment gap for f = g^(p/2) is the p-power gap for g, with the
    # matching energies: (2-q)/rho E|grad f|^2 = p(p-1)/(2 rho) E(g^(p-2)|grad g|^2)
    rng = np.random.default_rng(8)
    g = random_positive_field(rng)
    mu = standard_normal(1)
    plan = Plan.gauss_hermite(60)
    for q in (1.0, 1.25, 1.6):
        p = 2.0 / q
        f = ScalarField(1, lambda x, _p=p: g(x) ** (_p / 2.0))
        lhs36 = (V.expect(mu, ScalarField(1, lambda x: f(x) ** 2), plan)
                 - V.expect(mu, ScalarField(1, lambda x, _q=q: np.abs(f(x)) ** _q),
                            plan) ** (2.0 / q))
        lhs34 = (V.expect(mu, ScalarField(1, lambda x, _p=p: g(x) ** _p), plan)
                 - V.expect(mu, g, plan) ** p)
        assert lhs36 == pytest.approx(lhs34, rel=1e-8)
        e36 = (2.0 - q) * V.expect(
            mu, ScalarField(1, lambda x: np.sum(f.grad(x) ** 2, axis=1)), plan)
        e34 = 0.5 * p * (p - 1.0) * V.expect(
            mu, ScalarField(1, lambda x, _p=p: g(x) ** (_p - 2.0)
                            * np.sum(g.grad(x) ** 2, axis=1)), plan)
        assert e36 == pytest.approx(e34, rel=1e-6)


def test_poincare_is_weakest(xlogx, power15):
    # a certified half-line inequality forces the quadratic one with twice
    # the constant: check on random smooth test functions
    rng = np.random.default_rng(9)
    c = 0.5
    plan = Plan.gauss_hermite(40)
    mu = standard_normal(1)
    for _ in range(10):
        g = random_smooth_field(rng)
        var = phi_entropy(builtin_phi("square"), mu, g, plan).value
        energy = V.expect(mu, ScalarField(1, lambda x: np.sum(g.grad(x) ** 2, axis=1)),
                          plan)
        assert var <= 2.0 * c * energy + 1e-8


# -- Dirichlet comparisons and the Poisson dichotomy --------------------------

def test_dirichlet_compare_square_exact(square):
    grid = IntervalGrid(-10, 10, 101)
    rep = V.dirichlet_compare(square, grid)
    assert rep.holds_quadratic and rep.holds_increment
    # both dominations collapse to twice the squared jump
    x = grid.points()
    u = np.repeat(x, x.size)
    v = np.tile(x, x.size) - u
    from phisob.phi_core import psi
    assert np.max(np.abs(square.d2(u) * v ** 2 - 2 * psi(square, u, v))) <= 1e-9
    assert np.max(np.abs(v * (square.d1(u + v) - square.d1(u))
                         - 2 * psi(square, u, v))) <= 1e-9


def test_dirichlet_compare_xlogx_values(xlogx):
    rep = V.dirichlet_compare(xlogx, IntervalGrid(1e-2, 1e2, 101, log_scaled=True))
    assert rep.quadratic_applicable
    assert rep.holds_quadratic and rep.holds_increment
    from phisob.phi_core import psi
    p = psi(xlogx, 1.0, 1.0)
    assert p <= xlogx.d2(1.0) * 1.0 + 1e-12
    assert p <= 1.0 * (xlogx.d1(2.0) - xlogx.d1(1.0)) + 1e-12
    assert float(xlogx.d1(2.0) - xlogx.d1(1.0)) == pytest.approx(math.log(2.0))


def test_poisson_l1_lsi_cases(xlogx):
    c = field_from_scalar(lambda k: np.full_like(k, 2.0))
    rep = V.poisson_l1_lsi(1.0, 1.0, c)
    assert rep.lhs == pytest.approx(0.0, abs=1e-12)
    rep = V.poisson_l1_lsi(1.0, 1.0, field_from_scalar(lambda k: np.exp(-k)))
    assert rep.deficit >= -1e-8
    with pytest.raises(Exception):
        V.poisson_l1_lsi(1.0, 1.0, field_from_scalar(lambda k: k - 0.5))


def test_poisson_l2_probe_monotone_ratios():
    out = V.poisson_l2_probe(1.0, [1.0, 2.0, 3.0, 4.0])
    assert out["strictly_increasing"]
    # oracle: closed-form moment computation of the ratio
    for th, got in zip(out["thetas"], out["ratios"]):
        want = 2.0 * (th * math.exp(th) - math.exp(th) + 1.0) \
            / (math.exp(th / 2.0) - 1.0) ** 2
        assert got == pytest.approx(want, rel=1e-9)


def test_generic_inequality_spec(square):
    from phisob.functionals import DiffusionForm
    spec = V.InequalitySpec("demo", square, standard_normal(1), DiffusionForm(),
                            constant=0.5, hypothesis_required="H1")
    rep = V.verify_inequality(spec, linear_field([1.0]), Plan.gauss_hermite(40))
    assert rep.passed and abs(rep.deficit) <= 1e-9


def test_report_serialisation(square):
    rep = V.verify_gaussian(square, [0.0], [[1.0]], linear_field([1.0]),
                            Plan.gauss_hermite(20))
    blob = rep.to_json()
    assert '"deficit"' in blob and '"pass": true' in blob
    assert set(rep.row()) == {"name", "lhs", "rhs", "constant", "deficit", "pass"}
