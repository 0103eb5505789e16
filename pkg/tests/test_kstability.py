import numpy as np
import pytest

from toric_bfield.errors import DegenerateDenominator, FutakiNonzero, InvalidLambda
from toric_bfield.grid import BoxGrid
from toric_bfield.kstability import (A_function, affine_basis, coupling_bounds, crease_mesh,
                                     crease_values, futaki_bfield, futaki_split, lambda_estimate)
from toric_bfield.potentials import SymplecticPotential, guillemin_potential, metric_grid
from toric_bfield.toric_classes import ToricClass, invariants_bundle

A0 = 8.0


def bump_field(height, width=40.0, center=(0.85, 0.85)):
    c = np.asarray(center)
    return lambda y: A0 + height * np.exp(-width * np.sum((y - c) ** 2, axis=1))


@pytest.mark.parametrize("b", [0.5, 0.625, 0.75, 0.875])
def test_crease_values_hand_formula(square, b):
    # f = max(0, y1 - b): L = 2b(1 - b), int_dP f dsigma = 2(1 - b)(2 - b)
    assert crease_values(square, A0, (1, 0), b) == pytest.approx(b / (2 - b), abs=1e-12)


def test_lambda_square_positive_and_bounded_by_creases(square):
    crease_min = min(crease_values(square, A0, (1, 0), b) for b in (0.5, 0.625, 0.75))
    for level in (1, 2, 3):
        rep = lambda_estimate(square, A0, level)
        assert rep.lambda_estimate > 0
        assert rep.lambda_estimate <= crease_min + 1e-10


def test_lambda_refinement_monotone(square):
    vals = [lambda_estimate(square, A0, level).lambda_estimate for level in (1, 2, 3, 4)]
    for a, b in zip(vals, vals[1:]):
        assert b <= a + 1e-10


def test_lambda_certificate_reevaluates(square):
    rep = lambda_estimate(square, A0, 3)
    assert rep.evaluate() == pytest.approx(rep.lambda_estimate, abs=1e-9)
    assert rep.boundary @ rep.values == pytest.approx(1.0, abs=1e-12)


def test_affine_functions_cost_nothing(square):
    rep = lambda_estimate(square, A0, 2)
    Y = affine_basis(rep.vertices, np.array([0.5, 0.5]))
    for a in range(3):
        assert rep.evaluate(Y[:, a]) == pytest.approx(0.0, abs=1e-12)


def test_destabilized_bump(square):
    A = bump_field(400.0)
    with pytest.raises(FutakiNonzero) as info:
        lambda_estimate(square, A, 3)
    assert np.max(np.abs(info.value.futaki)) > 1e-3
    rep = lambda_estimate(square, A, 3, renormalize=True)
    assert rep.lambda_estimate < 0
    d = rep.destabilizer()
    assert d["creases"] and len(d["values"]) == len(d["vertices"])
    assert rep.evaluate() < 0


def test_mesh_levels_nested(square):
    a, b = crease_mesh(square, 2), crease_mesh(square, 3)
    fine = {tuple(v) for v in np.round(b.vertices, 12)}
    assert all(tuple(v) in fine for v in np.round(a.vertices, 12))


def test_perturbed_stability_stays_above_lambda_prime(square):
    lam = lambda_estimate(square, A0, 3).lambda_estimate
    R = 1.5
    r = lambda y: 1.0 + 0.5 * np.exp(-8 * np.sum((y - 0.5) ** 2, axis=1))
    # symmetric r: tildeA is the mean of r
    from toric_bfield.polytope import measures
    _, _, sch = measures(square, order=12)
    tA = sch.integrate(r)
    cb = coupling_bounds(A0, lam, R, tA, 2.0, 0.05)
    for frac in (0.25, 0.5, 0.9):
        alpha = frac * cb.alpha_max
        A = lambda y, a=alpha: A0 + a * (r(y) - tA)
        est = lambda_estimate(square, A, 3, renormalize=True).lambda_estimate
        lam_p = coupling_bounds(A0, lam, R, tA, 2.0, 0.05, alpha=alpha).lambda_prime
        assert lam_p > 0
        assert est >= lam_p - 1e-6


def test_coupling_bounds_examples():
    cb = coupling_bounds(4.0, 0.5, 1.0, 0.0, 1.0, 0.1)
    assert cb.alpha_max == pytest.approx(1.0, abs=1e-15)
    assert cb.gamma_max == pytest.approx(5.0, abs=1e-15)
    assert coupling_bounds(4.0, 0.5, 1.0, 0.0, 1.0, 0.1, alpha=0.0).lambda_prime == 0.5
    with pytest.raises(InvalidLambda):
        coupling_bounds(4.0, 1.0, 1.0, 0.0, 1.0, 0.1)
    with pytest.raises(DegenerateDenominator):
        coupling_bounds(4.0, 0.5, 1.0, 1.0, 1.0, 0.1)


def test_lambda_prime_vanishes_at_alpha_max():
    cb = coupling_bounds(8.0, 1 / 3, 2.0, 0.5, 2.0, 0.05)
    lp = coupling_bounds(8.0, 1 / 3, 2.0, 0.5, 2.0, 0.05, alpha=cb.alpha_max).lambda_prime
    assert lp == pytest.approx(0.0, abs=1e-14)


@pytest.fixture(scope="module")
def square_metric(square):
    g = BoxGrid(square, 32)
    return metric_grid(guillemin_potential(square, g))


def test_A_function_cases(square, square_metric):
    w = ToricClass.of_polytope(square)
    s = 0.3
    angle = invariants_bundle(w, s * w, 1.0)
    E = np.broadcast_to(s * np.eye(2), (square_metric.grid.size, 2, 2)).copy()
    a0 = A_function(square_metric, E, 0.0, angle)
    assert np.all(a0.A == angle.A0)
    a1 = A_function(square_metric, E, 1.0, angle)
    assert a1.tildeA[0] == pytest.approx(1 + s ** 2, abs=1e-10)
    assert np.max(np.abs(a1.tildeA[1:])) < 1e-10
    assert np.max(np.abs(a1.A - angle.A0)) < 1e-10


def test_futaki_symmetric_square(square, square_metric):
    w = ToricClass.of_polytope(square)
    E = np.broadcast_to(0.4 * np.eye(2), (square_metric.grid.size, 2, 2)).copy()
    angle = invariants_bundle(w, 0.4 * w, 1.0)
    for gamma in (0.0, 1.0, 3.0):
        assert np.max(np.abs(futaki_bfield(square_metric, E, gamma, angle))) < 1e-9


def test_futaki_linear_in_gamma(square):
    g = BoxGrid(square, 24)
    y = g.nodes
    u = SymplecticPotential(square, g, phi=0.03 * y[:, 0] ** 3)
    m = metric_grid(u)
    w = ToricClass.of_polytope(square)
    angle = invariants_bundle(w, 0.2 * w, 1.0)
    E = 0.2 * np.eye(2) + 0.1 * y[:, 0, None, None] * np.array([[1.0, 0], [0, 0]])
    f0, fp = futaki_split(m, E, angle)
    for gamma in (0.3, 0.6):
        np.testing.assert_allclose(futaki_bfield(m, E, gamma, angle), f0 + gamma * fp, atol=1e-9)
