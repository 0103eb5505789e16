import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toric_bfield.calabi import (alpha_fiber_coefficient, boundary_residuals, class_of_gamma_ab,
                                 kahler_einstein_residual, perturbed_profile, solve_profile)
from toric_bfield.errors import DegenerateSystem, PoleParameter

# exact values of the kappa system at (1/2, -3/4), from a symbolic solve
KAPPA1 = -5742 / 821
KAPPA2 = 441 / 6568


@pytest.fixture(scope="module")
def coupled():
    return solve_profile(0.5, -0.75, 1.0)


def test_class_examples():
    assert class_of_gamma_ab(1.0, 0.0, 0.5, -0.75) == pytest.approx((2.0, -4 / 3, 1.0))
    a = 0.7
    assert class_of_gamma_ab(a, 0.0, 0.3, 0.6) == pytest.approx((a / 0.3, a / 0.6, a))
    assert class_of_gamma_ab(0.0, 1.0, 0.0, 0.0) == pytest.approx((1.0, 1.0, -1.0))
    x1, x2 = 0.5, -0.75
    k = (1 + x1 * x2) / ((1 - x1 ** 2) * (1 - x2 ** 2))
    assert class_of_gamma_ab(0.0, 2.0, x1, x2)[0] == pytest.approx(2 * k)


def test_class_poles():
    with pytest.raises(PoleParameter):
        class_of_gamma_ab(1.0, 0.0, 0.0, 0.5)
    with pytest.raises(PoleParameter):
        class_of_gamma_ab(0.0, 1.0, 1.0, 0.5)


def test_fiber_coefficient_vanishes_on_antidiagonal():
    assert alpha_fiber_coefficient(0.4, -0.4) == 0.0
    assert alpha_fiber_coefficient(0.5, -0.75) == pytest.approx(0.25 / (0.75 * 0.4375))


def test_coupled_profile(coupled):
    assert coupled.kappa1 == pytest.approx(KAPPA1, abs=1e-10)
    assert coupled.kappa2 == pytest.approx(KAPPA2, abs=1e-10)
    assert coupled.kappa2 > 0 and coupled.gamma_hat(1.0) > 0
    assert coupled.positive
    assert coupled.bc_residual < 1e-10
    assert abs(coupled.F[0]) < 1e-14 and abs(coupled.F[-1]) < 1e-10
    # kappa relations with a = 1/2, b = 1
    assert coupled.kappa2 == pytest.approx(4 * coupled.gamma_hat(1.0))
    assert coupled.kappa1 == pytest.approx(12 * 0.25 * coupled.gamma_hat(1.0) - coupled.c_tilde(0.5, 1.0))


def test_uncoupled_profile_fails():
    prof = solve_profile(0.5, -0.75, 0.0)
    assert not prof.positive
    assert prof.bc_residual > 1e-3


def test_kahler_einstein_calibration():
    prof = solve_profile(0.5, -0.5, 0.0)
    assert prof.bc_residual < 1e-8
    assert kahler_einstein_residual(prof) < 1e-8
    assert prof.kappa1 == pytest.approx(-6.0, abs=1e-9)
    assert prof.positive


def test_degenerate_system():
    with pytest.raises(DegenerateSystem):
        solve_profile(0.4, -0.4, 1.0)
    with pytest.raises(PoleParameter):
        solve_profile(1.0, -0.4, 1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-20, 20), st.floats(-2, 2))
def test_boundary_map_is_affine(k1, k2):
    x1, x2 = 0.5, -0.75
    r0 = boundary_residuals(x1, x2, 0.0, 0.0)
    c1 = boundary_residuals(x1, x2, 1.0, 0.0) - r0
    c2 = boundary_residuals(x1, x2, 0.0, 1.0) - r0
    got = boundary_residuals(x1, x2, k1, k2)
    np.testing.assert_allclose(got, r0 + k1 * c1 + k2 * c2, atol=1e-10)


def test_three_solve_assembly_matches_least_squares(coupled):
    x1, x2 = 0.5, -0.75
    r0 = boundary_residuals(x1, x2, 0.0, 0.0, n_steps=10000)
    M = np.stack([boundary_residuals(x1, x2, 1.0, 0.0, n_steps=10000) - r0,
                  boundary_residuals(x1, x2, 0.0, 1.0, n_steps=10000) - r0], axis=1)
    k = np.linalg.solve(M, -r0)
    pts = np.array([[0, 0], [1, 0], [0, 1], [3, -2], [-1, 5]], float)
    vals = np.array([boundary_residuals(x1, x2, *q, n_steps=10000) for q in pts])
    X = np.hstack([np.ones((len(pts), 1)), pts])
    coef, *_ = np.linalg.lstsq(X, vals, rcond=None)
    k_ls = np.linalg.solve(coef[1:].T, -coef[0])
    np.testing.assert_allclose(k, k_ls, atol=1e-12)
    np.testing.assert_allclose(k, [coupled.kappa1, coupled.kappa2], atol=1e-9)


def test_swap_symmetry(coupled):
    swapped = solve_profile(-0.75, 0.5, 1.0, weights=(-2.0, 2.0))
    assert swapped.kappa1 == pytest.approx(coupled.kappa1, abs=1e-9)
    assert swapped.kappa2 == pytest.approx(coupled.kappa2, abs=1e-9)
    assert np.max(np.abs(swapped.phi - coupled.phi)) < 1e-9


def test_integrator_order():
    errs = [abs(solve_profile(0.5, -0.75, 1.0, n_steps=n).kappa1 - KAPPA1) for n in (20, 40, 80)]
    slopes = np.diff(np.log(errs)) / np.log(0.5)
    assert np.all(np.abs(slopes - 4.0) < 0.3), slopes


def test_perturbed_profile_zero_eps(coupled):
    p0 = perturbed_profile(coupled, 0.0)
    assert p0.x2 == -0.75
    np.testing.assert_array_equal(p0.phi, coupled.phi)


def test_perturbed_profile_small_eps(coupled):
    pe = perturbed_profile(coupled, 0.01)
    assert pe.positive
    assert abs(pe.x2 + 0.75) < 1e-3
    assert pe.dhym_mismatch < 1e-10


def test_perturbed_deviation_is_even_in_eps(coupled):
    # the measured deviation scales like eps^2: halving eps divides it by 4
    d = [abs(perturbed_profile(coupled, e).x2 + 0.75) for e in (0.02, 0.01)]
    assert d[0] / d[1] == pytest.approx(4.0, rel=0.1)
