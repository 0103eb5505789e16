import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toric_bfield.errors import FanMismatch, NotKahler, ZeroAngleVector
from toric_bfield.toric_classes import (ToricClass, class_from_json, intersection_number,
                                        invariants_bundle)

S_GRID = [0.1 * k for k in range(1, 10)]


def test_square_intersections(square):
    w = ToricClass.of_polytope(square)
    c1 = ToricClass.first_chern(square)
    assert intersection_number([w, w]) == pytest.approx(2.0, abs=1e-12)
    assert intersection_number([c1, w]) == pytest.approx(4.0, abs=1e-12)
    assert intersection_number([c1, c1]) == pytest.approx(8.0, abs=1e-12)


def test_projective_plane_intersections(simplex):
    c1 = ToricClass.first_chern(simplex)
    # c1(P^2) = 3H, so c1^2 = 9
    assert intersection_number([c1, c1]) == pytest.approx(9.0, abs=1e-12)


def test_cube_top_intersection(cube):
    w = ToricClass.of_polytope(cube)
    assert intersection_number([w] * 3) == pytest.approx(6.0, abs=1e-12)
    c1 = ToricClass.first_chern(cube)
    assert intersection_number([c1] * 3) == pytest.approx(48.0, abs=1e-10)


def test_wrong_count(square):
    w = ToricClass.of_polytope(square)
    with pytest.raises(FanMismatch):
        intersection_number([w])
    with pytest.raises(FanMismatch):
        ToricClass(square, [1.0, 2.0])


@pytest.mark.parametrize("s", S_GRID)
def test_surface_angle_of_multiple(square, s):
    w = ToricClass.of_polytope(square)
    a = invariants_bundle(w, s * w, 0.0)
    assert a.theta_hat == pytest.approx(2 * math.atan(s), abs=1e-12)
    assert math.hypot(math.cos(a.theta_hat) - a.v1 / math.hypot(a.v1, a.v2),
                      math.sin(a.theta_hat) - a.v2 / math.hypot(a.v1, a.v2)) < 1e-14


@pytest.mark.parametrize("s", S_GRID)
def test_threefold_angle_of_multiple(cube, s):
    w = ToricClass.of_polytope(cube)
    a = invariants_bundle(w, s * w, 0.0)
    expected = math.atan2(3 * s - s ** 3, 1 - 3 * s ** 2)
    assert a.theta_hat == pytest.approx(expected, abs=1e-12)
    assert a.theta_hat == pytest.approx(3 * math.atan(s), abs=1e-12)


def test_B_equal_omega(square):
    w = ToricClass.of_polytope(square)
    a = invariants_bundle(w, w, 0.0)
    assert a.theta_hat == pytest.approx(math.pi / 2, abs=1e-14)
    assert a.v1 == pytest.approx(0.0, abs=1e-12)
    assert a.z == pytest.approx(2.0, abs=1e-12)


def test_average_scalar_and_constants(square):
    w = ToricClass.of_polytope(square)
    a = invariants_bundle(w, 0.5 * w, 2.0)
    assert a.s_hat == pytest.approx(2.0)
    assert a.A0 == pytest.approx(8.0)
    assert a.r_hat == pytest.approx(1.25, abs=1e-12)   # |1 + i/2|^2
    assert a.c == pytest.approx(2.0 - 2.0 * 1.25)


def test_degenerate_omega_rejected(square):
    w = ToricClass.of_polytope(square)
    with pytest.raises(NotKahler):
        invariants_bundle(ToricClass(square, np.zeros(4)), w, 0.0)


def test_zero_angle_vector_raised(square, monkeypatch):
    # on products of lines (w + iB)^n never vanishes for Kahler w, so force it
    import toric_bfield.toric_classes as tc
    monkeypatch.setattr(tc, "angle_vector", lambda w, B: (0.0, 0.0))
    w = ToricClass.of_polytope(square)
    with pytest.raises(ZeroAngleVector):
        tc.invariants_bundle(w, w, 0.0)


def test_indefinite_pairing(square):
    h1 = ToricClass(square, [0, 0, 1, 0])
    h2 = ToricClass(square, [0, 0, 0, 1])
    assert intersection_number([h1 - h2, h1 - h2]) == pytest.approx(-2.0, abs=1e-12)


def test_json_round_trip(square):
    w = ToricClass.of_polytope(square)
    q = class_from_json(square, w.to_json())
    np.testing.assert_array_equal(q.support, w.support)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1.5), st.floats(0.1, 1.5))
def test_linear_shift_invariance(vx, vy, b1, b2):
    from conftest import SQUARE_NORMALS
    from toric_bfield.polytope import build_polytope
    P = build_polytope(SQUARE_NORMALS, [0, 0, -1, -1])
    nu = P.normals.astype(float)
    w = ToricClass.of_polytope(P)
    B = ToricClass(P, [0, 0, b1, b2])
    shift = nu @ np.array([vx, vy])
    ref = invariants_bundle(w, B, 1.0)
    moved = invariants_bundle(ToricClass(P, w.support + shift), ToricClass(P, B.support + shift), 1.0)
    for key in ("theta_hat", "z", "r_hat", "c", "s_hat"):
        assert getattr(moved, key) == pytest.approx(getattr(ref, key), abs=1e-12)


@pytest.mark.parametrize("k", [10, 100])
def test_large_volume_scaling(square, cube, k):
    for P in (square, cube):
        w = ToricClass.of_polytope(P)
        B = ToricClass(P, 0.3 * np.arange(P.n_facets) / P.n_facets)
        base = invariants_bundle(w, B, 0.0)
        big = invariants_bundle(k * w, B, 0.0)
        assert big.z == pytest.approx(base.z / k, rel=1e-12)
        assert abs(big.theta_hat) < 1.5 * abs(base.z) / k


def test_surface_trig_identity(square):
    w = ToricClass.of_polytope(square)
    B = ToricClass(square, [0, 0, 0.3, 0.7])
    a = invariants_bundle(w, B, 0.0)
    # Im e^{-i theta}(v1 + i v2) vanishes: v2 cos - v1 sin = 0
    assert a.v2 * math.cos(a.theta_hat) - a.v1 * math.sin(a.theta_hat) == pytest.approx(0.0, abs=1e-14)


def test_constant_shift_is_a_different_class(square):
    # adding c to every support number adds c * c1
    w = ToricClass.of_polytope(square)
    shifted = ToricClass(square, w.support + 1.0)
    c1 = ToricClass.first_chern(square)
    assert intersection_number([shifted, shifted]) == pytest.approx(
        intersection_number([w + c1, w + c1]), abs=1e-12)
    assert intersection_number([shifted, shifted]) != pytest.approx(intersection_number([w, w]))
