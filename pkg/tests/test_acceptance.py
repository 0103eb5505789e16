"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible even under capture)
and then asserts, so a failure still fails the run.
"""
import math

import numpy as np
import pytest

from toric_bfield.calabi import kahler_einstein_residual, perturbed_profile, solve_profile
from toric_bfield.continuity import CoupledSystem, PathConfig, run_path
from toric_bfield.dhym import (complex_ratio, cvol_and_kym, elementary_from_eigenvalues,
                               large_volume_check, perturbative_dhym_solve, sample_dhym_triples,
                               volume_functional)
from toric_bfield.grid import BoxGrid
from toric_bfield.kstability import coupling_bounds, futaki_bfield, futaki_split, lambda_estimate
from toric_bfield.polytope import measures
from toric_bfield.potentials import (SymplecticPotential, abreu_operator, class_endomorphism,
                                     elementary_symmetric, exact_endomorphism, guillemin_potential,
                                     metric_grid)
from toric_bfield.toric_classes import ToricClass, class_moments, invariants_bundle

OMEGA = np.array([0.0, 0.0, 1.0, 1.0])
ETA_X = np.array([0.0, 0.0, 1.0, 0.0])
ETA_SYM = np.array([0.0, 0.0, 1.0, -1.0])


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        return ok
    return emit


def bent_potential(square, N):
    g = BoxGrid(square, N)
    y = g.nodes
    return SymplecticPotential(square, g, phi=0.03 * np.sin(np.pi * y[:, 0]) * y[:, 1] ** 2)


def test_calibration_identity(square, verdict):
    g = BoxGrid(square, 256)
    A = abreu_operator(guillemin_potential(square, g))
    _, _, scheme = measures(square)
    y = g.nodes
    tests = (lambda p: np.ones(len(p)), lambda p: p[:, 0], lambda p: p[:, 1])
    errs = [abs(g.integrate(A * f(y)) - scheme.integrate_boundary(f)) for f in tests]
    spread = float(np.std(A))
    ok = max(errs) < 1e-6 and spread < 1e-6
    verdict(1, ok, f"max boundary identity error {max(errs):.2e}, Abreu stddev {spread:.2e}")
    assert ok


def test_angle_of_multiples(square, cube, verdict):
    worst = 0.0
    for P in (square, cube):
        w = ToricClass.of_polytope(P)
        for s in np.arange(1, 10) / 10:
            theta = invariants_bundle(w, s * w, 0.0).theta_hat
            worst = max(worst, abs(theta - P.n * math.atan(s)))
    ok = worst < 1e-12
    verdict(2, ok, f"max angle error {worst:.2e}")
    assert ok


def test_threefold_trace_bound(verdict):
    lam, T = sample_dhym_triples(10 ** 6, seed=2024)
    e = elementary_from_eigenvalues(lam)
    assert np.all(lam >= 0) and np.all(e[:, 1] < 1.0)
    q = e[:, 0] - e[:, 2]
    bad = int(np.sum((q < 0) | (q >= T)))
    ok = bad == 0 and len(T) == 10 ** 6
    verdict(3, ok, f"{bad} violations in {len(T)} triples")
    assert ok


def test_large_volume_orders(square, verdict):
    u = bent_potential(square, 32)
    eps, delta = 1.0, 0.5
    sol = perturbative_dhym_solve(u, OMEGA, ETA_X, eps, delta)
    assert np.ptp(sol.E[:, 0, 1]) > 1e-3  # B is not a constant multiple of omega
    mom = class_moments(ToricClass(square, OMEGA), ToricClass(square, eps * (OMEGA + delta * ETA_X)))
    tab = large_volume_check(elementary_symmetric(sol.E), mom, [10, 20, 40, 80])
    ok = abs(tab.im_slope + 3) < 0.2 and abs(tab.re_slope + 4) < 0.2
    verdict(4, ok, f"Im slope {tab.im_slope:.3f}, Re slope {tab.re_slope:.3f}")
    assert ok


def test_stability_estimate(square, verdict):
    A0 = 8.0
    vals = [lambda_estimate(square, A0, level).lambda_estimate for level in (1, 2, 3, 4)]
    monotone = all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))
    bump = lambda y: A0 + 400.0 * np.exp(-40.0 * np.sum((y - 0.85) ** 2, axis=1))
    rep = lambda_estimate(square, bump, 3, renormalize=True)
    d = rep.destabilizer()
    explicit = bool(d["creases"]) and len(d["values"]) == len(d["vertices"]) and rep.evaluate() < 0
    ok = vals[-1] > 0 and monotone and rep.lambda_estimate < 0 and explicit
    verdict(5, ok, f"square lambda by level {[round(v, 6) for v in vals]}, "
                   f"bump lambda {rep.lambda_estimate:.4f}")
    assert ok


def test_coupling_bounds(verdict):
    cb = coupling_bounds(4.0, 0.5, 1.0, 0.0, 1.0, 0.1)
    ok = cb.alpha_max == 1.0
    for s_hat, lam, eps in [(2.0, 1 / 3, 0.05), (1.5, 0.25, 0.2), (3.0, 0.9, 1e-3)]:
        got = coupling_bounds(4.0, lam, 2.0, 0.5, s_hat, eps).gamma_max
        ok = ok and got == s_hat * lam / (2.0 * (1.0 - lam)) / eps
    verdict(6, ok, f"alpha_max {cb.alpha_max}, gamma_max formula reproduced exactly")
    assert ok


def test_continuity_path(square, verdict):
    base = dict(eps=0.05, grid=64)
    flat = run_path(PathConfig(square, ETA_SYM, gamma_abs=0.0, delta=0.0, **base))
    flat_err = max(max(s.scalar_residual, s.dhym_residual) for s in flat.states)
    cfg = PathConfig(square, ETA_SYM, gamma_abs=1.0, delta=0.1, **base)
    res = run_path(cfg)
    sys = CoupledSystem(cfg)
    inside = cfg.gamma_abs < res.gamma_max
    resid = max(res.final.scalar_residual, res.final.dhym_residual)
    margin = min(s.trace_margin for s in res.states)
    target = cfg.eps * sys.z_target
    xi_rel = abs(res.final.xi[0] - target) / abs(target)
    ok = (flat.completed and flat_err < 1e-12 and inside and res.completed
          and res.final.t == 1.0 and resid < 1e-9 and margin > 0 and xi_rel < 0.25)
    verdict(7, ok, f"delta=0 error {flat_err:.1e}; coupled residual {resid:.1e}, "
                   f"min margin {margin:.2e}, xi0 relative offset {xi_rel:.3f}")
    assert ok


def test_futaki_invariant(square, verdict):
    g = BoxGrid(square, 32)
    m0 = metric_grid(guillemin_potential(square, g))
    w = ToricClass.of_polytope(square)
    E0 = np.broadcast_to(0.4 * np.eye(2), (g.size, 2, 2)).copy()
    angle0 = invariants_bundle(w, 0.4 * w, 1.0)
    sym = max(np.max(np.abs(futaki_bfield(m0, E0, gm, angle0))) for gm in (0.0, 1.0, 3.0))

    u = bent_potential(square, 24)
    m = metric_grid(u)
    eps, delta = 0.05, 0.1
    angle = invariants_bundle(w, ToricClass(square, eps * (OMEGA + delta * ETA_X)), 1.0)
    sol = perturbative_dhym_solve(u, OMEGA, ETA_X, eps, delta)
    f0, fp = futaki_split(m, sol.E, angle)
    lin = max(np.max(np.abs(futaki_bfield(m, sol.E, gm, angle) - (f0 + gm * fp)))
              for gm in (0.5, 1.0, 2.0, 4.0))

    y = u.grid.nodes
    E1 = class_endomorphism(m, ETA_X)
    bump = 1e-2 * np.exp(-10 * ((y[:, 0] - 0.4) ** 2 + (y[:, 1] - 0.6) ** 2))
    E2 = E1 + exact_endomorphism(u.grid, m.inverse, bump)
    a = perturbative_dhym_solve(u, OMEGA, ETA_X, eps, delta, eta_reference=E1)
    b = perturbative_dhym_solve(u, OMEGA, ETA_X, eps, delta, eta_reference=E2)
    rep = np.max(np.abs(futaki_bfield(m, a.E, 1.0, angle) - futaki_bfield(m, b.E, 1.0, angle)))
    ok = sym < 1e-9 and lin < 1e-9 and rep < 1e-6
    verdict(8, ok, f"symmetric {sym:.1e}, linearity {lin:.1e}, representative change {rep:.1e}")
    assert ok


def test_calabi_threefold(verdict):
    prof = solve_profile(0.5, -0.75, 1.0)
    coupled_ok = prof.kappa2 > 0 and prof.positive and bool(np.all(prof.phi[1:-1] > 0))
    bare = solve_profile(0.5, -0.75, 0.0)
    bare_fails = not (bare.positive and bare.bc_residual < 1e-8)
    ke = kahler_einstein_residual(solve_profile(0.5, -0.5, 0.0))
    d = [abs(perturbed_profile(prof, e).x2 + 0.75) for e in (0.02, 0.01)]
    ratio = d[0] / d[1]
    ratio_ok = abs(ratio - 2.0) < 0.3
    ok = coupled_ok and bare_fails and ke < 1e-8 and ratio_ok
    verdict(9, ok, f"kappa2 {prof.kappa2:.5f}, uncoupled fails {bare_fails}, "
                   f"KE residual {ke:.1e}, deviation ratio {ratio:.3f} (target 2 +- 0.3)")
    assert coupled_ok and bare_fails and ke < 1e-8
    assert ratio_ok, f"x2 deviation ratio {ratio:.3f} is not first order"


def test_cvol_decomposition(square, verdict):
    gamma = 2.0
    cfg = PathConfig(square, ETA_SYM, gamma_abs=gamma, eps=0.05, delta=0.1, grid=32)
    res = run_path(cfg)
    st = res.final
    sys = CoupledSystem(cfg)
    F = sys.fields(st.phi, st.f)
    m = metric_grid(SymplecticPotential(square, sys.g, phi=st.phi))
    rep = cvol_and_kym(m, F["E"], gamma, 0.0, res.angle.z, abreu=F["abreu"])

    # away from a solution the defect is the squared spread of s - |gamma| r
    rng = np.random.default_rng(99)
    y = sys.g.nodes
    V0 = volume_functional(m, F["E"])
    increases = []
    for _ in range(10):
        c = rng.standard_normal((3, 3))
        f = sum(c[a, b] * np.cos((a + 1) * np.pi * y[:, 0]) * np.cos((b + 1) * np.pi * y[:, 1])
                for a in range(3) for b in range(3))
        E = F["E"] + 1e-2 * cfg.eps * exact_endomorphism(sys.g, F["U"], f)
        increases.append(volume_functional(m, E) - V0)
    off = cvol_and_kym(m, E, gamma, 0.0, res.angle.z, abreu=F["abreu"])
    r = np.abs(complex_ratio(elementary_symmetric(E)))
    spread = sys.g.integrate((F["abreu"] / 4 - gamma * r - off.c) ** 2)
    ok = rep.c < 0.5 and rep.identity_error < 1e-8 and min(increases) >= 0
    verdict(10, ok, f"c {rep.c:.4f}, identity error {rep.identity_error:.1e}, "
                    f"smallest V increase {min(increases):.2e}")
    assert ok
    assert off.identity_error == pytest.approx(spread, rel=1e-6, abs=1e-14)
