"""Pointwise dHYM algebra, a priori bounds, large-volume expansions, the
perturbative dHYM solver and the Calabi-Volume functional.

Pointwise data is the spectrum of ``omega^{-1} B``.  On grids we work with the
elementary symmetric functions of the endomorphism field directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import HypothesisViolated, NewtonDivergence, SinZero, TanPole
from .potentials import (MetricGrid, SymplecticPotential, class_endomorphism, class_slope,
                         elementary_symmetric, exact_operators, harmonic_representative,
                         metric_grid, pencil_eigenvalues)


@dataclass(frozen=True)
class EigenProfile:
    eigenvalues: np.ndarray   # (N, n)

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[1]

    @property
    def e(self) -> np.ndarray:
        return elementary_from_eigenvalues(self.eigenvalues)

    @classmethod
    def from_fields(cls, E: np.ndarray, H: np.ndarray) -> "EigenProfile":
        return cls(pencil_eigenvalues(E, H))

    @classmethod
    def constant(cls, lam, count: int = 1) -> "EigenProfile":
        return cls(np.tile(np.asarray(lam, float), (count, 1)))


def elementary_from_eigenvalues(lam: np.ndarray) -> np.ndarray:
    lam = np.atleast_2d(lam)
    n = lam.shape[1]
    # coefficients of prod (1 + lam_i t)
    coeffs = np.zeros((lam.shape[0], n + 1))
    coeffs[:, 0] = 1.0
    for i in range(n):
        coeffs[:, 1:] = coeffs[:, 1:] + lam[:, i:i + 1] * coeffs[:, :-1]
    return coeffs[:, 1:]


def _with_e0(e: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones((e.shape[0], 1)), e], axis=1)


def complex_ratio(e: np.ndarray) -> np.ndarray:
    """prod (1 + i lam_j) = sum_k i^k e_k."""
    ee = _with_e0(e)
    powers = np.array([1j ** k for k in range(ee.shape[1])])
    return ee @ powers


def radius(profile: EigenProfile) -> np.ndarray:
    return np.prod(np.sqrt(1.0 + profile.eigenvalues**2), axis=1)


def phase_residual(e: np.ndarray, theta_hat: float) -> np.ndarray:
    """Im(e^{-i theta} prod(1 + i lam_j)) from elementary symmetric functions."""
    return np.imag(np.exp(-1j * theta_hat) * complex_ratio(e))


def phase_residual_coefficients(n: int, theta_hat: float) -> np.ndarray:
    """d/de_k of the phase residual, k = 1..n."""
    return np.array([np.imag(np.exp(-1j * theta_hat) * 1j ** k) for k in range(1, n + 1)])


def dhym_residual(profile: EigenProfile, theta_hat: float, n: int | None = None,
                  form: str = "auto") -> np.ndarray:
    """Pointwise dHYM residual.

    n = 2: ``e1 cos + (e2 - 1) sin``, the imaginary part of the rotated product.
    n = 3: ``(e1 - e3) - (1 - e2) tan`` (``form="normalized"``) or the unit-modulus
    phase ``sin(sum arctan lam - theta)`` (``form="raw"``).  ``"auto"`` falls back to
    the raw form when cos theta is near zero.
    """
    n = profile.n if n is None else n
    if n != profile.n:
        raise ValueError("dimension does not match the profile")
    e = profile.e
    if n == 2:
        return phase_residual(e, theta_hat)
    if n != 3:
        raise ValueError("n must be 2 or 3")
    near_pole = abs(math.cos(theta_hat)) < 1e-12
    if form == "raw" or (form == "auto" and near_pole):
        return phase_residual(e, theta_hat) / radius(profile)
    if near_pole:
        raise TanPole("tan theta is undefined")
    return (e[:, 0] - e[:, 2]) - (1.0 - e[:, 1]) * math.tan(theta_hat)


@dataclass(frozen=True)
class BoundReport:
    holds: bool
    margin: float


def bounds_check(profile: EigenProfile, theta_hat: float, n: int | None = None,
                 initial_bound: bool | None = None, tol: float = 1e-12) -> BoundReport:
    """Trace bound ``0 <= e1 (- e3) < tan theta`` at every node."""
    n = profile.n if n is None else n
    s, c = math.sin(theta_hat), math.cos(theta_hat)
    if s <= 0:
        raise HypothesisViolated("sin theta must be positive", hypothesis="sin>0")
    if c <= 0:
        raise HypothesisViolated("cos theta must be positive", hypothesis="cos>0")
    lam = profile.eigenvalues
    if np.any(lam < -tol):
        raise HypothesisViolated("eigenvalues must be nonnegative", hypothesis="lambda>=0")
    e = profile.e
    if n == 3:
        if initial_bound is None:
            initial_bound = bool(np.all(e[:, 1] < 1.0))
        if not initial_bound:
            raise HypothesisViolated("the bound e2 < 1 is required", hypothesis="e2<1")
        q = e[:, 0] - e[:, 2]
    elif n == 2:
        q = e[:, 0]
    else:
        raise ValueError("n must be 2 or 3")
    T = s / c
    margin = float(np.min(T - q))
    holds = bool(np.all(q >= -tol) and margin > 0)
    return BoundReport(holds, margin)


def sample_dhym_triples(count: int, seed: int = 0, batch: int = 1 << 18
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Random nonnegative triples solving the n = 3 dHYM relation with e2 < 1.

    Draw lambda1, lambda2 >= 0 and T = tan theta > 0, then solve the relation
    for lambda3 and keep the admissible draws.  Returns (lambdas, T).
    """
    rng = np.random.default_rng(seed)
    lams, Ts = [], []
    got = 0
    while got < count:
        l1 = rng.exponential(0.7, batch)
        l2 = rng.exponential(0.7, batch)
        T = np.tan(rng.uniform(1e-3, math.pi / 2 - 1e-3, batch))
        s, p = l1 + l2, l1 * l2
        den = 1.0 - p + s * T
        l3 = ((1.0 - p) * T - s) / den
        lam = np.stack([l1, l2, l3], axis=1)
        e2 = p + s * l3
        ok = (den > 0) & (l3 >= 0) & (e2 < 1.0)
        lams.append(lam[ok])
        Ts.append(T[ok])
        got += int(ok.sum())
    return np.concatenate(lams)[:count], np.concatenate(Ts)[:count]


# ------------------------------------------------------------------ chi transform

@dataclass(frozen=True)
class ChiField:
    chi: np.ndarray            # omega^{-1} chi at the nodes (N, 2, 2)
    identity_error: float      # max |Im(...) - (chi^2 - omega^2)/(sin omega^2)|
    positive: bool


def chi_transform(E: np.ndarray, theta_hat: float) -> ChiField:
    """chi = sin(theta) B + cos(theta) omega, as endomorphisms relative to omega."""
    if E.shape[-1] != 2:
        raise ValueError("the chi transform is defined on surfaces")
    s, c = math.sin(theta_hat), math.cos(theta_hat)
    if abs(s) < 1e-14:
        raise SinZero("sin theta vanishes")
    chi = s * E + c * np.eye(2)
    e = elementary_symmetric(E)
    lhs = phase_residual(e, theta_hat)
    rhs = (np.linalg.det(chi) - 1.0) / s
    ce = elementary_symmetric(chi)
    positive = bool(np.all(ce[:, 0] > 0) and np.all(ce[:, 1] > 0))
    return ChiField(chi, float(np.max(np.abs(lhs - rhs))), positive)


# ------------------------------------------------------------------ large volume

@dataclass(frozen=True)
class LargeVolumeTable:
    k: np.ndarray
    im_remainder: np.ndarray
    re_remainder: np.ndarray
    im_slope: float
    re_slope: float


def scaled_angle(moments: np.ndarray, k: float) -> float:
    n = len(moments) - 1
    total = sum(math.comb(n, j) * (1j ** j) * moments[j] * k ** (-j) for j in range(n + 1))
    return math.atan2(total.imag, total.real)


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    # an identically vanishing remainder has no order
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def large_volume_check(e: np.ndarray, moments: np.ndarray, k_list) -> LargeVolumeTable:
    """Remainders of the large-volume expansion of e^{-i theta_k} prod(1 + i lam/k).

    ``e`` holds elementary symmetric functions of omega^{-1} B at nodes and
    ``moments`` the class moments [w]^(n-j)[B]^j/[w]^n.
    """
    n = e.shape[1]
    z = n * moments[1]
    ks = np.asarray(list(k_list), dtype=float)
    im_r, re_r = [], []
    for k in ks:
        scaled = e * k ** (-np.arange(1, n + 1, dtype=float))
        w = np.exp(-1j * scaled_angle(moments, k)) * complex_ratio(scaled)
        e1 = e[:, 0]
        e2 = e[:, 1] if n >= 2 else 0.0
        im_lead = (e1 - z) / k
        re_lead = 1.0 - (e2 - z * e1 + 0.5 * z * z) / k**2
        im_r.append(np.max(np.abs(w.imag - im_lead)))
        re_r.append(np.max(np.abs(w.real - re_lead)))
    im_r, re_r = np.array(im_r), np.array(re_r)
    im_slope, re_slope = _loglog_slope(ks, im_r), _loglog_slope(ks, re_r)
    return LargeVolumeTable(ks, im_r, re_r, im_slope, re_slope)


# ------------------------------------------------------------------ perturbative solver

@dataclass(frozen=True)
class DHYMSolution:
    E: np.ndarray          # omega^{-1} B at the nodes
    f: np.ndarray          # correction potential relative to the reference class form
    rho: float             # discrete compatibility constant
    theta_hat: float
    residual: float
    iterations: int
    seed_distance: float   # sup |B/eps - (omega + delta eta_harmonic)|
    eps: float


def trace_linearization(M, C: np.ndarray) -> sp.csr_matrix:
    """Sparse map df -> tr(C dE) with dE_ij = M_ij df."""
    n = C.shape[-1]
    J = None
    for i in range(n):
        for j in range(n):
            term = sp.diags(C[:, j, i]) @ M[i][j]
            J = term if J is None else J + term
    return J.tocsr()


def cofactor_weights(E: np.ndarray, e: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Sum_k coef_k C_{k-1} where de_k = tr(C_{k-1} dE)."""
    n = E.shape[-1]
    I = np.broadcast_to(np.eye(n), E.shape)
    ee = _with_e0(e)
    out = np.zeros_like(E)
    P = np.zeros_like(E)
    Epow = [I]
    for m in range(1, n):
        Epow.append(Epow[-1] @ E)
    for k in range(1, n + 1):
        P = np.zeros_like(E)
        for m in range(k):
            P = P + ((-1) ** m) * ee[:, k - 1 - m, None, None] * Epow[m]
        out = out + coef[k - 1] * P
    return out


def _damped_newton(residual, jacobian, x0, tol, max_iter=30):
    x = x0.copy()
    r = residual(x)
    nr = float(np.max(np.abs(r)))
    it = 0
    while nr > tol:
        if it >= max_iter:
            raise NewtonDivergence("Newton iteration did not converge", nr)
        J = jacobian(x)
        dx = spla.spsolve(J, -r)
        if not np.all(np.isfinite(dx)):
            raise NewtonDivergence("singular Newton system", nr)
        step = 1.0
        for _ in range(9):
            xt = x + step * dx
            rt = residual(xt)
            nt = float(np.max(np.abs(rt)))
            if np.isfinite(nt) and nt < nr:
                break
            step *= 0.5
        else:
            raise NewtonDivergence("backtracking exhausted", nr)
        x, r, nr = xt, rt, nt
        it += 1
    return x, nr, it


def perturbative_dhym_solve(u: SymplecticPotential, omega_support: np.ndarray,
                            eta_support: np.ndarray, eps: float, delta: float,
                            theta_hat: float | None = None, tol: float = 1e-10,
                            eta_reference: np.ndarray | None = None) -> DHYMSolution:
    """Solve dHYM for B in eps([omega] + delta[eta]) at the fixed metric of u.

    The unknown is a mean-zero potential f with ``omega^{-1} B = eps(I + delta
    (E_eta + D(U grad f)))`` plus a discrete compatibility constant.  Newton starts
    from the harmonic representative of eta.  ``eta_reference`` replaces the
    default representative of [eta] by any other one.
    """
    from .toric_classes import ToricClass, invariants_bundle

    g = u.grid
    n = g.n
    m = metric_grid(u)
    if theta_hat is None:
        w = ToricClass(g.polytope, omega_support)
        B = ToricClass(g.polytope, eps * (np.asarray(omega_support) + delta * np.asarray(eta_support)))
        theta_hat = invariants_bundle(w, B, 0.0).theta_hat
    I = np.eye(n)
    E_eta = class_endomorphism(m, eta_support) if eta_reference is None else np.array(eta_reference)
    harm = harmonic_representative(u, E_eta, class_slope(g, eta_support))
    M = exact_operators(g, m.inverse)
    coef = phase_residual_coefficients(n, theta_hat)
    wts = g.weights / g.weights.sum()

    def field(f):
        E = E_eta.copy()
        for i in range(n):
            for j in range(n):
                E[:, i, j] += M[i][j] @ f
        return eps * (I + delta * E)

    def residual(x):
        f, rho = x[:-1], x[-1]
        e = elementary_symmetric(field(f))
        return np.concatenate([phase_residual(e, theta_hat) - rho, [wts @ f]])

    def jacobian(x):
        f = x[:-1]
        E = field(f)
        e = elementary_symmetric(E)
        C = cofactor_weights(E, e, coef)
        J = eps * delta * trace_linearization(M, C)
        one = sp.csr_matrix(-np.ones((g.size, 1)))
        return sp.bmat([[J, one], [sp.csr_matrix(wts[None, :]), None]], format="csc")

    x0 = np.concatenate([harm.f, [0.0]])
    x0[-1] = float(wts @ phase_residual(elementary_symmetric(field(harm.f)), theta_hat))
    if delta == 0.0:
        x0 = np.zeros(g.size + 1)
        x0[-1] = float(wts @ phase_residual(elementary_symmetric(field(x0[:-1])), theta_hat))
    x, nr, it = _damped_newton(residual, jacobian, x0, tol)
    E = field(x[:-1])
    seed = I + delta * harm.E
    dist = float(np.max(np.abs(E / eps - seed))) if eps != 0 else 0.0
    return DHYMSolution(E, x[:-1], float(x[-1]), theta_hat, nr, it, dist, eps)


def solve_with_threshold(u, omega_support, eta_support, delta, eps0: float = 0.1,
                         min_eps: float = 1e-4, **kw) -> DHYMSolution:
    """Halve eps from eps0 until Newton converges."""
    eps = eps0
    last = None
    while eps >= min_eps:
        try:
            return perturbative_dhym_solve(u, omega_support, eta_support, eps, delta, **kw)
        except NewtonDivergence as exc:
            last = exc
            eps *= 0.5
    raise NewtonDivergence("no eps below the start value converged",
                           last.last_residual if last else float("nan"))


# ------------------------------------------------------------------ CVol and KYM

@dataclass(frozen=True)
class CVolReport:
    cvol: float
    volume_functional: float   # V_omega(B) = int r dmu
    s_hat: float               # mean of s over dmu
    c: float                   # s_hat - |gamma| mean of r
    decomposition: float       # (1 - 2c)|gamma| V + c (2 s_hat - c) vol
    identity_error: float
    kym_trace: np.ndarray      # Lambda B - z
    kym_scalar: np.ndarray     # s + gamma_hat (e2 - z e1) - c_hat, c_hat the mean


def volume_functional(m: MetricGrid, E: np.ndarray) -> float:
    r = np.abs(complex_ratio(elementary_symmetric(E)))
    return m.grid.integrate(r)


def cvol_and_kym(m: MetricGrid, E: np.ndarray, gamma_abs: float, gamma_hat: float,
                 z: float, abreu: np.ndarray | None = None) -> CVolReport:
    """Calabi-Volume functional and Kahler-Yang-Mills residual fields.

    The scalar curvature is the Abreu value over 4.  ``abreu`` overrides the
    strong-form field of ``m``, for instance with the weak form a path solver
    used.  The constants in the decomposition use grid means so that the identity is exact at a discrete
    solution of ``s - |gamma| r = const``.
    """
    g = m.grid
    e = elementary_symmetric(E)
    r = np.abs(complex_ratio(e))
    s = (m.abreu if abreu is None else np.asarray(abreu)) / 4.0
    vol = float(g.weights.sum())
    V = g.integrate(r)
    cvol = g.integrate((s - gamma_abs * r) ** 2) + gamma_abs * V
    s_hat = g.integrate(s) / vol
    c = s_hat - gamma_abs * V / vol
    rhs = (1.0 - 2.0 * c) * gamma_abs * V + c * (2.0 * s_hat - c) * vol
    kym_t = e[:, 0] - z
    e2 = e[:, 1] if e.shape[1] > 1 else np.zeros(len(e))
    ks = s + gamma_hat * (e2 - z * e[:, 0])
    ks = ks - g.integrate(ks) / vol
    return CVolReport(cvol, V, s_hat, c, rhs, abs(cvol - rhs), kym_t, ks)


def deformed_cscK_residual(m: MetricGrid, u: SymplecticPotential, sigma: float, tau: float,
                           theta_hat: float) -> np.ndarray:
    """dHYM residual of B = sigma omega + tau Ric at the metric of u."""
    from .potentials import ricci_endomorphism

    E = sigma * np.eye(m.grid.n) + tau * ricci_endomorphism(m, u)
    return phase_residual(elementary_symmetric(E), theta_hat)
