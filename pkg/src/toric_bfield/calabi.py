"""Momentum-profile solver for the Calabi-ansatz threefold P(O + O(1,-1)) over P1 x P1.

The metric is encoded by ``phi(tau)`` on ``[-1, 1]`` with ``F = phi p`` and
``p(tau) = (1 + x1 tau)(1 + x2 tau)``.  With base curvature weights ``s_a`` the
scalar curvature is ``sum_a 2 s_a x_a / (1 + x_a tau) - F'' / p``.  The weights are
``(2, -2)``: the second base factor enters with negative orientation.

The traceless B-field direction is ``alpha = b d(theta / p)`` whose eigenvalues
relative to the metric are ``b x_a / (p (1 + x_a tau))`` on the base and
``-b p' / p^2`` on the fiber; ``Q`` is the sum of their squares for ``b = 1``.
The profile equation with coupling is ``F'' = p (S + kappa1 - kappa2 Q / 2)``
subject to ``F(+-1) = 0`` and ``F'(+-1) = -+ 2 p(+-1)``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import newton

from .errors import DegenerateSystem, NewtonDivergence, PoleParameter

BASE_WEIGHTS = (2.0, -2.0)


def _check_params(x1: float, x2: float) -> None:
    for x in (x1, x2):
        if not (-1.0 < x < 1.0):
            raise PoleParameter("parameters must lie in (-1, 1)")


def fiber_polynomial(x1: float, x2: float):
    p = lambda t: (1.0 + x1 * t) * (1.0 + x2 * t)
    dp = lambda t: x1 * (1.0 + x2 * t) + x2 * (1.0 + x1 * t)
    return p, dp


def base_curvature(x1: float, x2: float, weights=BASE_WEIGHTS):
    return lambda t: sum(2.0 * s * x / (1.0 + x * t) for s, x in zip(weights, (x1, x2)))


def alpha_eigenvalues(x1: float, x2: float, t: np.ndarray, b: float = 1.0) -> np.ndarray:
    p, dp = fiber_polynomial(x1, x2)
    pt = p(t)
    return np.stack([b * x1 / (pt * (1.0 + x1 * t)), b * x2 / (pt * (1.0 + x2 * t)),
                     -b * dp(t) / pt**2], axis=-1)


def alpha_square(x1: float, x2: float):
    return lambda t: np.sum(alpha_eigenvalues(x1, x2, t) ** 2, axis=-1)


# ------------------------------------------------------------------ classes

def class_of_gamma_ab(a: float, b: float, x1: float, x2: float) -> tuple[float, float, float]:
    """Coefficients of [a omega + b alpha] on (omega1, omega2, E0 + Einf)."""
    for x in (x1, x2):
        if abs(abs(x) - 1.0) < 1e-15 or abs(x) >= 1.0:
            raise PoleParameter("x must lie strictly inside (-1, 1)")
        if a != 0.0 and x == 0.0:
            raise PoleParameter("a / x is undefined at x = 0")
    K = (1.0 + x1 * x2) / ((1.0 - x1**2) * (1.0 - x2**2))
    c1 = (a / x1 if a else 0.0) + b * K
    c2 = (a / x2 if a else 0.0) + b * K
    return c1, c2, a - b * K


def alpha_fiber_coefficient(x1: float, x2: float, b: float = 1.0) -> float:
    """E0 + Einf coefficient of [alpha] obtained by integrating alpha over the curves."""
    return -b * (x1 + x2) / ((1.0 - x1**2) * (1.0 - x2**2))


# ------------------------------------------------------------------ integration

def integrate_twice(g, n_steps: int, y0: float = 0.0, dy0: float = 0.0):
    """RK4 for y'' = g(t) on [-1, 1]; returns nodes, y, y'."""
    h = 2.0 / n_steps
    t = -1.0 + h * np.arange(n_steps + 1)
    gl = g(t)
    gm = g(t[:-1] + 0.5 * h)
    y = np.empty(n_steps + 1)
    dy = np.empty(n_steps + 1)
    y[0], dy[0] = y0, dy0
    for i in range(n_steps):
        # state (y, v), v' = g: RK4 stages with g at t, t+h/2, t+h/2, t+h
        k1y, k1v = dy[i], gl[i]
        k2y, k2v = dy[i] + 0.5 * h * k1v, gm[i]
        k3y, k3v = dy[i] + 0.5 * h * k2v, gm[i]
        k4y, k4v = dy[i] + h * k3v, gl[i + 1]
        y[i + 1] = y[i] + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        dy[i + 1] = dy[i] + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return t, y, dy


@dataclass(frozen=True)
class MomentumProfile:
    x1: float
    x2: float
    coupled: bool
    tau: np.ndarray
    F: np.ndarray
    dF: np.ndarray
    phi: np.ndarray
    kappa1: float
    kappa2: float
    bc_residual: float
    positive: bool
    weights: tuple = BASE_WEIGHTS

    @property
    def p_coefficients(self) -> tuple[float, float, float]:
        return 1.0, self.x1 + self.x2, self.x1 * self.x2

    def gamma_hat(self, b: float) -> float:
        return self.kappa2 / (4.0 * b * b)

    def c_tilde(self, a: float, b: float) -> float:
        return 12.0 * a * a * self.gamma_hat(b) - self.kappa1


def boundary_residuals(x1: float, x2: float, kappa1: float, kappa2: float,
                       n_steps: int = 4000, weights=BASE_WEIGHTS) -> np.ndarray:
    """(F(1), F'(1) + 2 p(1)) after shooting from the left boundary conditions."""
    p, _ = fiber_polynomial(x1, x2)
    S = base_curvature(x1, x2, weights)
    Q = alpha_square(x1, x2)
    g = lambda t: p(t) * (S(t) + kappa1 - 0.5 * kappa2 * Q(t))
    _, y, dy = integrate_twice(g, n_steps, 0.0, 2.0 * p(-1.0))
    return np.array([y[-1], dy[-1] + 2.0 * p(1.0)])


def _positive(tau, phi, dF, p) -> bool:
    inner = phi[1:-1]
    return bool(np.all(inner > 0) and dF[0] / p(-1.0) > 0 and dF[-1] / p(1.0) < 0)


def solve_profile(x1: float, x2: float, alpha: float, n_steps: int = 10000,
                  weights=BASE_WEIGHTS, tol: float = 1e-8) -> MomentumProfile:
    """Solve the profile equation with its four boundary conditions.

    ``alpha != 0`` activates the coupling term and makes ``kappa2`` unknown.
    With ``alpha == 0`` the system for ``kappa1`` alone is overdetermined; the
    least-squares solution is returned and ``bc_residual`` records the failure.
    """
    _check_params(x1, x2)
    coupled = alpha != 0.0
    if coupled and abs(x1 + x2) < 1e-12:
        raise DegenerateSystem("the kappa system is singular when x1 = -x2")
    p, _ = fiber_polynomial(x1, x2)
    S = base_curvature(x1, x2, weights)
    Q = alpha_square(x1, x2)
    dF0 = 2.0 * p(-1.0)
    parts = [lambda t: p(t) * S(t), p, lambda t: -0.5 * p(t) * Q(t)]
    sols = [integrate_twice(g, n_steps) for g in parts]
    tau = sols[0][0]
    base_end = np.array([sols[0][1][-1] + 2.0 * dF0, sols[0][2][-1] + dF0 + 2.0 * p(1.0)])
    cols = [np.array([s[1][-1], s[2][-1]]) for s in sols[1:]]
    if coupled:
        M = np.stack(cols, axis=1)
        k1, k2 = np.linalg.solve(M, -base_end)
    else:
        M = cols[0][:, None]
        (k1,), *_ = np.linalg.lstsq(M, -base_end, rcond=None)
        k2 = 0.0
    F = sols[0][1] + k1 * sols[1][1] + k2 * sols[2][1] + dF0 * (tau + 1.0)
    dF = sols[0][2] + k1 * sols[1][2] + k2 * sols[2][2] + dF0
    res = float(max(abs(F[-1]), abs(dF[-1] + 2.0 * p(1.0))))
    phi = F / p(tau)
    positive = res < tol and _positive(tau, phi, dF, p)
    return MomentumProfile(x1, x2, coupled, tau, F, dF, phi, float(k1), float(k2), res,
                           positive, tuple(weights))


def kahler_einstein_residual(profile: MomentumProfile) -> float:
    """max |F' + 2 tau p|: the Kahler-Einstein momentum condition with constant 1."""
    p, _ = fiber_polynomial(profile.x1, profile.x2)
    return float(np.max(np.abs(profile.dF + 2.0 * profile.tau * p(profile.tau))))


# ------------------------------------------------------------------ perturbed profile

@dataclass(frozen=True)
class PerturbedProfile:
    eps: float
    x2: float
    tau: np.ndarray
    phi: np.ndarray
    g: np.ndarray              # h = kappa - b / p, the fiber correction of the B-field
    theta_hat: float
    dhym_mismatch: float       # |h(1)|: the end condition of the first-order dHYM ODE
    positive: bool
    K: float


def _dhym_profile(x1, x2, eps, a, b, n_steps):
    """Integrate the dHYM equation for kappa = b / p + h from the left end."""
    p, dp = fiber_polynomial(x1, x2)
    tau = np.linspace(-1.0, 1.0, n_steps + 1)

    def lam_base(t, kap):
        return [eps * (a + kap * x / (1.0 + x * t)) for x in (x1, x2)]

    lam0 = alpha_eigenvalues(x1, x2, tau, b)
    w0 = p(tau) * (1 + 1j * eps * (a + lam0[:, 0])) * (1 + 1j * eps * (a + lam0[:, 1])) \
        * (1 + 1j * eps * (a + lam0[:, 2]))
    h = tau[1] - tau[0]
    theta = cmath.phase(simpson(w0, x=tau))

    def rhs(t, kap):
        l1, l2 = lam_base(t, kap)
        w = cmath.exp(-1j * theta) * (1 + 1j * l1) * (1 + 1j * l2)
        lf = -w.imag / w.real
        return lf / eps - a

    kap = np.empty(n_steps + 1)
    kap[0] = b / p(-1.0)
    for i in range(n_steps):
        t, k = tau[i], kap[i]
        k1 = rhs(t, k)
        k2 = rhs(t + h / 2, k + h / 2 * k1)
        k3 = rhs(t + h / 2, k + h / 2 * k2)
        k4 = rhs(t + h, k + h * k3)
        kap[i + 1] = k + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    l1, l2 = lam_base(tau, kap)
    lf = np.array([rhs(t, k) for t, k in zip(tau, kap)]) * eps + eps * a
    w = np.exp(-1j * theta) * (1 + 1j * l1) * (1 + 1j * l2) * (1 + 1j * lf)
    return tau, kap, theta, w.real - 1.0


def perturbed_profile(base: MomentumProfile, eps: float, a: float = 0.5, b: float = 1.0,
                      n_steps: int = 4000) -> PerturbedProfile:
    """Re-solve the profile with the B-field at scale eps, solving for x2.

    The dHYM equation for ``B = eps(a omega + b alpha + d(h theta))`` reduces to a
    first-order ODE for ``kappa = b / p + h``.  The scalar equation becomes
    ``Scal = K + 2|gamma| Re`` with ``|gamma| = kappa2 / (2 b^2 eps^2)``, and the
    four boundary conditions fix ``(C0, C1, K, x2)``.
    """
    if not base.coupled:
        raise ValueError("the perturbed profile starts from a coupled solution")
    if eps == 0.0:
        return PerturbedProfile(0.0, base.x2, base.tau, base.phi, np.zeros_like(base.tau), 0.0,
                                0.0, base.positive, -base.kappa1)
    x1 = base.x1
    gamma = base.kappa2 / (2.0 * b * b * eps * eps)

    def shoot(x2):
        _check_params(x1, x2)
        p, _ = fiber_polynomial(x1, x2)
        S = base_curvature(x1, x2, base.weights)
        tau, kap, theta, re_m1 = _dhym_profile(x1, x2, eps, a, b, n_steps)
        dF0 = 2.0 * p(-1.0)
        pt = p(tau)
        # F'' = p (S - K' - 2 gamma (Re - 1)) with K' = K + 2 gamma
        src = pt * (S(tau) - 2.0 * gamma * re_m1)
        _, y, dy = _integrate_samples(tau, src)
        _, y1, dy1 = _integrate_samples(tau, -pt)
        end0 = np.array([y[-1] + 2.0 * dF0, dy[-1] + dF0 + 2.0 * p(1.0)])
        col = np.array([y1[-1], dy1[-1]])
        # K' from the derivative condition, then F(1) is the remaining residual
        Kp = -end0[1] / col[1]
        return end0[0] + Kp * col[0], (tau, y + Kp * y1 + dF0 * (tau + 1.0), pt, kap, theta, Kp)

    try:
        x2 = newton(lambda x: shoot(x)[0], base.x2, tol=1e-13, maxiter=50)
    except (RuntimeError, PoleParameter) as exc:
        raise NewtonDivergence(f"x2 iteration failed: {exc}", float("nan")) from exc
    _, (tau, F, pt, kap, theta, Kp) = shoot(x2)
    if abs(shoot(x2)[0]) > 1e-9:
        raise NewtonDivergence("x2 iteration did not converge", abs(shoot(x2)[0]))
    p, _ = fiber_polynomial(x1, x2)
    phi = F / pt
    hfield = kap - b / pt
    positive = bool(np.all(phi[1:-1] > 0))
    return PerturbedProfile(eps, float(x2), tau, phi, hfield, theta, float(abs(hfield[-1])),
                            positive, float(Kp - 2.0 * gamma))


def _integrate_samples(tau: np.ndarray, g: np.ndarray):
    """Integrate y'' = g twice from zero data using samples at uniform nodes.

    Piecewise-cubic (Simpson-type) accumulation: the integrand is smooth.
    """
    from scipy.interpolate import CubicSpline

    cs = CubicSpline(tau, g)
    d1 = cs.antiderivative(1)
    d2 = cs.antiderivative(2)
    t0 = tau[0]
    dy = d1(tau) - d1(t0)
    y = d2(tau) - d2(t0) - (tau - t0) * d1(t0)
    return tau, y, dy
