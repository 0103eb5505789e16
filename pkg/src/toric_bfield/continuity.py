"""Newton continuation for the coupled scalar-curvature / dHYM system on boxes.

The Abreu operator is taken in summation-by-parts form so that its
linearization is self-adjoint and orthogonal to affine functions; the plain
strong form lets boundary-concentrated modes reach the affine directions.

Unknowns on the grid are the potential correction ``phi`` and the B-field
potential ``f``; the B-field is ``omega^{-1} B = eps(I + delta(E_eta + D(U grad f)))``.
The equations at parameter t are

    scalar:  Abreu(phi) - A0 - kappa t q(e) + sum_a mu_a Y_a = 0
    dHYM:    Im(e^{-i theta} prod(1 + i lam)) - rho = 0

with ``Y = (1, y - p0)``, a free affine multiplier ``mu`` (the extremal
field), a free compatibility constant ``rho``, and gauge rows fixing the
affine part of ``phi`` and the mean of ``f``.  On surfaces ``q = e1`` and
``kappa = 4|gamma| / sin theta``; in other dimensions ``q`` is the real part of
the rotated product and ``kappa = 4|gamma|``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dhym import (bounds_check, cofactor_weights, complex_ratio, EigenProfile, phase_residual,
                   phase_residual_coefficients)
from .errors import (HypothesisViolated, NewtonDivergence, SingularHessian, SingularLinearization,
                     StabilityPrecondition, StepCollapse, ToricBFieldError)
from .grid import BoxGrid
from .kstability import affine_basis, coupling_bounds, gram_matrix, lambda_estimate
from .polytope import DelzantPolytope, build_polytope, measures, polytope_from_json
from .potentials import (class_moment_map, class_slope, elementary_symmetric, exact_operators,
                         guillemin_gradient, guillemin_hessian, harmonic_representative,
                         SymplecticPotential, abreu_from_inverse, abreu_weak, metric_grid)
from .toric_classes import AngleData, ToricClass, invariants_bundle


@dataclass
class PathConfig:
    polytope: DelzantPolytope
    eta: np.ndarray                     # support numbers of the B-field direction
    gamma_abs: float = 1.0
    eps: float = 0.05
    delta: float = 0.1
    grid: int = 64
    tol: float = 1e-9
    omega: np.ndarray | None = None     # support numbers of [omega]; default the polytope
    t_step: float = 0.1
    min_step: float = 1e-6
    max_newton: int = 20
    check_preconditions: bool = True
    lambda_level: int = 3

    def to_json(self) -> dict:
        return {
            "polytope": self.polytope.to_json(),
            "eta": [float(v) for v in self.eta],
            "omega": None if self.omega is None else [float(v) for v in self.omega],
            "gamma": self.gamma_abs, "eps": self.eps, "delta": self.delta, "grid": self.grid,
            "tol": self.tol, "t_step": self.t_step, "min_step": self.min_step,
            "max_newton": self.max_newton, "check_preconditions": self.check_preconditions,
            "lambda_level": self.lambda_level,
        }

    @classmethod
    def from_json(cls, doc) -> "PathConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        P = polytope_from_json(doc["polytope"])
        return cls(P, np.asarray(doc["eta"], float), float(doc.get("gamma", 1.0)),
                   float(doc.get("eps", 0.05)), float(doc.get("delta", 0.1)),
                   int(doc.get("grid", 64)), float(doc.get("tol", 1e-9)),
                   None if doc.get("omega") is None else np.asarray(doc["omega"], float),
                   float(doc.get("t_step", 0.1)), float(doc.get("min_step", 1e-6)),
                   int(doc.get("max_newton", 20)), bool(doc.get("check_preconditions", True)),
                   int(doc.get("lambda_level", 3)))


@dataclass(frozen=True)
class ContinuityState:
    t: float
    phi: np.ndarray
    f: np.ndarray
    mu: np.ndarray
    rho: float
    xi: np.ndarray
    zeta: np.ndarray
    scalar_residual: float
    dhym_residual: float
    trace_margin: float
    path_bound: float
    newton_iterations: int
    residual_history: tuple
    lambda_prime: float

    def summary(self) -> dict:
        return {
            "t": self.t, "scalar_residual": self.scalar_residual,
            "dhym_residual": self.dhym_residual, "trace_margin": self.trace_margin,
            "path_bound": self.path_bound, "newton_iterations": self.newton_iterations,
            "xi": [float(v) for v in self.xi], "zeta": [float(v) for v in self.zeta],
            "rho": self.rho, "lambda_prime": self.lambda_prime,
        }


class CoupledSystem:
    """Discrete residual and analytic Jacobian of the coupled system."""

    def __init__(self, cfg: PathConfig):
        P = cfg.polytope
        self.cfg = cfg
        self.P = P
        self.g = BoxGrid(P, cfg.grid)
        self.n = P.n
        omega = -P.offsets if cfg.omega is None else np.asarray(cfg.omega, float)
        self.omega_support = omega
        self.eta = np.asarray(cfg.eta, float)
        w = ToricClass(P, omega)
        B = ToricClass(P, cfg.eps * (omega + cfg.delta * self.eta))
        self.angle: AngleData = invariants_bundle(w, B, cfg.gamma_abs)
        self.theta = self.angle.theta_hat
        self.A0 = self.angle.A0
        self.z_target = class_slope(self.g, omega + cfg.delta * self.eta)
        y = self.g.nodes
        self.y = y
        self.p0 = P.barycenter
        self.Y = affine_basis(y, self.p0)
        self.W = self.g.weights
        self.gram = gram_matrix(self.g, self.p0)
        self.H0 = guillemin_hessian(P, y)
        self.x0 = guillemin_gradient(P, y)
        self.U0 = np.linalg.inv(self.H0)
        self.A_ref = abreu_from_inverse(self.g, self.U0)
        self.coef_d = phase_residual_coefficients(self.n, self.theta)
        if self.n == 2:
            s = math.sin(self.theta)
            self.coef_q = np.array([1.0, 0.0])
            self.kappa_scale = 4.0 / s
        else:
            self.coef_q = np.array([np.real(np.exp(-1j * self.theta) * 1j ** k)
                                    for k in range(1, self.n + 1)])
            self.kappa_scale = 4.0
        N = self.g.size
        self.N = N
        self.sizes = (N, N, self.n + 1, 1)

    # ---------------------------------------------------------------- packing
    def split(self, X):
        N, n = self.N, self.n
        return X[:N], X[N:2 * N], X[2 * N:2 * N + n + 1], X[2 * N + n + 1]

    def pack(self, phi, f, mu, rho):
        return np.concatenate([phi, f, mu, [rho]])

    # ---------------------------------------------------------------- fields
    def fields(self, phi, f):
        g, n = self.g, self.n
        H = self.H0 + g.hessian(phi)
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise SingularHessian("Hessian lost positivity") from exc
        U = np.linalg.inv(H)
        x = self.x0 + g.gradient(phi)
        _, dG, ddG = class_moment_map(g, self.eta, x)
        M = exact_operators(g, U)
        Eeta = dG[:, :, None] * H
        Ef = np.empty_like(H)
        for i in range(n):
            for j in range(n):
                Ef[:, i, j] = M[i][j] @ f
        E = self.cfg.eps * (np.eye(n) + self.cfg.delta * (Eeta + Ef))
        e = elementary_symmetric(E)
        return dict(H=H, U=U, x=x, dG=dG, ddG=ddG, M=M, E=E, e=e,
                    abreu=abreu_weak(g, U, self.U0, self.A_ref))

    def q_field(self, e):
        ee = e
        return ee @ self.coef_q if self.n == 2 else np.real(
            np.exp(-1j * self.theta) * complex_ratio(e))

    def residual(self, X, t, F=None):
        phi, f, mu, rho = self.split(X)
        F = F or self.fields(phi, f)
        kap = self.kappa_scale * self.cfg.gamma_abs * t if t != 0.0 else 0.0
        rs = F["abreu"] - self.A0 + self.Y @ mu
        if kap:
            rs = rs - kap * self.q_field(F["e"])
        rd = phase_residual(F["e"], self.theta) - rho
        if self.cfg.delta == 0.0:
            # B = eps omega does not see f; pin f instead of leaving the block empty
            rd = rd + f
        gauge_phi = self.Y.T @ (self.W * phi)
        gauge_f = np.array([self.W @ f])
        return np.concatenate([rs, rd, gauge_phi, gauge_f])

    # ---------------------------------------------------------------- Jacobian
    def jacobian(self, X, t, F=None):
        g, n, N = self.g, self.n, self.N
        eps, delta = self.cfg.eps, self.cfg.delta
        phi, f, mu, rho = self.split(X)
        F = F or self.fields(phi, f)
        U, H, M = F["U"], F["H"], F["M"]
        DD, D = g.DD, g.D
        # dU_ik = W[i][k] dphi
        W = [[None] * n for _ in range(n)]
        for i in range(n):
            for k in range(n):
                acc = None
                for a in range(n):
                    for b in range(n):
                        term = sp.diags(U[:, i, a] * U[:, b, k]) @ DD[a][b]
                        acc = term if acc is None else acc + term
                W[i][k] = (-acc).tocsr()
        dA = None
        for i in range(n):
            for j in range(n):
                term = -(DD[i][j].T @ W[i][j])
                dA = term if dA is None else dA + term
        Df = [D[k] @ f for k in range(n)]
        DDf = [[DD[j][k] @ f for k in range(n)] for j in range(n)]
        dE_phi = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                acc = sp.diags(F["ddG"][:, i] * H[:, i, j]) @ D[i] + sp.diags(F["dG"][:, i]) @ DD[i][j]
                for k in range(n):
                    acc = acc + (sp.diags(Df[k]) @ D[j] + sp.diags(DDf[j][k])) @ W[i][k]
                dE_phi[i][j] = (eps * delta) * acc
        dE_f = [[(eps * delta) * M[i][j] for j in range(n)] for i in range(n)]

        def trace_op(C, blocks):
            out = None
            for i in range(n):
                for j in range(n):
                    term = sp.diags(C[:, j, i]) @ blocks[i][j]
                    out = term if out is None else out + term
            return out

        Cd = cofactor_weights(F["E"], F["e"], self.coef_d)
        Jd_phi = trace_op(Cd, dE_phi)
        Jd_f = trace_op(Cd, dE_f) if delta != 0.0 else sp.identity(N, format="csr")
        kap = self.kappa_scale * self.cfg.gamma_abs * t if t != 0.0 else 0.0
        Js_phi = dA
        Js_f = sp.csr_matrix((N, N))
        if kap:
            Cq = cofactor_weights(F["E"], F["e"], self.coef_q)
            Js_phi = Js_phi - kap * trace_op(Cq, dE_phi)
            Js_f = -kap * trace_op(Cq, dE_f)
        Yw = sp.csr_matrix((self.Y * self.W[:, None]).T)
        rows = [
            [Js_phi, Js_f, sp.csr_matrix(self.Y), None],
            [Jd_phi, Jd_f, None, sp.csr_matrix(-np.ones((N, 1)))],
            [Yw, None, None, None],
            [None, sp.csr_matrix(self.W[None, :]), None, None],
        ]
        return sp.bmat(rows, format="csc")

    # ---------------------------------------------------------------- Newton
    def newton(self, X0, t, tol=None, max_iter=None):
        tol = self.cfg.tol if tol is None else tol
        max_iter = self.cfg.max_newton if max_iter is None else max_iter
        X = X0.copy()
        F = self.fields(*self.split(X)[:2])
        R = self.residual(X, t, F)
        nr = float(np.max(np.abs(R)))
        history = [nr]
        it = 0
        while nr > tol:
            if it >= max_iter:
                raise NewtonDivergence("Newton iteration did not converge", nr)
            J = self.jacobian(X, t, F)
            try:
                with np.errstate(all="raise"):
                    dX = spla.spsolve(J, -R)
            except Exception as exc:  # singular factorization
                raise SingularLinearization("linearization is singular",
                                            _smallest_singular_value(J)) from exc
            if not np.all(np.isfinite(dX)):
                raise SingularLinearization("linearization is singular",
                                            _smallest_singular_value(J))
            step = 1.0
            for _ in range(9):
                Xt = X + step * dX
                try:
                    Ft = self.fields(*self.split(Xt)[:2])
                    Rt = self.residual(Xt, t, Ft)
                    nt = float(np.max(np.abs(Rt)))
                except SingularHessian:
                    nt = math.inf
                if nt < nr:
                    break
                step *= 0.5
            else:
                raise NewtonDivergence("backtracking exhausted", nr)
            X, F, R, nr = Xt, Ft, Rt, nt
            history.append(nr)
            it += 1
        return X, F, history

    # ---------------------------------------------------------------- diagnostics
    def xi(self, e):
        """L2(dmu) projection of the trace e1 onto affine functions."""
        return np.linalg.solve(self.gram, self.Y.T @ (self.W * e[:, 0]))

    def state(self, X, F, t, history, lambda_prime) -> ContinuityState:
        phi, f, mu, rho = self.split(X)
        R = self.residual(X, t, F)
        N = self.N
        e = F["e"]
        xi = self.xi(e)
        kap = self.kappa_scale * self.cfg.gamma_abs * t
        zeta = mu - kap * xi
        T = math.tan(self.theta)
        q = e[:, 0] - e[:, 2] if self.n == 3 else e[:, 0]
        margin = float(np.min(T - q))
        path_bound = float(t * np.max(e[:, 0]) / math.sin(self.theta))
        return ContinuityState(t, phi.copy(), f.copy(), mu.copy(), float(rho), xi, zeta,
                               float(np.max(np.abs(R[:N]))), float(np.max(np.abs(R[N:2 * N]))),
                               margin, path_bound, len(history) - 1, tuple(history),
                               lambda_prime)

    def initial_guess(self, phi=None, f=None) -> np.ndarray:
        N = self.N
        phi = np.zeros(N) if phi is None else np.asarray(phi, float)
        if f is None:
            u = SymplecticPotential(self.P, self.g, phi)
            m = metric_grid(u)
            _, dG, _ = class_moment_map(self.g, self.eta, m.x)
            harm = harmonic_representative(u, dG[:, :, None] * m.hessian,
                                           class_slope(self.g, self.eta))
            f = harm.f
        X = self.pack(phi, np.asarray(f, float), np.zeros(self.n + 1), 0.0)
        F = self.fields(phi, X[N:2 * N])
        rs = F["abreu"] - self.A0
        mu = -np.linalg.solve(self.gram, self.Y.T @ (self.W * rs))
        rho = float(self.W @ phase_residual(F["e"], self.theta) / self.W.sum())
        return self.pack(phi, X[N:2 * N], mu, rho)


def _smallest_singular_value(J, max_dense: int = 4096) -> float:
    """Dense SVD for small systems; NaN when the system is too large to factor densely."""
    if J.shape[0] > max_dense:
        return float("nan")
    return float(np.linalg.svd(J.toarray(), compute_uv=False)[-1])


@dataclass
class PathResult:
    states: list
    completed: bool
    angle: AngleData
    lambda_estimate: float
    gamma_max: float
    config: PathConfig

    @property
    def final(self) -> ContinuityState:
        return self.states[-1]


def stability_certificate(sys: CoupledSystem, lam: float, t: float, e: np.ndarray) -> float:
    """lambda' for A = A0 + 4|gamma| t (r - tildeA) with the a priori radius bound."""
    cos = math.cos(sys.theta)
    R = 1.0 / cos if cos > 0 else math.inf
    spread = max(R - sys.angle.r_hat, 0.0)
    alpha = 4.0 * sys.cfg.gamma_abs * t
    return lam + 4.0 * alpha * spread * (lam - 1.0) / sys.A0


def run_path(cfg: PathConfig, phi0=None, f0=None, on_state=None) -> PathResult:
    """Continuation from t = 0 to t = 1 with adaptive steps."""
    sys = CoupledSystem(cfg)
    lam = lambda_estimate(cfg.polytope, sys.A0, cfg.lambda_level).lambda_estimate \
        if cfg.polytope.n == 2 else float("nan")
    gmax = float("inf")
    if cfg.polytope.n == 2 and 0 < lam < 1:
        gmax = coupling_bounds(sys.A0, lam, 1.0, 0.0, sys.angle.s_hat, cfg.eps).gamma_max
    if cfg.check_preconditions:
        if cfg.polytope.n == 2 and not lam > 0:
            raise StabilityPrecondition(f"polytope stability estimate {lam} is not positive")
        if cfg.gamma_abs >= gmax:
            raise StabilityPrecondition(f"|gamma| = {cfg.gamma_abs} exceeds the bound {gmax}")
        if math.sin(sys.theta) <= 0 or math.cos(sys.theta) <= 0:
            raise StabilityPrecondition("the topological angle must lie in (0, pi/2)")

    states = []
    X0 = sys.initial_guess(phi0, f0)
    X, F, hist = sys.newton(X0, 0.0)
    st = sys.state(X, F, 0.0, hist, lam)
    _check_state(st)
    states.append(st)
    if on_state:
        on_state(st)
    t, dt, ok = 0.0, cfg.t_step, 0
    while t < 1.0:
        t_new = min(1.0, t + dt)
        try:
            lp = stability_certificate(sys, lam, t_new, F["e"])
            if not lp > 0:
                raise StabilityPrecondition(f"stability certificate {lp} at t = {t_new}")
            Xn, Fn, hist = sys.newton(X, t_new)
            st = sys.state(Xn, Fn, t_new, hist, lp)
            _check_state(st)
        except (ToricBFieldError, np.linalg.LinAlgError) as exc:
            dt *= 0.5
            ok = 0
            if dt < cfg.min_step:
                margin = lp if isinstance(exc, StabilityPrecondition) else states[-1].trace_margin
                raise StepCollapse(f"step collapsed at t = {t}: {exc}", t, margin) from exc
            continue
        X, F, t = Xn, Fn, t_new
        states.append(st)
        if on_state:
            on_state(st)
        ok += 1
        if ok >= 2:
            dt *= 2.0
            ok = 0
    return PathResult(states, True, sys.angle, lam, gmax, cfg)


def _check_state(st: ContinuityState) -> None:
    if not st.trace_margin > 0:
        raise HypothesisViolated(f"trace bound margin {st.trace_margin} is not positive",
                                 hypothesis="trace")


def newton_step(sys: CoupledSystem, X: np.ndarray, t: float) -> np.ndarray:
    """One undamped Newton update."""
    F = sys.fields(*sys.split(X)[:2])
    R = sys.residual(X, t, F)
    J = sys.jacobian(X, t, F)
    return X + spla.spsolve(J, -R)


def residuals_and_xi(sys: CoupledSystem, state: ContinuityState):
    X = sys.pack(state.phi, state.f, state.mu, state.rho)
    F = sys.fields(state.phi, state.f)
    R = sys.residual(X, state.t, F)
    return R[sys.N:2 * sys.N], R[:sys.N], sys.xi(F["e"])
