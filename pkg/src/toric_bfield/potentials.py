"""Symplectic potentials, metric grids, the Abreu operator, harmonic B-fields
and the toric energy functionals.

A potential is ``u = u0 + phi + c0 + <c, y>`` where ``u0 = 1/2 sum l_k log l_k``
is handled in closed form and ``phi`` is a smooth correction sampled on a
:class:`~toric_bfield.grid.BoxGrid`.

B-fields are represented by their moment map ``G : P -> R^n`` (the gradient in
the complex coordinates ``x = du`` of a potential of B).  The Kahler form itself
has ``G(y) = y``.  The endomorphism ``omega^{-1} B`` is similar to the Jacobian
``E = DG`` and an exact change ``B -> B + dd^c f`` is ``G -> G + U grad f``
with ``U`` the inverse Hessian of u.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, NotNormalized, SingularHessian, SlopeMismatch, UnsupportedPolytope
from .grid import BoxGrid
from .polytope import DelzantPolytope, triangulate
from .quadrature import graded_radial_simplex_rule


# ------------------------------------------------------------------ closed forms

def _xlogx(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = t[pos] * np.log(t[pos])
    return out


def guillemin_value(P: DelzantPolytope, y: np.ndarray) -> np.ndarray:
    return 0.5 * _xlogx(P.ell(y)).sum(axis=-1)


def guillemin_gradient(P: DelzantPolytope, y: np.ndarray) -> np.ndarray:
    ell = P.ell(y)
    return 0.5 * (np.log(ell) + 1.0) @ P.normals


def guillemin_hessian(P: DelzantPolytope, y: np.ndarray) -> np.ndarray:
    ell = P.ell(y)
    nu = P.normals.astype(float)
    return 0.5 * np.einsum("...k,ki,kj->...ij", 1.0 / ell, nu, nu)


def guillemin_logdet(P: DelzantPolytope, y: np.ndarray) -> np.ndarray:
    return np.linalg.slogdet(guillemin_hessian(P, y))[1]


# ------------------------------------------------------------------ potentials

@dataclass(frozen=True)
class SymplecticPotential:
    polytope: DelzantPolytope
    grid: BoxGrid | None = None
    phi: np.ndarray | None = None
    c0: float = 0.0
    c: np.ndarray | None = None

    def __post_init__(self):
        if self.phi is not None:
            if self.grid is None:
                raise ValueError("a correction field needs a grid")
            phi = np.asarray(self.phi, dtype=float)
            if phi.shape != (self.grid.size,):
                raise ValueError("correction has the wrong number of grid values")
            object.__setattr__(self, "phi", phi)
        c = np.zeros(self.polytope.n) if self.c is None else np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)

    @property
    def correction(self) -> np.ndarray:
        if self.grid is None:
            raise UnsupportedPolytope("potential carries no grid")
        return np.zeros(self.grid.size) if self.phi is None else self.phi

    def with_grid(self, grid: BoxGrid) -> "SymplecticPotential":
        return replace(self, grid=grid)

    def value(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        out = guillemin_value(self.polytope, y) + self.c0 + y @ self.c
        if self.phi is not None:
            out = out + self.grid.interpolator(self.phi)(y)
        return out

    def gradient_at(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        g = guillemin_gradient(self.polytope, y) + self.c
        if self.phi is not None:
            dphi = self.grid.gradient(self.phi)
            g = g + np.stack([self.grid.interpolator(dphi[:, i])(y) for i in range(self.polytope.n)],
                             axis=-1)
        return g

    def normalized(self, p0: np.ndarray | None = None) -> "SymplecticPotential":
        """Shift the affine part so that u(p0) = 0 and du(p0) = 0."""
        p0 = self.polytope.barycenter if p0 is None else np.asarray(p0, float)
        base = replace(self, c0=0.0, c=np.zeros(self.polytope.n))
        g = base.gradient_at(p0)[0]
        v = base.value(p0)[0]
        return replace(self, c=-g, c0=-(v - g @ p0))

    def is_normalized(self, p0: np.ndarray | None = None, tol: float = 1e-10) -> bool:
        p0 = self.polytope.barycenter if p0 is None else np.asarray(p0, float)
        return bool(abs(self.value(p0)[0]) < tol and np.all(np.abs(self.gradient_at(p0)[0]) < tol))


def guillemin_potential(P: DelzantPolytope, grid: BoxGrid | None = None) -> SymplecticPotential:
    return SymplecticPotential(P, grid=grid)


# ------------------------------------------------------------------ metric grids

@dataclass(frozen=True)
class MetricGrid:
    grid: BoxGrid
    hessian: np.ndarray        # (N, n, n)
    inverse: np.ndarray        # (N, n, n)
    abreu: np.ndarray          # (N,)
    x: np.ndarray              # complex coordinates du at the nodes (N, n)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes


def metric_grid(u: SymplecticPotential) -> MetricGrid:
    g = u.grid
    if g is None:
        raise UnsupportedPolytope("metric grids need a box grid")
    y = g.nodes
    phi = u.correction
    H = guillemin_hessian(u.polytope, y) + g.hessian(phi)
    sign, logdet = np.linalg.slogdet(H)
    if np.any(sign <= 0) or np.any(~np.isfinite(logdet)):
        raise SingularHessian("Hessian is not positive definite at some node")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian("Hessian is not positive definite at some node") from exc
    U = np.linalg.inv(H)
    x = guillemin_gradient(u.polytope, y) + g.gradient(phi) + u.c
    return MetricGrid(g, H, U, abreu_from_inverse(g, U), x)


def abreu_from_inverse(g: BoxGrid, U: np.ndarray) -> np.ndarray:
    out = np.zeros(g.size)
    for i in range(g.n):
        for j in range(g.n):
            out -= g.DD[i][j] @ U[:, i, j]
    return out


def abreu_weak(g: BoxGrid, U: np.ndarray, U_ref: np.ndarray, A_ref: np.ndarray) -> np.ndarray:
    """Abreu value in summation-by-parts form relative to a reference metric.

    ``A_ref + W^{-1} sum_ij D_ij^T W (U_ref - U)_ij``.  Its linearization is
    self-adjoint for the grid weights and annihilates affine functions from the
    left, mirroring the boundary behaviour of the continuous operator.
    """
    out = A_ref.copy()
    for i in range(g.n):
        for j in range(g.n):
            out += (g.DD[i][j].T @ (g.weights * (U_ref[:, i, j] - U[:, i, j]))) / g.weights
    return out


def abreu_operator(u: SymplecticPotential, mesh: BoxGrid | None = None) -> np.ndarray:
    """The scalar field -u^{ij}_{,ij} at the grid nodes."""
    if mesh is not None:
        u = u.with_grid(mesh)
    return metric_grid(u).abreu


# ------------------------------------------------------------------ B-fields

def class_interval(grid: BoxGrid, support: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis interval of the support polytope of a class on a box fan."""
    P = grid.polytope
    lo = np.empty(P.n)
    hi = np.empty(P.n)
    for k, nu in enumerate(P.normals):
        i = int(np.flatnonzero(nu)[0])
        if nu[i] > 0:
            lo[i] = -support[k]
        else:
            hi[i] = support[k]
    return lo, hi


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def class_moment_map(grid: BoxGrid, support: np.ndarray, x: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference moment map of a class as a function of the complex coordinates.

    Axis i gets ``lo_i + (hi_i - lo_i) sigmoid(2 x_i)``.  For the Guillemin
    metric of a box ``y_i = lo + (hi - lo) sigmoid(2 x_i)``, so this is the affine
    map of the box onto the class interval.  Returns G and its first and second
    derivatives in ``x_i``.
    """
    glo, ghi = class_interval(grid, support)
    s = _sigmoid(2.0 * x)
    G = glo + (ghi - glo) * s
    dG = 2.0 * (ghi - glo) * s * (1.0 - s)
    ddG = 4.0 * (ghi - glo) * s * (1.0 - s) * (1.0 - 2.0 * s)
    return G, dG, ddG


def class_endomorphism(m: MetricGrid, support: np.ndarray) -> np.ndarray:
    """omega^{-1} B of the reference representative: diag(dG/dx) times the Hessian."""
    _, dG, _ = class_moment_map(m.grid, support, m.x)
    return dG[:, :, None] * m.hessian


def exact_operators(grid: BoxGrid, U: np.ndarray) -> list[list[sp.csr_matrix]]:
    """Sparse maps f -> (D(U grad f))_ij in product-rule form.

    ``M_ij f = sum_k (D_j U_ik) D_k f + U_ik D_jk f``.  Using the compact second
    difference for ``D_jj`` keeps grid-scale oscillations out of the kernel.
    """
    n = grid.n
    DU = [[[grid.D[j] @ U[:, i, k] for k in range(n)] for j in range(n)] for i in range(n)]
    M = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = sp.csr_matrix((grid.size, grid.size))
            for k in range(n):
                acc = acc + sp.diags(DU[i][j][k]) @ grid.D[k] + sp.diags(U[:, i, k]) @ grid.DD[j][k]
            M[i][j] = acc.tocsr()
    return M


def exact_endomorphism(grid: BoxGrid, U: np.ndarray, f: np.ndarray) -> np.ndarray:
    M = exact_operators(grid, U)
    n = grid.n
    E = np.empty((grid.size, n, n))
    for i in range(n):
        for j in range(n):
            E[:, i, j] = M[i][j] @ f
    return E


def laplacian_matrix(grid: BoxGrid, U: np.ndarray) -> sp.csr_matrix:
    """f -> trace of D(U grad f), the Laplacian of the metric."""
    M = exact_operators(grid, U)
    return sum((M[i][i] for i in range(1, grid.n)), M[0][0]).tocsr()


def elementary_symmetric(E: np.ndarray) -> np.ndarray:
    """(e1, ..., en) of the eigenvalues of each matrix in a stack."""
    n = E.shape[-1]
    tr = np.trace(E, axis1=-2, axis2=-1)
    if n == 1:
        return tr[:, None]
    E2 = E @ E
    tr2 = np.trace(E2, axis1=-2, axis2=-1)
    e2 = 0.5 * (tr**2 - tr2)
    if n == 2:
        return np.stack([tr, e2], axis=-1)
    return np.stack([tr, e2, np.linalg.det(E)], axis=-1)


def pencil_eigenvalues(E: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Eigenvalues of E from the symmetric pencil (sym(H E), H)."""
    L = np.linalg.cholesky(H)
    S = H @ E
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    Linv = np.linalg.inv(L)
    K = Linv @ S @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (K + np.swapaxes(K, -1, -2)))


@dataclass(frozen=True)
class HarmonicBField:
    E: np.ndarray            # omega^{-1} B at the nodes (N, n, n)
    f: np.ndarray            # mean-zero correction potential
    rho: float               # discrete compatibility defect
    trace: np.ndarray        # Lambda_omega B at the nodes


def class_slope(grid: BoxGrid, support: np.ndarray) -> float:
    glo, ghi = class_interval(grid, support)
    return float(np.sum((ghi - glo) / (grid.hi - grid.lo)))


def harmonic_representative(u: SymplecticPotential, E_ref: np.ndarray, z: float,
                            support: np.ndarray | None = None, tol: float = 1e-10) -> HarmonicBField:
    """Solve tr(E_ref + D(U grad f)) = z + rho with f of mean zero.

    ``rho`` absorbs the discrete compatibility defect.  If the class support
    numbers are passed, ``z`` is checked against the cohomological slope.
    """
    g = u.grid
    if support is not None and abs(class_slope(g, support) - z) > 1e-8:
        raise SlopeMismatch(f"slope {z} does not match the class slope {class_slope(g, support)}")
    m = metric_grid(u)
    M = exact_operators(g, m.inverse)
    L = sum((M[i][i] for i in range(1, g.n)), M[0][0]).tocsr()
    trace_ref = np.trace(E_ref, axis1=1, axis2=2)
    w = g.weights / g.weights.sum()
    one = np.ones((g.size, 1))
    A = sp.bmat([[L, sp.csr_matrix(-one)], [sp.csr_matrix(w[None, :]), None]], format="csc")
    rhs = np.concatenate([z - trace_ref, [0.0]])
    sol = spla.spsolve(A, rhs)
    if not np.all(np.isfinite(sol)):
        raise NonConvergence("harmonic solve produced non-finite values")
    f, rho = sol[:-1], float(sol[-1])
    E = E_ref.copy()
    for i in range(g.n):
        for j in range(g.n):
            E[:, i, j] += M[i][j] @ f
    trace = np.trace(E, axis1=1, axis2=2)
    if np.max(np.abs(trace - z - rho)) > max(tol, 1e4 * np.finfo(float).eps * np.abs(rhs).max()):
        raise NonConvergence("harmonic solve did not reach tolerance")
    return HarmonicBField(E, f, rho, trace)


def reference_B(u: SymplecticPotential, support: np.ndarray) -> np.ndarray:
    return class_endomorphism(metric_grid(u), support)


def ricci_endomorphism(m: MetricGrid, u: SymplecticPotential) -> np.ndarray:
    """omega^{-1} Ric, normalized so that its trace is the Abreu value over 4.

    Ric has moment map ``U grad log det H / 4``.  The singular Guillemin part of
    ``log det H`` is differentiated in closed form.
    """
    g = m.grid
    y = g.nodes
    P = u.polytope
    H0 = guillemin_hessian(P, y)
    nu = P.normals.astype(float)
    ell = P.ell(y)
    dH0 = -0.5 * np.einsum("ak,ki,kj,kc->acij", 1.0 / ell**2, nu, nu, nu)
    grad0 = np.einsum("aij,acji->ac", np.linalg.inv(H0), dH0)
    smooth = np.linalg.slogdet(m.hessian)[1] - np.linalg.slogdet(H0)[1]
    grad = grad0 + g.gradient(smooth)
    G = 0.25 * np.einsum("aij,aj->ai", m.inverse, grad)
    n = g.n
    E = np.empty((g.size, n, n))
    for i in range(n):
        for j in range(n):
            E[:, i, j] = g.D[j] @ G[:, i]
    return E


# ------------------------------------------------------------------ functionals

def _field_evaluator(A, P: DelzantPolytope, grid: BoxGrid | None):
    if callable(A):
        return A
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        return lambda y: np.full(len(y), float(A))
    if grid is None or A.shape != (grid.size,):
        raise ValueError("grid field does not match the grid")
    interp = grid.interpolator(A)
    return lambda y: interp(y)


@dataclass(frozen=True)
class GradedRule:
    interior_nodes: np.ndarray
    interior_weights: np.ndarray
    facet_nodes: tuple
    facet_weights: tuple


def graded_rule(P: DelzantPolytope, levels: int = 4, q: int = 12) -> GradedRule:
    """Cone decomposition from the barycentre with dyadic grading toward every facet."""
    from .polytope import facet_simplices
    from .quadrature import graded_interval_rule, simplex_rule

    apex = P.barycenter
    xs, ws, fx, fw = [], [], [], []
    for k in range(P.n_facets):
        fxs, fws = [], []
        for s in facet_simplices(P, k):
            x, w = graded_radial_simplex_rule(apex, s, levels=levels, q=q)
            xs.append(x)
            ws.append(w)
            if P.n == 1:
                fxs.append(s.copy())
                fws.append(np.ones(1) * P.facet_sigma_density[k])
            else:
                bx, bw = simplex_rule(s, 2 * q - 2)
                fxs.append(bx)
                fws.append(bw * P.facet_sigma_density[k])
        fx.append(np.concatenate(fxs))
        fw.append(np.concatenate(fws))
    return GradedRule(np.concatenate(xs), np.concatenate(ws), tuple(fx), tuple(fw))


def _potential_values(u: SymplecticPotential, y: np.ndarray) -> np.ndarray:
    return u.value(y)


def l_functional(P: DelzantPolytope, A, u, rule: GradedRule | None = None,
                 grid: BoxGrid | None = None) -> float:
    """L_A(u) = int_dP u dsigma - int_P A u dmu for a potential or callable u."""
    rule = rule or graded_rule(P)
    if isinstance(u, SymplecticPotential):
        grid = grid or u.grid
        fu = u.value
    else:
        fu = u
    Af = _field_evaluator(A, P, grid)
    bnd = sum(float(np.dot(w, fu(x))) for x, w in zip(rule.facet_nodes, rule.facet_weights))
    y = rule.interior_nodes
    return bnd - float(np.dot(rule.interior_weights, Af(y) * fu(y)))


def log_det_integral(u: SymplecticPotential, rule: GradedRule) -> float:
    """int_P log det D^2 u, split as the closed-form Guillemin part plus a smooth part."""
    y = rule.interior_nodes
    vals = guillemin_logdet(u.polytope, y)
    if u.phi is not None:
        g = u.grid
        hphi = g.hessian(u.phi)
        n = g.n
        Hp = np.empty((len(y), n, n))
        for i in range(n):
            for j in range(n):
                Hp[:, i, j] = g.interpolator(hphi[:, i, j])(y)
        H0 = guillemin_hessian(u.polytope, y)
        M = np.eye(n) + np.linalg.solve(H0, Hp)
        sign, ld = np.linalg.slogdet(M)
        if np.any(sign <= 0):
            raise SingularHessian("potential is not convex at a quadrature node")
        vals = vals + ld
    return float(np.dot(rule.interior_weights, vals))


@dataclass(frozen=True)
class Energies:
    L_A: float
    F_A: float
    d1: float


def energy_functionals(P: DelzantPolytope, A, u: SymplecticPotential, u0: SymplecticPotential,
                       levels: int = 4, tol: float = 1e-8) -> Energies:
    p0 = P.barycenter
    for name, v in (("u", u), ("u0", u0)):
        if not v.is_normalized(p0, tol):
            raise NotNormalized(f"{name} is not normalized at the barycentre")
    rule = graded_rule(P, levels=levels)
    L = l_functional(P, A, u, rule)
    F = -log_det_integral(u, rule) + L
    y = rule.interior_nodes
    d1 = (math.pi / 2) ** P.n * float(np.dot(rule.interior_weights, np.abs(u0.value(y) - u.value(y))))
    return Energies(L, F, d1)
