"""The stability functional L_A, LP estimates of the uniform stability constant,
the Futaki invariant with B-field and the coupling-constant bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (DegenerateDenominator, FutakiNonzero, InvalidLambda, LPUnbounded,
                     SingularGram, UnsupportedPolytope)
from .grid import BoxGrid
from .polytope import DelzantPolytope, measures
from .potentials import MetricGrid, elementary_symmetric
from .quadrature import simplex_rule
from .toric_classes import AngleData


# ------------------------------------------------------------------ A and Futaki

def affine_basis(y: np.ndarray, p0: np.ndarray) -> np.ndarray:
    """Columns 1, y - p0 evaluated at points y."""
    return np.hstack([np.ones((len(y), 1)), y - p0])


def boundary_affine_moments(P: DelzantPolytope, p0: np.ndarray) -> np.ndarray:
    """int_dP Y_a dsigma for the affine basis."""
    _, _, scheme = measures(P, order=2)
    return np.array([sum(float(w @ affine_basis(x, p0)[:, a])
                         for x, w in zip(scheme.facet_nodes, scheme.facet_weights))
                     for a in range(P.n + 1)])


def gram_matrix(grid: BoxGrid, p0: np.ndarray) -> np.ndarray:
    Y = affine_basis(grid.nodes, p0)
    return Y.T @ (grid.weights[:, None] * Y)


def radius_field(E: np.ndarray) -> np.ndarray:
    from .dhym import complex_ratio
    return np.abs(complex_ratio(elementary_symmetric(E)))


@dataclass(frozen=True)
class AField:
    A: np.ndarray          # values at the grid nodes
    tildeA: np.ndarray     # coefficients on 1, y - p0
    alpha: float


def A_function(m: MetricGrid, E: np.ndarray, gamma_abs: float, angle: AngleData) -> AField:
    """A = A0 + alpha (r - tildeA), alpha = 4|gamma|, with tildeA affine such that
    L_A vanishes on affine functions."""
    g = m.grid
    P = g.polytope
    p0 = P.barycenter
    alpha = 4.0 * gamma_abs
    A0 = angle.A0
    Y = affine_basis(g.nodes, p0)
    if alpha == 0.0:
        return AField(np.full(g.size, A0), np.zeros(P.n + 1), 0.0)
    G = gram_matrix(g, p0)
    if abs(np.linalg.det(G)) < 1e-14 * max(1.0, np.abs(G).max()) ** (P.n + 1):
        raise SingularGram("affine Gram matrix is singular")
    r = radius_field(E)
    bnd = boundary_affine_moments(P, p0)
    rhs = (Y.T @ (g.weights * (A0 + alpha * r)) - bnd) / alpha
    coef = np.linalg.solve(G, rhs)
    A = A0 + alpha * (r - Y @ coef)
    return AField(A, coef, alpha)


def futaki_bfield(m: MetricGrid, E: np.ndarray, gamma_abs: float, angle: AngleData) -> np.ndarray:
    """L_{A(omega)} on the affine basis, with A = A0 + 4|gamma|(r - mean r).

    The value is affine in |gamma|: F = F_classical + |gamma| F'.
    """
    g = m.grid
    P = g.polytope
    p0 = P.barycenter
    Y = affine_basis(g.nodes, p0)
    r = radius_field(E)
    rbar = g.integrate(r) / g.weights.sum()
    A = angle.A0 + 4.0 * gamma_abs * (r - rbar)
    return boundary_affine_moments(P, p0) - Y.T @ (g.weights * A)


def futaki_split(m: MetricGrid, E: np.ndarray, angle: AngleData) -> tuple[np.ndarray, np.ndarray]:
    """(F_classical, F') from evaluations at |gamma| = 0 and 1."""
    f0 = futaki_bfield(m, E, 0.0, angle)
    f1 = futaki_bfield(m, E, 1.0, angle)
    return f0, f1 - f0


# ------------------------------------------------------------------ LP estimate

@dataclass(frozen=True)
class CreaseMesh:
    vertices: np.ndarray        # (V, 2)
    triangles: np.ndarray       # (T, 3)
    interior_edges: list        # (a, b, c, d): edge ab, opposite vertices c, d
    boundary_edges: list        # (a, b, facet index)
    center: int
    level: int


def crease_mesh(P: DelzantPolytope, level: int) -> CreaseMesh:
    """Dyadic triangulation of a rectangle; every cell is cut by the same diagonal
    so that refinements are nested."""
    if P.n != 2 or not P.is_box():
        raise UnsupportedPolytope("the LP test family is built on rectangles")
    if level < 1:
        raise ValueError("mesh level must be at least 1")
    lo, hi = P.box_bounds()
    K = 2 ** level
    xs = np.linspace(lo[0], hi[0], K + 1)
    ys = np.linspace(lo[1], hi[1], K + 1)
    idx = np.arange((K + 1) ** 2).reshape(K + 1, K + 1)
    verts = np.array([[x, y] for x in xs for y in ys])
    tris = []
    for i in range(K):
        for j in range(K):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris)
    edge_map: dict = {}
    for t in tris:
        for k in range(3):
            e = tuple(sorted((int(t[k]), int(t[(k + 1) % 3]))))
            edge_map.setdefault(e, []).append(int(t[(k + 2) % 3]))
    interior, boundary = [], []
    for (a, b), opp in edge_map.items():
        if len(opp) == 2:
            interior.append((a, b, opp[0], opp[1]))
        else:
            mid = 0.5 * (verts[a] + verts[b])
            k = int(np.argmin(np.abs(P.ell(mid))))
            boundary.append((a, b, k))
    center = idx[K // 2, K // 2]
    return CreaseMesh(verts, tris, interior, boundary, int(center), level)


def _fold_row(mesh: CreaseMesh, a, b, c, d) -> np.ndarray:
    """Row r with r.f >= 0 iff the PL function is convex across edge ab."""
    V = mesh.vertices
    T = np.array([[V[a][0], V[b][0], V[c][0]], [V[a][1], V[b][1], V[c][1]], [1.0, 1.0, 1.0]])
    bc = np.linalg.solve(T, np.array([V[d][0], V[d][1], 1.0]))
    row = np.zeros(len(V))
    row[d] += 1.0
    row[a] -= bc[0]
    row[b] -= bc[1]
    row[c] -= bc[2]
    return row


def _field(A, grid: BoxGrid | None):
    if callable(A):
        return A
    A = np.asarray(A, float)
    if A.ndim == 0:
        return lambda y: np.full(len(y), float(A))
    if grid is None:
        raise ValueError("a grid field needs its grid")
    return grid.interpolator(A)


def load_vector(mesh: CreaseMesh, A, grid: BoxGrid | None = None, order: int = 6) -> np.ndarray:
    """a_v = int_P A phi_v dmu for the hat functions phi_v."""
    Af = _field(A, grid)
    out = np.zeros(len(mesh.vertices))
    ref_x, ref_w = simplex_rule(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), order)
    bary = np.stack([1.0 - ref_x[:, 0] - ref_x[:, 1], ref_x[:, 0], ref_x[:, 1]], axis=1)
    V = mesh.vertices
    for t in mesh.triangles:
        p = V[t]
        jac = abs(np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0]])))
        pts = bary @ p
        vals = Af(pts) * ref_w * jac
        out[t] += bary.T @ vals
    return out


def boundary_vector(mesh: CreaseMesh, P: DelzantPolytope) -> np.ndarray:
    """b_v = int_dP phi_v dsigma (exact for PL functions)."""
    out = np.zeros(len(mesh.vertices))
    V = mesh.vertices
    for a, b, k in mesh.boundary_edges:
        length = float(np.linalg.norm(V[a] - V[b]))
        w = 0.5 * length * P.facet_sigma_density[k]
        out[a] += w
        out[b] += w
    return out


@dataclass(frozen=True)
class StabilityReport:
    lambda_estimate: float
    vertices: np.ndarray
    values: np.ndarray
    creases: list               # [(a, b, fold)] interior edges with nonzero fold
    futaki_affine: np.ndarray
    feasible: bool
    mesh_level: int
    boundary: np.ndarray
    load: np.ndarray

    def evaluate(self, values: np.ndarray | None = None) -> float:
        f = self.values if values is None else values
        return float(self.boundary @ f - self.load @ f)

    def destabilizer(self) -> dict:
        return {
            "mesh_level": self.mesh_level,
            "vertices": self.vertices.tolist(),
            "values": self.values.tolist(),
            "creases": [[int(a), int(b), float(fold)] for a, b, fold in self.creases],
        }


def lambda_estimate(P: DelzantPolytope, A, mesh_level: int, grid: BoxGrid | None = None,
                    futaki_tol: float = 1e-8, renormalize: bool = False) -> StabilityReport:
    """Minimize L_A over convex PL functions on the crease mesh with f >= f(p0) = 0
    and int_dP f dsigma = 1.  The minimum is an upper bound for the uniform
    stability constant."""
    mesh = crease_mesh(P, mesh_level)
    V = mesh.vertices
    p0 = V[mesh.center]
    bvec = boundary_vector(mesh, P)
    avec = load_vector(mesh, A, grid)
    Y = affine_basis(V, p0)
    futaki = Y.T @ bvec - Y.T @ avec
    if renormalize and np.max(np.abs(futaki)) > futaki_tol:
        # add the affine function to A that removes the discrete Futaki defect
        loads = [load_vector(mesh, lambda y, b=b: affine_basis(y, p0)[:, b]) for b in range(3)]
        G = np.array([[Y[:, a] @ loads[b] for b in range(3)] for a in range(3)])
        coef = np.linalg.solve(G, futaki)
        avec = avec + sum(c * l for c, l in zip(coef, loads))
        futaki = Y.T @ bvec - Y.T @ avec
    if np.max(np.abs(futaki)) > futaki_tol:
        raise FutakiNonzero("L_A does not vanish on affine functions", futaki=futaki)
    nv = len(V)
    folds = np.array([_fold_row(mesh, *e) for e in mesh.interior_edges])
    A_eq = np.vstack([bvec, np.eye(nv)[mesh.center]])
    b_eq = np.array([1.0, 0.0])
    res = linprog(bvec - avec, A_ub=-folds, b_ub=np.zeros(len(folds)), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * nv, method="highs")
    if res.status == 3:
        raise LPUnbounded("the stability LP is unbounded")
    if res.status != 0:
        raise LPUnbounded(f"the stability LP failed: {res.message}")
    f = res.x
    fold_vals = folds @ f
    creases = [(e[0], e[1], float(v)) for e, v in zip(mesh.interior_edges, fold_vals) if v > 1e-9]
    value = float(bvec @ f - avec @ f)
    return StabilityReport(value, V, f, creases, futaki, True, mesh_level, bvec, avec)


def crease_values(P: DelzantPolytope, A, normal, offset: float, grid: BoxGrid | None = None,
                  order: int = 10) -> float:
    """L_A(f) / int_dP f dsigma for the crease function f = max(0, <normal, y> - offset)."""
    Af = _field(A, grid)
    normal = np.asarray(normal, float)
    f = lambda y: y @ normal - offset
    # f is polynomial on the cut piece, so the rules there are exact
    interior, bnd = _clipped_integrals(P, normal, offset, lambda y: Af(y) * f(y), f, order)
    return (bnd - interior) / bnd


def _clipped_vertices(nu: np.ndarray, c: np.ndarray, fixed: list[int]) -> np.ndarray:
    import itertools

    n = nu.shape[1]
    free = [k for k in range(len(nu)) if k not in fixed]
    pts = []
    for combo in itertools.combinations(free, n - len(fixed)):
        idx = list(fixed) + list(combo)
        a = nu[idx]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        y = np.linalg.solve(a, c[idx])
        if np.all(nu @ y - c >= -1e-12):
            pts.append(y)
    if not pts:
        return np.zeros((0, n))
    return np.unique(np.round(np.array(pts), 13), axis=0)


def _integrate_hull(pts: np.ndarray, func, order: int) -> float:
    """Integral over the convex hull of points spanning a k-flat (k = rank)."""
    from scipy.spatial import Delaunay

    if len(pts) < 2:
        return 0.0
    origin = pts[0]
    basis, sv, _ = np.linalg.svd((pts[1:] - origin).T, full_matrices=False)
    k = int(np.sum(sv > 1e-12))
    if len(pts) <= k or k == 0:
        return 0.0
    basis = basis[:, :k]
    loc = (pts - origin) @ basis
    if k == 1:
        order_idx = np.argsort(loc[:, 0])
        simplices = [[order_idx[0], order_idx[-1]]]
    else:
        simplices = Delaunay(loc).simplices
    total = 0.0
    for simplex in simplices:
        x, w = simplex_rule(pts[list(simplex)], order)
        total += float(w @ func(x))
    return total


def _clipped_integrals(P: DelzantPolytope, normal: np.ndarray, offset: float, interior_f,
                       boundary_f, order: int) -> tuple[float, float]:
    """Interior and sigma-boundary integrals over P cut by <normal, y> >= offset."""
    nu = np.vstack([P.normals.astype(float), normal])
    c = np.concatenate([P.offsets, [offset]])
    inner = _integrate_hull(_clipped_vertices(nu, c, []), interior_f, order)
    bnd = 0.0
    for k in range(P.n_facets):
        pts = _clipped_vertices(nu, c, [k])
        bnd += P.facet_sigma_density[k] * _integrate_hull(pts, boundary_f, order)
    return inner, bnd


# ------------------------------------------------------------------ coupling bounds

@dataclass(frozen=True)
class CouplingBounds:
    alpha_max: float
    gamma_max: float
    lambda_prime: float | None


def coupling_bounds(A0: float, lam: float, R: float, inf_tildeA: float, s_hat: float,
                    eps: float, alpha: float | None = None) -> CouplingBounds:
    if not (0.0 < lam < 1.0):
        raise InvalidLambda("lambda must lie in (0, 1)")
    spread = R - inf_tildeA
    if spread <= 0 or A0 == 0 or eps == 0:
        raise DegenerateDenominator("R - inf tildeA, A0 and eps must be nonzero")
    alpha_max = A0 * lam / (4.0 * (1.0 - lam) * spread)
    gamma_max = s_hat * lam / (2.0 * (1.0 - lam)) / eps
    lam_p = None
    if alpha is not None:
        lam_p = lam + 4.0 * alpha * spread * (lam - 1.0) / A0
    return CouplingBounds(alpha_max, gamma_max, lam_p)
