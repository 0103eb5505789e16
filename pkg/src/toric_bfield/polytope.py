"""Delzant polytopes, the measures dmu and dsigma, quadrature and mixed volumes.

A polytope is stored through primitive inward normals ``nu_k`` and offsets
``c_k``; the affine functions ``l_k(y) = <y, nu_k> - c_k`` are nonnegative on it.

Boundary measure convention
---------------------------
On facet ``k`` the boundary measure is ``SIGMA_CALIBRATION / |nu_k|`` times
(n-1)-dimensional Lebesgue measure.  The constant ``SIGMA_CALIBRATION = 2``
is fixed by the integration-by-parts identity for the Guillemin potential
``u = 1/2 sum l_k log l_k``: on the unit interval the Abreu value is 4 and the
two endpoints must carry total mass 4.  The identity is re-checked by the test
suite on the square (grid 256^2).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay

from .errors import EmptyInterior, FanMismatch, NotDelzant, Unbounded
from .quadrature import simplex_rule

SIGMA_CALIBRATION = 2.0
_TOL = 1e-9


@dataclass(frozen=True)
class DelzantPolytope:
    normals: np.ndarray          # (m, n) integer
    offsets: np.ndarray          # (m,)
    vertices: np.ndarray         # (v, n)
    vertex_facets: tuple         # facet indices through each vertex
    facet_sigma_density: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.normals.shape[1]

    @property
    def n_facets(self) -> int:
        return self.normals.shape[0]

    def ell(self, y: np.ndarray) -> np.ndarray:
        """Facet functions at points ``y`` of shape (..., n); returns (..., m)."""
        return np.asarray(y) @ self.normals.T - self.offsets

    def contains(self, y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.all(self.ell(y) >= -tol, axis=-1)

    @property
    def barycenter(self) -> np.ndarray:
        return _barycenter(self)

    def facet_vertices(self, k: int) -> np.ndarray:
        idx = [i for i, fs in enumerate(self.vertex_facets) if k in fs]
        return self.vertices[idx]

    def is_box(self) -> bool:
        """True for axis-aligned boxes (products of intervals)."""
        m, n = self.normals.shape
        if m != 2 * n:
            return False
        for i in range(n):
            e = np.zeros(n, dtype=int)
            e[i] = 1
            if not (_has_row(self.normals, e) and _has_row(self.normals, -e)):
                return False
        return True

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for k, nu in enumerate(self.normals):
            i = int(np.flatnonzero(nu)[0])
            if nu[i] > 0:
                lo[i] = self.offsets[k]
            else:
                hi[i] = -self.offsets[k]
        return lo, hi

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "facets": [{"normal": [int(v) for v in nu], "offset": float(c)}
                       for nu, c in zip(self.normals, self.offsets)],
            "vertices": self.vertices.tolist(),
        }


def _has_row(a: np.ndarray, row: np.ndarray) -> bool:
    return bool(np.any(np.all(a == row, axis=1)))


def build_polytope(normals, offsets) -> DelzantPolytope:
    """Validate facet data and enumerate vertices.

    Raises NotDelzant, Unbounded or EmptyInterior.
    """
    normals = np.asarray(normals)
    offsets = np.asarray(offsets, dtype=float)
    if normals.ndim != 2 or normals.shape[0] == 0 or normals.shape[0] != offsets.shape[0]:
        raise ValueError("normals and offsets must be nonempty lists of equal length")
    if not np.allclose(normals, np.round(normals)):
        raise NotDelzant("normals must be integer vectors")
    normals = np.round(normals).astype(int)
    n = normals.shape[1]
    if n not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    for nu in normals:
        if math.gcd(*[abs(int(v)) for v in nu]) != 1:
            raise NotDelzant(f"normal {nu.tolist()} is not primitive")

    _check_bounded(normals, offsets)
    _check_interior(normals, offsets)

    verts, vfacets = [], []
    for combo in itertools.combinations(range(len(normals)), n):
        a = normals[list(combo)].astype(float)
        if abs(np.linalg.det(a)) < 0.5:
            continue
        y = np.linalg.solve(a, offsets[list(combo)])
        if np.all(normals @ y - offsets >= -_TOL):
            if any(np.allclose(y, v, atol=1e-9) for v in verts):
                continue
            verts.append(y)
            vfacets.append(tuple(int(k) for k in np.flatnonzero(np.abs(normals @ y - offsets) < 1e-8)))
    for y, fs in zip(verts, vfacets):
        if len(fs) != n:
            raise NotDelzant(f"vertex {y.tolist()} lies on {len(fs)} facets")
        det = round(np.linalg.det(normals[list(fs)].astype(float)))
        if abs(det) != 1:
            raise NotDelzant(f"normals at vertex {y.tolist()} have determinant {det}")
    used = set(itertools.chain.from_iterable(vfacets))
    if len(used) != len(normals):
        raise NotDelzant("redundant facet inequality")
    density = SIGMA_CALIBRATION / np.linalg.norm(normals, axis=1)
    return DelzantPolytope(normals, offsets, np.array(verts), tuple(vfacets), density)


def _check_bounded(normals: np.ndarray, offsets: np.ndarray) -> None:
    n = normals.shape[1]
    for i in range(n):
        for sgn in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = -sgn
            res = linprog(c, A_ub=-normals.astype(float), b_ub=-offsets,
                          bounds=[(None, None)] * n, method="highs")
            if res.status == 3:
                raise Unbounded("facet inequalities do not bound a polytope")
            if res.status == 2:
                raise EmptyInterior("facet inequalities are infeasible")


def _check_interior(normals: np.ndarray, offsets: np.ndarray) -> None:
    # Chebyshev ball: maximize r subject to <y, nu> - r |nu| >= c
    m, n = normals.shape
    norms = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([-normals.astype(float), norms[:, None]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=a_ub, b_ub=-offsets, bounds=[(None, None)] * n + [(0, None)],
                  method="highs")
    if res.status != 0 or res.x[-1] <= 1e-10:
        raise EmptyInterior("polytope has empty interior")


def polytope_from_json(doc) -> DelzantPolytope:
    if isinstance(doc, str):
        doc = json.loads(doc)
    facets = doc["facets"]
    p = build_polytope([f["normal"] for f in facets], [f["offset"] for f in facets])
    if "n" in doc and int(doc["n"]) != p.n:
        raise ValueError("declared dimension does not match the normals")
    return p


# ---------------------------------------------------------------- triangulation

def triangulate(p: DelzantPolytope) -> list[np.ndarray]:
    """Simplices (each (n+1, n)) covering P."""
    if p.n == 1:
        v = np.sort(p.vertices[:, 0])
        return [np.array([[v[0]], [v[-1]]])]
    tri = Delaunay(p.vertices)
    return [p.vertices[s] for s in tri.simplices]


def facet_simplices(p: DelzantPolytope, k: int) -> list[np.ndarray]:
    fv = p.facet_vertices(k)
    if p.n == 1:
        return [fv]
    if p.n == 2:
        # order the two endpoints
        return [fv[:2]]
    # n == 3: triangulate inside the facet plane
    origin = fv[0]
    basis, _ = np.linalg.qr((fv[1:] - origin).T)
    loc = (fv - origin) @ basis[:, :2]
    tri = Delaunay(loc)
    return [fv[s] for s in tri.simplices]


def _simplex_volume(s: np.ndarray) -> float:
    k = s.shape[0] - 1
    if k == 0:
        return 1.0
    e = (s[1:] - s[0]).T
    return math.sqrt(abs(np.linalg.det(e.T @ e))) / math.factorial(k)


def facet_volumes(p: DelzantPolytope) -> np.ndarray:
    return np.array([sum(_simplex_volume(s) for s in facet_simplices(p, k))
                     for k in range(p.n_facets)])


def _barycenter(p: DelzantPolytope) -> np.ndarray:
    tot = 0.0
    acc = np.zeros(p.n)
    for s in triangulate(p):
        v = _simplex_volume(s)
        tot += v
        acc += v * s.mean(axis=0)
    return acc / tot


@dataclass(frozen=True)
class QuadratureScheme:
    interior_nodes: np.ndarray
    interior_weights: np.ndarray
    facet_nodes: tuple            # per facet (m_k, n)
    facet_weights: tuple          # per facet, already multiplied by the sigma density
    h: float
    order: int

    def integrate(self, f) -> float:
        return float(np.dot(self.interior_weights, f(self.interior_nodes)))

    def integrate_boundary(self, f) -> float:
        return float(sum(np.dot(w, f(x)) for x, w in zip(self.facet_nodes, self.facet_weights)))


def measures(p: DelzantPolytope, order: int = 6) -> tuple[float, float, QuadratureScheme]:
    """Return (vol_mu, vol_sigma, scheme) for polytope ``p``."""
    if order < 1:
        raise ValueError("order must be positive")
    nodes, weights = [], []
    for s in triangulate(p):
        x, w = simplex_rule(s, order)
        nodes.append(x)
        weights.append(w)
    fnodes, fweights = [], []
    for k in range(p.n_facets):
        xs, ws = [], []
        for s in facet_simplices(p, k):
            x, w = simplex_rule(s, order)
            xs.append(x)
            ws.append(w * p.facet_sigma_density[k])
        fnodes.append(np.concatenate(xs))
        fweights.append(np.concatenate(ws))
    interior_w = np.concatenate(weights)
    vol_mu = float(sum(_simplex_volume(s) for s in triangulate(p)))
    vol_sigma = float(np.dot(p.facet_sigma_density, facet_volumes(p)))
    diam = float(np.max(np.ptp(p.vertices, axis=0)))
    scheme = QuadratureScheme(np.concatenate(nodes), interior_w, tuple(fnodes), tuple(fweights),
                              diam, order)
    return vol_mu, vol_sigma, scheme


# ---------------------------------------------------------------- mixed volumes

def offset_polytope_volume(normals: np.ndarray, offsets: np.ndarray) -> float:
    """Lebesgue volume of {<y, nu_k> >= c_k}; zero when lower dimensional or empty."""
    normals = np.asarray(normals, float)
    offsets = np.asarray(offsets, float)
    n = normals.shape[1]
    if n == 1:
        lo = max([c / v for v, c in zip(normals[:, 0], offsets) if v > 0], default=-np.inf)
        hi = min([c / v for v, c in zip(normals[:, 0], offsets) if v < 0], default=np.inf)
        return max(0.0, hi - lo)
    pts = []
    for combo in itertools.combinations(range(len(normals)), n):
        a = normals[list(combo)]
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        y = np.linalg.solve(a, offsets[list(combo)])
        if np.all(normals @ y - offsets >= -1e-10):
            pts.append(y)
    if len(pts) <= n:
        return 0.0
    pts = np.array(pts)
    try:
        return float(ConvexHull(pts).volume)
    except Exception:  # qhull rejects flat point sets
        return 0.0


def is_nef(normals: np.ndarray, offsets: np.ndarray, cones, tol: float = 1e-10) -> bool:
    """Nef test: each maximal cone's vertex satisfies every other inequality."""
    normals = np.asarray(normals, float)
    offsets = np.asarray(offsets, float)
    for fs in cones:
        a = normals[list(fs)]
        y = np.linalg.solve(a, offsets[list(fs)])
        if np.any(normals @ y - offsets < -tol * (1 + np.abs(offsets).max())):
            return False
    return True


def _polarize(normals, offset_list) -> float:
    n = len(offset_list)
    total = 0.0
    for r in range(1, n + 1):
        for sub in itertools.combinations(range(n), r):
            c = sum(offset_list[i] for i in sub)
            total += (-1) ** (n - r) * offset_polytope_volume(normals, c)
    return total / math.factorial(n)


def nef_decomposition(p: DelzantPolytope, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Write ``offsets`` as ``plus - minus`` with both offset vectors nef over p's fan."""
    offsets = np.asarray(offsets, float)
    if is_nef(p.normals, offsets, p.vertex_facets):
        return offsets, np.zeros_like(offsets)
    ref = p.offsets
    for scale in (1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 256.0, 1024.0, 1e4, 1e5):
        plus = offsets + scale * ref
        if is_nef(p.normals, plus, p.vertex_facets):
            return plus, scale * ref
    from .errors import NoNefDecomposition
    raise NoNefDecomposition("no nef decomposition found")


def mixed_volume(offset_vectors, reference: DelzantPolytope | None = None, normals=None) -> float:
    """Symmetric multilinear mixed volume, normalized by MV(P, ..., P) = vol(P).

    ``offset_vectors`` are offsets over a common normal fan (``reference`` or
    ``normals``).  Non-nef entries are expanded multilinearly after writing
    each as a difference of nef offset vectors.
    """
    if reference is not None:
        normals = reference.normals
    if normals is None:
        raise FanMismatch("a common fan is required")
    normals = np.asarray(normals)
    vecs = [np.asarray(v, float) for v in offset_vectors]
    n = normals.shape[1]
    if len(vecs) != n:
        raise FanMismatch(f"need {n} offset vectors, got {len(vecs)}")
    for v in vecs:
        if v.shape != (normals.shape[0],):
            raise FanMismatch("offset vector length does not match the fan")
    if reference is None:
        return _polarize(normals, vecs)
    parts = [nef_decomposition(reference, v) for v in vecs]
    total = 0.0
    for signs in itertools.product((0, 1), repeat=n):
        chosen = [parts[i][s] for i, s in enumerate(signs)]
        if any(not np.any(c) for c in chosen):
            continue
        total += (-1) ** sum(signs) * _polarize(normals, chosen)
    return total
