"""Simplex quadrature rules and graded rules for ``l log l`` type integrands.

Rules are collapsed (conical) products of Gauss-Jacobi rules.  A rule with
``q`` points per direction integrates polynomials of total degree ``2q - 1``
exactly on any simplex.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def _jacobi01(q: int, a: int) -> tuple[np.ndarray, np.ndarray]:
    # Gauss rule on [0, 1] for the weight (1 - s)^a
    x, w = roots_jacobi(q, a, 0)
    return (x + 1.0) / 2.0, w / 2.0 ** (a + 1)


def points_for_order(order: int) -> int:
    return max(1, (order + 2) // 2)


@lru_cache(maxsize=None)
def reference_simplex_rule(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (m, n) and weights (m,) on the unit simplex {x >= 0, sum x <= 1}."""
    if n == 0:
        return np.zeros((1, 0)), np.ones(1)
    q = points_for_order(order)
    rules = [_jacobi01(q, n - 1 - d) for d in range(n)]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    s = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    x = np.empty_like(s)
    scale = np.ones(s.shape[0])
    for d in range(n):
        x[:, d] = scale * s[:, d]
        scale = scale * (1.0 - s[:, d])
    return x, w


def simplex_rule(vertices: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the k-simplex spanned by ``vertices`` (k+1, n) in R^n.

    Weights are with respect to k-dimensional Lebesgue measure on the simplex.
    """
    vertices = np.asarray(vertices, dtype=float)
    k = vertices.shape[0] - 1
    ref_x, ref_w = reference_simplex_rule(k, order)
    if k == 0:
        return vertices.copy(), np.ones(1)
    edges = (vertices[1:] - vertices[0]).T  # (n, k)
    gram = edges.T @ edges
    jac = np.sqrt(abs(np.linalg.det(gram)))
    nodes = vertices[0] + ref_x @ edges.T
    return nodes, ref_w * jac


def graded_interval_rule(levels: int = 4, q: int = 20, a: float = 0.0, b: float = 1.0
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on dyadically graded pieces of [a, b], refined at both ends."""
    cuts = [0.0]
    for j in range(levels, 0, -1):
        cuts.append(0.5 ** (j + 1))
    mids = [0.5]
    breaks = sorted(set(cuts + mids + [1.0 - c for c in cuts]))
    x, w = np.polynomial.legendre.leggauss(q)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        nodes.append(lo + (hi - lo) * (x + 1.0) / 2.0)
        weights.append(w * (hi - lo) / 2.0)
    t = np.concatenate(nodes)
    return a + (b - a) * t, np.concatenate(weights) * (b - a)


def graded_radial_simplex_rule(apex: np.ndarray, base: np.ndarray, levels: int = 4,
                               q: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the cone from ``apex`` over the (n-1)-simplex ``base``.

    The radial direction is graded dyadically toward the base, where the
    integrand is allowed to carry a logarithmic derivative singularity.  The
    base simplex itself is graded toward its own faces through a recursive
    call of the same construction in one dimension lower.
    """
    apex = np.asarray(apex, float)
    base = np.asarray(base, float)
    n = apex.shape[0]
    k = base.shape[0] - 1  # dimension of the base simplex
    if k == 0:
        bx, bw = base.copy(), np.ones(1)
    else:
        bx, bw = _graded_simplex(base, levels, q)
    # radial parameter s in [0, 1]: y = apex + s (b - apex), measure s^k ds dbase * height factor
    s, ws = graded_interval_rule(levels, q)
    keep = s > 0
    s, ws = s[keep], ws[keep]
    nodes = apex[None, None, :] + s[:, None, None] * (bx[None, :, :] - apex[None, None, :])
    # volume factor: vol(cone) = vol_k(base) * height / n, handled by the Jacobian below
    height = _height(apex, base)
    weights = (ws * s ** k)[:, None] * bw[None, :] * height
    return nodes.reshape(-1, n), weights.ravel()


def _height(apex: np.ndarray, base: np.ndarray) -> float:
    n = apex.shape[0]
    k = base.shape[0] - 1
    if k == n - 1:
        if k == 0:
            return float(abs(apex[0] - base[0, 0]))
        edges = (base[1:] - base[0]).T
        q, _ = np.linalg.qr(edges, mode="complete")
        normal = q[:, -1]
        return float(abs(np.dot(apex - base[0], normal)))
    raise ValueError("base must be a facet-dimensional simplex")


def _graded_simplex(simplex: np.ndarray, levels: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    # grade toward every face by splitting from the barycenter into cones over faces
    k = simplex.shape[0] - 1
    if k == 1:
        t, w = graded_interval_rule(levels, q)
        length = np.linalg.norm(simplex[1] - simplex[0])
        return simplex[0] + t[:, None] * (simplex[1] - simplex[0]), w * length
    bary = simplex.mean(axis=0)
    nodes, weights = [], []
    for drop in range(k + 1):
        face = np.delete(simplex, drop, axis=0)
        # work inside the affine span of the simplex
        origin = simplex[0]
        basis, _ = np.linalg.qr((simplex[1:] - origin).T)
        loc_face = (face - origin) @ basis
        loc_apex = (bary - origin) @ basis
        x, w = graded_radial_simplex_rule(loc_apex, loc_face, levels, q)
        nodes.append(origin + x @ basis.T)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)
