"""Cell-centred finite-difference grids on axis-aligned boxes.

Nodes sit at ``lo + (i + 1/2) h`` so every node is interior.  First derivatives
use centred differences with second-order one-sided stencils at the ends;
second derivatives use the compact three-point stencil with a four-point
one-sided stencil at the ends.  Mixed derivatives are products of first
derivative operators.  All operators act on arrays flattened in C order of
``meshgrid(..., indexing="ij")``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import UnsupportedPolytope
from .polytope import DelzantPolytope


def first_derivative_1d(N: int, h: float) -> sp.csr_matrix:
    if N < 4:
        raise ValueError("need at least 4 nodes per axis")
    d = sp.lil_matrix((N, N))
    for i in range(1, N - 1):
        d[i, i - 1] = -0.5
        d[i, i + 1] = 0.5
    d[0, 0:3] = [-1.5, 2.0, -0.5]
    d[N - 1, N - 3:N] = [0.5, -2.0, 1.5]
    return (d / h).tocsr()


def second_derivative_1d(N: int, h: float) -> sp.csr_matrix:
    if N < 4:
        raise ValueError("need at least 4 nodes per axis")
    d = sp.lil_matrix((N, N))
    for i in range(1, N - 1):
        d[i, i - 1:i + 2] = [1.0, -2.0, 1.0]
    d[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
    d[N - 1, N - 4:N] = [-1.0, 4.0, -5.0, 2.0]
    return (d / h**2).tocsr()


@dataclass(frozen=True)
class BoxGrid:
    """Uniform cell-centred grid with ``N`` cells per axis on a box polytope."""

    polytope: DelzantPolytope
    N: int
    lo: np.ndarray = field(init=False, repr=False)
    hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.polytope.is_box():
            raise UnsupportedPolytope("finite-difference grids need an axis-aligned box")
        lo, hi = self.polytope.box_bounds()
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return self.polytope.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / self.N

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [self.lo[i] + (np.arange(self.N) + 0.5) * self.h[i] for i in range(self.n)]

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.size, float(np.prod(self.h)))

    def _kron_axis(self, op: sp.spmatrix, axis: int) -> sp.csr_matrix:
        mats = [sp.identity(self.N, format="csr")] * self.n
        mats = list(mats)
        mats[axis] = op
        out = mats[0]
        for m in mats[1:]:
            out = sp.kron(out, m, format="csr")
        return out.tocsr()

    @cached_property
    def D(self) -> list[sp.csr_matrix]:
        return [self._kron_axis(first_derivative_1d(self.N, self.h[i]), i) for i in range(self.n)]

    @cached_property
    def DD(self) -> list[list[sp.csr_matrix]]:
        out = [[None] * self.n for _ in range(self.n)]
        for i in range(self.n):
            out[i][i] = self._kron_axis(second_derivative_1d(self.N, self.h[i]), i)
            for j in range(i):
                out[i][j] = out[j][i] = (self.D[i] @ self.D[j]).tocsr()
        return out

    def gradient(self, f: np.ndarray) -> np.ndarray:
        return np.stack([d @ f for d in self.D], axis=-1)

    def hessian(self, f: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.empty((self.size, n, n))
        for i in range(n):
            for j in range(i, n):
                out[:, i, j] = out[:, j, i] = self.DD[i][j] @ f
        return out

    def integrate(self, f: np.ndarray) -> float:
        return float(self.weights @ f)

    def reshape(self, f: np.ndarray) -> np.ndarray:
        return f.reshape((self.N,) * self.n)

    def interpolator(self, f: np.ndarray):
        """Cubic interpolant of a node field, extrapolating into the half-cell collar."""
        from scipy.interpolate import RegularGridInterpolator

        method = "cubic" if self.N >= 4 else "linear"
        return RegularGridInterpolator(tuple(self.axes), self.reshape(f), method=method,
                                       bounds_error=False, fill_value=None)
