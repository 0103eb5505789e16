"""Toric (1,1)-classes as support-number vectors, intersection numbers and angle data.

A class is stored by support numbers ``a_k`` over the facets of a reference
polytope: the associated polytope is ``{y : <y, nu_k> + a_k >= 0}``.  The first
Chern class has all ``a_k = 1``; the unit square ``[0,1]^2`` has
``a = (0, 0, 1, 1)``.  Support numbers differing by ``<v, nu_k> + const`` are
not identified here; only the intersection pairing sees the class.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FanMismatch, NotKahler, ZeroAngleVector
from .polytope import DelzantPolytope, mixed_volume, nef_decomposition


@dataclass(frozen=True)
class ToricClass:
    fan: DelzantPolytope
    support: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.support, dtype=float)
        if a.shape != (self.fan.n_facets,):
            raise FanMismatch(f"expected {self.fan.n_facets} support numbers, got {a.shape}")
        object.__setattr__(self, "support", a)

    @classmethod
    def of_polytope(cls, p: DelzantPolytope) -> "ToricClass":
        return cls(p, -p.offsets)

    @classmethod
    def first_chern(cls, p: DelzantPolytope) -> "ToricClass":
        return cls(p, np.ones(p.n_facets))

    @property
    def offsets(self) -> np.ndarray:
        return -self.support

    @property
    def nef_decomposition(self) -> tuple[np.ndarray, np.ndarray]:
        plus, minus = nef_decomposition(self.fan, self.offsets)
        return -plus, -minus

    def _check(self, other: "ToricClass"):
        if other.fan is not self.fan and not (
            other.fan.normals.shape == self.fan.normals.shape
            and np.array_equal(other.fan.normals, self.fan.normals)
        ):
            raise FanMismatch("classes live on different fans")

    def __add__(self, other: "ToricClass") -> "ToricClass":
        self._check(other)
        return ToricClass(self.fan, self.support + other.support)

    def __sub__(self, other: "ToricClass") -> "ToricClass":
        self._check(other)
        return ToricClass(self.fan, self.support - other.support)

    def __mul__(self, s: float) -> "ToricClass":
        return ToricClass(self.fan, s * self.support)

    __rmul__ = __mul__

    def __neg__(self) -> "ToricClass":
        return ToricClass(self.fan, -self.support)

    def is_kahler(self, tol: float = 1e-10) -> bool:
        """Ample test: each cone vertex lies strictly inside the other half-spaces."""
        nu = self.fan.normals.astype(float)
        scale = 1.0 + float(np.abs(self.support).max())
        for fs in self.fan.vertex_facets:
            idx = list(fs)
            y = np.linalg.solve(nu[idx], -self.support[idx])
            ell = nu @ y + self.support
            others = np.delete(ell, idx)
            if np.any(others <= tol * scale):
                return False
        return True

    def to_json(self) -> list[float]:
        return [float(v) for v in self.support]


def class_from_json(fan: DelzantPolytope, doc) -> ToricClass:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if isinstance(doc, dict):
        doc = doc["support"]
    return ToricClass(fan, np.asarray(doc, dtype=float))


def intersection_number(classes: list[ToricClass]) -> float:
    """n! times the multilinear mixed volume of the support polytopes."""
    if not classes:
        raise ValueError("need at least one class")
    fan = classes[0].fan
    for c in classes[1:]:
        classes[0]._check(c)
    if len(classes) != fan.n:
        raise FanMismatch(f"need {fan.n} classes, got {len(classes)}")
    mv = mixed_volume([c.offsets for c in classes], reference=fan)
    return math.factorial(fan.n) * mv


def class_moments(omega: ToricClass, B: ToricClass) -> np.ndarray:
    """m_j = [omega]^(n-j) [B]^j / [omega]^n for j = 0..n."""
    n = omega.fan.n
    top = intersection_number([omega] * n)
    return np.array([intersection_number([omega] * (n - j) + [B] * j) / top
                     for j in range(n + 1)])


def angle_vector(omega: ToricClass, B: ToricClass) -> tuple[float, float]:
    """(v1, v2) = (Re, Im) of the top power of [omega + iB]."""
    n = omega.fan.n
    total = 0j
    for j in range(n + 1):
        total += math.comb(n, j) * (1j ** j) * intersection_number([omega] * (n - j) + [B] * j)
    return float(total.real), float(total.imag)


@dataclass(frozen=True)
class AngleData:
    v1: float
    v2: float
    theta_hat: float
    s_hat: float
    z: float
    r_hat: float
    c: float
    gamma_abs: float

    @property
    def A0(self) -> float:
        return 4.0 * self.s_hat

    def to_json(self) -> dict:
        return asdict(self)


def average_scalar(omega: ToricClass) -> float:
    """Average Abreu-normalized scalar curvature s_hat = n c1.[w]^(n-1) / (2 [w]^n)."""
    n = omega.fan.n
    c1 = ToricClass.first_chern(omega.fan)
    top = intersection_number([omega] * n)
    return n * intersection_number([c1] + [omega] * (n - 1)) / (2.0 * top)


def invariants_bundle(omega: ToricClass, B: ToricClass, gamma_abs: float) -> AngleData:
    n = omega.fan.n
    if n not in (2, 3):
        raise ValueError("angle data is defined for n = 2 or 3")
    omega._check(B)
    if not omega.is_kahler():
        raise NotKahler("omega is not a Kahler class over the reference fan")
    v1, v2 = angle_vector(omega, B)
    norm = math.hypot(v1, v2)
    top = intersection_number([omega] * n)
    if norm <= 1e-14 * max(1.0, abs(top)):
        raise ZeroAngleVector("the angle vector vanishes")
    theta = math.atan2(v2, v1)
    z = n * intersection_number([omega] * (n - 1) + [B]) / top
    s_hat = average_scalar(omega)
    r_hat = norm / top
    return AngleData(v1=v1, v2=v2, theta_hat=theta, s_hat=s_hat, z=z, r_hat=r_hat,
                     c=s_hat - gamma_abs * r_hat, gamma_abs=float(gamma_abs))
