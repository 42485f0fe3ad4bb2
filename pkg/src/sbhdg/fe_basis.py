"""Quadrature and orthonormal polynomial bases on the reference triangle
(0,0), (1,0), (0,1) and the reference segment [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

MAX_EXACTNESS = 40


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) on the triangle, (n,) on the segment
    weights: np.ndarray
    exactness: int


def _check_exactness(exactness: int) -> int:
    if exactness < 0 or exactness > MAX_EXACTNESS:
        raise ValueError(f"unsupported quadrature exactness {exactness} (0..{MAX_EXACTNESS})")
    return max(1, math.ceil((exactness + 1) / 2))


@lru_cache(maxsize=None)
def segment_quadrature(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    n = _check_exactness(exactness)
    x, w = legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, exactness)


@lru_cache(maxsize=None)
def triangle_quadrature(exactness: int) -> QuadratureRule:
    """Collapsed (Stroud conical product) Gauss rule on the reference triangle.

    Uses the Duffy map (u, v) -> (u, v(1-u)) with Gauss-Jacobi in u for the
    (1-u) Jacobian and Gauss-Legendre in v. All weights are positive.
    """
    n = _check_exactness(exactness)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    xl, wl = legendre.leggauss(n)
    v = 0.5 * (xl + 1.0)
    wv = 0.5 * wl
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    wts = np.outer(wu, wv).ravel()
    return QuadratureRule(pts, wts, exactness)


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """Graded ordering: x^(d-j) y^j for d = 0..degree, j = 0..d."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def reference_monomial_integral(a: int, b: int) -> float:
    """Integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@lru_cache(maxsize=None)
def _orthonormal_coefficients(degree: int) -> np.ndarray:
    exps = monomial_exponents(degree)
    gram = np.array([[reference_monomial_integral(a1 + a2, b1 + b2) for a2, b2 in exps]
                     for a1, b1 in exps])
    chol = np.linalg.cholesky(gram)
    return np.linalg.inv(chol)


class TriangleBasis:
    """Orthonormal basis of P_degree on the reference triangle.

    Obtained by Gram-Schmidt (Cholesky) on graded monomials against the exact
    monomial integrals, so the first dim P_{d-1} functions span P_{d-1}.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.degree = degree
        self.exponents = monomial_exponents(degree)
        self.coefficients = _orthonormal_coefficients(degree)

    @property
    def dim(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2

    def values(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        mono = np.column_stack([x**a * y**b for a, b in self.exponents])
        return mono @ self.coefficients.T

    def gradients(self, pts) -> np.ndarray:
        """(npts, dim, 2) reference gradients."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        dx = np.column_stack([a * x ** max(a - 1, 0) * y**b for a, b in self.exponents])
        dy = np.column_stack([b * x**a * y ** max(b - 1, 0) for a, b in self.exponents])
        C = self.coefficients.T
        return np.stack([dx @ C, dy @ C], axis=-1)


class SegmentBasis:
    """Orthonormal shifted Legendre polynomials on [0, 1]."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.degree = degree

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        scale = np.sqrt(2.0 * np.arange(self.dim) + 1.0)
        return legendre.legvander(2.0 * s - 1.0, self.degree) * scale


@dataclass(frozen=True)
class CellBasis:
    """Scalar bases for the cell spaces: P_k (velocity-like) and P_{k-1}."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("polynomial degree k must be >= 1")

    @property
    def velocity(self) -> TriangleBasis:
        return TriangleBasis(self.k)

    @property
    def pressure(self) -> TriangleBasis:
        return TriangleBasis(self.k - 1)

    @property
    def facet(self) -> SegmentBasis:
        return SegmentBasis(self.k)


def eval_cell_basis(k: int, pts) -> tuple[np.ndarray, np.ndarray]:
    """Values (npts, dim) and reference gradients (npts, dim, 2) of P_k."""
    if k < 1:
        raise ValueError("polynomial degree k must be >= 1")
    basis = TriangleBasis(k)
    return basis.values(pts), basis.gradients(pts)
