"""Polynomial bases and quadrature on the reference triangle and segment.

Reference triangle: T = {(x, y) : x >= 0, y >= 0, x + y <= 1} (area 1/2).
Reference segment:  [0, 1].

The triangle basis is the orthonormal Koornwinder-Dubiner modal basis,
ordered hierarchically by total degree so that changing the polynomial
degree of a representation is pure coefficient padding / truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

from .errors import ContractViolationError, UnsupportedOrderError

#: hard ceiling on quadrature strength (generous w.r.t. the p_max = 8 default)
MAX_STRENGTH = 40


def tri_dim(p: int) -> int:
    """Dimension of P_p on a triangle."""
    return (p + 1) * (p + 2) // 2


def seg_dim(p: int) -> int:
    """Dimension of P_p on a segment."""
    return p + 1


def tri_modes(p: int):
    """Mode index pairs (i, j), i+j <= p, ordered by total degree then i.

    The first tri_dim(q) entries for any q <= p are exactly the modes of
    the degree-q basis, which is what makes enrichment exact.
    """
    return [(i, k - i) for k in range(p + 1) for i in range(k + 1)]


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray   # (n, 2) on the triangle, (n,) on the segment
    weights: np.ndarray  # (n,), positive, reference measure


def _check_strength(strength: int):
    if strength < 1 or strength > MAX_STRENGTH:
        raise UnsupportedOrderError(
            f"quadrature strength {strength} outside supported range [1, {MAX_STRENGTH}]")


@lru_cache(maxsize=None)
def segment_gauss(strength: int) -> Quadrature:
    """Gauss-Legendre rule on [0, 1], exact for degree <= strength."""
    _check_strength(strength)
    n = (strength + 2) // 2  # 2n - 1 >= strength
    x, w = roots_jacobi(n, 0.0, 0.0)
    return Quadrature(points=(x + 1.0) / 2.0, weights=w / 2.0)


@lru_cache(maxsize=None)
def triangle_rule(strength: int) -> Quadrature:
    """Collapsed (Duffy) tensor rule on the reference triangle.

    Gauss-Legendre in the collapsed coordinate a and Gauss-Jacobi(1,0) in b;
    exact for all bivariate polynomials of total degree <= strength, with
    strictly interior points and positive weights.
    """
    _check_strength(strength)
    n = (strength + 2) // 2
    a, wa = roots_jacobi(n, 0.0, 0.0)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = ((1.0 + A) * (1.0 - B) / 4.0).ravel()
    y = ((1.0 + B) / 2.0).ravel()
    w = (np.outer(wa, wb) / 8.0).ravel()
    return Quadrature(points=np.column_stack([x, y]), weights=w)


def _jacobi_norm(n: int, alpha: float) -> float:
    # L2([-1,1], (1-x)^alpha) norm^2 of P_n^(alpha,0); the Gamma factors cancel
    # exactly for beta = 0.
    return 2.0 ** (alpha + 1.0) / (2.0 * n + alpha + 1.0)


def _jacobi_n(x, n, alpha):
    """Jacobi polynomial P_n^(alpha,0) normalized to unit weighted L2 norm."""
    return eval_jacobi(n, alpha, 0.0, x) / np.sqrt(_jacobi_norm(n, alpha))


def _djacobi_n(x, n, alpha):
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    d = 0.5 * (n + alpha + 1.0) * eval_jacobi(n - 1, alpha + 1.0, 1.0, x)
    return d / np.sqrt(_jacobi_norm(n, alpha))


class TriangleBasis:
    """Orthonormal modal basis of P_p on the reference triangle."""

    def __init__(self, p: int):
        if p < 0:
            raise ContractViolationError("degree must be >= 0")
        self.p = p
        self.dim = tri_dim(p)
        self.modes = tri_modes(p)

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (npts, dim). Safe on closed T minus the vertex (0,1)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        b = 2.0 * y - 1.0
        denom = 1.0 - y
        safe = denom > 1e-14
        a = np.where(safe, 2.0 * x / np.where(safe, denom, 1.0) - 1.0, -1.0)
        one_m_b = np.where(safe, 1.0 - b, 0.0)
        out = np.empty((pts.shape[0], self.dim))
        for col, (i, j) in enumerate(self.modes):
            fa = _jacobi_n(a, i, 0.0)
            gb = _jacobi_n(b, j, 2.0 * i + 1.0)
            out[:, col] = 2.0 * np.sqrt(2.0) * fa * gb * one_m_b ** i
        return out

    def grad(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (npts, dim, 2). Points must satisfy y < 1."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        if np.any(y >= 1.0 - 1e-13):
            raise ContractViolationError("gradient evaluation requires y < 1")
        b = 2.0 * y - 1.0
        a = 2.0 * x / (1.0 - y) - 1.0
        one_m_b = 1.0 - b
        out = np.empty((pts.shape[0], self.dim, 2))
        s2 = np.sqrt(2.0)
        for col, (i, j) in enumerate(self.modes):
            fa = _jacobi_n(a, i, 0.0)
            dfa = _djacobi_n(a, i, 0.0)
            gb = _jacobi_n(b, j, 2.0 * i + 1.0)
            dgb = _djacobi_n(b, j, 2.0 * i + 1.0)
            pow_i = one_m_b ** i
            # dfa vanishes identically for i = 0, so the (1-b)^(i-1) factor is
            # only ever multiplied by zero in that case (b < 1 at all points).
            pow_im1 = one_m_b ** (i - 1)
            # chain rule through the collapsed map a = 2(1+r)/(1-s) - 1, b = s
            dpsi_dr = 2.0 * dfa * gb * pow_im1
            dpsi_ds = dfa * gb * (1.0 + a) * pow_im1 \
                + fa * (dgb * pow_i - i * gb * pow_im1)
            # d/dx = 2 d/dr, d/dy = 2 d/ds on top of the biunit-triangle scaling
            out[:, col, 0] = 4.0 * s2 * dpsi_dr
            out[:, col, 1] = 4.0 * s2 * dpsi_ds
        return out


class SegmentBasis:
    """Orthonormal (shifted, normalized Legendre) basis of P_p on [0, 1]."""

    def __init__(self, p: int):
        if p < 0:
            raise ContractViolationError("degree must be >= 0")
        self.p = p
        self.dim = p + 1

    def eval(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = 2.0 * t - 1.0
        out = np.empty((t.shape[0], self.dim))
        for k in range(self.dim):
            out[:, k] = np.sqrt(2.0 * k + 1.0) * eval_jacobi(k, 0.0, 0.0, x)
        return out


@lru_cache(maxsize=None)
def triangle_basis(p: int) -> TriangleBasis:
    return TriangleBasis(p)


@lru_cache(maxsize=None)
def segment_basis(p: int) -> SegmentBasis:
    return SegmentBasis(p)


# ---------------------------------------------------------------------------
# Face parameterization on the reference triangle.
#
# Face 0: (0,0) -> (1,0); face 1: (1,0) -> (0,1); face 2: (0,1) -> (0,0).
# A face parameter s in [0,1] runs from the first to the second vertex.
# ---------------------------------------------------------------------------

_FACE_ENDS = ((np.array([0.0, 0.0]), np.array([1.0, 0.0])),
              (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
              (np.array([0.0, 1.0]), np.array([0.0, 0.0])))


def face_ref_points(face: int, s: np.ndarray) -> np.ndarray:
    """Reference coordinates of face parameter values s, shape (n, 2)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    p0, p1 = _FACE_ENDS[face]
    return p0[None, :] + s[:, None] * (p1 - p0)[None, :]


@lru_cache(maxsize=None)
def trace_table(p: int, face: int, a, b, nq: int) -> np.ndarray:
    """Values of the degree-p triangle basis along a face sub-interval.

    The sub-interval [a, b] of the face parameterization is sampled at the
    nq-point Gauss rule of the mortar reference coordinate; a and b must be
    hashable exact numbers (Fractions) so the table can be cached.
    """
    rule = segment_gauss(2 * nq - 1)
    t = rule.points
    s = float(a) + (float(b) - float(a)) * t
    return triangle_basis(p).eval(face_ref_points(face, s))


@lru_cache(maxsize=None)
def segment_table(p: int, nq: int) -> np.ndarray:
    """Values of the degree-p segment basis at the nq-point Gauss rule."""
    rule = segment_gauss(2 * nq - 1)
    return segment_basis(p).eval(rule.points)


def gauss_count(strength: int) -> int:
    """Number of Gauss points used for a segment rule of given strength."""
    _check_strength(strength)
    return (strength + 2) // 2


# ---------------------------------------------------------------------------
# Degree manipulation and mortar restriction.
# ---------------------------------------------------------------------------

def enrich(coeffs: np.ndarray, p_from: int, p_to: int) -> np.ndarray:
    """Embed coefficients of P_{p_from} into P_{p_to} (exact, nested spaces).

    coeffs has the modal dimension last: (..., tri_dim(p_from)).
    """
    if p_to < p_from:
        raise ContractViolationError("enrich target degree below source degree")
    pad = tri_dim(p_to) - tri_dim(p_from)
    if pad == 0:
        return np.array(coeffs, copy=True)
    pad_width = [(0, 0)] * (np.ndim(coeffs) - 1) + [(0, pad)]
    return np.pad(coeffs, pad_width)


def truncate(coeffs: np.ndarray, p_from: int, p_to: int) -> np.ndarray:
    """L2 projection of P_{p_from} coefficients onto P_{p_to} (truncation)."""
    if p_to > p_from:
        raise ContractViolationError("truncate target degree above source degree")
    return np.array(coeffs[..., : tri_dim(p_to)], copy=True)


def restrict_to_mortar(elem_coeffs: np.ndarray, face: int, sub, p_e: int,
                       p_K: int | None = None) -> np.ndarray:
    """Exact trace of an element polynomial on a face fragment.

    elem_coeffs: (..., tri_dim(p_K)) modal coefficients; sub = (a, b) is the
    face-parameter interval covered by the mortar. The result is expressed in
    the orthonormal segment basis of degree p_e on the mortar reference [0,1];
    because the trace lies in P_{p_e} exactly, this coincides with the L2
    projection onto the mortar space.
    """
    elem_coeffs = np.asarray(elem_coeffs, dtype=float)
    if p_K is None:
        nd = elem_coeffs.shape[-1]
        p_K = 0
        while tri_dim(p_K) < nd:
            p_K += 1
        if tri_dim(p_K) != nd:
            raise ContractViolationError("coefficient length is not a triangle dimension")
    if p_e < p_K:
        raise ContractViolationError("mortar degree below element degree")
    a, b = sub
    nq = gauss_count(2 * p_e + 2)
    rule = segment_gauss(2 * nq - 1)
    vals = elem_coeffs @ trace_table(p_K, face, a, b, nq).T        # (..., nq)
    seg = segment_table(p_e, nq)                                    # (nq, p_e+1)
    return (vals * rule.weights) @ seg
