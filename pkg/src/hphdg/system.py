"""Friedrichs system descriptors, flux-matrix algebra, and assumption audits.

A one-field system is sum_k d_k(A_k z) + G z = f with symmetric A_k; a
two-field system splits z = (sigma, u) with the block structure

    A_k = [[0, B_k], [B_k^T, C_k]],   G = [[G_ss, G_su], [G_us, G_uu]],

constant B_k, and either full or partial coercivity. Coefficient callbacks
are vectorized over point arrays of shape (n, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionError, ContractViolationError, FluxHypothesisError

Array = np.ndarray


def _unit(n) -> Array:
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ContractViolationError(f"normal {n} is not unit length")
    return n


def const_fn(value):
    """Wrap a constant matrix/vector as a vectorized coefficient callback."""
    value = np.asarray(value, dtype=float)

    def fn(pts):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(value, (pts.shape[0],) + value.shape).copy()

    return fn


def zero_fn(*shape):
    def fn(pts):
        pts = np.atleast_2d(pts)
        return np.zeros((pts.shape[0],) + shape)

    return fn


# ---------------------------------------------------------------------------
# Boundary specifications.
# ---------------------------------------------------------------------------

@dataclass
class BoundarySpec:
    """Boundary condition on one piece of the boundary.

    For two-field systems kind is dirichlet/neumann/robin; data_fn(pts, nrm)
    returns the Dirichlet trace g_D or the flux-form data q with the
    convention  flux_u - (rho I + C) u = q  at the exact solution. rho_fn is
    the boundary parameter (alpha is +1 for Dirichlet, -1 otherwise). For
    one-field systems kind is "characteristic" and data_fn returns the full
    state data g used in (A - |A|) (z - g) = 0.
    """
    kind: str
    data_fn: Callable = None
    rho_fn: Callable = None


@dataclass
class OneFieldSystem:
    m: int
    A_fn: Callable            # pts -> (n, d, m, m)
    G_fn: Callable            # pts -> (n, m, m)
    f_fn: Callable            # pts -> (n, m)
    boundary_fn: Callable     # (midpoint, normal) -> BoundarySpec
    div_A_fn: Callable = None  # analytic sum_k d_k A_k, pts -> (n, m, m)
    name: str = "one-field"

    d: int = 2
    kind: str = "one-field"

    def normal_matrix(self, pts, nrm) -> Array:
        """A(x, n) = sum_k n_k A_k at points pts, shape (n, m, m)."""
        nrm = _unit(nrm)
        Ak = self.A_fn(np.atleast_2d(pts))
        return np.einsum("k,nkij->nij", nrm, Ak)

    def boundary_spec(self, midpoint, normal) -> BoundarySpec:
        return self.boundary_fn(midpoint, normal)


@dataclass
class TwoFieldSystem:
    m_sigma: int
    m_u: int
    B: Array                  # constant (d, m_sigma, m_u)
    C_fn: Callable            # pts -> (n, d, m_u, m_u)
    G_ss_fn: Callable
    f_sigma_fn: Callable
    f_u_fn: Callable
    boundary_fn: Callable     # (midpoint, normal) -> BoundarySpec
    G_su_fn: Callable = None
    G_us_fn: Callable = None
    G_uu_fn: Callable = None
    coercivity: str = "partial"           # "full" | "partial"
    flux_hypothesis: str = "F2"           # "F1" | "F2"
    Phi_fn: Callable = None               # (pts, nrm) -> (n, m_u, m_u), F1 only
    Psi_fn: Callable = None
    T_fn: Callable = None                 # closed-form stabilization; the F1
    # construction degenerates where the normal advection vanishes, but its
    # closed-form value extends smoothly and assembly uses it when provided
    div_C_fn: Callable = None             # analytic sum_k d_k C_k
    name: str = "two-field"

    d: int = 2
    kind: str = "two-field"

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        if self.B.shape != (self.d, self.m_sigma, self.m_u):
            raise ContractViolationError("B has wrong shape")
        if self.G_su_fn is None:
            self.G_su_fn = zero_fn(self.m_sigma, self.m_u)
        if self.G_us_fn is None:
            self.G_us_fn = zero_fn(self.m_u, self.m_sigma)
        if self.G_uu_fn is None:
            self.G_uu_fn = zero_fn(self.m_u, self.m_u)

    @property
    def m(self) -> int:
        return self.m_sigma + self.m_u

    def B_normal(self, nrm) -> Array:
        """B(n) = sum_k n_k B_k, shape (m_sigma, m_u)."""
        nrm = _unit(nrm)
        return np.einsum("k,kij->ij", nrm, self.B)

    def C_normal(self, pts, nrm) -> Array:
        """C(x, n) = sum_k n_k C_k, shape (n, m_u, m_u)."""
        nrm = _unit(nrm)
        return np.einsum("k,nkij->nij", nrm, self.C_fn(np.atleast_2d(pts)))

    def normal_matrix(self, pts, nrm) -> Array:
        """Full A(x, n) = [[0, B], [B^T, C]], shape (n, m, m)."""
        pts = np.atleast_2d(pts)
        Bn = self.B_normal(nrm)
        Cn = self.C_normal(pts, nrm)
        ms, mu = self.m_sigma, self.m_u
        A = np.zeros((pts.shape[0], self.m, self.m))
        A[:, :ms, ms:] = Bn
        A[:, ms:, :ms] = Bn.T
        A[:, ms:, ms:] = Cn
        return A

    def boundary_spec(self, midpoint, normal) -> BoundarySpec:
        return self.boundary_fn(midpoint, normal)

    def A_fn(self, pts):
        """Stacked A_k blocks for the unified audit path, (n, d, m, m)."""
        pts = np.atleast_2d(pts)
        Ck = self.C_fn(pts)
        ms, mu = self.m_sigma, self.m_u
        A = np.zeros((pts.shape[0], self.d, self.m, self.m))
        for k in range(self.d):
            A[:, k, :ms, ms:] = self.B[k]
            A[:, k, ms:, :ms] = self.B[k].T
            A[:, k, ms:, ms:] = Ck[:, k]
        return A

    def G_fn(self, pts):
        pts = np.atleast_2d(pts)
        ms = self.m_sigma
        G = np.zeros((pts.shape[0], self.m, self.m))
        G[:, :ms, :ms] = self.G_ss_fn(pts)
        G[:, :ms, ms:] = self.G_su_fn(pts)
        G[:, ms:, :ms] = self.G_us_fn(pts)
        G[:, ms:, ms:] = self.G_uu_fn(pts)
        return G


# ---------------------------------------------------------------------------
# Flux-matrix algebra.
# ---------------------------------------------------------------------------

def abs_flux(A: Array) -> Array:
    """|A| = R |Lambda| R^T of a symmetric matrix (batched over axis 0)."""
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    if single:
        A = A[None]
    if np.abs(A - np.swapaxes(A, -1, -2)).max() > 1e-11 * max(1.0, np.abs(A).max()):
        raise ContractViolationError("abs_flux requires a symmetric matrix")
    w, R = np.linalg.eigh(A)
    out = np.einsum("nik,nk,njk->nij", R, np.abs(w), R)
    return out[0] if single else out


def pos_neg_parts(A: Array):
    """(A+|A|)/2 and (A-|A|)/2 from one eigendecomposition (batched)."""
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    if single:
        A = A[None]
    w, R = np.linalg.eigh(A)
    pos = np.einsum("nik,nk,njk->nij", R, np.maximum(w, 0.0), R)
    neg = np.einsum("nik,nk,njk->nij", R, np.minimum(w, 0.0), R)
    if single:
        return pos[0], neg[0]
    return pos, neg


def boundary_matrices(system, pts, nrm):
    """A (and B, C for two-field systems) at points on a face with normal nrm."""
    A = system.normal_matrix(pts, nrm)
    if system.kind == "two-field":
        return {"A": A, "B": system.B_normal(nrm), "C": system.C_normal(pts, nrm)}
    return {"A": A}


def assembly_T(system: TwoFieldSystem, pts, nrm) -> Array:
    """Stabilization used in assembly: the closed form when available."""
    if system.T_fn is not None:
        return system.T_fn(np.atleast_2d(pts), nrm)
    return stabilization_T(system, pts, nrm)


def stabilization_T(system: TwoFieldSystem, pts, nrm, check: bool = True) -> Array:
    """Stabilization matrix of the reduced two-field flux, shape (n, m_u, m_u).

    Under hypothesis F2 (|A| has no sigma-u coupling) T is the uu-block of
    |A|; under F1 it is -(Phi^T B^T B Phi)^{-1} Phi^T B^T B (Psi + I) plus the
    uu-block. The declared hypothesis is validated pointwise when check=True;
    a degenerate Phi (vanishing normal advection) is a hard error here.
    """
    pts = np.atleast_2d(pts)
    nrm = _unit(nrm)
    A = system.normal_matrix(pts, nrm)
    absA = abs_flux(A)
    ms, mu = system.m_sigma, system.m_u
    A_ss = absA[:, :ms, :ms]
    A_su = absA[:, :ms, ms:]
    A_us = absA[:, ms:, :ms]
    A_uu = absA[:, ms:, ms:]
    scale = max(1.0, np.abs(absA).max())

    if system.flux_hypothesis == "F2":
        if check and np.abs(A_su).max() > 1e-10 * scale:
            i = int(np.abs(A_su).max(axis=(1, 2)).argmax())
            raise FluxHypothesisError(
                "F2 requires a vanishing sigma-u block of |A|",
                point=pts[i], normal=nrm)
        return A_uu.copy()

    if system.Phi_fn is None or system.Psi_fn is None:
        raise ContractViolationError("F1 systems must provide Phi and Psi")
    Bn = system.B_normal(nrm)
    Phi = system.Phi_fn(pts, nrm)
    Psi = system.Psi_fn(pts, nrm)
    if not np.all(np.isfinite(Phi)):
        i = int(np.argwhere(~np.isfinite(Phi).all(axis=(1, 2)))[0, 0])
        raise FluxHypothesisError("Phi is not finite (flux hypothesis degenerate)",
                                  point=pts[i], normal=nrm)
    if check:
        # (F1a): B Phi A_us = A_ss, (F1b): A_su = B Psi
        r1 = np.einsum("ij,njk,nkl->nil", Bn, Phi, A_us) - A_ss
        r2 = A_su - np.einsum("ij,njk->nik", Bn, Psi)
        if max(np.abs(r1).max(), np.abs(r2).max()) > 1e-8 * scale:
            i = int(np.abs(r1).max(axis=(1, 2)).argmax())
            raise FluxHypothesisError("F1 relations fail at a sample point",
                                      point=pts[i], normal=nrm)
    BtB = Bn.T @ Bn
    M = np.einsum("nji,jk,nkl->nil", Phi, BtB, Phi)       # Phi^T B^T B Phi
    rhs = np.einsum("nji,jk,nkl->nil", Phi, BtB,
                    Psi + np.eye(mu)[None])               # Phi^T B^T B (Psi+I)
    try:
        T = -np.linalg.solve(M, rhs) + A_uu
    except np.linalg.LinAlgError as exc:
        raise FluxHypothesisError(f"Phi^T B^T B Phi singular: {exc}",
                                  point=pts[0], normal=nrm) from exc
    return T


# ---------------------------------------------------------------------------
# Assumption auditing.
# ---------------------------------------------------------------------------

@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    value: float | None = None
    worst_point: tuple | None = None
    message: str = ""


@dataclass
class AssumptionReport:
    system: str
    checks: list[AssumptionCheck] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    mu0: float | None = None
    k0: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, *args, **kwargs):
        self.checks.append(AssumptionCheck(*args, **kwargs))

    def raise_if_failed(self):
        if not self.passed:
            failed = [c.name for c in self.checks if not c.passed]
            raise AssumptionError(f"assumption audit failed: {', '.join(failed)}")

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "passed": self.passed,
            "mu0": self.mu0,
            "k0": self.k0,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value,
                 "worst_point": None if c.worst_point is None else list(c.worst_point),
                 "message": c.message}
                for c in self.checks
            ],
            "warnings": list(self.warnings),
        }


def _divergence_A(system, pts, step: float):
    """sum_k d_k A_k by central differences unless provided analytically."""
    if getattr(system, "div_A_fn", None) is not None:
        return system.div_A_fn(np.atleast_2d(pts))
    if system.kind == "two-field" and system.div_C_fn is not None:
        pts = np.atleast_2d(pts)
        ms = system.m_sigma
        out = np.zeros((pts.shape[0], system.m, system.m))
        out[:, ms:, ms:] = system.div_C_fn(pts)   # B_k constant: no sigma part
        return out
    pts = np.atleast_2d(pts)
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    Axp = system.A_fn(pts + ex)
    Axm = system.A_fn(pts - ex)
    Ayp = system.A_fn(pts + ey)
    Aym = system.A_fn(pts - ey)
    return ((Axp[:, 0] - Axm[:, 0]) + (Ayp[:, 1] - Aym[:, 1])) / (2.0 * step)


def verify_assumptions(system, points, boundary_samples=(), interface_samples=(), *,
                       fd_step=None, tol=1e-10) -> AssumptionReport:
    """Audit the structural assumptions of a system descriptor.

    points: (n, 2) interior sample points. boundary_samples: (point, normal)
    pairs on the domain boundary, where the boundary-operator positivity
    2 rho + C >= 0 is checked. interface_samples: (point, normal) pairs on
    interior mortars, checked only for flux-hypothesis degeneracy (warnings).
    The report is advisory; callers opt into strict behavior via
    AssumptionReport.raise_if_failed().
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    report = AssumptionReport(system=getattr(system, "name", system.kind))
    if pts.shape[0] == 0:
        raise ContractViolationError("empty sample set")
    span = pts.max(axis=0) - pts.min(axis=0)
    step = fd_step if fd_step is not None else 1e-5 * max(np.max(span), 1.0)

    Ak = system.A_fn(pts)
    asym = np.abs(Ak - np.swapaxes(Ak, -1, -2)).max()
    report.add("A3_symmetry", asym <= 1e-12 * max(1.0, np.abs(Ak).max()),
               value=float(asym))

    G = system.G_fn(pts)
    coer = G + np.swapaxes(G, -1, -2) + _divergence_A(system, pts, step)

    if system.kind == "one-field":
        w = np.linalg.eigvalsh(0.5 * (coer + np.swapaxes(coer, -1, -2)))
        lam = w.min(axis=1)
        i = int(lam.argmin())
        report.mu0 = float(max(lam.min() / 2.0, 0.0))
        report.add("A4_full_coercivity", lam.min() >= -tol,
                   value=float(lam.min() / 2.0), worst_point=tuple(pts[i]))
    else:
        ms = system.m_sigma
        Gss = system.G_ss_fn(pts)
        wss = np.linalg.eigvalsh(0.5 * (Gss + np.swapaxes(Gss, -1, -2)))
        k0 = wss.min()
        i = int(wss.min(axis=1).argmin())
        report.k0 = float(k0)
        report.add("A6_sigma_block_positive", k0 > 0.0, value=float(k0),
                   worst_point=tuple(pts[i]))
        if system.coercivity == "full":
            w = np.linalg.eigvalsh(0.5 * (coer + np.swapaxes(coer, -1, -2)))
            lam = w.min(axis=1)
            i = int(lam.argmin())
            report.mu0 = float(max(lam.min() / 2.0, 0.0))
            report.add("A4_full_coercivity", lam.min() >= -tol,
                       value=float(lam.min() / 2.0), worst_point=tuple(pts[i]))
        else:
            Gsu = system.G_su_fn(pts)
            Gus = system.G_us_fn(pts)
            off = max(np.abs(Gsu).max(), np.abs(Gus).max())
            report.add("A4b_block_decoupling", off <= 1e-12,
                       value=float(off))
            sig = coer[:, :ms, :ms]
            w = np.linalg.eigvalsh(0.5 * (sig + np.swapaxes(sig, -1, -2)))
            mu = w.min(axis=1)
            i = int(mu.argmin())
            report.mu0 = float(max(mu.min() / 2.0, 0.0))
            report.add("A4a_partial_coercivity", mu.min() > 0.0,
                       value=float(mu.min() / 2.0), worst_point=tuple(pts[i]))
            uu = coer[:, ms:, ms:]
            wu = np.linalg.eigvalsh(0.5 * (uu + np.swapaxes(uu, -1, -2)))
            i = int(wu.min(axis=1).argmin())
            report.add("A4a_u_block_nonnegative", wu.min() >= -tol,
                       value=float(wu.min()), worst_point=tuple(pts[i]))

    def _degeneracy_warning(x, n, where):
        A = system.normal_matrix(x[None], n)[0]
        if system.kind == "two-field":
            if system.flux_hypothesis != "F1":
                return
            bn = A[-1, -1]  # u-u entry carries beta.n for the scalar benchmarks
            if abs(bn) < 1e-10 * max(np.abs(A).max(), 1.0):
                report.warnings.append(
                    f"normal advection nearly vanishes on {where} at "
                    f"{tuple(np.round(x, 12))} (value {bn:.3e})")
        else:
            sv = np.linalg.svd(A, compute_uv=False)
            if sv.min() < 1e-10 * max(sv.max(), 1.0):
                report.warnings.append(
                    f"A(x, n) nearly singular on {where} at "
                    f"{tuple(np.round(x, 12))} (smallest singular value {sv.min():.3e})")

    for x, n in boundary_samples:
        x = np.asarray(x, dtype=float)
        n = np.asarray(n, dtype=float)
        if system.kind == "two-field":
            spec = system.boundary_spec(x, n)
            Cn = system.C_normal(x[None], n)[0]
            rho = 0.5 if spec.kind == "dirichlet" else float(spec.rho_fn(x[None])[0])
            w = np.linalg.eigvalsh(2.0 * rho * np.eye(system.m_u) + Cn)
            if w.min() < -tol:
                report.add("M_nonnegative", False, value=float(w.min()),
                           worst_point=tuple(x),
                           message=f"2 rho I + C has eigenvalue {w.min():.3e}")
        _degeneracy_warning(x, n, "the boundary")
    for x, n in interface_samples:
        _degeneracy_warning(np.asarray(x, dtype=float),
                            np.asarray(n, dtype=float), "an interior mortar")
    if not any(c.name == "M_nonnegative" and not c.passed for c in report.checks):
        report.add("M_nonnegative", True)
    return report
