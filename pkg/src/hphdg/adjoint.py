"""Output functionals, discrete-adjoint solves, and dual-weighted residuals.

The adjoint operator is the transpose of the primal discrete operator
assembled on the same mesh at degrees enriched by one; condensation is
performed on the transposed blocks (the Schur complement of the transpose
is the transpose of the Schur complement), so the assembled adjoint trace
matrix equals the transposed primal trace matrix up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis
from .errors import (ContractViolationError, EmptySelectorError,
                     SingularTraceSystemError)
from .solver import Discretization, HdgSolution, TRACE_RESIDUAL_TOL


def _side_of(normal) -> str:
    nx, ny = normal
    if nx < -0.5:
        return "left"
    if nx > 0.5:
        return "right"
    return "bottom" if ny < -0.5 else "top"


@dataclass
class OutputFunctional:
    """Linear boundary output J(Z) = sum over selected boundary mortars of
    int w_sigma (sigma.n) + w_u u + w_hat u_hat ds.

    Weight callbacks receive physical points (n, 2) and the outward normal
    and return scalar weights (n,); absent weights contribute nothing. The
    scalar fields are the u-component (two-field) or z itself (one-field).
    """
    kind: str
    selector: Callable            # (midpoint, normal) -> bool
    w_sigma: Callable = None      # (pts, nrm) -> (n,)
    w_u: Callable = None
    w_hat: Callable = None

    def boundary_mortars(self, disc: Discretization):
        picked = []
        for e, mt in enumerate(disc.skeleton.mortars):
            if mt.boundary and self.selector(mt.midpoint(), mt.normal):
                picked.append(e)
        if not picked:
            raise EmptySelectorError(
                f"functional {self.kind!r} selects no boundary mortars")
        return picked


def make_functional(kind: str, problem=None, **kwargs) -> OutputFunctional:
    """The benchmark output functionals (plus a custom linear one)."""
    def ones(pts, nrm):
        return np.ones(np.atleast_2d(pts).shape[0])

    def minus_ones(pts, nrm):
        return -np.ones(np.atleast_2d(pts).shape[0])

    def cospr(pts, nrm):
        pts = np.atleast_2d(pts)
        return np.cos(2 * np.pi * pts[:, 0]) * np.cos(2 * np.pi * pts[:, 1])

    def minus_cospr(pts, nrm):
        return -cospr(pts, nrm)

    if kind == "e1_boundary_sum":
        sel = lambda mid, nrm: _side_of(nrm) in ("left", "bottom")
        return OutputFunctional(kind, sel, w_sigma=minus_ones, w_u=minus_ones,
                                w_hat=minus_ones)
    if kind == "e2_sinusoidal_boundary":
        return OutputFunctional(kind, lambda mid, nrm: True,
                                w_sigma=minus_cospr, w_u=minus_cospr,
                                w_hat=minus_cospr)
    if kind == "e3_left_boundary":
        sel = lambda mid, nrm: _side_of(nrm) == "left"
        return OutputFunctional(kind, sel, w_sigma=minus_ones, w_u=minus_ones,
                                w_hat=minus_ones)
    if kind == "hp1_outflow_sinusoidal":
        from .problems import hp1_beta

        def w_hat(pts, nrm):
            bn = hp1_beta(pts) @ np.asarray(nrm, dtype=float)
            return 0.5 * (-bn - np.abs(bn)) * cospr(pts, nrm)

        return OutputFunctional(kind, lambda mid, nrm: True, w_hat=w_hat)
    if kind == "hb1_right_boundary":
        sel = lambda mid, nrm: _side_of(nrm) == "right"
        return OutputFunctional(kind, sel, w_hat=ones)
    if kind == "custom_linear":
        return OutputFunctional(kind, kwargs["selector"],
                                w_sigma=kwargs.get("w_sigma"),
                                w_u=kwargs.get("w_u"),
                                w_hat=kwargs.get("w_hat"))
    raise ContractViolationError(f"unknown functional kind {kind!r}")


def _functional_face_data(J, disc, e):
    mt = disc.skeleton.mortars[e]
    p_e = disc.mortar_p[e]
    nfq = disc.face_nq(p_e)
    rule = basis.segment_gauss(2 * nfq - 1)
    X = mt.points(rule.points)
    wq = rule.weights * mt.length
    return mt, rule, X, wq, nfq


def evaluate_output(J: OutputFunctional, Z: HdgSolution) -> float:
    """Boundary-quadrature evaluation of the functional on a solved state."""
    disc = Z.disc
    sysm = disc.system
    total = 0.0
    for e in J.boundary_mortars(disc):
        mt, rule, X, wq, nfq = _functional_face_data(J, disc, e)
        k = mt.left.elem
        sd = mt.left
        s = float(sd.sub[0]) + (float(sd.sub[1]) - float(sd.sub[0])) * rule.points
        ref = basis.face_ref_points(sd.face, s)
        if J.w_sigma is not None:
            sig = Z.sigma_values(k, ref)                   # (m_sigma, nq)
            sn = mt.normal @ sig
            total += float((wq * J.w_sigma(X, mt.normal) * sn).sum())
        if J.w_u is not None:
            u = Z.u_values(k, ref)
            total += float((wq * J.w_u(X, mt.normal) * u).sum())
        if J.w_hat is not None:
            uh = Z.trace_values(e, rule.points)[-1] if sysm.kind == "two-field" \
                else Z.trace_values(e, rule.points)[0]
            total += float((wq * J.w_hat(X, mt.normal) * uh).sum())
    return total


def functional_gradient(J: OutputFunctional, disc: Discretization):
    """dJ/d(coefficients) in the volume/trace layout of the discretization."""
    sysm = disc.system
    j_vol = {k: np.zeros(disc.m * basis.tri_dim(disc.degrees[k]))
             for k in disc.active}
    j_tr = {e: np.zeros(disc.m_trace * (disc.mortar_p[e] + 1))
            for e in range(len(disc.skeleton.mortars))}
    u_comp = sysm.m_sigma if sysm.kind == "two-field" else 0
    for e in J.boundary_mortars(disc):
        mt, rule, X, wq, nfq = _functional_face_data(J, disc, e)
        k = mt.left.elem
        sd = mt.left
        nb = basis.tri_dim(disc.degrees[k])
        Vf = basis.trace_table(disc.degrees[k], sd.face, sd.sub[0], sd.sub[1], nfq)
        St = basis.segment_table(disc.mortar_p[e], nfq)
        jv = j_vol[k].reshape(disc.m, nb)
        if J.w_sigma is not None:
            w = wq * J.w_sigma(X, mt.normal)
            for c in range(sysm.m_sigma):
                jv[c] += mt.normal[c] * (w @ Vf)
        if J.w_u is not None:
            jv[u_comp] += (wq * J.w_u(X, mt.normal)) @ Vf
        if J.w_hat is not None:
            jt = j_tr[e].reshape(disc.m_trace, -1)
            jt[-1 if sysm.kind == "two-field" else 0] += \
                (wq * J.w_hat(X, mt.normal)) @ St
    return j_vol, j_tr


class AdjointSolution(HdgSolution):
    """Discrete adjoint state on the enriched discretization."""


def adjoint_trace_system(disc: Discretization, j_vol, j_tr):
    """Condensed transposed system: matrix and right-hand side."""
    n = disc.n_trace
    rows_idx, cols_idx, data = [], [], []
    b = np.zeros(n)
    for e, row in enumerate(disc.rows):
        sl = disc.trace_block(e)
        b[sl] -= j_tr[e]
        r = np.arange(sl.start, sl.stop)
        rr, cc = np.meshgrid(r, r, indexing="ij")
        rows_idx.append(rr.ravel())
        cols_idx.append(cc.ravel())
        data.append(row.D.T.ravel())
    for k, blk in disc.elements.items():
        mortars = [e for e, _ in disc.skeleton.elem_mortars.get(k, ())]
        if not mortars:
            continue
        # transposed condensation: solve L^T against [C^T | j_vol]
        Ccat = []
        widths = [0]
        for e in mortars:
            Ck = disc.rows[e].C.get(k)
            ne = disc.trace_offsets[e + 1] - disc.trace_offsets[e]
            Ccat.append(np.zeros((blk.L.shape[0], ne)) if Ck is None else Ck.T)
            widths.append(widths[-1] + ne)
        rhs = np.column_stack(Ccat + [j_vol[k]])
        Xsol = sla.lu_solve(blk.lu, rhs, trans=1)
        zf = Xsol[:, -1]
        for er in mortars:
            sl_r = disc.trace_block(er)
            b[sl_r] += blk.R[er].T @ zf
            for ec_i, ec in enumerate(mortars):
                Sblk = -blk.R[er].T @ Xsol[:, widths[ec_i]:widths[ec_i + 1]]
                sl_c = disc.trace_block(ec)
                r = np.arange(sl_r.start, sl_r.stop)
                c = np.arange(sl_c.start, sl_c.stop)
                rr, cc = np.meshgrid(r, c, indexing="ij")
                rows_idx.append(rr.ravel())
                cols_idx.append(cc.ravel())
                data.append(Sblk.ravel())
    S = sp.coo_matrix((np.concatenate(data),
                       (np.concatenate(rows_idx), np.concatenate(cols_idx))),
                      shape=(n, n)).tocsc()
    return S, b


def solve_adjoint_on(disc: Discretization, J: OutputFunctional) -> AdjointSolution:
    """Adjoint solve A^T W = -dJ on an (enriched) discretization."""
    j_vol, j_tr = functional_gradient(J, disc)
    S, b = adjoint_trace_system(disc, j_vol, j_tr)
    try:
        what = spla.splu(S).solve(b)
    except RuntimeError as exc:
        raise SingularTraceSystemError(f"adjoint trace solve failed: {exc}") from exc
    rel = np.linalg.norm(S @ what - b) / max(np.linalg.norm(b),
                                             np.linalg.norm(what), 1e-300)
    if not np.isfinite(rel) or rel > TRACE_RESIDUAL_TOL:
        raise SingularTraceSystemError(
            f"adjoint trace residual {rel:.3e} exceeds {TRACE_RESIDUAL_TOL:.1e}")
    vol = {}
    for k, blk in disc.elements.items():
        rhs = -j_vol[k].copy()
        for e, _ in disc.skeleton.elem_mortars.get(k, ()):
            Ck = disc.rows[e].C.get(k)
            if Ck is not None:
                rhs -= Ck.T @ what[disc.trace_block(e)]
        nb = basis.tri_dim(disc.degrees[k])
        vol[k] = sla.lu_solve(blk.lu, rhs, trans=1).reshape(disc.m, nb)
    trace = {e: what[disc.trace_block(e)].reshape(disc.m_trace, -1)
             for e in range(len(disc.rows))}
    return AdjointSolution(disc=disc, vol=vol, trace=trace)


def enriched_discretization(primal: Discretization) -> Discretization:
    """Same mesh, every element degree raised by one."""
    degrees = {k: p + 1 for k, p in primal.degrees.items()}
    return Discretization(primal.mesh, primal.skeleton, primal.system,
                          degrees=degrees, quad_inc=primal.quad_inc)


def solve_adjoint(problem, J: OutputFunctional, primal: Discretization,
                  fine: Discretization | None = None) -> AdjointSolution:
    if fine is None:
        fine = enriched_discretization(primal)
    return solve_adjoint_on(fine, J)


def inject(solution: HdgSolution, fine: Discretization) -> HdgSolution:
    """Exact embedding of a solution into the degree-enriched discretization."""
    coarse = solution.disc
    if fine.mesh is not coarse.mesh:
        raise ContractViolationError("enrichment requires the same mesh")
    vol = {}
    for k in coarse.active:
        pH, ph = coarse.degrees[k], fine.degrees[k]
        vol[k] = basis.enrich(solution.vol[k], pH, ph)
    trace = {}
    for e in range(len(coarse.skeleton.mortars)):
        pad = (fine.mortar_p[e] + 1) - (coarse.mortar_p[e] + 1)
        if pad < 0:
            raise ContractViolationError("fine mortar space must contain coarse")
        trace[e] = np.pad(solution.trace[e], [(0, 0), (0, pad)])
    return HdgSolution(disc=fine, vol=vol, trace=trace)


def localized_residual(Z_fine: HdgSolution, W: AdjointSolution):
    """Per-element adjoint-weighted residuals |R_K| and the trace pairing.

    Z_fine must live on the same discretization as W (the injected primal).
    The per-element value pairs the element's volume residual rows with the
    adjoint volume fields; trace rows are excluded from the local indicator
    but returned for the global estimate.
    """
    disc = W.disc
    if Z_fine.disc is not disc:
        raise ContractViolationError("residual arguments live on different spaces")
    r_vol, r_tr = disc.residual(Z_fine.vol, Z_fine.trace)
    eta = {k: abs(float(W.vol[k].reshape(-1) @ r_vol[k])) for k in disc.active}
    trace_sum = sum(float(W.trace[e].reshape(-1) @ r_tr[e]) for e in r_tr)
    vol_sum = sum(float(W.vol[k].reshape(-1) @ r_vol[k]) for k in disc.active)
    return eta, vol_sum, trace_sum


def estimate_output_error(problem, J: OutputFunctional, primal_solution,
                          fine: Discretization | None = None):
    """DWR estimate J(Z_H) - J(Z_h) = -R_h[Z_H^h; W_h] (exact for linear J).

    Returns (estimate, eta_K, adjoint_solution, fine_discretization).
    """
    primal = primal_solution.disc
    if fine is None:
        fine = enriched_discretization(primal)
    W = solve_adjoint_on(fine, J)
    Zf = inject(primal_solution, fine)
    eta, vol_sum, trace_sum = localized_residual(Zf, W)
    return -(vol_sum + trace_sum), eta, W, fine
