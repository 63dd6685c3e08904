"""Element-local HDG assembly, static condensation, and trace solves.

The volume unknown is the full Friedrichs state per element (z, or (sigma, u)
stacked); the globally coupled unknown is the trace on the mortar skeleton
(z-hat, or u-hat only for two-field systems). Element dof layout is
component-major: dof = comp * n_modes + mode. Mortar dof layout likewise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis
from .errors import (ContractViolationError, LocalSolvabilityError,
                     SingularTraceSystemError)
from .mesh import Mesh, Skeleton
from .system import OneFieldSystem, TwoFieldSystem, abs_flux, assembly_T, \
    pos_neg_parts

TRACE_RESIDUAL_TOL = 1e-10


@dataclass
class ElementBlocks:
    L: np.ndarray                 # (n, n) volume-volume
    F: np.ndarray                 # (n,) load
    R: dict                       # mortar id -> (n, ne) volume-trace coupling
    lu: tuple = None              # scipy lu_factor of L
    cond_pivot: float = 0.0


@dataclass
class MortarRow:
    C: dict                       # elem id -> (ne, n) volume coupling
    D: np.ndarray                 # (ne, ne) trace-trace
    rhs: np.ndarray               # (ne,)
    dirichlet: bool = False


class Discretization:
    """All assembled blocks for (mesh, skeleton, system, degrees)."""

    def __init__(self, mesh: Mesh, skeleton: Skeleton, system,
                 degrees: dict | None = None, quad_inc: tuple = (0, 0)):
        self.mesh = mesh
        self.skeleton = skeleton
        self.system = system
        self.quad_inc = quad_inc
        self.active = mesh.active_ids()
        self.degrees = {k: (mesh.elements[k].p if degrees is None else degrees[k])
                        for k in self.active}

        if system.kind == "two-field":
            self.m = system.m_sigma + system.m_u
            self.m_trace = system.m_u
        else:
            self.m = system.m
            self.m_trace = system.m

        # mortar trace degrees follow the element degrees actually used here
        self.mortar_p = []
        for mt in skeleton.mortars:
            if mt.right is None:
                self.mortar_p.append(self.degrees[mt.left.elem])
            else:
                self.mortar_p.append(max(self.degrees[mt.left.elem],
                                         self.degrees[mt.right.elem]))

        self.trace_offsets = np.zeros(len(skeleton.mortars) + 1, dtype=int)
        for i, p_e in enumerate(self.mortar_p):
            self.trace_offsets[i + 1] = self.trace_offsets[i] \
                + self.m_trace * (p_e + 1)
        self.n_trace = int(self.trace_offsets[-1])

        self.vol_offsets = {}
        off = 0
        for k in self.active:
            self.vol_offsets[k] = off
            off += self.m * basis.tri_dim(self.degrees[k])
        self.n_volume = off

        self.elements: dict[int, ElementBlocks] = {}
        self.rows: list[MortarRow] = []
        self._mortar_spec = {}
        self._assemble()

    # -- geometry helpers ----------------------------------------------------

    def elem_map(self, k):
        c = self.mesh.coords(k)
        J = np.column_stack([c[1] - c[0], c[2] - c[0]])
        detJ = float(np.linalg.det(J))
        return c[0], J, detJ

    def volume_rule(self, k):
        p = self.degrees[k]
        return basis.triangle_rule(min(2 * p + 2 + self.quad_inc[0],
                                       basis.MAX_STRENGTH))

    def face_nq(self, p_e):
        return basis.gauss_count(min(2 * p_e + 2 + self.quad_inc[1],
                                     basis.MAX_STRENGTH))

    def trace_block(self, e):
        return slice(self.trace_offsets[e], self.trace_offsets[e + 1])

    def mortar_boundary_spec(self, e):
        spec = self._mortar_spec.get(e)
        if spec is None:
            mt = self.skeleton.mortars[e]
            spec = self.system.boundary_spec(mt.midpoint(), mt.normal)
            self._mortar_spec[e] = spec
        return spec

    # -- assembly -------------------------------------------------------------

    def _assemble(self):
        mts = self.skeleton.mortars
        for e, mt in enumerate(mts):
            ne = self.m_trace * (self.mortar_p[e] + 1)
            self.rows.append(MortarRow(C={}, D=np.zeros((ne, ne)),
                                       rhs=np.zeros(ne)))
        for e, mt in enumerate(mts):
            if mt.boundary and self.system.kind == "two-field":
                if self.mortar_boundary_spec(e).kind == "dirichlet":
                    self._dirichlet_row(e)

        for k in self.active:
            self.elements[k] = self._element_blocks(k)

        for e, mt in enumerate(mts):
            if self.rows[e].dirichlet:
                continue
            if mt.boundary:
                self._boundary_row_terms(e)

    def _element_blocks(self, k) -> ElementBlocks:
        sysm = self.system
        p = self.degrees[k]
        B = basis.triangle_basis(p)
        nb = B.dim
        n = self.m * nb
        v0, J, detJ = self.elem_map(k)
        invJ = np.linalg.inv(J)
        rule = self.volume_rule(k)
        X = v0[None, :] + rule.points @ J.T
        w = rule.weights * detJ
        V = B.eval(rule.points)
        Gd = np.einsum("qal,lk->qak", B.grad(rule.points), invJ)

        Ak = sysm.A_fn(X)
        G = sysm.G_fn(X)
        L4 = -np.einsum("q,qkij,qb,qak->iajb", w, Ak, V, Gd, optimize=True)
        L4 += np.einsum("q,qij,qb,qa->iajb", w, G, V, V, optimize=True)
        fvals = self._forcing(X)
        F = np.einsum("q,qi,qa->ia", w, fvals, V).reshape(n)
        L = L4.reshape(n, n)

        R = {}
        for e, side in self.skeleton.elem_mortars.get(k, ()):
            self._face_terms(k, e, side, L, R, V_basis=B)
        blocks = ElementBlocks(L=L, F=F, R=R)
        try:
            blocks.lu = sla.lu_factor(L)
        except Exception as exc:  # pragma: no cover - lu_factor rarely raises
            raise LocalSolvabilityError(f"element {k}: {exc}", element=k)
        piv = np.abs(np.diag(blocks.lu[0])).min()
        blocks.cond_pivot = piv
        if not np.isfinite(piv) or piv < 1e-13 * max(np.abs(L).max(), 1e-30):
            raise LocalSolvabilityError(
                f"element {k}: volume block numerically singular "
                f"(pivot {piv:.3e})", element=k)
        return blocks

    def _forcing(self, X):
        sysm = self.system
        if sysm.kind == "two-field":
            return np.concatenate([sysm.f_sigma_fn(X), sysm.f_u_fn(X)], axis=1)
        return sysm.f_fn(X)

    def _face_geometry(self, k, e, side):
        mt = self.skeleton.mortars[e]
        sd = mt.left if side == 0 else mt.right
        p_e = self.mortar_p[e]
        nfq = self.face_nq(p_e)
        rule = basis.segment_gauss(2 * nfq - 1)
        X = mt.points(rule.points)
        wq = rule.weights * mt.length
        nrm = mt.normal if side == 0 else -mt.normal
        Vf = basis.trace_table(self.degrees[k], sd.face, sd.sub[0], sd.sub[1], nfq)
        St = basis.segment_table(p_e, nfq)
        return X, wq, nrm, Vf, St

    def _face_terms(self, k, e, side, L, R, V_basis):
        sysm = self.system
        nb = V_basis.dim
        n = self.m * nb
        X, wq, nrm, Vf, St = self._face_geometry(k, e, side)
        ne_modes = St.shape[1]
        row = self.rows[e]
        Lv = L.reshape(self.m, nb, self.m, nb)
        Re = R.setdefault(e, np.zeros((n, self.m_trace * ne_modes)))
        Re4 = Re.reshape(self.m, nb, self.m_trace, ne_modes)

        if sysm.kind == "one-field":
            A = sysm.normal_matrix(X, nrm)
            Apos, Aneg = pos_neg_parts(A)
            absA = Apos - Aneg
            Lv += np.einsum("q,qij,qb,qa->iajb", wq, A + absA, Vf, Vf,
                            optimize=True)
            Re4 -= np.einsum("q,qij,qa,qk->iajk", wq, absA, Vf, St,
                             optimize=True)
            if not row.dirichlet:
                Ce = row.C.setdefault(k, np.zeros((self.m_trace * ne_modes, n)))
                Ce4 = Ce.reshape(self.m_trace, ne_modes, self.m, nb)
                Ce4 += np.einsum("q,qij,qk,qb->ikjb", wq, A + absA, St, Vf,
                                 optimize=True)
                row.D -= np.einsum("q,qij,qk,ql->ikjl", wq, absA, St, St,
                                   optimize=True).reshape(row.D.shape)
            return

        ms, mu = sysm.m_sigma, sysm.m_u
        Bn = sysm.B_normal(nrm)
        Cn = sysm.C_normal(X, nrm)
        T = assembly_T(sysm, X, nrm)
        # sigma test rows couple only to the trace: <B u_hat, s>
        Re4[:ms] += np.einsum("ij,q,qa,qk->iajk", Bn, wq, Vf, St,
                              optimize=True)
        # u test rows: <B^T sigma + (C + T) u - T u_hat, v>
        mass = np.einsum("q,qa,qb->ab", wq, Vf, Vf)
        Lv[ms:, :, :ms] += np.einsum("ji,ab->iajb", Bn, mass)
        Lv[ms:, :, ms:] += np.einsum("q,qij,qb,qa->iajb", wq, Cn + T, Vf, Vf,
                                     optimize=True)
        Re4[ms:] -= np.einsum("q,qij,qa,qk->iajk", wq, T, Vf, St,
                              optimize=True)
        if not row.dirichlet:
            Ce = row.C.setdefault(k, np.zeros((self.m_trace * ne_modes, n)))
            Ce4 = Ce.reshape(self.m_trace, ne_modes, self.m, nb)
            Ce4[:, :, :ms] += np.einsum("ji,q,qk,qb->ikjb", Bn, wq, St, Vf,
                                        optimize=True)
            Ce4[:, :, ms:] += np.einsum("q,qij,qk,qb->ikjb", wq, Cn + T, St,
                                        Vf, optimize=True)
            row.D -= np.einsum("q,qij,qk,ql->ikjl", wq, T, St, St,
                               optimize=True).reshape(row.D.shape)

    def _dirichlet_row(self, e):
        """Two-field Dirichlet mortar: <u_hat, v> = <Pi g_D, v>."""
        mt = self.skeleton.mortars[e]
        spec = self.mortar_boundary_spec(e)
        p_e = self.mortar_p[e]
        nfq = self.face_nq(p_e)
        rule = basis.segment_gauss(2 * nfq - 1)
        X = mt.points(rule.points)
        wq = rule.weights * mt.length
        St = basis.segment_table(p_e, nfq)
        row = self.rows[e]
        row.dirichlet = True
        row.D = np.kron(np.eye(self.m_trace), (St * wq[:, None]).T @ St)
        g = np.atleast_2d(spec.data_fn(X, mt.normal))
        row.rhs = np.einsum("q,qi,qk->ik", wq, g, St).reshape(-1)

    def _boundary_row_terms(self, e):
        """Extra trace-trace and data terms of a boundary mortar row."""
        mt = self.skeleton.mortars[e]
        sysm = self.system
        spec = self.mortar_boundary_spec(e)
        p_e = self.mortar_p[e]
        nfq = self.face_nq(p_e)
        rule = basis.segment_gauss(2 * nfq - 1)
        X = mt.points(rule.points)
        wq = rule.weights * mt.length
        St = basis.segment_table(p_e, nfq)
        row = self.rows[e]

        if sysm.kind == "one-field":
            A = sysm.normal_matrix(X, mt.normal)
            Apos, Aneg = pos_neg_parts(A)
            row.D -= np.einsum("q,qij,qk,ql->ikjl", wq, Apos, St, St,
                               optimize=True).reshape(row.D.shape)
            g = np.atleast_2d(spec.data_fn(X, mt.normal))
            row.rhs += np.einsum("q,qij,qj,qk->ik", wq, Aneg, g, St,
                                 optimize=True).reshape(-1)
        else:
            Cn = sysm.C_normal(X, mt.normal)
            rho = np.asarray(spec.rho_fn(X), dtype=float)
            M = Cn + rho[:, None, None] * np.eye(sysm.m_u)[None]
            row.D -= np.einsum("q,qij,qk,ql->ikjl", wq, M, St, St,
                               optimize=True).reshape(row.D.shape)
            q = np.atleast_2d(spec.data_fn(X, mt.normal))
            row.rhs += np.einsum("q,qi,qk->ik", wq, q, St).reshape(-1)

    # -- condensed system ------------------------------------------------------

    def trace_system(self):
        """Sparse condensed trace matrix and right-hand side."""
        ij, vals = [], []
        b = np.zeros(self.n_trace)
        for e, row in enumerate(self.rows):
            sl = self.trace_block(e)
            b[sl] += row.rhs
            ij.append((sl, sl))
            vals.append(row.D)
        for k, blk in self.elements.items():
            mortars = [e for e, _ in self.skeleton.elem_mortars.get(k, ())]
            if not mortars:
                continue
            Rcat = np.concatenate([blk.R[e] for e in mortars], axis=1)
            Xsol = sla.lu_solve(blk.lu, np.column_stack([Rcat, blk.F]))
            zf = Xsol[:, -1]
            widths = np.cumsum([0] + [blk.R[e].shape[1] for e in mortars])
            for er_i, er in enumerate(mortars):
                row = self.rows[er]
                Ck = row.C.get(k)
                if Ck is None:
                    continue
                sl_r = self.trace_block(er)
                b[sl_r] -= Ck @ zf
                for ec_i, ec in enumerate(mortars):
                    Sblk = -Ck @ Xsol[:, widths[ec_i]:widths[ec_i + 1]]
                    ij.append((sl_r, self.trace_block(ec)))
                    vals.append(Sblk)
        rows_idx, cols_idx, data = [], [], []
        for (sl_r, sl_c), Vb in zip(ij, vals):
            r = np.arange(sl_r.start, sl_r.stop)
            c = np.arange(sl_c.start, sl_c.stop)
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows_idx.append(rr.ravel())
            cols_idx.append(cc.ravel())
            data.append(Vb.ravel())
        S = sp.coo_matrix((np.concatenate(data),
                           (np.concatenate(rows_idx), np.concatenate(cols_idx))),
                          shape=(self.n_trace, self.n_trace)).tocsc()
        return S, b

    def solve_condensed(self):
        S, b = self.trace_system()
        try:
            lu = spla.splu(S)
            xhat = lu.solve(b)
        except RuntimeError as exc:
            raise SingularTraceSystemError(
                f"trace factorization failed on {self.n_trace} dofs "
                f"({S.nnz} nonzeros, {len(self.rows)} mortars): {exc}") from exc
        res = np.linalg.norm(S @ xhat - b)
        rel = res / max(np.linalg.norm(b), np.linalg.norm(xhat), 1e-300)
        if not np.isfinite(rel) or rel > TRACE_RESIDUAL_TOL:
            raise SingularTraceSystemError(
                f"trace solve residual {rel:.3e} exceeds {TRACE_RESIDUAL_TOL:.1e}")
        return self._recover(xhat)

    def _recover(self, xhat) -> "HdgSolution":
        vol = {}
        for k, blk in self.elements.items():
            rhs = blk.F.copy()
            for e, _ in self.skeleton.elem_mortars.get(k, ()):
                rhs -= blk.R[e] @ xhat[self.trace_block(e)]
            nb = basis.tri_dim(self.degrees[k])
            vol[k] = sla.lu_solve(blk.lu, rhs).reshape(self.m, nb)
        trace = {e: xhat[self.trace_block(e)].reshape(self.m_trace, -1)
                 for e in range(len(self.rows))}
        return HdgSolution(disc=self, vol=vol, trace=trace)

    # -- monolithic (uncondensed) oracle ---------------------------------------

    def monolithic_system(self):
        n = self.n_volume + self.n_trace
        rows_idx, cols_idx, data = [], [], []
        b = np.zeros(n)

        def put(r0, c0, Vb):
            rr, cc = np.meshgrid(np.arange(Vb.shape[0]) + r0,
                                 np.arange(Vb.shape[1]) + c0, indexing="ij")
            rows_idx.append(rr.ravel())
            cols_idx.append(cc.ravel())
            data.append(np.asarray(Vb).ravel())

        for k, blk in self.elements.items():
            o = self.vol_offsets[k]
            put(o, o, blk.L)
            b[o:o + blk.L.shape[0]] = blk.F
            for e, _ in self.skeleton.elem_mortars.get(k, ()):
                put(o, self.n_volume + self.trace_offsets[e], blk.R[e])
        for e, row in enumerate(self.rows):
            r0 = self.n_volume + self.trace_offsets[e]
            put(r0, r0, row.D)
            b[r0:r0 + row.D.shape[0]] = row.rhs
            for k, Ck in row.C.items():
                put(r0, self.vol_offsets[k], Ck)
        A = sp.coo_matrix((np.concatenate(data),
                           (np.concatenate(rows_idx), np.concatenate(cols_idx))),
                          shape=(n, n)).tocsc()
        return A, b

    def solve_monolithic(self):
        A, b = self.monolithic_system()
        x = spla.splu(A).solve(b)
        vol = {}
        for k in self.active:
            o = self.vol_offsets[k]
            nb = basis.tri_dim(self.degrees[k])
            vol[k] = x[o:o + self.m * nb].reshape(self.m, nb)
        trace = {}
        for e in range(len(self.rows)):
            sl = self.trace_block(e)
            trace[e] = x[self.n_volume + sl.start:
                         self.n_volume + sl.stop].reshape(self.m_trace, -1)
        return HdgSolution(disc=self, vol=vol, trace=trace)

    # -- residual -----------------------------------------------------------

    def residual(self, vol: dict, trace: dict):
        """Blockwise residual of the discrete system at the given state."""
        r_vol = {}
        for k, blk in self.elements.items():
            r = blk.L @ vol[k].reshape(-1) - blk.F
            for e, _ in self.skeleton.elem_mortars.get(k, ()):
                r += blk.R[e] @ trace[e].reshape(-1)
            r_vol[k] = r
        r_tr = {}
        for e, row in enumerate(self.rows):
            r = row.D @ trace[e].reshape(-1) - row.rhs
            for k, Ck in row.C.items():
                r += Ck @ vol[k].reshape(-1)
            r_tr[e] = r
        return r_vol, r_tr


@dataclass
class HdgSolution:
    disc: Discretization
    vol: dict       # elem id -> (m, n_modes)
    trace: dict     # mortar id -> (m_trace, p_e + 1)

    @property
    def mesh(self):
        return self.disc.mesh

    @property
    def system(self):
        return self.disc.system

    def degree(self, k):
        return self.disc.degrees[k]

    def field_values(self, k, ref_pts, comp=None):
        """Values of volume state components at reference points of element k."""
        V = basis.triangle_basis(self.degree(k)).eval(ref_pts)
        out = self.vol[k] @ V.T
        return out if comp is None else out[comp]

    def u_values(self, k, ref_pts):
        """The scalar 'solution' field (u for two-field, z for one-field)."""
        if self.disc.system.kind == "two-field":
            return self.field_values(k, ref_pts, self.disc.system.m_sigma)
        return self.field_values(k, ref_pts, 0)

    def sigma_values(self, k, ref_pts):
        if self.disc.system.kind != "two-field":
            raise ContractViolationError("sigma only exists for two-field systems")
        V = basis.triangle_basis(self.degree(k)).eval(ref_pts)
        return self.vol[k][: self.disc.system.m_sigma] @ V.T

    def trace_values(self, e, t):
        St = basis.segment_basis(self.disc.mortar_p[e]).eval(np.atleast_1d(t))
        return self.trace[e] @ St.T

    def combine(self, a, other, b):
        """a * self + b * other (same discretization)."""
        if other.disc is not self.disc:
            raise ContractViolationError("solutions live on different discretizations")
        vol = {k: a * v + b * other.vol[k] for k, v in self.vol.items()}
        trace = {e: a * v + b * other.trace[e] for e, v in self.trace.items()}
        return HdgSolution(disc=self.disc, vol=vol, trace=trace)

    @property
    def n_trace_dofs(self):
        return self.disc.n_trace

    @property
    def n_volume_dofs(self):
        return self.disc.n_volume


def assemble_and_solve(mesh: Mesh, skeleton: Skeleton, system,
                       degrees=None, quad_inc=(0, 0)) -> HdgSolution:
    disc = Discretization(mesh, skeleton, system, degrees=degrees,
                          quad_inc=quad_inc)
    return disc.solve_condensed()


# ---------------------------------------------------------------------------
# Conservation audit.
# ---------------------------------------------------------------------------

@dataclass
class ConservationReport:
    per_element: dict           # elem id -> (m,) net balance
    per_element_relative: dict  # elem id -> float
    global_balance: np.ndarray  # (m,)
    global_relative: float

    @property
    def max_relative(self) -> float:
        return max(self.per_element_relative.values())


def numerical_flux(solution: HdgSolution, k: int, e: int, side: int,
                   t: np.ndarray):
    """Numerical flux of element k through mortar e at mortar parameters t."""
    disc = solution.disc
    sysm = disc.system
    mt = disc.skeleton.mortars[e]
    sd = mt.left if side == 0 else mt.right
    nrm = mt.normal if side == 0 else -mt.normal
    X = mt.points(t)
    s = float(sd.sub[0]) + (float(sd.sub[1]) - float(sd.sub[0])) * np.asarray(t)
    ref = basis.face_ref_points(sd.face, s)
    zk = solution.field_values(k, ref)                       # (m, nt)
    that = solution.trace_values(e, t)                       # (m_tr, nt)

    if sysm.kind == "one-field":
        A = sysm.normal_matrix(X, nrm)
        absA = abs_flux(A)
        return (np.einsum("qij,jq->iq", A, zk)
                + np.einsum("qij,jq->iq", absA, zk - that))
    ms = sysm.m_sigma
    Bn = sysm.B_normal(nrm)
    Cn = sysm.C_normal(X, nrm)
    T = assembly_T(sysm, X, nrm)
    sig, u = zk[:ms], zk[ms:]
    f_sig = Bn @ that
    f_u = (Bn.T @ sig + np.einsum("qij,jq->iq", Cn, u)
           + np.einsum("qij,jq->iq", T, u - that))
    return np.concatenate([f_sig, f_u], axis=0)


def check_conservation(solution: HdgSolution) -> ConservationReport:
    """Flux-balance audit: (G z, 1)_K + <flux, 1>_dK - (f, 1)_K per element.

    Integrals are evaluated by independent quadrature on the recovered
    fields, not read from the assembled matrices.
    """
    disc = solution.disc
    sysm = disc.system
    per, rel = {}, {}
    glob = np.zeros(disc.m)
    glob_boundary = np.zeros(disc.m)
    glob_scale = 0.0
    for k in disc.active:
        v0, J, detJ = disc.elem_map(k)
        rule = disc.volume_rule(k)
        X = v0[None, :] + rule.points @ J.T
        w = rule.weights * detJ
        zk = solution.field_values(k, rule.points)           # (m, nq)
        Gz = np.einsum("qij,jq->iq", sysm.G_fn(X), zk)
        fv = disc._forcing(X).T
        bal = (w[None, :] * (Gz - fv)).sum(axis=1)
        scale = np.abs((w[None, :] * Gz).sum(axis=1)).max() \
            + np.abs((w[None, :] * fv).sum(axis=1)).max()
        for e, side in disc.skeleton.elem_mortars.get(k, ()):
            mt = disc.skeleton.mortars[e]
            nfq = disc.face_nq(disc.mortar_p[e])
            frule = basis.segment_gauss(2 * nfq - 1)
            flux = numerical_flux(solution, k, e, side, frule.points)
            contrib = (frule.weights[None, :] * flux).sum(axis=1) * mt.length
            bal += contrib
            scale += np.abs(contrib).max()
            if mt.boundary:
                glob_boundary += contrib
        per[k] = bal
        rel[k] = float(np.abs(bal).max() / max(scale, 1e-300))
        glob += bal
        glob_scale = max(glob_scale, scale)
    # the lemma's boundary-only identity: volume reaction/forcing balance
    # against the flux leaving the domain
    grel = float(np.abs(glob).max() / max(glob_scale, 1e-300))
    return ConservationReport(per_element=per, per_element_relative=rel,
                              global_balance=glob, global_relative=grel)
