"""The five benchmark problems, their exact solutions, and error norms.

All problems live on the unit square except the battery, which occupies
[0, 8.4] x [0, 24] with five materials. u is the scalar solution field;
sigma = -kappa grad(u) is the auxiliary flux of the two-field problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import basis
from .errors import ParameterError, UnsupportedErrorNormError
from .mesh import Mesh, build_structured_mesh
from .system import BoundarySpec, OneFieldSystem, TwoFieldSystem, const_fn, zero_fn


# ---------------------------------------------------------------------------
# Coefficients.
# ---------------------------------------------------------------------------

def anisotropic_kappa(theta_m: float, kappa_x: float, kappa_y: float) -> np.ndarray:
    """kappa = R(theta) diag(kx, ky) R(theta)^T with kx the principal direction."""
    if not (kappa_x >= kappa_y > 0.0):
        raise ParameterError(
            f"require kappa_x >= kappa_y > 0, got ({kappa_x}, {kappa_y})")
    c, s = math.cos(theta_m), math.sin(theta_m)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([kappa_x, kappa_y]) @ R.T


def battery_region(x: float, y: float) -> int:
    """Material index (1-5) of a point of the battery domain.

    Interfaces are assigned to a deterministic side so the classifier is
    total on the closed rectangle; meshes are built aligned to the break
    lines, so element interiors never straddle materials.
    """
    if y < 0.8 or y > 23.2 or x > 8.0:
        return 1
    if y >= 21.2:
        return 5
    if x >= 6.5:
        return 5
    if x >= 6.1:
        return 4
    if y < 1.6:
        return 5
    if y < 3.6:
        return 2
    if y < 18.8:
        return 3
    return 2


BATTERY_X_BREAKS = (6.1, 6.5, 8.0)
BATTERY_Y_BREAKS = (0.8, 1.6, 3.6, 18.8, 21.2, 23.2)

# material -> (kappa_x, kappa_y, theta_m, forcing)
BATTERY_MATERIALS = {
    1: (25.0, 25.0, 0.0, 0.0),
    2: (7.0, 0.8, 0.0, 0.0),
    3: (5.0, 1e-5, 0.0, 1.0),
    4: (0.2, 0.2, 0.0, 1.0),
    5: (0.05, 0.05, 0.0, 0.0),
}

# side -> (lambda, g) of the Robin data  kappa grad(u).n + lambda u = g
BATTERY_BC = {"left": (0.0, 0.0), "top": (1.0, 3.0),
              "right": (2.0, 2.0), "bottom": (3.0, 1.0)}


# ---------------------------------------------------------------------------
# Exact solutions.
# ---------------------------------------------------------------------------

def e1_exact(pts) -> np.ndarray:
    """u = 2 (x^2+y^2)^(-3/4) x y (1-x)(1-y); continuous limit 0 at the origin."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    r2 = x * x + y * y
    safe = r2 > 0.0
    out = np.zeros(len(x))
    out[safe] = 2.0 * r2[safe] ** (-0.75) * (x * y * (1 - x) * (1 - y))[safe]
    return out


def e1_exact_grad(pts) -> np.ndarray:
    """Analytic gradient of the corner-singularity solution, shape (n, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    r2 = x * x + y * y
    w = r2 ** (-0.75)
    dw_dx = -1.5 * x * r2 ** (-1.75)
    dw_dy = -1.5 * y * r2 ** (-1.75)
    g = x * y * (1 - x) * (1 - y)
    gx = y * (1 - y) * (1 - 2 * x)
    gy = x * (1 - x) * (1 - 2 * y)
    return np.column_stack([2 * (dw_dx * g + w * gx), 2 * (dw_dy * g + w * gy)])


def e1_forcing(pts) -> np.ndarray:
    """-Laplacian of the corner-singularity solution (manufactured load).

    The stated exact solution is not harmonic, so reproducing it requires
    this forcing; it behaves like r^(-3/2) toward the origin.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    s = x * x + y * y
    phi, psi = x - x * x, y - y * y
    dphi, dpsi = 1.0 - 2.0 * x, 1.0 - 2.0 * y
    f = 2.0 * (3.0 * s ** -1.75 * (x * dphi * psi + y * phi * dpsi)
               - 2.25 * s ** -1.75 * phi * psi
               + 2.0 * s ** -0.75 * (phi + psi))
    return f.reshape(-1, 1)


def hp1_beta(pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return np.column_stack([1.0 + np.sin(np.pi * pts[:, 1]),
                            2.0 * np.ones(pts.shape[0])])


def hp1_s(y):
    """Characteristic horizontal drift from the bottom edge: int of beta1/beta2."""
    y = np.asarray(y, dtype=float)
    return y / 2.0 + (1.0 - np.cos(np.pi * y)) / (2.0 * np.pi)


def hp1_inflow(pts) -> np.ndarray:
    """Inflow data of the variable-speed advection problem (1 on the left edge,
    a sin^6 bump then 0 on the bottom edge)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros(len(x))
    left = x <= 1e-14
    out[left] = 1.0
    bottom = (~left) & (y <= 1e-14)
    xb = x[bottom]
    out[bottom] = np.where(xb <= 0.5, np.sin(2.0 * np.pi * xb) ** 6, 0.0)
    return out


def hp1_exact(pts) -> np.ndarray:
    """Characteristics solution: trace back to the inflow foot point."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    x0 = x - hp1_s(y)
    out = np.ones(len(x))
    hits_bottom = x0 >= 0.0
    xb = x0[hits_bottom]
    out[hits_bottom] = np.where(xb <= 0.5, np.sin(2.0 * np.pi * xb) ** 6, 0.0)
    return out


def hp1_foot_point(x: float, y: float) -> tuple[str, float]:
    """Inflow foot point of the characteristic through (x, y).

    Returns ("bottom", x0) or ("left", y_l) where y_l solves
    s(y_l) = s(y) - x by a monotone scalar root-find.
    """
    x0 = x - float(hp1_s(y))
    if x0 >= 0.0:
        return "bottom", x0
    target = float(hp1_s(y)) - x

    def fn(t):
        return float(hp1_s(t)) - target

    return "left", brentq(fn, 0.0, y)


def hb1_coefficients(n_terms: int) -> np.ndarray:
    """Closed-form cosine coefficients C_i of the inflow profile.

    u0(y) = (y-1)^2 for y > 1/2, -y^2 otherwise; C_i = int 2 u0 cos(i pi y).
    Even modes vanish; odd modes are sign-alternating in (i-1)/2.
    """
    C = np.zeros(n_terms + 1)
    for i in range(1, n_terms + 1):
        if i % 2 == 0:
            continue
        sign = -1.0 if ((i - 1) // 2) % 2 else 1.0
        C[i] = sign * (8.0 / (i ** 3 * math.pi ** 3) - 1.0 / (i * math.pi))
    return C


class Hb1Exact:
    """Truncated separation-of-variables solution of the Eriksson-Johnson
    convection-diffusion problem with beta = (1, 0) and kappa = eps I.

    All exponentials are arranged so their arguments are nonpositive on
    [0, 1]^2 (no overflow for small eps).
    """

    def __init__(self, eps: float, n_terms: int = 20):
        if eps <= 0.0:
            raise ParameterError("eps must be positive")
        if n_terms < 1:
            raise ParameterError("need at least one series term")
        self.eps = eps
        self.n_terms = n_terms
        self.C = hb1_coefficients(n_terms)
        i = np.arange(1, n_terms + 1, dtype=float)
        sigma = eps * (i * math.pi) ** 2
        root = np.sqrt(1.0 + 4.0 * eps * sigma)
        self.s1 = (1.0 + root) / (2.0 * eps)
        self.s2 = (1.0 - root) / (2.0 * eps)
        self.ipi = i * math.pi

    def _modes(self, x):
        x = np.asarray(x, dtype=float)[:, None]
        denom = 1.0 - np.exp(self.s2 - self.s1)[None, :]
        ea = np.exp(self.s2[None, :] * x)
        eb = np.exp(self.s1[None, :] * (x - 1.0) + self.s2[None, :])
        f = (ea - eb) / denom
        df = (self.s2[None, :] * ea - self.s1[None, :] * eb) / denom
        return f, df

    def u(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        f, _ = self._modes(pts[:, 0])
        cos = np.cos(pts[:, 1][:, None] * self.ipi[None, :])
        return (self.C[1:][None, :] * f * cos).sum(axis=1)

    def grad(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        f, df = self._modes(pts[:, 0])
        arg = pts[:, 1][:, None] * self.ipi[None, :]
        ux = (self.C[1:][None, :] * df * np.cos(arg)).sum(axis=1)
        uy = -(self.C[1:][None, :] * f * self.ipi[None, :] * np.sin(arg)).sum(axis=1)
        return np.column_stack([ux, uy])


# ---------------------------------------------------------------------------
# System builders.
# ---------------------------------------------------------------------------

def _side_of(normal) -> str:
    nx, ny = normal
    if nx < -0.5:
        return "left"
    if nx > 0.5:
        return "right"
    return "bottom" if ny < -0.5 else "top"


def elliptic_system(kappa_inv_fn, f_fn, boundary_fn, name) -> TwoFieldSystem:
    """Two-field descriptor of -div(kappa grad u) = f (partial coercivity, F2)."""
    B = np.zeros((2, 2, 1))
    B[0, 0, 0] = 1.0
    B[1, 1, 0] = 1.0
    return TwoFieldSystem(
        m_sigma=2, m_u=1, B=B,
        C_fn=zero_fn(2, 1, 1),
        G_ss_fn=kappa_inv_fn,
        f_sigma_fn=zero_fn(2),
        f_u_fn=f_fn,
        boundary_fn=boundary_fn,
        coercivity="partial",
        flux_hypothesis="F2",
        div_C_fn=zero_fn(1, 1),
        name=name,
    )


def convection_diffusion_system(eps: float, beta, f_fn, boundary_fn,
                                name) -> TwoFieldSystem:
    """Two-field descriptor of div(beta u - kappa grad u) = f, kappa = eps I."""
    beta = np.asarray(beta, dtype=float)
    B = np.zeros((2, 2, 1))
    B[0, 0, 0] = 1.0
    B[1, 1, 0] = 1.0

    def C_fn(pts):
        pts = np.atleast_2d(pts)
        C = np.zeros((pts.shape[0], 2, 1, 1))
        C[:, 0, 0, 0] = beta[0]
        C[:, 1, 0, 0] = beta[1]
        return C

    def Phi_fn(pts, nrm):
        pts = np.atleast_2d(pts)
        bn = float(beta @ np.asarray(nrm, dtype=float))
        return np.full((pts.shape[0], 1, 1), 2.0 / bn if bn != 0.0 else np.inf)

    def Psi_fn(pts, nrm):
        pts = np.atleast_2d(pts)
        bn = float(beta @ np.asarray(nrm, dtype=float))
        return np.full((pts.shape[0], 1, 1), bn / math.sqrt(bn * bn + 4.0))

    def T_fn(pts, nrm):
        # closed form T = (sqrt((beta.n)^2 + 4) - beta.n) / 2; smooth through
        # beta.n = 0 even though the F1 construction degenerates there
        pts = np.atleast_2d(pts)
        bn = float(beta @ np.asarray(nrm, dtype=float))
        t = 0.5 * (math.sqrt(bn * bn + 4.0) - bn)
        return np.full((pts.shape[0], 1, 1), t)

    return TwoFieldSystem(
        m_sigma=2, m_u=1, B=B,
        C_fn=C_fn,
        G_ss_fn=const_fn(np.eye(2) / eps),
        f_sigma_fn=zero_fn(2),
        f_u_fn=f_fn,
        boundary_fn=boundary_fn,
        coercivity="partial",
        flux_hypothesis="F1",
        Phi_fn=Phi_fn,
        Psi_fn=Psi_fn,
        T_fn=T_fn,
        div_C_fn=zero_fn(1, 1),  # constant beta
        name=name,
    )


def advection_system(beta_fn, f_fn, data_fn, name,
                     div_beta_fn=None) -> OneFieldSystem:
    """One-field descriptor of div(beta u) = f with characteristic BCs."""

    def A_fn(pts):
        pts = np.atleast_2d(pts)
        b = beta_fn(pts)
        A = np.zeros((pts.shape[0], 2, 1, 1))
        A[:, 0, 0, 0] = b[:, 0]
        A[:, 1, 0, 0] = b[:, 1]
        return A

    div_A_fn = None
    if div_beta_fn is not None:
        def div_A_fn(pts):
            pts = np.atleast_2d(pts)
            return div_beta_fn(pts).reshape(-1, 1, 1)

    def boundary_fn(midpoint, normal):
        return BoundarySpec(kind="characteristic", data_fn=data_fn)

    return OneFieldSystem(m=1, A_fn=A_fn, G_fn=zero_fn(1, 1), f_fn=f_fn,
                          boundary_fn=boundary_fn, div_A_fn=div_A_fn, name=name)


# ---------------------------------------------------------------------------
# Benchmark registry.
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkProblem:
    id: str
    system: object
    domain: tuple
    params: dict = field(default_factory=dict)
    exact_u: Callable | None = None
    exact_grad: Callable | None = None
    default_functional: str = "custom"
    default_omega: float = 0.01
    mesh_kwargs: dict = field(default_factory=dict)

    def make_mesh(self, nx=4, ny=4, p0=2, p_min=1, p_max=8) -> Mesh:
        return build_structured_mesh(self.domain, nx, ny, p0,
                                     p_min=p_min, p_max=p_max,
                                     **self.mesh_kwargs)

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None


def _dirichlet(data_fn):
    def boundary_fn(midpoint, normal):
        return BoundarySpec(kind="dirichlet", data_fn=data_fn)
    return boundary_fn


def make_problem(pid: str, **params) -> BenchmarkProblem:
    pid = pid.upper()
    if pid == "E1":
        return _make_e1(**params)
    if pid == "E2":
        return _make_e2(**params)
    if pid == "E3":
        return _make_e3(**params)
    if pid == "HP1":
        return _make_hp1(**params)
    if pid == "HB1":
        return _make_hb1(**params)
    raise ParameterError(f"unknown problem id {pid!r}")


def _make_e1():
    def g_dir(pts, nrm):
        return e1_exact(pts).reshape(-1, 1)

    system = elliptic_system(const_fn(np.eye(2)), e1_forcing,
                             _dirichlet(g_dir), name="E1")
    return BenchmarkProblem(
        id="E1", system=system, domain=(0.0, 1.0, 0.0, 1.0),
        exact_u=e1_exact, exact_grad=e1_exact_grad,
        default_functional="e1_boundary_sum", default_omega=0.01)


def _make_e2(a_kappa=1000.0, theta_m=math.pi / 4.0, kappa_scale=1.0):
    if a_kappa < 1.0:
        raise ParameterError("anisotropy ratio must be >= 1")
    if kappa_scale <= 0.0:
        raise ParameterError("kappa_scale must be positive")
    kappa = kappa_scale * anisotropic_kappa(theta_m, a_kappa, 1.0)
    kappa_inv = np.linalg.inv(kappa)

    def g_dir(pts, nrm):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        val = np.where((x >= 1.0 - 1e-12) | (y <= 1e-12), 1.0, 0.0)
        return val.reshape(-1, 1)

    system = elliptic_system(const_fn(kappa_inv), zero_fn(1),
                             _dirichlet(g_dir), name="E2")
    return BenchmarkProblem(
        id="E2", system=system, domain=(0.0, 1.0, 0.0, 1.0),
        params={"a_kappa": a_kappa, "theta_m": theta_m,
                "kappa_scale": kappa_scale},
        default_functional="e2_sinusoidal_boundary", default_omega=0.01)


def battery_kappa_inv(pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    out = np.empty((pts.shape[0], 2, 2))
    for i, (x, y) in enumerate(pts):
        kx, ky, th, _ = BATTERY_MATERIALS[battery_region(x, y)]
        out[i] = np.linalg.inv(anisotropic_kappa(th, kx, ky))
    return out


def battery_forcing(pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    return np.array([[BATTERY_MATERIALS[battery_region(x, y)][3]]
                     for x, y in pts])


def _make_e3():
    for side, (lam, _) in BATTERY_BC.items():
        if lam < 0.0:
            raise ParameterError(f"Robin coefficient on {side} must be >= 0")

    def boundary_fn(midpoint, normal):
        side = _side_of(normal)
        lam, g = BATTERY_BC[side]
        kind = "neumann" if lam == 0.0 else "robin"
        # flux-form data: sigma.n - lambda u = -g at the exact solution
        return BoundarySpec(
            kind=kind,
            rho_fn=const_fn(np.array(lam)),
            data_fn=lambda pts, nrm, _g=g: np.full((np.atleast_2d(pts).shape[0], 1), -_g))

    system = elliptic_system(battery_kappa_inv, battery_forcing,
                             boundary_fn, name="E3")
    return BenchmarkProblem(
        id="E3", system=system, domain=(0.0, 8.4, 0.0, 24.0),
        default_functional="e3_left_boundary", default_omega=0.01,
        mesh_kwargs={"region_fn": battery_region,
                     "x_breaks": BATTERY_X_BREAKS,
                     "y_breaks": BATTERY_Y_BREAKS})


def _make_hp1():
    def f_fn(pts):
        return np.zeros((np.atleast_2d(pts).shape[0], 1))

    def data_fn(pts, nrm):
        return hp1_inflow(pts).reshape(-1, 1)

    system = advection_system(hp1_beta, f_fn, data_fn, name="HP1",
                              div_beta_fn=lambda pts: np.zeros(np.atleast_2d(pts).shape[0]))
    return BenchmarkProblem(
        id="HP1", system=system, domain=(0.0, 1.0, 0.0, 1.0),
        exact_u=hp1_exact, default_functional="hp1_outflow_sinusoidal",
        default_omega=0.05)


def _make_hb1(epsilon=1e-3, n_terms=20):
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be positive")
    exact = Hb1Exact(epsilon, n_terms)
    beta = np.array([1.0, 0.0])

    def boundary_fn(midpoint, normal):
        side = _side_of(normal)
        if side == "right":        # outflow: Dirichlet, g_D = 0
            return BoundarySpec(kind="dirichlet",
                                data_fn=lambda pts, nrm: np.zeros((np.atleast_2d(pts).shape[0], 1)))
        if side == "left":         # inflow: Robin with rho = -beta.n = 1
            def data_fn(pts, nrm):
                pts = np.atleast_2d(pts)
                u0 = exact.u(pts)
                sig = -epsilon * exact.grad(pts)
                q = (beta[None, :] * u0[:, None] + sig) @ np.asarray(nrm, dtype=float)
                return q.reshape(-1, 1)
            return BoundarySpec(kind="robin", rho_fn=const_fn(np.array(1.0)),
                                data_fn=data_fn)
        # zero-flow sides: Neumann with rho = 0 and vanishing total flux
        return BoundarySpec(kind="neumann", rho_fn=const_fn(np.array(0.0)),
                            data_fn=lambda pts, nrm: np.zeros((np.atleast_2d(pts).shape[0], 1)))

    system = convection_diffusion_system(epsilon, beta, zero_fn(1),
                                         boundary_fn, name="HB1")
    return BenchmarkProblem(
        id="HB1", system=system, domain=(0.0, 1.0, 0.0, 1.0),
        params={"epsilon": epsilon, "n_terms": n_terms},
        exact_u=exact.u, exact_grad=exact.grad,
        default_functional="hb1_right_boundary", default_omega=0.05)


# ---------------------------------------------------------------------------
# Error norms.
# ---------------------------------------------------------------------------

def l2_error(solution, exact_u, quad_extra: int = 2) -> float:
    """L2 norm of (u_h - u) with over-integration (strength 2 p_K + 4)."""
    if exact_u is None:
        raise UnsupportedErrorNormError("problem has no exact solution handle")
    disc = solution.disc
    total = 0.0
    for k in disc.active:
        p = disc.degrees[k]
        rule = basis.triangle_rule(min(2 * p + 2 + quad_extra, basis.MAX_STRENGTH))
        v0, J, detJ = disc.elem_map(k)
        X = v0[None, :] + rule.points @ J.T
        diff = solution.u_values(k, rule.points) - exact_u(X)
        total += float((rule.weights * detJ * diff ** 2).sum())
    return math.sqrt(total)


def problem_l2_error(problem: BenchmarkProblem, solution) -> float:
    return l2_error(solution, problem.exact_u)
