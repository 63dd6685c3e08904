"""Hierarchical triangular meshes with red refinement and split-sided mortars.

Vertex coordinates created by refinement are exact rationals (midpoints on
the refinement tree), so face matching across refinement levels is done by
exact segment keys instead of floating-point coordinate comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import ContractViolationError, InvalidDomainError, MeshIntegrityError

XY = tuple  # exact vertex coordinate pair (Fraction, Fraction)


class Action(Enum):
    NONE = "none"
    P_REFINE = "p_refine"
    H_REFINE = "h_refine"
    H_REFINE_P_COARSEN = "h_refine_p_coarsen"


@dataclass
class Element:
    verts: tuple[int, int, int]     # counterclockwise
    p: int
    region: int = 0
    parent: int = -1
    children: tuple[int, ...] = ()
    active: bool = True
    level: int = 0


@dataclass
class MortarSide:
    elem: int
    face: int                       # local face index of the element
    sub: tuple[Fraction, Fraction]  # face-parameter interval covered by the mortar


@dataclass
class Mortar:
    left: MortarSide
    right: MortarSide | None        # None on the domain boundary
    ends: tuple[XY, XY]             # exact endpoints, in left-side orientation
    p: int                          # trace degree p_e
    normal: np.ndarray              # unit outward normal of the left element
    length: float

    @property
    def boundary(self) -> bool:
        return self.right is None

    def midpoint(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.ends
        return np.array([float(x0 + x1) / 2.0, float(y0 + y1) / 2.0])

    def points(self, t: np.ndarray) -> np.ndarray:
        """Physical coordinates of mortar parameters t in [0, 1], shape (n, 2)."""
        (x0, y0), (x1, y1) = self.ends
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.column_stack([float(x0) + (float(x1) - float(x0)) * t,
                                float(y0) + (float(y1) - float(y0)) * t])


@dataclass
class Skeleton:
    mortars: list[Mortar]
    elem_mortars: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    # elem_mortars[k] = [(mortar_id, side)], side 0 = left, 1 = right

    @property
    def n_interior(self) -> int:
        return sum(1 for m in self.mortars if not m.boundary)

    @property
    def n_boundary(self) -> int:
        return sum(1 for m in self.mortars if m.boundary)


class Mesh:
    """Triangulation with a red-refinement tree and per-element degrees."""

    def __init__(self, p_min: int = 1, p_max: int = 8):
        self.verts_exact: list[XY] = []
        self._vert_ids: dict[XY, int] = {}
        self.elements: list[Element] = []
        self.p_min = p_min
        self.p_max = p_max
        self.domain: tuple[float, float, float, float] | None = None

    # -- vertices ----------------------------------------------------------

    def add_vertex(self, xy: XY) -> int:
        vid = self._vert_ids.get(xy)
        if vid is None:
            vid = len(self.verts_exact)
            self.verts_exact.append(xy)
            self._vert_ids[xy] = vid
        return vid

    @property
    def vertices(self) -> np.ndarray:
        return np.array([[float(x), float(y)] for x, y in self.verts_exact])

    def coords(self, k: int) -> np.ndarray:
        """Float vertex coordinates of element k, shape (3, 2), CCW."""
        vx = self.verts_exact
        return np.array([[float(vx[v][0]), float(vx[v][1])]
                         for v in self.elements[k].verts])

    # -- element queries ----------------------------------------------------

    def active_ids(self) -> list[int]:
        return [i for i, e in enumerate(self.elements) if e.active]

    @property
    def n_active(self) -> int:
        return sum(1 for e in self.elements if e.active)

    def area(self, k: int) -> float:
        c = self.coords(k)
        u, v = c[1] - c[0], c[2] - c[0]
        return 0.5 * abs(u[0] * v[1] - u[1] * v[0])

    def diameter(self, k: int) -> float:
        c = self.coords(k)
        return max(np.linalg.norm(c[1] - c[0]), np.linalg.norm(c[2] - c[1]),
                   np.linalg.norm(c[0] - c[2]))

    def centroid(self, k: int) -> np.ndarray:
        return self.coords(k).mean(axis=0)

    def face_vertex_ids(self, k: int, face: int) -> tuple[int, int]:
        v = self.elements[k].verts
        return v[face], v[(face + 1) % 3]

    def face_length(self, k: int, face: int) -> float:
        a, b = self.face_vertex_ids(k, face)
        pa, pb = self.verts_exact[a], self.verts_exact[b]
        return float(np.hypot(float(pb[0] - pa[0]), float(pb[1] - pa[1])))

    def face_normal(self, k: int, face: int) -> np.ndarray:
        a, b = self.face_vertex_ids(k, face)
        pa, pb = self.verts_exact[a], self.verts_exact[b]
        t = np.array([float(pb[0] - pa[0]), float(pb[1] - pa[1])])
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    # -- construction -------------------------------------------------------

    def _add_element(self, verts, p, region, parent=-1, level=0) -> int:
        self.elements.append(Element(verts=tuple(verts), p=p, region=region,
                                     parent=parent, level=level))
        return len(self.elements) - 1


def _to_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _grid_lines(lo: Fraction, hi: Fraction, n: int, breaks) -> list[Fraction]:
    lines = {lo + (hi - lo) * Fraction(i, n) for i in range(n + 1)}
    for b in breaks:
        fb = _to_fraction(b)
        if not (lo < fb < hi):
            raise InvalidDomainError(f"breakpoint {b} outside the open domain interval")
        lines.add(fb)
    return sorted(lines)


def build_structured_mesh(domain, nx: int, ny: int, degree: int,
                          region_fn=None, x_breaks=(), y_breaks=(),
                          p_min: int = 1, p_max: int = 8) -> Mesh:
    """Conforming triangulation of an axis-aligned rectangle.

    Each grid cell is split into two CCW triangles. Optional x_breaks /
    y_breaks are inserted into the uniform grid so material interfaces land
    exactly on element edges. region_fn(x, y) classifies element centroids.
    """
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise InvalidDomainError(f"degenerate rectangle {domain}")
    if nx < 1 or ny < 1:
        raise InvalidDomainError("nx and ny must be >= 1")
    if degree < 1:
        raise ContractViolationError("initial degree must be >= 1")

    mesh = Mesh(p_min=p_min, p_max=p_max)
    mesh.domain = (x0, x1, y0, y1)
    xs = _grid_lines(_to_fraction(domain[0]), _to_fraction(domain[1]), nx, x_breaks)
    ys = _grid_lines(_to_fraction(domain[2]), _to_fraction(domain[3]), ny, y_breaks)
    vid = [[mesh.add_vertex((x, y)) for y in ys] for x in xs]

    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            ll, lr = vid[i][j], vid[i + 1][j]
            ul, ur = vid[i][j + 1], vid[i + 1][j + 1]
            for tri in ((ll, lr, ur), (ll, ur, ul)):
                k = mesh._add_element(tri, degree, 0)
                if region_fn is not None:
                    cx, cy = mesh.centroid(k)
                    mesh.elements[k].region = int(region_fn(cx, cy))
    return mesh


# ---------------------------------------------------------------------------
# Refinement.
# ---------------------------------------------------------------------------

def _midpoint(a: XY, b: XY) -> XY:
    return ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)


def _split(mesh: Mesh, k: int, p_children: int):
    e = mesh.elements[k]
    v0, v1, v2 = e.verts
    xv = mesh.verts_exact
    m01 = mesh.add_vertex(_midpoint(xv[v0], xv[v1]))
    m12 = mesh.add_vertex(_midpoint(xv[v1], xv[v2]))
    m20 = mesh.add_vertex(_midpoint(xv[v2], xv[v0]))
    kids = []
    for tri in ((v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m01, m12, m20)):
        kids.append(mesh._add_element(tri, p_children, e.region, parent=k,
                                      level=e.level + 1))
    e.active = False
    e.children = tuple(kids)


def _seg_key(a: XY, b: XY):
    return (a, b) if a <= b else (b, a)


def _active_faces(mesh: Mesh) -> dict:
    faces: dict = {}
    xv = mesh.verts_exact
    for k in mesh.active_ids():
        v = mesh.elements[k].verts
        for f in range(3):
            key = _seg_key(xv[v[f]], xv[v[(f + 1) % 3]])
            faces.setdefault(key, []).append((k, f))
    return faces


def _descendant_depth(key, faces, limit=4) -> int:
    """Depth of the deepest active sub-face strictly inside the segment key."""
    if limit == 0:
        return 0
    a, b = key
    m = _midpoint(a, b)
    depth = 0
    for half in (_seg_key(a, m), _seg_key(m, b)):
        if half in faces:
            depth = max(depth, 1)
        sub = _descendant_depth(half, faces, limit - 1)
        if sub:
            depth = max(depth, 1 + sub)
    return depth


def is_one_irregular(mesh: Mesh) -> bool:
    faces = _active_faces(mesh)
    xv = mesh.verts_exact
    for k in mesh.active_ids():
        v = mesh.elements[k].verts
        for f in range(3):
            key = _seg_key(xv[v[f]], xv[v[(f + 1) % 3]])
            if _descendant_depth(key, faces) > 1:
                return False
    return True


def red_refine(mesh: Mesh, tags: dict[int, Action]) -> Mesh:
    """Apply h/p refinement tags and restore 1-irregularity by closure.

    h-tagged elements are split into four children by edge midpoints;
    children inherit the parent degree (minus one, floored at p_min, for the
    combined h-refine + p-coarsen action). p-tagged elements get p+1 capped
    at p_max. Closure h-refines any element whose full face would otherwise
    see more than one hanging node. The mesh is modified in place.
    """
    for k, action in tags.items():
        if not mesh.elements[k].active:
            raise ContractViolationError(f"element {k} is not active")
        if action == Action.P_REFINE:
            e = mesh.elements[k]
            e.p = min(e.p + 1, mesh.p_max)
        elif action == Action.H_REFINE:
            _split(mesh, k, mesh.elements[k].p)
        elif action == Action.H_REFINE_P_COARSEN:
            _split(mesh, k, max(mesh.elements[k].p - 1, mesh.p_min))

    # closure: repeat until no face hosts more than one hanging node
    while True:
        faces = _active_faces(mesh)
        violators = []
        xv = mesh.verts_exact
        for k in mesh.active_ids():
            v = mesh.elements[k].verts
            for f in range(3):
                key = _seg_key(xv[v[f]], xv[v[(f + 1) % 3]])
                if _descendant_depth(key, faces) > 1:
                    violators.append(k)
                    break
        if not violators:
            break
        for k in violators:
            _split(mesh, k, mesh.elements[k].p)
    return mesh


# ---------------------------------------------------------------------------
# Skeleton construction.
# ---------------------------------------------------------------------------

def _face_sub_interval(mesh: Mesh, k: int, face: int, ends) -> tuple[Fraction, Fraction]:
    """Face-parameter interval of element k's face covered by segment ends."""
    a, b = mesh.face_vertex_ids(k, face)
    pa, pb = mesh.verts_exact[a], mesh.verts_exact[b]
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]

    def param(pt):
        if abs(dx) >= abs(dy):
            return Fraction(pt[0] - pa[0], dx)
        return Fraction(pt[1] - pa[1], dy)

    return param(ends[0]), param(ends[1])


def _on_domain_boundary(mesh: Mesh, ends) -> bool:
    if mesh.domain is None:
        return True  # no domain recorded: cannot cross-check
    x0, x1, y0, y1 = mesh.domain
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    for target, idx in ((x0, 0), (x1, 0), (y0, 1), (y1, 1)):
        if all(abs(float(p[idx]) - target) <= tol for p in ends):
            return True
    return False


def build_skeleton(mesh: Mesh) -> Skeleton:
    """Split-sided mortar skeleton of a 1-irregular mesh.

    Interior conforming faces produce one mortar; a coarse face adjacent to
    two refined neighbor faces produces two mortars conforming to the small
    faces; boundary faces produce boundary mortars. Trace degrees follow
    p_e = max(p-, p+) on interior mortars and p_e = p_K on the boundary.
    """
    faces = _active_faces(mesh)
    xv = mesh.verts_exact
    mortars: list[Mortar] = []
    consumed = set()

    def left_ends(k, f):
        va, vb = mesh.face_vertex_ids(k, f)
        return (xv[va], xv[vb])

    def make(left_kf, right_kf, ends):
        lk, lf = left_kf
        sub_l = _face_sub_interval(mesh, lk, lf, ends)
        left = MortarSide(lk, lf, sub_l)
        if right_kf is None:
            right = None
            p_e = mesh.elements[lk].p
        else:
            rk, rf = right_kf
            right = MortarSide(rk, rf, _face_sub_interval(mesh, rk, rf, ends))
            p_e = max(mesh.elements[lk].p, mesh.elements[rk].p)
        length = float(np.hypot(float(ends[1][0] - ends[0][0]),
                                float(ends[1][1] - ends[0][1])))
        mortars.append(Mortar(left=left, right=right, ends=ends, p=p_e,
                              normal=mesh.face_normal(lk, lf), length=length))

    for key in faces:
        entries = faces[key]
        if len(entries) > 2:
            raise MeshIntegrityError(f"face shared by {len(entries)} active elements")
        if len(entries) == 2:
            # conforming interior face; the lower element id is the left side
            (k0, f0), (k1, f1) = sorted(entries)
            if (k0, f0) in consumed:
                continue
            ends = left_ends(k0, f0)
            make((k0, f0), (k1, f1), ends)
            consumed.add((k0, f0))
            consumed.add((k1, f1))

    for key, entries in faces.items():
        if len(entries) != 1 or entries[0] in consumed:
            continue
        k, f = entries[0]
        a, b = key
        m = _midpoint(a, b)
        halves = [h for h in (_seg_key(a, m), _seg_key(m, b)) if h in faces]
        if len(halves) == 2:
            # coarse side of a nonconforming interface: one mortar per small face
            for h in halves:
                (rk, rf), = faces[h]
                ends = left_ends(rk, rf)
                make((rk, rf), (k, f), ends)
                consumed.add((rk, rf))
            consumed.add((k, f))
        elif len(halves) == 1:
            raise MeshIntegrityError("half-matched interface (mesh not 1-irregular?)")

    for key, entries in faces.items():
        if len(entries) != 1 or entries[0] in consumed:
            continue
        k, f = entries[0]
        ends = left_ends(k, f)
        if not _on_domain_boundary(mesh, ends):
            raise MeshIntegrityError(f"unmatched interior face of element {k}")
        make((k, f), None, ends)
        consumed.add((k, f))

    mortars.sort(key=lambda m: (m.left.elem, m.left.face, m.left.sub[0]))
    elem_mortars: dict[int, list[tuple[int, int]]] = {}
    for i, m in enumerate(mortars):
        elem_mortars.setdefault(m.left.elem, []).append((i, 0))
        if m.right is not None:
            elem_mortars.setdefault(m.right.elem, []).append((i, 1))
    return Skeleton(mortars=mortars, elem_mortars=elem_mortars)


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------

def mesh_dump(mesh: Mesh, skeleton: Skeleton | None = None) -> str:
    """Deterministic JSON dump of the mesh (and optionally its skeleton)."""
    data = {
        "vertices": [[float(x), float(y)] for x, y in mesh.verts_exact],
        "elements": [
            {"verts": list(e.verts), "p": e.p, "region": e.region,
             "active": e.active, "parent": e.parent}
            for e in mesh.elements
        ],
    }
    if skeleton is not None:
        data["mortars"] = [
            {"left": [m.left.elem, m.left.face,
                      [str(m.left.sub[0]), str(m.left.sub[1])]],
             "right": None if m.right is None else
                 [m.right.elem, m.right.face,
                  [str(m.right.sub[0]), str(m.right.sub[1])]],
             "p": m.p}
            for m in skeleton.mortars
        ]
    return json.dumps(data, indent=1)
