import json

import numpy as np
import pytest

from hphdg.errors import InvalidDomainError, MeshIntegrityError
from hphdg.mesh import (Action, Mesh, build_skeleton, build_structured_mesh,
                        is_one_irregular, mesh_dump, red_refine)

UNIT = (0.0, 1.0, 0.0, 1.0)


def total_active_area(mesh):
    return sum(mesh.area(k) for k in mesh.active_ids())


def test_minimal_split():
    mesh = build_structured_mesh(UNIT, 1, 1, 2)
    assert mesh.n_active == 2
    assert all(e.p == 2 for e in mesh.elements)
    assert abs(total_active_area(mesh) - 1.0) < 1e-12


def test_two_by_two_counts():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    assert mesh.n_active == 8


def test_degenerate_rectangle_rejected():
    with pytest.raises(InvalidDomainError):
        build_structured_mesh((0.0, 0.0, 0.0, 1.0), 1, 1, 1)
    with pytest.raises(InvalidDomainError):
        build_structured_mesh(UNIT, 0, 1, 1)


def test_refine_one_element_counts():
    mesh = build_structured_mesh(UNIT, 1, 1, 1)
    red_refine(mesh, {0: Action.H_REFINE})
    assert mesh.n_active == 5
    assert abs(total_active_area(mesh) - 1.0) < 1e-12


def test_uniform_refinement_counts():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    n = mesh.n_active
    red_refine(mesh, {k: Action.H_REFINE for k in mesh.active_ids()})
    assert mesh.n_active == 4 * n
    assert abs(total_active_area(mesh) - 1.0) < 1e-12


def test_closure_keeps_one_irregularity():
    mesh = build_structured_mesh(UNIT, 1, 1, 1)
    red_refine(mesh, {0: Action.H_REFINE})
    assert is_one_irregular(mesh)
    # refine a child adjacent to the unrefined coarse neighbor: without
    # closure the neighbor's hypotenuse would see two hanging nodes
    child = None
    for k in mesh.active_ids():
        e = mesh.elements[k]
        if e.parent == 0 and any(
                np.allclose(mesh.coords(k)[i], [0.5, 0.5]) for i in range(3)):
            child = k
            break
    assert child is not None
    n_before = mesh.n_active
    red_refine(mesh, {child: Action.H_REFINE})
    assert is_one_irregular(mesh)
    # closure force-refined the coarse neighbor as well
    assert mesh.n_active > n_before + 3
    assert not mesh.elements[1].active


def test_closure_idempotent():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    red_refine(mesh, {0: Action.H_REFINE, 3: Action.H_REFINE})
    n = mesh.n_active
    red_refine(mesh, {})  # re-running closure is a no-op
    assert mesh.n_active == n


def test_p_actions_and_caps():
    mesh = build_structured_mesh(UNIT, 1, 1, 1, p_min=1, p_max=3)
    red_refine(mesh, {0: Action.P_REFINE})
    assert mesh.elements[0].p == 2
    red_refine(mesh, {0: Action.P_REFINE})
    red_refine(mesh, {0: Action.P_REFINE})
    assert mesh.elements[0].p == 3  # capped at p_max
    red_refine(mesh, {1: Action.H_REFINE_P_COARSEN})
    kids = [k for k in mesh.active_ids() if mesh.elements[k].parent == 1]
    assert len(kids) == 4
    assert all(mesh.elements[k].p == 1 for k in kids)  # floored at p_min


def test_skeleton_conforming_counts():
    mesh = build_structured_mesh(UNIT, 1, 1, 2)
    skel = build_skeleton(mesh)
    assert skel.n_interior == 1
    assert skel.n_boundary == 4


def test_skeleton_split_mortars():
    mesh = build_structured_mesh(UNIT, 1, 1, 1)
    red_refine(mesh, {0: Action.H_REFINE})
    skel = build_skeleton(mesh)
    # the old diagonal now carries 2 mortars, each matching a child face
    diag = [m for m in skel.mortars
            if m.right is not None and m.right.elem == 1]
    assert len(diag) == 2
    for m in diag:
        assert abs(m.length - np.sqrt(2.0) / 2.0) < 1e-12
        assert m.left.sub == (0, 1)
        lo, hi = sorted(m.right.sub)
        assert (lo, hi) in [(0, 0.5), (0.5, 1)]


def test_mortar_degree_rule():
    mesh = build_structured_mesh(UNIT, 1, 1, 2)
    mesh.elements[0].p = 2
    mesh.elements[1].p = 4
    skel = build_skeleton(mesh)
    for m in skel.mortars:
        if m.right is None:
            assert m.p == mesh.elements[m.left.elem].p
        else:
            assert m.p == max(mesh.elements[m.left.elem].p,
                              mesh.elements[m.right.elem].p)


def test_mortar_sides_share_endpoints():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    red_refine(mesh, {0: Action.H_REFINE})
    skel = build_skeleton(mesh)
    for m in skel.mortars:
        if m.right is None:
            continue
        for side in (m.left, m.right):
            a, b = mesh.face_vertex_ids(side.elem, side.face)
            pa = np.array([float(v) for v in mesh.verts_exact[a]])
            pb = np.array([float(v) for v in mesh.verts_exact[b]])
            for t_m, end in ((0.0, m.ends[0]), (1.0, m.ends[1])):
                s = float(side.sub[0]) + (float(side.sub[1]) - float(side.sub[0])) * t_m
                phys = pa + s * (pb - pa)
                target = np.array([float(end[0]), float(end[1])])
                assert np.abs(phys - target).max() < 1e-12


def test_normals_unit_and_outward():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    skel = build_skeleton(mesh)
    for m in skel.mortars:
        assert abs(np.linalg.norm(m.normal) - 1.0) < 1e-12
        # outward: points from the left element centroid toward the mortar
        c = mesh.centroid(m.left.elem)
        assert np.dot(m.midpoint() - c, m.normal) > 0


def test_battery_alignment_and_regions():
    from hphdg.problems import battery_region
    breaks_x = [6.1, 6.5, 8.0]
    breaks_y = [0.8, 1.6, 3.6, 18.8, 21.2, 23.2]
    mesh = build_structured_mesh((0.0, 8.4, 0.0, 24.0), 2, 4, 1,
                                 region_fn=battery_region,
                                 x_breaks=breaks_x, y_breaks=breaks_y)
    assert abs(total_active_area(mesh) - 8.4 * 24.0) < 1e-9
    for k in mesh.active_ids():
        e = mesh.elements[k]
        assert e.region in {1, 2, 3, 4, 5}
        cx, cy = mesh.centroid(k)
        assert e.region == battery_region(cx, cy)
        # no element straddles a material interface: all three vertex-side
        # midpoints classify like the centroid unless they lie on a break line
        c = mesh.coords(k)
        for i in range(3):
            mid = (c[i] + c[(i + 1) % 3]) / 2.0
            on_break = (any(abs(mid[0] - b) < 1e-12 for b in breaks_x)
                        or any(abs(mid[1] - b) < 1e-12 for b in breaks_y))
            if not on_break:
                interior = mid + 1e-9 * (mesh.centroid(k) - mid)
                assert battery_region(*interior) == e.region


def test_mesh_dump_roundtrip():
    mesh = build_structured_mesh(UNIT, 1, 1, 2)
    skel = build_skeleton(mesh)
    data = json.loads(mesh_dump(mesh, skel))
    assert len(data["vertices"]) == 4
    assert len(data["elements"]) == 2
    assert len(data["mortars"]) == 5
    assert data["elements"][0]["p"] == 2


def test_inconsistent_mesh_detected():
    mesh = build_structured_mesh(UNIT, 2, 2, 1)
    mesh.elements[0].active = False  # hole in the triangulation
    with pytest.raises(MeshIntegrityError):
        build_skeleton(mesh)
