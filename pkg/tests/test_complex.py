import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aodisloc.complex import (BCS, DIRICHLET, FCC3D, NEUMANN, PERIODIC, TRI2D,
                              ComplexError, LatticeSpec, basis, bond_vectors, boundary,
                              build_complex, cohomology_dims, dual_basis, positions)

from conftest import cached_complex

SQ2 = np.sqrt(2.0)


def test_fcc_basis_vectors():
    b = bond_vectors(FCC3D)
    expect = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]]) / SQ2
    np.testing.assert_allclose(b[:3], expect, atol=1e-15)
    np.testing.assert_allclose(b[3], b[2] - b[1], atol=1e-15)
    np.testing.assert_allclose(b[4], b[0] - b[2], atol=1e-15)
    np.testing.assert_allclose(b[5], b[1] - b[0], atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-15)


def test_tri_basis_vectors():
    b = bond_vectors(TRI2D)
    np.testing.assert_allclose(b[0], [1, 0], atol=1e-15)
    np.testing.assert_allclose(b[1], [-0.5, np.sqrt(3) / 2], atol=1e-15)
    np.testing.assert_allclose(b[2], -b[0] - b[1], atol=1e-15)


@pytest.mark.parametrize("kind", [FCC3D, TRI2D])
def test_dual_basis(kind):
    b, m = basis(kind), dual_basis(kind)
    k = b.shape[0]
    np.testing.assert_allclose(b @ m[:k].T, 2 * np.pi * np.eye(k), atol=1e-13)


@pytest.mark.parametrize("bad", [dict(kind="FCC3D", N=1, bc="dirichlet"),
                                 dict(kind="cubic", N=3, bc="dirichlet"),
                                 dict(kind="TRI2D", N=3, bc="free")])
def test_spec_rejects(bad):
    with pytest.raises(ComplexError):
        LatticeSpec(**bad)


def test_tri_neumann_n2_counts():
    # brute force: pairs of the 2x2 rhombus at distance exactly 1
    cx = build_complex(LatticeSpec(TRI2D, 2, NEUMANN))
    pts = positions(TRI2D, cx.vertex_coords())
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    n_pairs = int(np.sum(np.isclose(dist, 1.0)) // 2)
    tri = sum(1 for i in range(4) for j in range(i + 1, 4) for k in range(j + 1, 4)
              if np.isclose(dist[i, j], 1) and np.isclose(dist[j, k], 1) and np.isclose(dist[i, k], 1))
    assert (n_pairs, tri) == (5, 2)
    assert cx.counts() == [4, 5, 2]


@pytest.mark.parametrize("N", [3, 4])
def test_fcc_periodic_coordination(N):
    cx = cached_complex(FCC3D, N, PERIODIC)
    deg = np.asarray(abs(cx.incidence[0]).sum(axis=0)).ravel()
    assert np.all(deg == 12)


def test_tri_periodic_coordination():
    cx = cached_complex(TRI2D, 5, PERIODIC)
    deg = np.asarray(abs(cx.incidence[0]).sum(axis=0)).ravel()
    assert np.all(deg == 6)


def _face_with_vertices(cx, verts):
    target = {tuple(v) for v in verts}
    for f in range(cx.n_cells(2)):
        if {tuple(v) for v in cx.cell_vertices(2, [f])[0]} == target:
            return f
    raise AssertionError("face not found")


def _oriented_pairs(signed_edges):
    out = []
    for s, c in signed_edges:
        a, b = c.vertices
        out.append((a, b) if s > 0 else (b, a))
    return out


def test_boundary_of_f1():
    cx = cached_complex(FCC3D, 4, DIRICHLET)
    o, b2, b3 = (0, 0, 0), (0, 1, 0), (0, 0, 1)
    f = _face_with_vertices(cx, [o, b2, b3])
    pairs = set(_oriented_pairs(boundary(cx, cx.cell(2, f))))
    cycle = {(o, b2), (b2, b3), (b3, o)}
    reverse = {(y, x) for x, y in cycle}
    assert pairs == cycle or pairs == reverse


def test_edge_boundary_signs():
    cx = cached_complex(FCC3D, 3, DIRICHLET)
    e = cx.cell_id(1, np.array([0, 0, 0]), 0)
    bd = boundary(cx, cx.cell(1, e))
    got = {c.vertices[0]: s for s, c in bd}
    assert got == {(0, 0, 0): -1, (1, 0, 0): 1}


def test_vertex_has_no_boundary():
    cx = cached_complex(TRI2D, 3, DIRICHLET)
    with pytest.raises(ComplexError, match="no boundary"):
        boundary(cx, cx.cell(0, 0))


def test_flip_negates_boundary():
    cx = cached_complex(FCC3D, 3, NEUMANN)
    c = cx.cell(2, 5)
    a = boundary(cx, c)
    b = boundary(cx, c.flipped())
    assert [(-s, x.id) for s, x in a] == [(s, x.id) for s, x in b]


@pytest.mark.parametrize("bc", [DIRICHLET, NEUMANN])
def test_volume_faces_outward(bc):
    """All boundary faces of a 3-cell point the same way relative to its barycenter."""
    cx = cached_complex(FCC3D, 3, bc)
    vols = cx.cell_vertices(3)
    for v in range(cx.n_cells(3)):
        G = positions(FCC3D, np.array(vols[v])).mean(axis=0)
        signs = []
        for s, f in boundary(cx, cx.cell(3, v)):
            x = positions(FCC3D, np.array(f.vertices))
            n = s * np.cross(x[1] - x[0], x[2] - x[0])
            signs.append(np.sign((x.mean(axis=0) - G) @ n))
        assert len(set(signs)) == 1 and signs[0] != 0
        inside = np.all(cx.in_box(np.array(vols[v])))
        if inside:
            assert len(signs) in (4, 8)


def test_r_tetrahedron_faces():
    cx = cached_complex(FCC3D, 4, NEUMANN)
    vols = cx.cell_vertices(3)
    target = {(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)}
    v = next(i for i in range(cx.n_cells(3)) if {tuple(x) for x in vols[i]} == target)
    bd = boundary(cx, cx.cell(3, v))
    assert len(bd) == 4
    assert all(set(f.vertices) <= target for _, f in bd)


@pytest.mark.parametrize("kind", [FCC3D, TRI2D])
@pytest.mark.parametrize("bc", BCS)
@pytest.mark.parametrize("N", [2, 3, 4])
def test_dd_zero(kind, bc, N):
    cx = cached_complex(kind, N, bc)
    for p in range(cx.top - 1):
        assert (cx.incidence[p + 1] @ cx.incidence[p]).count_nonzero() == 0


EXPECTED_H = {
    (FCC3D, DIRICHLET): (0, 0, 0, 1), (FCC3D, NEUMANN): (1, 0, 0, 0), (FCC3D, PERIODIC): (1, 3, 3, 1),
    (TRI2D, DIRICHLET): (0, 0, 1), (TRI2D, NEUMANN): (1, 0, 0), (TRI2D, PERIODIC): (1, 2, 1),
}


@pytest.mark.parametrize("kind", [FCC3D, TRI2D])
@pytest.mark.parametrize("bc", BCS)
@pytest.mark.parametrize("N", [2, 3, 4])
def test_cohomology(kind, bc, N):
    assert cohomology_dims(cached_complex(kind, N, bc)) == EXPECTED_H[(kind, bc)]


def test_deterministic_enumeration():
    a = build_complex(LatticeSpec(FCC3D, 3, DIRICHLET))
    b = build_complex(LatticeSpec(FCC3D, 3, DIRICHLET))
    for p in range(4):
        np.testing.assert_array_equal(a.cells[p].anchors, b.cells[p].anchors)
        np.testing.assert_array_equal(a.cells[p].types, b.cells[p].types)
    assert a.summary() == b.summary()


def test_lexicographic_order():
    cx = cached_complex(FCC3D, 3, NEUMANN)
    for p in range(4):
        key = np.column_stack([cx.cells[p].anchors, cx.cells[p].types])
        order = np.lexsort(key.T[::-1])
        np.testing.assert_array_equal(order, np.arange(len(key)))


def test_dirichlet_cells_touch_box():
    cx = cached_complex(TRI2D, 4, DIRICHLET)
    for p in range(3):
        verts = cx.cell_vertices(p)
        assert np.all(np.any(cx.in_box(verts.reshape(-1, 2)).reshape(verts.shape[:2]), axis=1))


def test_neumann_cells_inside_box():
    cx = cached_complex(FCC3D, 3, NEUMANN)
    for p in range(3):
        verts = cx.cell_vertices(p)
        assert np.all(cx.in_box(verts.reshape(-1, 3)))


def test_summary_json():
    cx = cached_complex(TRI2D, 3, PERIODIC)
    s = json.loads(cx.summary_json())
    assert s["counts"] == {"0": 9, "1": 27, "2": 18}
    assert len(s["content_hash"]) == 64


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_codec_roundtrip(i):
    cx = cached_complex(FCC3D, 4, DIRICHLET)
    p = i % 4
    cid = i % cx.n_cells(p)
    tab = cx.cells[p]
    assert tab.encode(tab.anchors[cid][None], [tab.types[cid]])[0] == cid
