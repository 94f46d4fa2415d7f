import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from facecascade.delaunay import barycentric, locate, triangulate
from facecascade.errors import TriangulationError


def circumcircle_contains(tri, p):
    """In-circle predicate by the 3x3 lifted determinant, for a CCW triangle."""
    rows = [[a[0] - p[0], a[1] - p[1], (a[0] - p[0]) ** 2 + (a[1] - p[1]) ** 2] for a in tri]
    return np.linalg.det(np.array(rows)) > 1e-9


def area(tri):
    a, b, c = tri
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def test_quad_picks_delaunay_diagonal():
    pts = np.array([[0.0, 0.0], [4.0, 0.0], [5.0, 3.0], [0.5, 2.0]])
    tris = triangulate(pts)
    assert len(tris) == 2
    # brute force: the legal diagonal is the one whose triangles have empty circumcircles
    legal = []
    for diag, other in (((0, 2), (1, 3)), ((1, 3), (0, 2))):
        ok = True
        for o in other:
            tri = pts[[diag[0], diag[1], o]]
            if area(tri) < 0:
                tri = tri[[0, 2, 1]]
            opposite = [q for q in other if q != o][0]
            ok &= not circumcircle_contains(tri, pts[opposite])
        if ok:
            legal.append(set(diag))
    shared = set(tris[0]) & set(tris[1])
    assert shared in legal


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(3, 40))
def test_random_sets_are_delaunay_and_cover_hull(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-10, 10, (n, 2))
    tris = triangulate(pts)
    areas = [area(pts[t]) for t in tris]
    assert min(areas) > 0  # counter-clockwise
    assert sum(areas) == pytest.approx(ConvexHull(pts).volume, rel=1e-9)
    for t in tris:
        others = np.setdiff1d(np.arange(n), t)
        assert not any(circumcircle_contains(pts[t], pts[q]) for q in others)


def test_collinear_points_fail():
    with pytest.raises(TriangulationError):
        triangulate(np.column_stack([np.arange(5.0), 2 * np.arange(5.0)]))
    with pytest.raises(TriangulationError):
        triangulate(np.zeros((2, 2)))


def test_vertex_and_centroid_coordinates():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    tris = triangulate(pts)
    owner, bary = locate(pts[[1]], pts, tris)
    coords = sorted(bary[0])
    np.testing.assert_allclose(coords, [0.0, 0.0, 1.0], atol=1e-15)
    tri = pts[tris[0]]
    np.testing.assert_allclose(barycentric(tri.mean(axis=0), tri), [1 / 3] * 3, atol=1e-15)


def test_outside_point_takes_nearest_centroid():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 0.0], [5.0, 1.0]])
    tris = triangulate(pts)
    q = np.array([[8.0, 0.5]])
    owner, bary = locate(q, pts, tris)
    cents = pts[tris].mean(axis=1)
    assert owner[0] == np.argmin(np.sum((cents - q) ** 2, axis=1))
    np.testing.assert_allclose(bary[0] @ pts[tris[owner[0]]], q[0], atol=1e-12)
    assert bary[0].sum() == pytest.approx(1.0)
