"""Incremental Bowyer-Watson Delaunay triangulation of 2D point sets."""

import numpy as np

from facecascade.errors import TriangulationError


def _circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return np.array([np.inf, np.inf]), np.inf
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    center = np.array([ux, uy])
    return center, float(np.sum((center - a) ** 2))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def triangulate(points) -> np.ndarray:
    """Delaunay triangles of ``points`` as an (T, 3) array of point indices.

    Triangles are counter-clockwise (positive signed area in x-right, y-up
    axes). Raises :class:`TriangulationError` for fewer than three points or a
    collinear set.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 3:
        raise TriangulationError("need at least three points to triangulate")
    centered = pts - pts.mean(axis=0)
    scale = float(np.abs(centered).max())
    if scale == 0.0 or np.linalg.svd(centered / scale, compute_uv=False)[-1] < 1e-10:
        raise TriangulationError("landmarks are collinear")
    # Work in normalised coordinates so tolerances are scale free.
    work = centered / scale
    big = 1e3
    verts = np.vstack([work, [[-big, -big], [big, -big], [0.0, big]]])
    tris = {}

    def add(a, b, c):
        if _orient(verts[a], verts[b], verts[c]) < 0:
            b, c = c, b
        center, r2 = _circumcircle(verts[a], verts[b], verts[c])
        tris[(a, b, c)] = (center, r2)

    add(n, n + 1, n + 2)
    for p in range(n):
        v = verts[p]
        bad = [t for t, (center, r2) in tris.items()
               if np.sum((v - center) ** 2) < r2 * (1.0 - 1e-12)]
        edges = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = tuple(sorted(e))
                edges[key] = edges.get(key, 0) + 1
        for t in bad:
            del tris[t]
        for (a, b), count in edges.items():
            if count == 1:
                add(p, a, b)
    out = [t for t in tris if max(t) < n]
    if not out:
        raise TriangulationError("triangulation produced no triangles")
    return np.array(sorted(out), dtype=np.int64)


def barycentric(point, tri_pts) -> np.ndarray:
    """Barycentric coordinates of ``point`` in triangle ``tri_pts`` (3, 2).

    Coordinates always sum to one; they leave [0, 1] outside the triangle.
    """
    a, b, c = np.asarray(tri_pts, dtype=np.float64)
    T = np.column_stack([b - a, c - a])
    l12 = np.linalg.solve(T, np.asarray(point, dtype=np.float64) - a)
    return np.array([1.0 - l12.sum(), l12[0], l12[1]])


def locate(points, vertices, triangles, eps: float = 1e-12):
    """Owning triangle and barycentric triple for each query point.

    A point inside (or on) a triangle gets that triangle, first in
    ``triangles`` order. A point outside the hull gets the triangle whose
    centroid is nearest.
    """
    points = np.asarray(points, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    tri_pts = vertices[triangles]  # (T, 3, 2)
    a = tri_pts[:, 0]
    e1 = tri_pts[:, 1] - a
    e2 = tri_pts[:, 2] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    centroids = tri_pts.mean(axis=1)
    owner = np.empty(len(points), dtype=np.int64)
    bary = np.empty((len(points), 3))
    for k, p in enumerate(points):
        d = p - a
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        if inside.any():
            t = int(np.argmax(inside))
        else:
            t = int(np.argmin(np.sum((centroids - p) ** 2, axis=1)))
        owner[k] = t
        bary[k] = barycentric(p, tri_pts[t])
    return owner, bary
