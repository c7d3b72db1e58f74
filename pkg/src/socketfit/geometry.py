"""Closest-point queries and surface-to-surface distances.

Queries go through an axis-aligned bounding-box hierarchy over the target
triangles. Traversal is breadth-first over (query, node) pairs so that a
whole batch of points is processed with array operations; a node is pruned
when its box is farther than the best distance found so far for that query,
which keeps the result identical to an exhaustive scan.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMesh, TopologyMismatch
from .mesh import DistanceMap, TriMesh


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p``.

    All arguments are ``(m, 3)`` arrays (broadcastable); returns ``(m, 3)``.
    Region classification follows the Voronoi-region method.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (p, a, b, c)))
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]

        cond = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(cond[:, None], b + (c - b) * t[:, None], out)

        cond = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(cond[:, None], a + ac * t[:, None], out)

        cond = (d6 >= 0) & (d5 <= d6)
        out = np.where(cond[:, None], c, out)

        cond = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(cond[:, None], a + ab * t[:, None], out)

        cond = (d3 >= 0) & (d4 <= d3)
        out = np.where(cond[:, None], b, out)

        cond = (d1 <= 0) & (d2 <= 0)
        out = np.where(cond[:, None], a, out)

    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        out[bad] = _closest_on_edges(p[bad], a[bad], b[bad], c[bad])
    return out


def _closest_on_edges(p, a, b, c):
    # fallback for zero-area triangles: best of the three edge segments
    best = None
    best_d = None
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        dd = np.einsum("ij,ij->i", d, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.clip(np.einsum("ij,ij->i", p - s, d) / dd, 0.0, 1.0)
        t = np.where(dd > 0, t, 0.0)
        q = s + d * t[:, None]
        dist = np.einsum("ij,ij->i", p - q, p - q)
        if best is None:
            best, best_d = q, dist
        else:
            take = dist < best_d
            best = np.where(take[:, None], q, best)
            best_d = np.where(take, dist, best_d)
    return best


class MeshIndex:
    """Bounding-box hierarchy over the triangles of a mesh.

    The index is immutable after construction and safe to share between
    threads for read-only queries.
    """

    def __init__(self, mesh: TriMesh, leaf_size: int = 4):
        if mesh.n_faces == 0:
            raise EmptyMesh("mesh has no faces")
        self.mesh = mesh
        self.leaf_size = leaf_size
        tri = mesh.triangles()
        self._a = tri[:, 0].copy()
        self._b = tri[:, 1].copy()
        self._c = tri[:, 2].copy()
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        box_lo, box_hi, left, right, start, count = [], [], [], [], [], []
        order = np.arange(mesh.n_faces)
        perm = []

        # iterative build, median split along the longest centroid extent
        stack = [(order, -1, 0)]
        while stack:
            idx, parent, side = stack.pop()
            node = len(box_lo)
            box_lo.append(lo[idx].min(axis=0))
            box_hi.append(hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if len(idx) <= leaf_size:
                start.append(len(perm))
                count.append(len(idx))
                perm.extend(idx.tolist())
                continue
            start.append(0)
            count.append(0)
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            srt = idx[np.argsort(cen[:, axis], kind="stable")]
            half = len(srt) // 2
            stack.append((srt[half:], node, 1))
            stack.append((srt[:half], node, 0))

        self._lo = np.array(box_lo)
        self._hi = np.array(box_hi)
        self._left = np.array(left)
        self._right = np.array(right)
        self._start = np.array(start)
        self._count = np.array(count)
        self._perm = np.array(perm, dtype=np.int64)

        used = np.unique(mesh.faces)
        self._used_vertices = used
        self._vtree = cKDTree(mesh.vertices[used])
        # vertex -> incident faces (CSR), used to seed queries with a tight bound
        flat = mesh.faces.reshape(-1)
        order = np.argsort(flat, kind="stable")
        self._vf_faces = order // 3
        self._vf_ptr = np.searchsorted(flat[order], np.arange(mesh.n_vertices + 1))

    def query(self, points):
        """Closest surface points for a batch of query points.

        Returns ``(closest, distance, face_index)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = len(pts)
        # seed the bound with the faces around the nearest surface vertex
        _, vi = self._vtree.query(pts)
        vi = self._used_vertices[vi]
        cnt = self._vf_ptr[vi + 1] - self._vf_ptr[vi]
        rq = np.repeat(np.arange(m), cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        faces = self._vf_faces[np.repeat(self._vf_ptr[vi], cnt) + offs]
        best_pt = np.empty((m, 3))
        best_d2 = np.full(m, np.inf)
        best_face = np.full(m, -1, dtype=np.int64)
        self._update(pts, rq, faces, best_pt, best_d2, best_face)

        q = np.arange(m)
        node = np.zeros(m, dtype=np.int64)
        while len(q):
            lo = self._lo[node]
            hi = self._hi[node]
            p = pts[q]
            gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            box_d2 = np.einsum("ij,ij->i", gap, gap)
            keep = box_d2 <= best_d2[q]
            q, node = q[keep], node[keep]

            leaf = self._left[node] < 0
            if leaf.any():
                lq, ln = q[leaf], node[leaf]
                srt = np.argsort(lq, kind="stable")
                lq, ln = lq[srt], ln[srt]
                cnt = self._count[ln]
                rq = np.repeat(lq, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                faces = self._perm[np.repeat(self._start[ln], cnt) + offs]
                self._update(pts, rq, faces, best_pt, best_d2, best_face)

            inner = ~leaf
            iq, inode = q[inner], node[inner]
            q = np.concatenate([iq, iq])
            node = np.concatenate([self._left[inode], self._right[inode]])

        return best_pt, np.sqrt(best_d2), best_face

    def _update(self, pts, rq, faces, best_pt, best_d2, best_face):
        # rq must be grouped (non-decreasing); keeps the best candidate per query
        if len(rq) == 0:
            return
        cp = closest_point_on_triangles(pts[rq], self._a[faces], self._b[faces], self._c[faces])
        diff = pts[rq] - cp
        d2 = np.einsum("ij,ij->i", diff, diff)
        starts = np.flatnonzero(np.r_[True, rq[1:] != rq[:-1]])
        group_min = np.minimum.reduceat(d2, starts)
        sizes = np.diff(np.r_[starts, len(rq)])
        is_min = d2 == np.repeat(group_min, sizes)
        # lowest face index among the minimizers of each group
        key = np.where(is_min, faces, np.iinfo(np.int64).max)
        best_in_group = np.minimum.reduceat(key, starts)
        sel = np.flatnonzero(is_min & (faces == np.repeat(best_in_group, sizes)))
        sel = sel[np.r_[True, rq[sel][1:] != rq[sel][:-1]]]
        uq = rq[sel]
        better = (d2[sel] < best_d2[uq]) | ((d2[sel] == best_d2[uq]) & (faces[sel] < best_face[uq]))
        uq, sel = uq[better], sel[better]
        best_d2[uq] = d2[sel]
        best_pt[uq] = cp[sel]
        best_face[uq] = faces[sel]


def closest_point_on_mesh(p, mesh, index: MeshIndex | None = None):
    """Closest point on ``mesh`` to a single point ``p``.

    Returns ``(point, distance)``.
    """
    if mesh.n_faces == 0:
        raise EmptyMesh("mesh has no faces")
    index = index if index is not None else MeshIndex(mesh)
    pt, d, _ = index.query(np.asarray(p, dtype=float).reshape(1, 3))
    return pt[0], float(d[0])


def closest_points(points, mesh, index: MeshIndex | None = None):
    """Batched closest points; returns ``(closest, distance, face_index)``."""
    if mesh.n_faces == 0:
        raise EmptyMesh("mesh has no faces")
    index = index if index is not None else MeshIndex(mesh)
    return index.query(points)


def surface_to_surface(source: TriMesh, target: TriMesh, signed=False,
                       index: MeshIndex | None = None) -> DistanceMap:
    """Distance from every source vertex to the closest point of the target surface.

    With ``signed=True`` the sign follows the target face normal at the
    closest point (positive outside).
    """
    if target.n_faces == 0:
        raise EmptyMesh("target mesh has no faces")
    index = index if index is not None else MeshIndex(target)
    cp, d, face = index.query(source.vertices)
    if signed:
        n = target.face_normals()[face]
        side = np.einsum("ij,ij->i", source.vertices - cp, n)
        d = np.where(side < 0, -d, d)
    return DistanceMap(d, signed=signed)


def check_same_topology(a: TriMesh, b: TriMesh):
    if a.n_vertices != b.n_vertices:
        raise TopologyMismatch(f"vertex counts differ: {a.n_vertices} vs {b.n_vertices}")
