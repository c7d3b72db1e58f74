"""Triangle mesh types and basic geometric operations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh, InvariantViolation, TopologyMismatch


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh in millimeters.

    Faces are vertex-index triples; counter-clockwise winding gives the
    outward normal. Arrays are copied on construction and made read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        self._validate()

    def _validate(self):
        v, f = self.vertices, self.faces
        if not np.all(np.isfinite(v)):
            raise InvariantViolation("vertex coordinates must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
                raise InvariantViolation(
                    f"face {bad} references vertex outside [0, {len(v)})"
                )
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise InvariantViolation(
                    f"face {int(np.argmax(degenerate))} repeats a vertex index"
                )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self, normalize=True) -> np.ndarray:
        tri = self.triangles()
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(length > 0, length, 1.0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals."""
        fn = self.face_normals(normalize=False)
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.faces[:, k], fn)
        length = np.linalg.norm(vn, axis=1, keepdims=True)
        return vn / np.where(length > 0, length, 1.0)

    def vertex_areas(self) -> np.ndarray:
        """One third of the summed area of each vertex's incident faces."""
        area = self.face_areas() / 3.0
        out = np.zeros(self.n_vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], area)
        return out

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def bounding_box_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def transformed(self, rotation, translation) -> "TriMesh":
        """Apply ``x -> rotation @ x + translation`` to every vertex."""
        v = self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return self.with_vertices(v)


@dataclass(frozen=True)
class LandmarkPair:
    mid_patella: np.ndarray
    tibia_end: np.ndarray

    def __post_init__(self):
        mp = _frozen(self.mid_patella, np.float64).reshape(3)
        te = _frozen(self.tibia_end, np.float64).reshape(3)
        object.__setattr__(self, "mid_patella", mp)
        object.__setattr__(self, "tibia_end", te)
        if not (np.all(np.isfinite(mp)) and np.all(np.isfinite(te))):
            raise InvariantViolation("landmarks must be finite")

    def __eq__(self, other):
        if not isinstance(other, LandmarkPair):
            return NotImplemented
        return bool(
            np.array_equal(self.mid_patella, other.mid_patella)
            and np.array_equal(self.tibia_end, other.tibia_end)
        )

    def distance(self) -> float:
        return float(np.linalg.norm(self.tibia_end - self.mid_patella))

    def transformed(self, rotation, translation) -> "LandmarkPair":
        r = np.asarray(rotation)
        t = np.asarray(translation)
        return LandmarkPair(r @ self.mid_patella + t, r @ self.tibia_end + t)

    def mirrored(self) -> "LandmarkPair":
        flip = np.array([-1.0, 1.0, 1.0])
        return LandmarkPair(self.mid_patella * flip, self.tibia_end * flip)

    def to_dict(self) -> dict:
        return {"mid_patella": self.mid_patella.tolist(), "tibia_end": self.tibia_end.tolist()}

    @classmethod
    def from_dict(cls, d) -> "LandmarkPair":
        return cls(d["mid_patella"], d["tibia_end"])

    @classmethod
    def average(cls, pairs) -> "LandmarkPair":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("need at least one landmark annotation")
        mp = np.mean([p.mid_patella for p in pairs], axis=0)
        te = np.mean([p.tibia_end for p in pairs], axis=0)
        return cls(mp, te)


@dataclass(frozen=True, eq=False)
class DistanceMap:
    """Per-vertex scalar distances (mm) for a source mesh."""

    values: np.ndarray
    signed: bool = False

    def __post_init__(self):
        vals = _frozen(self.values, np.float64).reshape(-1)
        object.__setattr__(self, "values", vals)
        if not self.signed and vals.size and vals.min() < 0:
            raise InvariantViolation("unsigned distance map has negative values")

    def __len__(self):
        return len(self.values)


def mirror_mesh(mesh: TriMesh, plane: str = "YZ") -> TriMesh:
    """Reflect through x = 0 and reverse face winding to keep normals outward."""
    if plane != "YZ":
        raise ValueError(f"unsupported mirror plane {plane!r}")
    v = mesh.vertices.copy()
    v[:, 0] = -v[:, 0]
    return TriMesh(v, mesh.faces[:, [0, 2, 1]])


def euclidean_vertex_distance(a: TriMesh, b: TriMesh):
    """Per-vertex Euclidean distance between meshes sharing vertex order.

    Returns ``(per_vertex, mean)``.
    """
    if a.n_vertices != b.n_vertices:
        raise TopologyMismatch(
            f"vertex counts differ: {a.n_vertices} vs {b.n_vertices}"
        )
    if a.n_vertices == 0:
        raise EmptyMesh("meshes have no vertices")
    d = np.linalg.norm(a.vertices - b.vertices, axis=1)
    return d, float(d.mean())
