"""Fixed template topology shared by every corresponded mesh.

The template is an open tube of 70 rings with 48 vertices each, closed at
the distal end by a single apex vertex and open at the proximal trimline:
48 * 70 + 1 = 3361 vertices and 2 * 48 * 69 + 48 = 6672 faces.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InvariantViolation, TopologyMismatch
from .mesh import TriMesh

N_SEGMENTS = 48
N_RINGS = 70
N_VERTICES = N_SEGMENTS * N_RINGS + 1
N_FACES = 2 * N_SEGMENTS * (N_RINGS - 1) + N_SEGMENTS
APEX = N_VERTICES - 1


def grid_index(ring, segment):
    return ring * N_SEGMENTS + segment % N_SEGMENTS


@lru_cache(maxsize=None)
def _faces():
    faces = []
    for r in range(N_RINGS - 1):
        for j in range(N_SEGMENTS):
            a = grid_index(r, j)
            b = grid_index(r + 1, j)
            c = grid_index(r + 1, j + 1)
            d = grid_index(r, j + 1)
            faces.append((a, b, c))
            faces.append((a, c, d))
    last = N_RINGS - 1
    for j in range(N_SEGMENTS):
        faces.append((grid_index(last, j), APEX, grid_index(last, j + 1)))
    f = np.array(faces, dtype=np.int64)
    f.setflags(write=False)
    return f


def template_faces() -> np.ndarray:
    """Canonical face list (read-only, identical for every call)."""
    return _faces()


def rim_indices() -> np.ndarray:
    """Vertex indices of the open proximal boundary loop."""
    return np.arange(N_SEGMENTS)


class CorrespondedMesh(TriMesh):
    """Mesh on the template topology: vertex ``i`` means the same location
    on every sample, so meshes can be flattened into 10083-vectors.
    """

    def __init__(self, vertices, faces=None):
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", template_faces() if faces is None else faces)
        self.__post_init__()

    def __post_init__(self):
        super().__post_init__()
        if self.n_vertices != N_VERTICES or self.n_faces != N_FACES:
            raise TopologyMismatch(
                f"expected {N_VERTICES} vertices / {N_FACES} faces, "
                f"got {self.n_vertices} / {self.n_faces}"
            )
        if not np.array_equal(self.faces, template_faces()):
            raise InvariantViolation("face list differs from the template face list")

    def with_vertices(self, vertices) -> "CorrespondedMesh":
        return CorrespondedMesh(vertices)

    def flat(self) -> np.ndarray:
        return self.vertices.reshape(-1).copy()

    @classmethod
    def from_flat(cls, x) -> "CorrespondedMesh":
        x = np.asarray(x, dtype=float)
        if x.size != 3 * N_VERTICES:
            raise TopologyMismatch(f"expected {3 * N_VERTICES} values, got {x.size}")
        return cls(x.reshape(N_VERTICES, 3))

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> "CorrespondedMesh":
        return cls(mesh.vertices, mesh.faces)


@lru_cache(maxsize=None)
def canonical_template() -> CorrespondedMesh:
    """Average stump in the reoriented frame, used to seed registration."""
    from .preprocess import ScanPair, reorient
    from .synth import StumpParams, generate_stump

    stump, landmarks = generate_stump(StumpParams.population_mean())
    pair = ScanPair(stump, stump, landmarks, "L")
    canon, _ = reorient(pair)
    return CorrespondedMesh(canon.stump.vertices)
