import numpy as np
import pytest

from socketfit.errors import InvariantViolation, TopologyMismatch
from socketfit.template import (APEX, N_FACES, N_SEGMENTS, N_VERTICES, CorrespondedMesh,
                                canonical_template, rim_indices, template_faces)


def test_counts():
    assert (N_VERTICES, N_FACES) == (3361, 6672)
    assert template_faces().shape == (N_FACES, 3)


def test_open_disk_topology():
    f = template_faces()
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    # Euler characteristic of a disk
    assert N_VERTICES - len(edges) + N_FACES == 1
    boundary = edges[counts == 1]
    assert len(boundary) == N_SEGMENTS
    assert set(np.unique(boundary)) == set(rim_indices())
    assert APEX not in set(np.unique(boundary))


def test_faces_read_only():
    with pytest.raises(ValueError):
        template_faces()[0, 0] = 1


def test_canonical_template_frame():
    t = canonical_template()
    assert t.n_vertices == N_VERTICES
    assert t.vertices[APEX, 2] < -100
    assert t.vertices[rim_indices(), 2].min() > t.vertices[APEX, 2]


def test_corresponded_mesh_checks():
    v = np.zeros((N_VERTICES, 3))
    with pytest.raises(TopologyMismatch):
        CorrespondedMesh(np.zeros((10, 3)), np.array([[0, 1, 2]]))
    f = template_faces().copy()
    f[[0, 1]] = f[[1, 0]]
    with pytest.raises(InvariantViolation):
        CorrespondedMesh(canonical_template().vertices, f)
    flat = canonical_template().flat()
    assert np.array_equal(CorrespondedMesh.from_flat(flat).vertices, canonical_template().vertices)
    with pytest.raises(TopologyMismatch):
        CorrespondedMesh.from_flat(flat[:-3])
    del v
