import struct

import numpy as np
import pytest

from socketfit.errors import InvariantViolation, MeshIOError, ParseError
from socketfit.meshio import load_mesh, load_ply, save_mesh, write_stl
from socketfit.template import N_FACES, N_VERTICES

from conftest import unit_cube


def test_single_triangle_obj(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("# one triangle\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_faces == 1


def test_obj_out_of_range_face(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n")
    with pytest.raises(InvariantViolation):
        load_mesh(p)


def test_obj_garbage_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 zero 0\n")
    with pytest.raises(ParseError) as info:
        load_mesh(p)
    assert info.value.location is not None


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mesh(tmp_path / "nope.ply")


def _binary_stl_cube(path):
    cube = unit_cube()
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", cube.n_faces))
        for tri, n in zip(cube.triangles(), cube.face_normals()):
            fh.write(struct.pack("<12fH", *n, *tri.ravel(), 0))


def test_binary_stl_cube_dedup(tmp_path):
    p = tmp_path / "cube.stl"
    _binary_stl_cube(p)
    m = load_mesh(p)
    assert m.n_vertices == 8 and m.n_faces == 12


def test_ascii_stl_round_trip(tmp_path):
    p = tmp_path / "cube.stl"
    write_stl(unit_cube(), p, binary=False)
    m = load_mesh(p)
    assert m.n_vertices == 8 and m.n_faces == 12
    assert np.allclose(np.sort(m.vertices, axis=0), np.sort(unit_cube().vertices, axis=0))


def test_obj_round_trip(tmp_path):
    cube = unit_cube()
    p = tmp_path / "cube.obj"
    save_mesh(cube, p)
    m = load_mesh(p)
    assert np.array_equal(m.faces, cube.faces)
    assert np.abs(m.vertices - cube.vertices).max() < 1e-6


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip_template(tmp_path, mean_stump, binary):
    stump, _ = mean_stump
    p = tmp_path / "stump.ply"
    save_mesh(stump, p, binary=binary)
    m = load_mesh(p)
    assert m.n_vertices == N_VERTICES and m.n_faces == N_FACES
    assert np.array_equal(m.faces, stump.faces)
    assert np.abs(m.vertices - stump.vertices).max() < 1e-6


def test_ply_quality_property(tmp_path):
    cube = unit_cube()
    q = np.arange(8) * 0.5
    p = tmp_path / "q.ply"
    save_mesh(cube, p, quality=q)
    m, props = load_ply(p)
    assert np.allclose(props["quality"], q)


def test_big_endian_ply(tmp_path):
    cube = unit_cube()
    head = ("ply\nformat binary_big_endian 1.0\nelement vertex 8\nproperty float x\n"
            "property float y\nproperty float z\nelement face 12\n"
            "property list uchar int vertex_indices\nend_header\n").encode()
    body = b"".join(struct.pack(">3f", *v) for v in cube.vertices)
    body += b"".join(struct.pack(">B3i", 3, *f) for f in cube.faces)
    p = tmp_path / "be.ply"
    p.write_bytes(head + body)
    m = load_mesh(p)
    assert np.array_equal(m.faces, cube.faces) and np.allclose(m.vertices, cube.vertices)


def test_save_unwritable(tmp_path):
    with pytest.raises(MeshIOError):
        save_mesh(unit_cube(), tmp_path / "no" / "such" / "dir" / "x.ply")
