import json

import numpy as np
import pytest

from socketfit.errors import InvalidParams
from socketfit.meshio import load_mesh
from socketfit.preprocess import compute_adaptations, load_manifest, load_scan_pair
from socketfit.synth import (PopulationConfig, RectificationRule, StumpParams, generate_dataset,
                             generate_socket, generate_stump, rater_sigma, simulate_raters)
from socketfit.template import N_FACES, N_VERTICES


def test_stump_is_deterministic():
    p = StumpParams(noise_std=0.0, seed=7)
    a, la = generate_stump(p)
    b, lb = generate_stump(p)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(la.tibia_end, lb.tibia_end)


def test_stump_counts():
    m, _ = generate_stump(StumpParams(noise_std=1.0, seed=3))
    assert (m.n_vertices, m.n_faces) == (N_VERTICES, N_FACES)


def test_stump_length_sets_z_extent():
    m, _ = generate_stump(StumpParams(length=209.0))
    z = m.vertices[:, 2]
    assert z.max() - z.min() == pytest.approx(209.0, abs=1e-6)


def test_landmarks_on_stump(mean_stump):
    m, lm = mean_stump
    z = m.vertices[:, 2]
    assert lm.mid_patella[2] > 0.5 * z.min()   # proximal half
    assert lm.tibia_end[2] < 0.5 * z.min()     # distal half


@pytest.mark.parametrize("kw", [dict(length=0.0), dict(circumference=-1.0),
                                dict(ridge_amplitude=-1.0), dict(noise_std=-0.1)])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        StumpParams(**kw)


def test_zero_rules_are_identity(mean_stump):
    m, lm = mean_stump
    rules = RectificationRule(0.0, 0.0, 0.0, 0.0, 1.0)
    socket, field = generate_socket(m, lm, rules, seed=1)
    assert np.array_equal(socket.vertices, m.vertices)
    assert not field.any()


def test_volume_scale_only(mean_stump):
    m, lm = mean_stump
    socket, _ = generate_socket(m, lm, RectificationRule(0.0, 0.0, 0.0, 0.0, 0.97), seed=1)
    r0 = np.hypot(*m.vertices[:, :2].T)
    r1 = np.hypot(*socket.vertices[:, :2].T)
    assert np.allclose(r1, 0.97 * r0, atol=1e-9)
    assert np.array_equal(socket.vertices[:, 2], m.vertices[:, 2])


def test_field_matches_adaptations(mean_stump):
    m, lm = mean_stump
    socket, field = generate_socket(m, lm, RectificationRule(jitter=0.1), seed=4)
    assert np.allclose(compute_adaptations(m, socket).displacements, field, atol=1e-9)


def test_field_is_smooth_and_bounded(mean_stump):
    m, lm = mean_stump
    _, field = generate_socket(m, lm, RectificationRule(), seed=0)
    mags = np.linalg.norm(field, axis=1)
    assert 1.0 < mags.max() < 20.0
    e = m.edges()
    jump = np.linalg.norm(field[e[:, 0]] - field[e[:, 1]], axis=1)
    assert jump.max() < 2.0


def test_rater_noise_bracket():
    rng = np.random.default_rng(0)
    cfg = PopulationConfig(rater_count=2)
    _, lm = generate_stump(StumpParams())
    d = []
    for _ in range(1000):
        a, b = simulate_raters(lm, cfg, rng)
        d.append(np.linalg.norm(a.mid_patella - b.mid_patella))
    assert 5.0 <= np.median(d) <= 11.0
    assert rater_sigma(7.48) > 0


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    return out, generate_dataset(10, out, seed=3)


def test_dataset_layout(corpus):
    out, manifest = corpus
    entries = load_manifest(manifest)
    assert len(entries) == 10
    assert sum(e.side == "R" for e in entries) == 5
    for e in entries:
        pair = load_scan_pair(e)
        assert pair.stump.n_vertices == N_VERTICES and len(e.landmarks) == 3
    doc = json.loads((out / "generation.json").read_text())
    assert doc["n"] == 10 and doc["seed"] == 3 and len(doc["samples"]) == 10


def test_written_meshes_recover_field(corpus):
    out, manifest = corpus
    doc = json.loads((out / "generation.json").read_text())
    for e in load_manifest(manifest):
        truth = doc["samples"][e.id]
        stump, lm = generate_stump(StumpParams(**truth["params"]))
        _, field = generate_socket(stump, lm, RectificationRule(**truth["rules"]),
                                   seed=truth["socket_seed"])
        s = load_mesh(e.stump_path)
        t = load_mesh(e.socket_path)
        world = compute_adaptations(s, t).displacements
        if truth["side"] == "R":
            world = world * [-1.0, 1.0, 1.0]
        rot = np.array(truth["pose"]["rotation"])
        assert np.allclose(world @ rot, field, atol=1e-9)


def test_dataset_is_byte_identical(corpus, tmp_path):
    out, _ = corpus
    generate_dataset(10, tmp_path, seed=3)
    for name in ["generation.json"] + [f"meshes/S{i:04d}_{k}.ply" for i in range(10)
                                       for k in ("stump", "socket")]:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    assert json.dumps(a).replace(str(out), "") == json.dumps(b).replace(str(tmp_path), "")


def test_zero_samples_rejected(tmp_path):
    with pytest.raises(InvalidParams):
        generate_dataset(0, tmp_path)
