import numpy as np
import pytest

# criterion number -> (passed, description, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {desc}  [{detail}]")

from socketfit.mesh import TriMesh
from socketfit.synth import StumpParams, generate_stump


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mean_stump():
    return generate_stump(StumpParams.population_mean())


def random_mesh(rng, n_vertices=30, n_faces=50, scale=10.0):
    v = rng.uniform(-scale, scale, size=(n_vertices, 3))
    faces = np.array([rng.choice(n_vertices, 3, replace=False) for _ in range(n_faces)])
    return TriMesh(v, faces)


def unit_cube():
    v = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ])
    return TriMesh(v, f)


def small_dataset(n=12, seed=0):
    """Generator-frame pairs on the template grid; no registration needed."""
    from socketfit.dataset import CorrespondedDataset
    from socketfit.synth import RectificationRule, generate_socket

    rng = np.random.default_rng(seed)
    stumps, sockets = [], []
    for _ in range(n):
        p = StumpParams.sample(rng, noise_std=0.5)
        stump, lm = generate_stump(p)
        socket, _ = generate_socket(stump, lm, RectificationRule.for_stump(p), seed=int(rng.integers(2**31)))
        stumps.append(stump.vertices)
        sockets.append(socket.vertices)
    return CorrespondedDataset(tuple(f"T{i:02d}" for i in range(n)), np.array(stumps), np.array(sockets))


@pytest.fixture(scope="session")
def toy_data():
    return small_dataset()
