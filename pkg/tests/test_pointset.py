import numpy as np
import pytest

from socketfit.errors import KTooLarge, ShapeMismatch
from socketfit.models.nn import smooth_l1
from socketfit.models.pointset import (PointSetNet, PointSetSpec, StageSpec, _MaxPool, ball_query,
                                       farthest_point_sampling)
from socketfit.models.training import fit_network
from socketfit.template import N_VERTICES

import oracles


def tiny_spec(**kw):
    base = dict(stage1=StageSpec(6, 1.0, 4, (4, 5)), stage2=StageSpec(3, 2.0, 3, (5, 6)),
                global_widths=(6, 1024), head=(4, 3), n_out=6, dropout=0.0, dtype="float64")
    base.update(kw)
    return PointSetSpec(**base)


def test_fps_single():
    assert list(farthest_point_sampling(np.random.default_rng(0).normal(size=(5, 3)), 1)) == [0]


def test_fps_collinear():
    pts = np.c_[np.arange(10.0), np.zeros(10), np.zeros(10)]
    assert list(farthest_point_sampling(pts, 2)) == [0, 9]


def test_fps_too_many():
    with pytest.raises(KTooLarge):
        farthest_point_sampling(np.zeros((3, 3)), 4)


def test_fps_matches_oracle(rng):
    for _ in range(20):
        pts = rng.normal(size=(40, 3))
        k = int(rng.integers(1, 15))
        assert list(farthest_point_sampling(pts, k)) == oracles.greedy_fps(pts, k)


def test_ball_query_all_inside(rng):
    pts = rng.normal(size=(12, 3))
    out = ball_query(pts, pts[:2], 100.0, 20)
    assert out.shape == (2, 20)
    assert list(out[0, :12]) == list(range(12)) and np.all(out[0, 12:] == 0)


def test_ball_query_fallback():
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0], [9.0, 0, 0]])
    out = ball_query(pts, [[8.0, 0, 0]], 0.5, 3)
    assert list(out[0]) == [2, 2, 2]


def test_ball_query_matches_oracle(rng):
    for _ in range(20):
        pts = rng.normal(size=(60, 3))
        ctr = rng.normal(size=(5, 3))
        r, cap = float(rng.uniform(0.3, 1.5)), int(rng.integers(1, 10))
        out = ball_query(pts, ctr, r, cap)
        for c, row in zip(ctr, out):
            inside = oracles.range_search(pts, c, r)
            if inside:
                expect = inside[:cap] + [inside[0]] * max(0, cap - len(inside))
            else:
                expect = [int(np.argmin(np.linalg.norm(pts - c, axis=1)))] * cap
            assert list(row) == expect


def test_ball_query_rejects_bad_radius():
    with pytest.raises(ValueError):
        ball_query(np.zeros((2, 3)), np.zeros((1, 3)), 0.0, 2)


def test_max_pool_gradient(rng):
    pool = _MaxPool()
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(2, 3, 5))
    pool.forward(x)
    g = pool.backward(w)
    fd = oracles.central_difference(lambda xx: float((_MaxPool().forward(xx) * w).sum()), x)
    assert oracles.relative_error(g, fd) < 1e-8


def test_network_gradient(rng):
    net = PointSetNet(tiny_spec(), seed=2)
    batch = net.prepare(rng.normal(size=(3, 10, 3)))
    t = rng.normal(size=(3, 6))
    errs = oracles.network_gradient_errors(net, batch, t, smooth_l1, max_coords=150)
    assert max(errs) < 1e-4


def test_spec_checks():
    with pytest.raises(ShapeMismatch):
        tiny_spec(global_widths=(6, 512))
    with pytest.raises(ShapeMismatch):
        tiny_spec(stage2=StageSpec(8, 2.0, 3, (5, 6)))


def test_published_heads():
    assert PointSetSpec.for_mode("Adaptations").head == (64, 32)
    assert PointSetSpec.for_mode("SocketShape").head == (2048, 64)
    assert PointSetSpec.for_mode("SocketShape").epochs == 70


def test_output_shape(rng):
    net = PointSetNet(PointSetSpec.reduced_budget("Adaptations"), seed=0)
    out = net.predict(net.prepare(rng.normal(size=(N_VERTICES, 3)) * 50))
    assert out.reshape(-1, N_VERTICES, 3).shape == (1, N_VERTICES, 3)


def test_training_reduces_loss(rng):
    spec = tiny_spec(stage1=StageSpec(16, 1.0, 8, (8, 8)), stage2=StageSpec(4, 2.0, 4, (8, 8)),
                     head=(16, 16), n_out=3, batch_size=6)
    net = PointSetNet(spec, seed=0)
    clouds = rng.normal(size=(6, 64, 3)) * rng.uniform(0.5, 2.0, size=(6, 1, 3))
    targets = clouds.std(axis=1) * 2
    hist = fit_network(net, net.prepare(clouds), targets, 200, batch_size=6, seed=0)
    assert hist[-1][1] <= 0.5 * hist[0][1]


def test_state_round_trip(rng):
    net = PointSetNet(tiny_spec(), seed=1)
    batch = net.prepare(rng.normal(size=(2, 10, 3)))
    fit_network(net, batch, rng.normal(size=(2, 6)), 2, batch_size=2)
    meta, arrays = net.state()
    back = PointSetNet.from_state(meta, arrays)
    assert np.array_equal(back.predict(batch), net.predict(batch))
