"""Point-set regression network built from set-abstraction stages.

Two local stages sample centers by farthest-point sampling, group the
neighbors inside a ball around each center, run a shared per-point MLP on
the grouped (relative coordinates, features) rows and max-pool each group.
A final stage pools the whole remaining set into one global feature vector
that feeds a three-layer linear head.

Sampling and grouping depend only on the input coordinates, so they are
computed once per cloud (``prepare``) and reused across epochs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import KTooLarge, ShapeMismatch
from ..template import N_VERTICES
from .nn import BatchNorm, Dropout, Linear, ReLU, Sequential


def farthest_point_sampling(points, k, start=0):
    """Greedy max-min selection of ``k`` indices beginning at ``start``.

    Ties go to the lowest index.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if k > n:
        raise KTooLarge(f"cannot pick {k} of {n} points")
    out = np.empty(k, dtype=np.int64)
    if k == 0:
        return out
    out[0] = start
    dist = np.full(n, np.inf)
    last = start
    for i in range(1, k):
        d = pts - pts[last]
        np.minimum(dist, np.einsum("ij,ij->i", d, d), out=dist)
        last = int(np.argmax(dist))
        out[i] = last
    return out


def ball_query(points, centers, radius, cap):
    """Indices of up to ``cap`` points within ``radius`` of each center.

    Neighbors are taken in ascending index order; short lists are padded by
    repeating the first neighbor, and an empty ball falls back to the point
    nearest to the center. Returns a ``(len(centers), cap)`` integer array.
    """
    if radius <= 0 or cap < 1:
        raise ValueError("radius must be positive and cap at least 1")
    pts = np.asarray(points, dtype=float)
    ctr = np.atleast_2d(np.asarray(centers, dtype=float))
    n = len(pts)
    inside = np.empty((len(ctr), n), dtype=bool)
    for i in range(0, len(ctr), 64):
        diff = ctr[i:i + 64, None, :] - pts[None, :, :]
        inside[i:i + 64] = np.einsum("ijk,ijk->ij", diff, diff) <= radius * radius
    key = np.where(inside, np.arange(n)[None, :], n)
    cap_eff = min(cap, n)
    first = np.sort(np.partition(key, cap_eff - 1, axis=1)[:, :cap_eff], axis=1)
    out = np.empty((len(ctr), cap), dtype=np.int64)
    out[:, :cap_eff] = first
    if cap > cap_eff:
        out[:, cap_eff:] = n
    empty = out[:, 0] == n
    if empty.any():
        nearest = np.argmin(((pts[None, :, :] - ctr[empty][:, None, :]) ** 2).sum(-1), axis=1)
        out[empty, 0] = nearest
    out = np.where(out == n, out[:, :1], out)
    return out


@dataclass(frozen=True)
class StageSpec:
    n_centers: int
    radius: float
    cap: int
    widths: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))


HEADS = {
    "Adaptations": (64, 32),
    "SocketShape": (2048, 64),
}
EPOCHS = {"Adaptations": 65, "SocketShape": 70}


@dataclass(frozen=True)
class PointSetSpec:
    stage1: StageSpec = StageSpec(512, 20.0, 32, (64, 64, 128))
    stage2: StageSpec = StageSpec(128, 40.0, 32, (128, 128, 256))
    global_widths: tuple = (256, 512, 1024)
    head: tuple = (64, 32)
    n_out: int = 3 * N_VERTICES
    epochs: int = 65
    learning_rate: float = 9.9e-4
    batch_size: int = 8
    momentum: float = 0.25
    dropout: float = 0.25
    smooth_l1_beta: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("stage1", "stage2"):
            st = getattr(self, name)
            if isinstance(st, dict):
                object.__setattr__(self, name, StageSpec(**st))
        object.__setattr__(self, "global_widths", tuple(int(w) for w in self.global_widths))
        object.__setattr__(self, "head", tuple(int(w) for w in self.head))
        if self.global_widths[-1] != 1024:
            raise ShapeMismatch("the global feature must be 1024 wide")
        if self.stage2.n_centers > self.stage1.n_centers:
            raise ShapeMismatch("stage 2 cannot keep more centers than stage 1")

    @classmethod
    def for_mode(cls, mode, **overrides):
        return replace(cls(head=HEADS[mode], epochs=EPOCHS[mode]), **overrides)

    @classmethod
    def reduced_budget(cls, mode, **overrides):
        """Cheaper sampling and widths for single-core runs."""
        base = cls(
            stage1=StageSpec(128, 30.0, 16, (32, 32, 64)),
            stage2=StageSpec(32, 60.0, 16, (64, 64, 128)),
            global_widths=(128, 256, 1024),
            head=HEADS[mode],
            epochs=EPOCHS[mode],
        )
        return replace(base, **overrides)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PreparedClouds:
    """Cached sampling/grouping for a stack of clouds, indexable by sample."""

    points: np.ndarray     # (B, N, 3)
    centers1: np.ndarray   # (B, S1) indices into points
    groups1: np.ndarray    # (B, S1, K1) indices into points
    centers2: np.ndarray   # (B, S2) indices into stage-1 centers
    groups2: np.ndarray    # (B, S2, K2) indices into stage-1 centers

    def __len__(self):
        return len(self.points)

    def __getitem__(self, idx):
        return PreparedClouds(self.points[idx], self.centers1[idx], self.groups1[idx],
                              self.centers2[idx], self.groups2[idx])


def prepare_clouds(points, spec: PointSetSpec) -> PreparedClouds:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 2:
        pts = pts[None]
    c1, g1, c2, g2 = [], [], [], []
    s1, s2 = spec.stage1, spec.stage2
    for cloud in pts:
        i1 = farthest_point_sampling(cloud, s1.n_centers, 0)
        ctr1 = cloud[i1]
        i2 = farthest_point_sampling(ctr1, s2.n_centers, 0)
        c1.append(i1)
        g1.append(ball_query(cloud, ctr1, s1.radius, s1.cap))
        c2.append(i2)
        g2.append(ball_query(ctr1, ctr1[i2], s2.radius, s2.cap))
    return PreparedClouds(pts, np.array(c1), np.array(g1), np.array(c2), np.array(g2))


def _shared_mlp(n_in, widths, rng, momentum, dtype):
    layers = []
    for w in widths:
        layers += [Linear(n_in, w, rng, dtype), BatchNorm(w, momentum, dtype=dtype), ReLU()]
        n_in = w
    return Sequential(layers)


def _gather(arr, idx):
    """``arr[b, idx[b, ...]]`` for a batch: arr (B, M, C), idx (B, ...)."""
    b = np.arange(len(arr)).reshape((-1,) + (1,) * (idx.ndim - 1))
    return arr[b, idx]


class _MaxPool:
    """Max over axis -2 of (B, G, K, C) or (B, K, C), remembering the winners."""

    def forward(self, x):
        self._shape = x.shape
        self._arg = np.argmax(x, axis=-2)
        return np.take_along_axis(x, self._arg[..., None, :], axis=-2)[..., 0, :]

    def backward(self, grad):
        out = np.zeros(self._shape, dtype=grad.dtype)
        np.put_along_axis(out, self._arg[..., None, :], grad[..., None, :], axis=-2)
        return out


class PointSetNet:
    def __init__(self, spec: PointSetSpec, seed=0):
        self.spec = spec
        dtype = np.dtype(spec.dtype)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        s1, s2 = spec.stage1, spec.stage2
        self.mlp1 = _shared_mlp(3, s1.widths, rng, spec.momentum, dtype)
        self.mlp2 = _shared_mlp(3 + s1.widths[-1], s2.widths, rng, spec.momentum, dtype)
        self.mlp3 = _shared_mlp(3 + s2.widths[-1], spec.global_widths, rng, spec.momentum, dtype)
        h1, h2 = spec.head
        self.head = Sequential([
            Linear(spec.global_widths[-1], h1, rng, dtype), BatchNorm(h1, spec.momentum, dtype=dtype),
            ReLU(), Dropout(spec.dropout, rng),
            Linear(h1, h2, rng, dtype), BatchNorm(h2, spec.momentum, dtype=dtype),
            ReLU(), Dropout(spec.dropout, rng),
            Linear(h2, spec.n_out, rng, dtype),
        ])
        self.pool1, self.pool2, self.pool3 = _MaxPool(), _MaxPool(), _MaxPool()
        self._modules = [self.mlp1, self.mlp2, self.mlp3, self.head]

    def params(self):
        return [p for m in self._modules for p in m.params()]

    def grads(self):
        return [g for m in self._modules for g in m.grads()]

    def buffers(self):
        return [b for m in self._modules for b in m.buffers()]

    def prepare(self, points):
        return prepare_clouds(points, self.spec)

    def global_features(self, batch: PreparedClouds, train=False):
        dt = self.dtype
        pts = batch.points.astype(dt)
        B = len(pts)
        ctr1 = _gather(pts, batch.centers1)                       # (B, S1, 3)
        rel1 = _gather(pts, batch.groups1) - ctr1[:, :, None, :]  # (B, S1, K1, 3)
        S1, K1 = rel1.shape[1:3]
        h = self.mlp1.forward(rel1.reshape(-1, 3), train)
        f1 = self.pool1.forward(h.reshape(B, S1, K1, -1))         # (B, S1, C1)

        ctr2 = _gather(ctr1, batch.centers2)                      # (B, S2, 3)
        rel2 = _gather(ctr1, batch.groups2) - ctr2[:, :, None, :]
        grouped = _gather(f1, batch.groups2)                      # (B, S2, K2, C1)
        S2, K2 = rel2.shape[1:3]
        x2 = np.concatenate([rel2, grouped], axis=-1)
        h = self.mlp2.forward(x2.reshape(B * S2 * K2, -1), train)
        f2 = self.pool2.forward(h.reshape(B, S2, K2, -1))         # (B, S2, C2)

        x3 = np.concatenate([ctr2, f2], axis=-1)
        h = self.mlp3.forward(x3.reshape(B * S2, -1), train)
        g = self.pool3.forward(h.reshape(B, S2, -1))              # (B, 1024)
        self._shapes = (B, S1, K1, S2, K2, f1.shape[-1], f2.shape[-1])
        self._groups2 = batch.groups2
        return g

    def forward(self, batch: PreparedClouds, train=False):
        return self.head.forward(self.global_features(batch, train), train)

    def backward_global(self, grad_global):
        B, S1, K1, S2, K2, C1, C2 = self._shapes
        gh = self.pool3.backward(grad_global).reshape(B * S2, -1)
        gx3 = self.mlp3.backward(gh).reshape(B, S2, 3 + C2)
        gf2 = gx3[..., 3:]
        gh = self.pool2.backward(gf2).reshape(B * S2 * K2, -1)
        gx2 = self.mlp2.backward(gh).reshape(B, S2, K2, 3 + C1)
        ggroup = gx2[..., 3:]
        gf1 = np.zeros((B, S1, C1), dtype=ggroup.dtype)
        b = np.broadcast_to(np.arange(B)[:, None, None], self._groups2.shape)
        np.add.at(gf1, (b, self._groups2), ggroup)
        gh = self.pool1.backward(gf1).reshape(B * S1 * K1, -1)
        self.mlp1.backward(gh)
        return gf1

    def backward(self, grad):
        g = self.head.backward(np.asarray(grad, dtype=self.dtype))
        self.backward_global(g)

    def predict(self, batch: PreparedClouds, batch_size=16):
        out = [self.forward(batch[np.arange(i, min(i + batch_size, len(batch)))])
               for i in range(0, len(batch), batch_size)]
        return np.concatenate(out)

    def state(self):
        return {"spec": json.dumps(self.spec.to_dict())}, self.params() + self.buffers()

    @classmethod
    def from_state(cls, meta, arrays):
        net = cls(PointSetSpec.from_dict(json.loads(meta["spec"])))
        for dst, src in zip(net.params() + net.buffers(), arrays):
            dst[...] = src
        return net
