"""Multi-output random forest regression (CART trees, variance reduction).

Split search scores every candidate threshold of a feature at once from
prefix sums of the targets. The summed per-output variance of a node only
depends on inner products between target rows, so the targets are first
rotated onto their row space (an exact isometry obtained from the SVD of
the centered target matrix). With ~100 samples and ~10^4 outputs this
shrinks the prefix sums from 10^4 to at most n columns without changing
any split decision.

Trees keep the training-sample indices of each leaf rather than leaf
means; predictions are the average leaf means computed from the stored
training targets.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch, InsufficientSamples, InvariantViolation, ParseError

FORMAT_VERSION = 1
_TIE_RTOL = 1e-10

# (n_estimators, max_depth, min_samples_split, min_samples_leaf, max_features)
PUBLISHED = {
    ("Adaptations", "Raw"): (1154, 162, 6, 3, "sqrt"),
    ("Adaptations", "Reduced"): (1297, 179, 5, 1, "sqrt"),
    ("SocketShape", "Raw"): (920, 181, 5, 1, "log2"),
    ("SocketShape", "Reduced"): (320, 158, 6, 5, "sqrt"),
}


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: str | int | None = "sqrt"
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise InvariantViolation("n_estimators must be at least 1")
        if self.min_samples_split < 2:
            raise InvariantViolation("min_samples_split must be at least 2")
        if self.min_samples_leaf < 1:
            raise InvariantViolation("min_samples_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvariantViolation("max_depth must be non-negative")
        if isinstance(self.max_features, str) and self.max_features not in ("sqrt", "log2"):
            raise InvariantViolation(f"unknown max_features {self.max_features!r}")

    @classmethod
    def for_mode(cls, mode, representation, **overrides):
        n, depth, split, leaf, feats = PUBLISHED[(mode, representation)]
        return replace(cls(n, depth, split, leaf, feats), **overrides)

    def n_features(self, d):
        mf = self.max_features
        if mf is None:
            return d
        if mf == "sqrt":
            return max(1, int(math.sqrt(d)))
        if mf == "log2":
            return max(1, int(math.log2(d)))
        return max(1, min(d, int(mf)))

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_samples: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf node index reached by each row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def leaf_samples_of(self, node):
        s = self.leaf_start[node]
        return self.leaf_samples[s:s + self.leaf_count[node]]


def _prefix_sums(a):
    # row-by-row accumulation streams far faster than cumsum over axis 0
    out = np.empty((len(a) - 1,) + a.shape[1:])
    out[0] = a[0]
    for i in range(1, len(a) - 1):
        np.add(out[i - 1], a[i], out=out[i])
    return out


def _best_split(X, idx, Yn, features, min_leaf, chunk_elems=4_000_000):
    """Best (gain, feature, threshold) over ``features`` for node rows ``idx``, or None."""
    n, r = Yn.shape
    total = Yn.sum(axis=0)
    tt = total @ total
    counts = np.arange(1, n)
    valid_counts = (counts >= min_leaf) & (n - counts >= min_leaf)
    if not valid_counts.any():
        return None
    best = None
    step = max(1, chunk_elems // max(1, n * r))
    for c0 in range(0, len(features), step):
        feats = features[c0:c0 + step]
        xs = X[np.ix_(idx, feats)]
        order = np.argsort(xs, axis=0, kind="stable")
        xs = np.take_along_axis(xs, order, axis=0)
        left = _prefix_sums(Yn[order])                      # (n-1, f, r)
        ll = np.einsum("kfr,kfr->kf", left, left)
        rr = tt - 2.0 * (left @ total) + ll
        gain = ll / counts[:, None] + rr / (n - counts)[:, None]
        ok = (xs[:-1] < xs[1:]) & valid_counts[:, None]
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf).T                # (f, n-1), feature-major
        # gains equal up to rounding are ties: lowest feature, then lowest threshold
        top = gain.max()
        flat = int(np.argmax(gain >= top - _TIE_RTOL * (abs(top) + tt)))
        fi, k = divmod(flat, n - 1)
        g = gain[fi, k]
        if best is None or g > best[0] + _TIE_RTOL * (abs(best[0]) + tt):
            lo, hi = xs[k, fi], xs[k + 1, fi]
            thr = 0.5 * (lo + hi)
            if thr >= hi:
                thr = lo
            best = (g, int(feats[fi]), float(thr))
    return best


def build_tree(X, Yr, samples, cfg: ForestConfig, rng) -> Tree:
    """Grow one CART tree on rows ``samples`` (duplicates allowed)."""
    d = X.shape[1]
    mf = cfg.n_features(d)
    max_depth = cfg.max_depth if cfg.max_depth is not None else np.iinfo(np.int64).max
    feature, threshold, left, right, lstart, lcount = [], [], [], [], [], []
    leaf_samples = []
    n_leaf_samples = 0
    stack = [(np.asarray(samples), 0, -1, 0)]
    while stack:
        idx, depth, parent, side = stack.pop()
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        lstart.append(0)
        lcount.append(0)
        if parent >= 0:
            (left if side == 0 else right)[parent] = node

        split = None
        n = len(idx)
        if n >= cfg.min_samples_split and n >= 2 * cfg.min_samples_leaf and depth < max_depth:
            Yn = Yr[idx]
            if np.ptp(Yn, axis=0).max(initial=0.0) > 0:
                feats = np.sort(rng.choice(d, size=mf, replace=False)) if mf < d else np.arange(d)
                split = _best_split(X, idx, Yn, feats, cfg.min_samples_leaf)
        if split is None:
            lstart[node] = n_leaf_samples
            lcount[node] = n
            leaf_samples.append(idx)
            n_leaf_samples += n
            continue
        _, f, thr = split
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, node, 1))
        stack.append((idx[go_left], depth + 1, node, 0))

    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(lstart, dtype=np.int64), np.array(lcount, dtype=np.int64),
                np.concatenate(leaf_samples).astype(np.int64))


def _row_space(Y):
    # exact isometry of the target rows onto their span, for split scoring
    yc = Y - Y.mean(axis=0)
    u, s, _ = np.linalg.svd(yc, full_matrices=False)
    keep = s > s.max(initial=0.0) * max(Y.shape) * np.finfo(float).eps
    if not keep.any():
        return np.zeros((len(Y), 1))
    return u[:, keep] * s[keep]


@dataclass(eq=False)
class Forest:
    trees: list
    targets: np.ndarray
    n_features: int
    config: ForestConfig

    def leaf_weights(self, X) -> sp.csr_matrix:
        """Sparse (queries x training samples) averaging weights."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        rows, cols, vals = [], [], []
        scale = 1.0 / len(self.trees)
        for tree in self.trees:
            leaves = tree.apply(X)
            cnt = tree.leaf_count[leaves]
            start = tree.leaf_start[leaves]
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            rows.append(np.repeat(np.arange(len(X)), cnt))
            cols.append(tree.leaf_samples[np.repeat(start, cnt) + offs])
            vals.append(np.repeat(scale / cnt, cnt))
        w = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(X), len(self.targets)))
        return w.tocsr()

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = np.asarray(self.leaf_weights(X) @ self.targets)
        return out[0] if single else out

    def save(self, path):
        arrays = {"version": np.array(FORMAT_VERSION), "targets": self.targets,
                  "n_features": np.array(self.n_features),
                  "n_trees": np.array(len(self.trees))}
        names = ("feature", "threshold", "left", "right", "leaf_start", "leaf_count", "leaf_samples")
        for name in names:
            parts = [getattr(t, name) for t in self.trees]
            arrays[name] = np.concatenate(parts)
            arrays[name + "_len"] = np.array([len(p) for p in parts])
        cfg = self.config.to_dict()
        arrays["config"] = np.array(repr(sorted(cfg.items())))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, config: ForestConfig | None = None):
        import ast

        with np.load(path) as z:
            if int(z["version"]) != FORMAT_VERSION:
                raise ParseError(f"unsupported forest version {int(z['version'])}", str(path))
            names = ("feature", "threshold", "left", "right", "leaf_start", "leaf_count", "leaf_samples")
            split = {}
            for name in names:
                bounds = np.cumsum(z[name + "_len"])[:-1]
                split[name] = np.split(z[name], bounds)
            trees = [Tree(*(split[name][i] for name in names)) for i in range(int(z["n_trees"]))]
            if config is None:
                config = ForestConfig(**dict(ast.literal_eval(str(z["config"]))))
            return cls(trees, z["targets"].copy(), int(z["n_features"]), config)


def train_forest(X, Y, cfg: ForestConfig) -> Forest:
    """Fit a forest of multi-output regression trees.

    Each tree draws its bootstrap sample and per-split feature subsets from
    its own random stream spawned from ``cfg.seed``, so the result does not
    depend on ``cfg.n_jobs``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or len(X) != len(Y):
        raise DimensionMismatch("X and Y must be 2-D with the same number of rows")
    n = len(X)
    if n < cfg.min_samples_split or X.shape[1] < 1 or Y.shape[1] < 1:
        raise InsufficientSamples(f"need at least {cfg.min_samples_split} samples, got {n}")
    Yr = _row_space(Y)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_estimators)

    def grow(ss):
        rng = np.random.default_rng(ss)
        samples = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        return build_tree(X, Yr, samples, cfg, rng)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as pool:
            trees = list(pool.map(grow, streams))
    else:
        trees = [grow(ss) for ss in streams]
    return Forest(trees, Y.copy(), X.shape[1], cfg)


def forest_predict(forest: Forest, x) -> np.ndarray:
    return forest.predict(x)
