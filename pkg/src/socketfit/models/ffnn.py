"""Fully connected regression network for flattened meshes or PCA coefficients."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import ShapeMismatch
from .nn import BatchNorm, Dropout, Linear, ReLU, Sequential

# hidden widths and epochs per (mode, representation)
ARCHITECTURES = {
    ("Adaptations", "Raw"): ((64, 128, 256, 512), ("bn", "bn", "bn_dropout", "bn_dropout"), 50),
    ("Adaptations", "Reduced"): ((32, 32), ("bn_dropout", "bn_dropout"), 75),
    ("SocketShape", "Raw"): ((32, 512, 512, 1048), ("bn", "bn", "bn_dropout", "bn_dropout"), 175),
    ("SocketShape", "Reduced"): ((64, 128, 256, 512), ("bn", "bn", "bn_dropout", "bn_dropout"), 150),
}


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    regularization: tuple
    epochs: int = 50
    learning_rate: float = 9.9e-4
    batch_size: int = 8
    momentum: float = 0.25
    dropout: float = 0.25
    smooth_l1_beta: float = 1.0
    activation: str = "relu"
    dtype: str = "float32"

    def __post_init__(self):
        sizes = tuple(tuple(int(v) for v in s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "regularization", tuple(self.regularization))
        for (_, a), (b, _) in zip(sizes[:-1], sizes[1:]):
            if a != b:
                raise ShapeMismatch(f"layer sizes do not chain: {sizes}")
        if len(self.regularization) != len(sizes) - 1:
            raise ShapeMismatch("need one regularization entry per hidden layer")
        if self.activation != "relu":
            raise ValueError("only the relu activation is implemented")

    @property
    def n_in(self):
        return self.layer_sizes[0][0]

    @property
    def n_out(self):
        return self.layer_sizes[-1][1]

    @classmethod
    def for_mode(cls, mode, representation, n_in, n_out, **overrides):
        widths, reg, epochs = ARCHITECTURES[(mode, representation)]
        dims = (n_in,) + widths + (n_out,)
        sizes = tuple(zip(dims[:-1], dims[1:]))
        return replace(cls(sizes, reg, epochs=epochs), **overrides)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class FeedForwardNet:
    """Linear layers with batch normalization, ReLU and dropout between them."""

    def __init__(self, spec: MlpSpec, seed=0):
        self.spec = spec
        dtype = np.dtype(spec.dtype)
        rng = np.random.default_rng(seed)
        layers = []
        for i, (n_in, n_out) in enumerate(spec.layer_sizes):
            layers.append(Linear(n_in, n_out, rng, dtype))
            if i < len(spec.layer_sizes) - 1:
                reg = spec.regularization[i]
                if reg in ("bn", "bn_dropout"):
                    layers.append(BatchNorm(n_out, spec.momentum, dtype=dtype))
                layers.append(ReLU())
                if reg == "bn_dropout":
                    layers.append(Dropout(spec.dropout, rng))
        self.body = Sequential(layers)
        self.dtype = dtype

    def params(self):
        return self.body.params()

    def grads(self):
        return self.body.grads()

    def buffers(self):
        return self.body.buffers()

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.n_in:
            raise ShapeMismatch(f"expected (batch, {self.spec.n_in}) input, got {x.shape}")
        return self.body.forward(x, train)

    def backward(self, grad):
        return self.body.backward(np.asarray(grad, dtype=self.dtype))

    def predict(self, x, batch_size=256):
        x = np.atleast_2d(x)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def state(self):
        return {"spec": json.dumps(self.spec.to_dict())}, self.params() + self.buffers()

    @classmethod
    def from_state(cls, meta, arrays):
        net = cls(MlpSpec.from_dict(json.loads(meta["spec"])))
        for dst, src in zip(net.params() + net.buffers(), arrays):
            dst[...] = src
        return net
