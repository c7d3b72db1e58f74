"""Minimal numpy layers with explicit backpropagation.

Every layer caches what its backward pass needs during ``forward`` and
accumulates nothing between calls: ``backward`` overwrites the layer's
gradient buffers. Parameters and gradients are exposed as parallel lists
so an optimizer can walk them without knowing the layer types.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


class Layer:
    def params(self):
        return []

    def grads(self):
        return []

    def buffers(self):
        """Non-trainable state that must be persisted (running statistics)."""
        return []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Linear(Layer):
    """Affine map ``x @ W + b`` initialized like the common framework
    default, uniform in +-1/sqrt(fan_in).
    """

    def __init__(self, n_in, n_out, rng, dtype=np.float64):
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)
        self.b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x, train=False):
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        np.matmul(self._x.T, grad, out=self.dW)
        np.sum(grad, axis=0, out=self.db)
        return grad @ self.W.T


class BatchNorm(Layer):
    """Batch normalization over axis 0.

    Running statistics follow ``running = (1 - momentum) * running +
    momentum * batch`` with the unbiased batch variance, as in the usual
    framework convention; evaluation mode uses the running statistics.
    """

    def __init__(self, n, momentum=0.25, eps=1e-5, dtype=np.float64):
        self.gamma = np.ones(n, dtype=dtype)
        self.beta = np.zeros(n, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.dgamma, self.dbeta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, train=False):
        if train:
            m = x.shape[0]
            if m < 2:
                raise ShapeMismatch("batch normalization needs at least two rows in training")
            mean = x.mean(axis=0)
            xc = x - mean
            var = (xc * xc).mean(axis=0)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv
            mom = self.momentum
            self.running_mean *= 1 - mom
            self.running_mean += mom * mean
            self.running_var *= 1 - mom
            self.running_var += mom * var * (m / (m - 1))
            self._cache = (xhat, inv)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            self._cache = (xhat, inv)
        return xhat * self.gamma + self.beta

    def backward(self, grad):
        xhat, inv = self._cache
        np.sum(grad * xhat, axis=0, out=self.dgamma)
        np.sum(grad, axis=0, out=self.dbeta)
        g = grad * self.gamma
        # train-mode gradient; evaluation-mode backward is never needed
        return inv * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    """Inverted dropout; identity in evaluation mode."""

    def __init__(self, rate, rng):
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def smooth_l1(pred, target, beta=1.0, return_grad=False):
    """Mean smooth-L1 (Huber-style) loss.

    Elementwise ``0.5 d^2 / beta`` where ``|d| < beta`` and ``|d| - 0.5 beta``
    elsewhere, averaged over all elements. With ``return_grad`` also returns
    the gradient with respect to ``pred``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    ad = np.abs(d)
    quad = ad < beta
    loss = float(np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta).mean())
    if not return_grad:
        return loss
    grad = np.where(quad, d / beta, np.sign(d)) / d.size
    return loss, grad.astype(pred.dtype, copy=False)


_ADAM_CHUNK = 1 << 15


@dataclass
class AdamState:
    lr: float = 9.9e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are arrays or parallel lists of arrays; the
    (same) params object is returned.
    """
    single = isinstance(params, np.ndarray)
    plist = [params] if single else list(params)
    glist = [grads] if single else list(grads)
    if len(plist) != len(glist):
        raise ShapeMismatch("params and grads differ in length")
    for p, g in zip(plist, glist):
        if p.shape != np.shape(g):
            raise ShapeMismatch(f"param {p.shape} vs grad {np.shape(g)}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in plist]
        state.v = [np.zeros_like(p) for p in plist]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / bc1
    sqrt_bc2 = np.sqrt(bc2)
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for p, g, m, v in zip(plist, glist, state.m, state.v):
        pf, gf, mf, vf = (a.reshape(-1) for a in (p, g, m, v))
        buf = np.empty(min(pf.size, _ADAM_CHUNK), dtype=pf.dtype)
        # chunked so the intermediate passes stay in cache
        for i in range(0, pf.size, _ADAM_CHUNK):
            sl = slice(i, i + _ADAM_CHUNK)
            pc, gc, mc, vc = pf[sl], gf[sl], mf[sl], vf[sl]
            bc = buf[:len(pc)]
            np.multiply(gc, 1.0 - b1, out=bc)
            mc *= b1
            mc += bc
            np.multiply(gc, gc, out=bc)
            bc *= 1.0 - b2
            vc *= b2
            vc += bc
            np.sqrt(vc, out=bc)
            bc /= sqrt_bc2
            bc += eps
            np.divide(mc, bc, out=bc)
            bc *= step_size
            pc -= bc
    return params
