"""Minibatch training loop shared by the feed-forward and point-set networks."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import NonFiniteLoss, ShapeMismatch
from .nn import AdamState, adam_step, smooth_l1

log = logging.getLogger(__name__)


def minibatches(n, batch_size, rng):
    """Shuffled index batches; a trailing singleton joins the previous batch
    because batch normalization cannot train on a single row.
    """
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def evaluate_loss(net, inputs, targets, beta=1.0, batch_size=64):
    total = 0.0
    for i in range(0, len(targets), batch_size):
        idx = np.arange(i, min(i + batch_size, len(targets)))
        pred = net.forward(inputs[idx], train=False)
        total += smooth_l1(pred, targets[idx].astype(pred.dtype), beta) * len(idx)
    return total / len(targets)


def fit_network(net, inputs, targets, epochs, batch_size=8, learning_rate=9.9e-4,
                beta=1.0, seed=0, test=None):
    """Train ``net`` in place with smooth-L1 loss and Adam.

    ``inputs`` is anything indexable by an index array (a 2-D array, or
    prepared point clouds) and ``targets`` a 2-D array. ``test`` is an
    optional ``(inputs, targets)`` pair evaluated after every epoch.
    Returns rows of ``(epoch, train_loss, test_loss)``.
    """
    targets = np.asarray(targets)
    if len(inputs) != len(targets):
        raise ShapeMismatch(f"{len(inputs)} inputs vs {len(targets)} targets")
    if len(targets) < 2:
        raise ShapeMismatch("need at least two training samples")
    rng = np.random.default_rng(seed)
    state = AdamState(lr=learning_rate)
    params, grads = net.params(), net.grads()
    history = []
    for epoch in range(1, epochs + 1):
        running = 0.0
        for b, idx in enumerate(minibatches(len(targets), batch_size, rng)):
            pred = net.forward(inputs[idx], train=True)
            loss, grad = smooth_l1(pred, targets[idx].astype(pred.dtype), beta, return_grad=True)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            net.backward(grad)
            adam_step(state, params, grads)
            running += loss * len(idx)
        train_loss = running / len(targets)
        test_loss = float("nan")
        if test is not None:
            test_loss = evaluate_loss(net, test[0], np.asarray(test[1]), beta)
        history.append((epoch, train_loss, test_loss))
        log.debug("epoch %d train %.6f test %.6f", epoch, train_loss, test_loss)
    return history
