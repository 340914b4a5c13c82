"""Shared test utilities: finite-difference oracles and random model setup."""

import numpy as np

from blocknewton.fcnn import (
    Activation,
    CrossEntropySoftmax,
    FcnnModel,
    SigmoidGate,
    criterion_batch,
    forward,
)


def random_model(rng, max_width=8, max_layers=4, activation=Activation.SIGMOID):
    k = int(rng.integers(2, max_layers + 1))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(k + 1)]
    return FcnnModel.xavier(widths, activation, rng=rng)


def random_batch(rng, model, batch=4):
    n0 = model.widths[0]
    nk = model.widths[-1]
    x = rng.uniform(0.0, 1.0, size=(batch, n0))
    labels = rng.integers(0, nk, size=batch)
    y = np.zeros((batch, nk))
    y[np.arange(batch), labels] = 1.0
    return x, y


def both_criteria():
    return [CrossEntropySoftmax(), SigmoidGate(delta=5.0, epsilon=0.2)]


def batch_loss(model, criterion, x, y):
    trace = forward(model, x)
    losses, _, _ = criterion_batch(criterion, trace.h[-1], y)
    return float(losses.mean())


def fd_gradient(f, theta, step=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        g[i] = (f(tp) - f(tm)) / (2.0 * step)
    return g


def fd_loss_gradient(model, criterion, x, y, step=1e-5):
    """Finite-difference gradient of the batch-mean loss over all parameters."""
    base = model.copy()
    theta0 = base.flat_parameters()

    def f(theta):
        base.set_flat_parameters(theta)
        return batch_loss(base, criterion, x, y)

    return fd_gradient(f, theta0, step)


def assert_close_rel(actual, expected, rtol, atol=1e-9):
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    denom = np.maximum(np.abs(expected), atol / rtol)
    assert np.all(np.abs(actual - expected) <= rtol * denom + atol), (
        f"max abs err {np.max(np.abs(actual - expected))}, "
        f"max rel err {np.max(np.abs(actual - expected) / denom)}"
    )
