"""Fully-connected networks with tracked activation derivatives.

A model with k layers applies sigma(W h + b) for layers 1..k-1 and leaves
layer k affine.  The forward pass records, per instance, the activations
h^t together with the elementwise first and second derivatives of sigma
evaluated at the pre-activations; both are needed by the curvature
recursions.  Batches are stored row-wise: arrays of shape (batch, n_t).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError


class Activation(enum.Enum):
    SIGMOID = "sigmoid"
    RELU = "relu"

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of the activation (sup of |sigma'|)."""
        return 0.25 if self is Activation.SIGMOID else 1.0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation_values(kind: Activation, z: np.ndarray):
    """Return (sigma(z), sigma'(z), sigma''(z)) elementwise.

    ReLU has no curvature away from the kink, so its second derivative is
    taken as zero everywhere.
    """
    if kind is Activation.SIGMOID:
        s = _sigmoid(z)
        return s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s)
    h = np.maximum(z, 0.0)
    return h, (z > 0).astype(float), np.zeros_like(z)


@dataclass
class FcnnModel:
    """Layer weights/biases plus the hidden-layer activation choice."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation = Activation.SIGMOID

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix")
        for t, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {t}: bias/weight shapes disagree")
            if t > 1 and w.shape[1] != self.weights[t - 2].shape[0]:
                raise DimensionError(f"layer {t}: input width does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {t}: non-finite parameters")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list[int]:
        """[n_0, n_1, ..., n_k]."""
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "FcnnModel":
        return FcnnModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    @classmethod
    def xavier(
        cls,
        widths: list[int],
        activation: Activation = Activation.SIGMOID,
        rng: np.random.Generator | None = None,
        seed: int | None = None,
    ) -> "FcnnModel":
        """Uniform(-a, a) init with a = sqrt(6 / (n_in + n_out)), zero biases."""
        if len(widths) < 2 or any(n < 1 for n in widths):
            raise ConfigError(f"bad layer widths {widths}")
        if rng is None:
            rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights=weights, biases=biases, activation=activation)

    def flat_parameters(self) -> np.ndarray:
        """Column-major vec of every W followed by its b, layer by layer."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1, order="F"))
            parts.append(b)
        return np.concatenate(parts)

    def set_flat_parameters(self, theta: np.ndarray) -> None:
        pos = 0
        for t in range(self.num_layers):
            w = self.weights[t]
            n = w.size
            self.weights[t] = theta[pos : pos + n].reshape(w.shape, order="F")
            pos += n
            m = self.biases[t].size
            self.biases[t] = theta[pos : pos + m].copy()
            pos += m
        if pos != theta.size:
            raise DimensionError("flat parameter vector has wrong length")


@dataclass
class ForwardTrace:
    """Per-layer batch activations and activation derivatives.

    h[t] has shape (batch, n_t) for t = 0..k.  hprime[t]/hdprime[t] hold
    sigma'/sigma'' at layer t's pre-activation for t = 1..k-1 and None at
    index 0 and k (input and affine output carry no activation).
    """

    h: list[np.ndarray]
    hprime: list[np.ndarray | None]
    hdprime: list[np.ndarray | None]

    @property
    def batch_size(self) -> int:
        return self.h[0].shape[0]


def forward(model: FcnnModel, inputs: np.ndarray) -> ForwardTrace:
    """Run the batch through the network, recording h, h', h''."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != model.widths[0]:
        raise DimensionError(
            f"input dim {x.shape[1]} != model input width {model.widths[0]}"
        )
    h: list[np.ndarray] = [x]
    hp: list[np.ndarray | None] = [None]
    hpp: list[np.ndarray | None] = [None]
    k = model.num_layers
    for t in range(1, k + 1):
        z = h[-1] @ model.weights[t - 1].T + model.biases[t - 1]
        if t < k:
            a, d1, d2 = activation_values(model.activation, z)
            h.append(a)
            hp.append(d1)
            hpp.append(d2)
        else:
            h.append(z)
            hp.append(None)
            hpp.append(None)
    return ForwardTrace(h=h, hprime=hp, hdprime=hpp)


# --- criterion functions -------------------------------------------------


def softmax(h: np.ndarray) -> np.ndarray:
    z = h - np.max(h, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(frozen=True)
class CrossEntropySoftmax:
    """Convex criterion: -log softmax(h)[label]."""

    def batch_eval(self, hk: np.ndarray, y: np.ndarray):
        yhat = softmax(hk)
        logits = hk - np.max(hk, axis=1, keepdims=True)
        logz = np.log(np.sum(np.exp(logits), axis=1))
        losses = logz - np.sum(logits * y, axis=1)
        grads = yhat - y
        hesses = -yhat[:, :, None] * yhat[:, None, :]
        idx = np.arange(hk.shape[1])
        hesses[:, idx, idx] += yhat
        return losses, grads, hesses


@dataclass(frozen=True)
class SigmoidGate:
    """Non-convex bounded criterion 1 / (1 + exp(delta * (y.yhat - epsilon)))."""

    delta: float = 5.0
    epsilon: float = 0.2

    def __post_init__(self):
        if self.delta <= 0 or not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(
                f"SigmoidGate needs delta > 0, epsilon in [0,1]; "
                f"got {self.delta}, {self.epsilon}"
            )

    def batch_eval(self, hk: np.ndarray, y: np.ndarray):
        yhat = softmax(hk)
        s = np.sum(yhat * y, axis=1)  # softmax probability of the true class
        loss = _sigmoid(-self.delta * (s - self.epsilon))
        dl = -self.delta * loss * (1.0 - loss)
        d2l = self.delta**2 * loss * (1.0 - loss) * (1.0 - 2.0 * loss)

        # s = yhat_c; grad_h s = s * (e_c - yhat), and the softmax Hessian of
        # the true-class probability closes the chain rule below.
        e_minus = y - yhat
        grad_s = s[:, None] * e_minus
        # hess_s = s * ((e_c - yhat)(e_c - yhat)^T - diag(yhat) + yhat yhat^T)
        outer = e_minus[:, :, None] * e_minus[:, None, :]
        yyt = yhat[:, :, None] * yhat[:, None, :]
        hess_s = outer + yyt
        idx = np.arange(hk.shape[1])
        hess_s[:, idx, idx] -= yhat
        hess_s *= s[:, None, None]

        grads = dl[:, None] * grad_s
        hesses = (
            d2l[:, None, None] * grad_s[:, :, None] * grad_s[:, None, :]
            + dl[:, None, None] * hess_s
        )
        return loss, grads, hesses


Criterion = CrossEntropySoftmax | SigmoidGate


def _check_one_hot(y: np.ndarray) -> None:
    if not (
        np.all((y == 0.0) | (y == 1.0)) and np.all(np.sum(y, axis=-1) == 1.0)
    ):
        raise ConfigError("labels must be one-hot vectors")


def criterion_eval(criterion: Criterion, hk: np.ndarray, y: np.ndarray):
    """Loss, gradient and Hessian of the criterion w.r.t. a single output h^k."""
    hk = np.asarray(hk, dtype=float)
    y = np.asarray(y, dtype=float)
    if hk.shape != y.shape or hk.ndim != 1:
        raise DimensionError("criterion_eval expects matching 1-d output/label")
    _check_one_hot(y)
    losses, grads, hesses = criterion.batch_eval(hk[None, :], y[None, :])
    return float(losses[0]), grads[0], hesses[0]


def criterion_batch(criterion: Criterion, hk: np.ndarray, y: np.ndarray):
    """Vectorized criterion_eval over a batch; returns (losses, grads, hesses)."""
    hk = np.asarray(hk, dtype=float)
    y = np.asarray(y, dtype=float)
    if hk.shape != y.shape or hk.ndim != 2:
        raise DimensionError("criterion_batch expects matching (batch, n_k) arrays")
    _check_one_hot(y)
    return criterion.batch_eval(hk, y)


# --- gradients ------------------------------------------------------------


@dataclass
class LayerGradients:
    """Batch-mean gradients, plus per-instance bias gradients per layer.

    grad_bias[t-1] is the mean over instances of the loss gradient w.r.t.
    b^t; grad_weight[t-1] the mean w.r.t. W^t.  bias_per_instance[t-1]
    keeps the (batch, n_t) per-instance bias gradients the curvature
    module consumes (Fisher blocks, diagonal recursion term).
    """

    grad_bias: list[np.ndarray]
    grad_weight: list[np.ndarray]
    bias_per_instance: list[np.ndarray] = field(repr=False, default_factory=list)

    def flat(self) -> np.ndarray:
        parts = []
        for gw, gb in zip(self.grad_weight, self.grad_bias):
            parts.append(gw.reshape(-1, order="F"))
            parts.append(gb)
        return np.concatenate(parts)


def backprop_bias_gradients(
    model: FcnnModel, trace: ForwardTrace, grad_out: np.ndarray
) -> list[np.ndarray]:
    """Per-instance bias gradients for every layer, output layer first equals
    grad_out; lower layers follow g^{t-1} = h'^{t-1} o (W^t)^T g^t."""
    k = model.num_layers
    grad_out = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if grad_out.shape != trace.h[k].shape:
        raise DimensionError("grad_out shape does not match trace output")
    per_layer = [None] * k
    g = grad_out
    per_layer[k - 1] = g
    for t in range(k, 1, -1):
        g = (g @ model.weights[t - 1]) * trace.hprime[t - 1]
        per_layer[t - 2] = g
    return per_layer


def backprop(
    model: FcnnModel, trace: ForwardTrace, grad_out: np.ndarray
) -> LayerGradients:
    """Batch-averaged gradients for all weights and biases.

    The weight gradient is the exact outer-product form
    grad_W^t = grad_b^t h^{(t-1)T}, averaged over the batch.
    """
    gb_inst = backprop_bias_gradients(model, trace, grad_out)
    n = trace.batch_size
    grad_bias = [g.mean(axis=0) for g in gb_inst]
    grad_weight = [
        (gb_inst[t].T @ trace.h[t]) / n for t in range(model.num_layers)
    ]
    return LayerGradients(
        grad_bias=grad_bias, grad_weight=grad_weight, bias_per_instance=gb_inst
    )
