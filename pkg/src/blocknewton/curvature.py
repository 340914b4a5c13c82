"""Layer-wise curvature blocks for fully-connected networks.

Two routes are implemented:

* the exact per-instance bias-Hessian recursion, averaged over the batch
  (the reference "true block-diagonal" curvature), and
* the expectation-approximated recursion that propagates batch-averaged
  blocks directly, with the positive-curvature (PCH), Gauss-Newton and
  Fisher variants.

Weight-block curvature is never materialized: each layer only carries its
bias block together with the Kronecker factors (E[h h^T], E[h]) needed by
the solvers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .fcnn import (
    Criterion,
    FcnnModel,
    ForwardTrace,
    backprop_bias_gradients,
    criterion_batch,
)
from .linalg import abs_eig, pos_eig


class CurvatureKind(enum.Enum):
    TRUE_BLOCK_DIAG = "true"
    PCH = "pch"
    GAUSS_NEWTON = "gauss_newton"
    FISHER = "fisher"


@dataclass
class LayerCurvature:
    """Curvature data for one layer t.

    hb is the (possibly modified) bias block E_i[d2 xi / d b^t d b^t].
    ehhT/eh are the Gram matrix and mean of the layer input h^{t-1}
    (the Kronecker factors of the weight block).  ehhT_prime and
    diag_term belong to the recursion into layer t-1 and are None where
    undefined (inputs have no activation derivative; the top layer has no
    diagonal term).
    """

    hb: np.ndarray
    ehhT: np.ndarray
    eh: np.ndarray
    ehhT_prime: np.ndarray | None = None
    diag_term: np.ndarray | None = None


def _check_trace(model: FcnnModel, trace: ForwardTrace) -> None:
    widths = model.widths
    if len(trace.h) != model.num_layers + 1 or any(
        trace.h[t].shape[1] != widths[t] for t in range(len(widths))
    ):
        raise DimensionError("trace does not match model architecture")


def exact_bias_hessian_instances(
    model: FcnnModel, trace: ForwardTrace, criterion: Criterion, y: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-instance bias Hessians for every layer, plus per-instance bias
    gradients.

    Returns (hessians, gradients) where hessians[t-1] has shape
    (batch, n_t, n_t).  The recursion starts from the criterion Hessian at
    the output and sandwiches through each hidden layer, adding the
    diagonal second-derivative term.
    """
    _check_trace(model, trace)
    k = model.num_layers
    _, grads_out, hess_out = criterion_batch(criterion, trace.h[k], y)
    gb = backprop_bias_gradients(model, trace, grads_out)

    hbs: list[np.ndarray] = [None] * k
    hbs[k - 1] = hess_out
    for t in range(k, 1, -1):
        w = model.weights[t - 1]
        hp = trace.hprime[t - 1]
        hpp = trace.hdprime[t - 1]
        sand = np.einsum("sa,iab,bc->isc", w.T, hbs[t - 1], w, optimize=True)
        sand *= hp[:, :, None]
        sand *= hp[:, None, :]
        diag_vec = hpp * (gb[t - 1] @ w)
        idx = np.arange(w.shape[1])
        sand[:, idx, idx] += diag_vec
        hbs[t - 2] = sand
    return hbs, gb


def true_bias_hessian(
    model: FcnnModel, trace: ForwardTrace, criterion: Criterion, y: np.ndarray
) -> list[np.ndarray]:
    """Batch means of the exact per-instance bias Hessians, layer by layer."""
    hbs, _ = exact_bias_hessian_instances(model, trace, criterion, y)
    return [0.5 * (m + m.T) for m in (h.mean(axis=0) for h in hbs)]


def _factors(trace: ForwardTrace, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Kronecker factors of layer t: Gram/mean of h^{t-1} and, when t > 1,
    the Gram of the activation derivative h^{(t-1)'}."""
    h = trace.h[t - 1]
    n = trace.batch_size
    ehhT = (h.T @ h) / n
    eh = h.mean(axis=0)
    ehhT_prime = None
    if t > 1:
        hp = trace.hprime[t - 1]
        ehhT_prime = (hp.T @ hp) / n
    return ehhT, eh, ehhT_prime


def ea_curvature(
    model: FcnnModel,
    trace: ForwardTrace,
    criterion: Criterion,
    y: np.ndarray,
    kind: CurvatureKind,
    gamma: float = -1.0,
) -> list[LayerCurvature]:
    """Expectation-approximated curvature blocks for every layer.

    PCH clips the top block and the recursion's diagonal term through the
    negative-eigenvalue replacement with the given gamma (-1 flips signs,
    0 zeroes); the sandwich term is PSD by induction and left alone.
    Gauss-Newton runs the same recursion with the diagonal term dropped
    and no clipping.  Fisher replaces every bias block by the gradient
    outer-product mean.
    """
    if kind is CurvatureKind.TRUE_BLOCK_DIAG:
        raise ConfigError("use true_bias_hessian for the exact block diagonal")
    if kind is CurvatureKind.PCH and gamma not in (-1.0, 0.0):
        raise ConfigError(f"PCH gamma must be -1 or 0, got {gamma}")
    _check_trace(model, trace)
    k = model.num_layers
    n = trace.batch_size
    _, grads_out, hess_out = criterion_batch(criterion, trace.h[k], y)
    gb = backprop_bias_gradients(model, trace, grads_out)

    top = 0.5 * (hess_out.mean(axis=0) + hess_out.mean(axis=0).T)
    if kind is CurvatureKind.PCH:
        hb = pos_eig(top, gamma)
    elif kind is CurvatureKind.GAUSS_NEWTON:
        hb = top
    else:  # Fisher
        hb = (gb[k - 1].T @ gb[k - 1]) / n

    layers: list[LayerCurvature] = [None] * k
    ehhT, eh, _ = _factors(trace, k)
    layers[k - 1] = LayerCurvature(hb=hb, ehhT=ehhT, eh=eh)

    prev_hb = hb
    for t in range(k, 1, -1):
        w = model.weights[t - 1]
        ehhT, eh, _ = _factors(trace, t - 1)
        hp = trace.hprime[t - 1]
        ehhT_prime = (hp.T @ hp) / n
        diag_vec = (trace.hdprime[t - 1] * (gb[t - 1] @ w)).mean(axis=0)

        if kind is CurvatureKind.FISHER:
            hb = (gb[t - 2].T @ gb[t - 2]) / n
        else:
            hb = (w.T @ prev_hb @ w) * ehhT_prime
            if kind is CurvatureKind.PCH:
                # the term is diagonal, so clipping reduces to |x| or max(x, 0)
                clipped = np.abs(diag_vec) if gamma == -1.0 else np.maximum(diag_vec, 0.0)
                hb = hb + np.diag(clipped)
            hb = 0.5 * (hb + hb.T)
        layers[t - 2] = LayerCurvature(
            hb=hb,
            ehhT=ehhT,
            eh=eh,
            ehhT_prime=ehhT_prime,
            diag_term=diag_vec,
        )
        prev_hb = hb
    return layers


@dataclass
class ErrorReport:
    """Frobenius distances per layer plus the joint block-diagonal norm."""

    per_layer: list[float]
    total: float


def layerwise_error(
    approx: list[np.ndarray], exact: list[np.ndarray]
) -> ErrorReport:
    """Frobenius error between approximate blocks and the absolute-eigenvalue
    version of the exact blocks; total is the norm over all blocks jointly."""
    if len(approx) != len(exact):
        raise DimensionError("layer counts differ")
    per_layer = []
    for a, e in zip(approx, exact):
        if a.shape != e.shape:
            raise DimensionError(f"block shapes differ: {a.shape} vs {e.shape}")
        per_layer.append(float(np.linalg.norm(a - abs_eig(e))))
    total = float(np.sqrt(sum(err * err for err in per_layer)))
    return ErrorReport(per_layer=per_layer, total=total)


def covariance_bound_check(
    model: FcnnModel,
    trace: ForwardTrace,
    criterion: Criterion,
    y: np.ndarray,
    layer_t: int,
    lipschitz: float,
) -> tuple[float, float]:
    """Evaluate both sides of the expectation-approximation error bound at
    layer t (2 <= t <= k).

    lhs is the squared Frobenius norm of the elementwise covariance between
    W^T Hb_i W and h'^{t-1} h'^{(t-1)T} over the batch; rhs is L^4 times the
    summed elementwise variance of W^T Hb_i W.  The bound asserts lhs <= rhs
    for any activation with Lipschitz constant L.
    """
    if not 2 <= layer_t <= model.num_layers:
        raise ConfigError(f"layer_t must be in [2, {model.num_layers}]")
    if trace.batch_size < 2:
        raise ConfigError("covariance needs batch size >= 2")
    hbs, _ = exact_bias_hessian_instances(model, trace, criterion, y)
    w = model.weights[layer_t - 1]
    x = np.einsum("sa,iab,bc->isc", w.T, hbs[layer_t - 1], w, optimize=True)
    hp = trace.hprime[layer_t - 1]
    yv = hp[:, :, None] * hp[:, None, :]
    cov = (x * yv).mean(axis=0) - x.mean(axis=0) * yv.mean(axis=0)
    lhs = float(np.sum(cov * cov))
    var_x = (x * x).mean(axis=0) - x.mean(axis=0) ** 2
    rhs = float(lipschitz**4 * np.sum(var_x))
    return lhs, rhs
