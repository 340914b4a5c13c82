"""Mini-batch training loop for first- and second-order optimizers.

Determinism contract: given the same seed, shuffling, batch order and all
reductions are fixed, so two runs produce bit-identical reports.  The
epoch shuffles come from a splitmix64 counter-based generator keyed on
(seed, epoch) rather than a stateful global RNG.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import CurvatureKind, ea_curvature
from .errors import ConfigError, TrainingDivergedError
from .fcnn import Criterion, FcnnModel, backprop, criterion_batch, forward, softmax
from .solvers import SolverConfig, ea_cg_direction, kfi_direction


def splitmix64(x: int) -> int:
    """One splitmix64 step; deterministic 64-bit mixing."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def shuffled_indices(n: int, seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n), keyed on (seed, epoch)."""
    state = splitmix64((seed & 0xFFFFFFFFFFFFFFFF) ^ splitmix64(epoch))
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        state = splitmix64(state)
        j = state % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


class SolverChoice(enum.Enum):
    EA_CG = "ea_cg"
    KFI = "kfi"


@dataclass(frozen=True)
class SecondOrderSpec:
    kind: CurvatureKind = CurvatureKind.PCH
    gamma: float = -1.0
    solver: SolverChoice = SolverChoice.EA_CG
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    second_order: SecondOrderSpec | None = None  # None selects SGD-momentum

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    test_accuracy: float
    wall_seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    model: FcnnModel

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].test_accuracy


def mean_loss(model: FcnnModel, criterion: Criterion, x: np.ndarray, y: np.ndarray) -> float:
    trace = forward(model, x)
    losses, _, _ = criterion_batch(criterion, trace.h[-1], y)
    return float(losses.mean())


def accuracy(model: FcnnModel, x: np.ndarray, y_index: np.ndarray) -> float:
    if x.shape[0] == 0:
        return 0.0
    trace = forward(model, x)
    pred = np.argmax(softmax(trace.h[-1]), axis=1)
    return float(np.mean(pred == y_index))


def _second_order_step(
    model: FcnnModel,
    criterion: Criterion,
    xb: np.ndarray,
    yb: np.ndarray,
    spec: SecondOrderSpec,
    lr: float,
) -> None:
    trace = forward(model, xb)
    _, grads_out, _ = criterion_batch(criterion, trace.h[-1], yb)
    grads = backprop(model, trace, grads_out)
    curv = ea_curvature(model, trace, criterion, yb, spec.kind, spec.gamma)
    if spec.solver is SolverChoice.EA_CG:
        direction = ea_cg_direction(curv, grads, spec.solver_cfg)
    else:
        direction = kfi_direction(
            curv, grads, spec.solver_cfg.alpha, spec.solver_cfg.pi_policy
        )
    for t in range(model.num_layers):
        model.weights[t] = model.weights[t] + lr * direction.d_weight[t]
        model.biases[t] = model.biases[t] + lr * direction.d_bias[t]


def train(
    model: FcnnModel,
    criterion: Criterion,
    x_train: np.ndarray,
    y_train: np.ndarray,
    cfg: TrainConfig,
    x_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
    record_time: bool = True,
) -> TrainReport:
    """Train in place and return per-epoch metrics.

    y arrays are one-hot.  Second-order optimizers recompute curvature on
    every mini-batch and step theta += lr * d (directions come negated
    from the solvers); SGD uses the classical momentum buffer
    v <- momentum v - lr g, theta <- theta + v.
    """
    n = x_train.shape[0]
    if y_train.shape[0] != n:
        raise ConfigError("feature/label counts differ")
    if x_test is None:
        x_test = x_train[:0]
        y_test = y_train[:0]
    y_test_idx = np.argmax(y_test, axis=1) if y_test.shape[0] else np.empty(0, int)

    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    records: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = shuffled_indices(n, cfg.seed, epoch)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            if cfg.second_order is None:
                trace = forward(model, xb)
                _, grads_out, _ = criterion_batch(criterion, trace.h[-1], yb)
                grads = backprop(model, trace, grads_out)
                for t in range(model.num_layers):
                    velocity_w[t] = (
                        cfg.momentum * velocity_w[t]
                        - cfg.learning_rate * grads.grad_weight[t]
                    )
                    velocity_b[t] = (
                        cfg.momentum * velocity_b[t]
                        - cfg.learning_rate * grads.grad_bias[t]
                    )
                    model.weights[t] = model.weights[t] + velocity_w[t]
                    model.biases[t] = model.biases[t] + velocity_b[t]
            else:
                _second_order_step(
                    model, criterion, xb, yb, cfg.second_order, cfg.learning_rate
                )
        loss = mean_loss(model, criterion, x_train, y_train)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch} "
                f"(optimizer {'sgd' if cfg.second_order is None else cfg.second_order.kind.value})"
            )
        wall = time.perf_counter() - start if record_time else 0.0
        records.append(
            EpochRecord(
                epoch=epoch,
                loss=loss,
                test_accuracy=accuracy(model, x_test, y_test_idx),
                wall_seconds=wall,
            )
        )
    return TrainReport(epochs=records, model=model)


@dataclass
class GridResult:
    params: dict
    report: TrainReport


def grid_search(
    model_factory,
    criterion: Criterion,
    x_train: np.ndarray,
    y_train: np.ndarray,
    base_cfg: TrainConfig,
    grid: dict[str, list],
    x_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
) -> tuple[list[GridResult], GridResult, GridResult]:
    """Cartesian-product grid runs, each from a fresh identically-seeded model.

    Grid keys: learning_rate, batch_size, alpha, max_cg, eps_cg.  Returns
    (all results in enumeration order, best by final training loss, best
    by final test accuracy).
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be non-empty")
    allowed = {"learning_rate", "batch_size", "alpha", "max_cg", "eps_cg"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")

    keys = sorted(grid)
    combos: list[dict] = [{}]
    for key in keys:
        combos = [{**c, key: v} for c in combos for v in grid[key]]

    results = []
    for params in combos:
        cfg = base_cfg
        cfg_updates = {
            k: params[k] for k in ("learning_rate", "batch_size") if k in params
        }
        if cfg_updates:
            cfg = replace(cfg, **cfg_updates)
        solver_updates = {
            k: params[k] for k in ("alpha", "max_cg", "eps_cg") if k in params
        }
        if solver_updates:
            if cfg.second_order is None:
                raise ConfigError("solver grid keys require a second-order optimizer")
            solver_cfg = replace(cfg.second_order.solver_cfg, **solver_updates)
            cfg = replace(
                cfg, second_order=replace(cfg.second_order, solver_cfg=solver_cfg)
            )
        model = model_factory()
        report = train(
            model, criterion, x_train, y_train, cfg, x_test, y_test
        )
        results.append(GridResult(params=params, report=report))

    best_loss = min(results, key=lambda r: r.report.final_loss)
    best_acc = max(results, key=lambda r: r.report.final_accuracy)
    return results, best_loss, best_acc
