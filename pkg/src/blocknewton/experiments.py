"""Experiment drivers: JSON experiment specs, training runs with metrics
emission, curvature-vs-true-Hessian error tables, and the covariance
bound check."""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curvature import (
    CurvatureKind,
    ea_curvature,
    covariance_bound_check,
    layerwise_error,
    true_bias_hessian,
)
from .data import Dataset, load_csv, load_idx, synth_blobs
from .errors import ConfigError
from .fcnn import (
    Activation,
    CrossEntropySoftmax,
    Criterion,
    FcnnModel,
    SigmoidGate,
    forward,
)
from .solvers import HvpMode, PiPolicy, SolverConfig
from .trainer import (
    SecondOrderSpec,
    SolverChoice,
    TrainConfig,
    TrainReport,
    shuffled_indices,
    train,
)

DEFAULT_ARCH = [64, 32, 16, 16, 8, 8, 8, 10]  # desk-scale 8-layer default


@dataclass
class ExperimentSpec:
    """One experiment: architecture, criterion, data source, optimizer."""

    architecture: list[int] = field(default_factory=lambda: list(DEFAULT_ARCH))
    activation: Activation = Activation.SIGMOID
    criterion: Criterion = field(default_factory=CrossEntropySoftmax)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    dataset: dict = field(
        default_factory=lambda: {
            "kind": "blobs",
            "classes": 10,
            "dim": 64,
            "per_class": 40,
            "spread": 0.08,
        }
    )
    compare_steps: int = 10
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.architecture) < 2 or any(n < 1 for n in self.architecture):
            raise ConfigError(f"bad architecture {self.architecture}")

    def load_dataset(self, seed: int) -> Dataset:
        spec = dict(self.dataset)
        kind = spec.pop("kind", "blobs")
        if kind == "blobs":
            spec.setdefault("seed", seed)
            return synth_blobs(**spec)
        if kind == "idx":
            return load_idx(spec["images"], spec["labels"], spec.get("train_fraction", 0.8))
        if kind == "csv":
            return load_csv(
                spec["path"],
                spec["label_column"],
                spec.get("has_header", False),
                spec.get("train_fraction", 0.8),
            )
        raise ConfigError(f"unknown dataset kind {kind!r}")

    def build_model(self, seed: int) -> FcnnModel:
        return FcnnModel.xavier(self.architecture, self.activation, seed=seed)


def spec_from_json(doc: dict) -> ExperimentSpec:
    """Build an ExperimentSpec from its JSON-document form."""
    kwargs = {}
    if "architecture" in doc:
        kwargs["architecture"] = list(doc["architecture"])
    if "activation" in doc:
        kwargs["activation"] = Activation(doc["activation"])
    crit = doc.get("criterion", {"kind": "cross_entropy"})
    if crit["kind"] == "cross_entropy":
        kwargs["criterion"] = CrossEntropySoftmax()
    elif crit["kind"] == "sigmoid_gate":
        kwargs["criterion"] = SigmoidGate(
            delta=crit.get("delta", 5.0), epsilon=crit.get("epsilon", 0.2)
        )
    else:
        raise ConfigError(f"unknown criterion kind {crit['kind']!r}")

    tdoc = doc.get("train", {})
    second = None
    odoc = doc.get("optimizer", {"kind": "sgd"})
    if odoc.get("kind", "sgd") != "sgd":
        scfg = odoc.get("solver_cfg", {})
        second = SecondOrderSpec(
            kind=CurvatureKind(odoc.get("curvature", "pch")),
            gamma=float(odoc.get("gamma", -1.0)),
            solver=SolverChoice(odoc.get("kind")),
            solver_cfg=SolverConfig(
                alpha=scfg.get("alpha", 0.02),
                max_cg=scfg.get("max_cg", 20),
                eps_cg=scfg.get("eps_cg", 1e-5),
                hvp_mode=HvpMode(scfg.get("hvp_mode", "exact_kron")),
                pi_policy=PiPolicy(scfg.get("pi_policy", "unit")),
            ),
        )
    kwargs["train_cfg"] = TrainConfig(
        learning_rate=tdoc.get("learning_rate", 0.1),
        momentum=tdoc.get("momentum", 0.9),
        batch_size=tdoc.get("batch_size", 32),
        epochs=tdoc.get("epochs", 10),
        seed=tdoc.get("seed", 0),
        second_order=second,
    )
    if "dataset" in doc:
        kwargs["dataset"] = dict(doc["dataset"])
    if "compare_steps" in doc:
        kwargs["compare_steps"] = int(doc["compare_steps"])
    if "grid" in doc:
        kwargs["grid"] = dict(doc["grid"])
    return ExperimentSpec(**kwargs)


def load_spec(path: str | Path) -> ExperimentSpec:
    with open(path) as f:
        return spec_from_json(json.load(f))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_jsonl(report: TrainReport) -> str:
    lines = [
        json.dumps(
            {
                "epoch": rec.epoch,
                "loss": rec.loss,
                "test_acc": rec.test_accuracy,
                "wall_s": rec.wall_seconds,
            },
            sort_keys=True,
        )
        for rec in report.epochs
    ]
    return "\n".join(lines) + "\n"


def summary_csv(report: TrainReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "test_acc", "wall_s"])
    for rec in report.epochs:
        writer.writerow([rec.epoch, repr(rec.loss), repr(rec.test_accuracy), repr(rec.wall_seconds)])
    return buf.getvalue()


def run_training(
    spec: ExperimentSpec, seed: int | None = None, record_time: bool = True
) -> TrainReport:
    """Build model + dataset from the experiment spec and train."""
    cfg = spec.train_cfg
    if seed is not None:
        cfg = TrainConfig(
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            seed=seed,
            second_order=cfg.second_order,
        )
    ds = spec.load_dataset(cfg.seed)
    model = spec.build_model(cfg.seed)
    x_train, y_train, x_test, y_test = ds.split()
    return train(
        model,
        spec.criterion,
        x_train,
        y_train,
        cfg,
        x_test,
        y_test,
        record_time=record_time,
    )


APPROXIMATION_COLUMNS = ["fisher", "gauss_newton", "pch1", "pch2"]


@dataclass
class CurvatureErrorTable:
    """Per-layer mean errors of each approximation against the true blocks.

    columns maps approximation name -> list of per-layer errors plus the
    joint total; a column is None when the approximation is unavailable
    (Gauss-Newton under a non-convex criterion)."""

    num_layers: int
    columns: dict[str, list[float] | None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer"] + APPROXIMATION_COLUMNS)
        for row in range(self.num_layers + 1):
            name = f"layer-{row + 1}" if row < self.num_layers else "total"
            cells = [name]
            for col in APPROXIMATION_COLUMNS:
                vals = self.columns[col]
                cells.append("" if vals is None else repr(vals[row]))
            writer.writerow(cells)
        return buf.getvalue()


def compare_curvatures(spec: ExperimentSpec, seed: int | None = None) -> CurvatureErrorTable:
    """Average layer-wise approximation errors along a short training run.

    Trains for compare_steps mini-batch steps from the seeded initial
    parameters; at each visited parameter vector (theta^0 .. theta^{s-1})
    computes the exact block-diagonal bias Hessian on one batch and the
    errors of Fisher / Gauss-Newton / PCH-1 / PCH-2 against it, then
    averages per layer.  Gauss-Newton is skipped (column None) for the
    non-convex criterion, where its top block is indefinite.
    """
    if spec.compare_steps < 1:
        raise ConfigError("compare_steps must be >= 1")
    cfg = spec.train_cfg
    run_seed = cfg.seed if seed is None else seed
    ds = spec.load_dataset(run_seed)
    model = spec.build_model(run_seed)
    x_train, y_train, _, _ = ds.split()
    criterion = spec.criterion
    convex = isinstance(criterion, CrossEntropySoftmax)

    variants = {
        "fisher": (CurvatureKind.FISHER, -1.0),
        "pch1": (CurvatureKind.PCH, -1.0),
        "pch2": (CurvatureKind.PCH, 0.0),
    }
    if convex:
        variants["gauss_newton"] = (CurvatureKind.GAUSS_NEWTON, -1.0)

    k = model.num_layers
    sums = {name: np.zeros(k + 1) for name in variants}
    order = shuffled_indices(x_train.shape[0], run_seed, 0)
    n = x_train.shape[0]
    step_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        batch_size=cfg.batch_size,
        epochs=1,
        seed=run_seed,
        second_order=cfg.second_order,
    )
    for step in range(spec.compare_steps):
        lo = (step * cfg.batch_size) % max(n, 1)
        batch = order[lo : lo + cfg.batch_size]
        if batch.size == 0:
            batch = order[:cfg.batch_size]
        xb, yb = x_train[batch], y_train[batch]
        trace = forward(model, xb)
        exact = true_bias_hessian(model, trace, criterion, yb)
        for name, (kind, gamma) in variants.items():
            curv = ea_curvature(model, trace, criterion, yb, kind, gamma)
            report = layerwise_error([c.hb for c in curv], exact)
            sums[name] += np.array(report.per_layer + [report.total])
        _advance_one_step(model, criterion, xb, yb, step_cfg)

    columns: dict[str, list[float] | None] = {
        name: (sums[name] / spec.compare_steps).tolist() for name in variants
    }
    if not convex:
        columns["gauss_newton"] = None
    return CurvatureErrorTable(num_layers=k, columns=columns)


def _advance_one_step(model, criterion, xb, yb, cfg: TrainConfig) -> None:
    """One optimizer step on a single batch (used by the error-table driver)."""
    from .fcnn import backprop, criterion_batch
    from .trainer import _second_order_step

    if cfg.second_order is None:
        trace = forward(model, xb)
        _, grads_out, _ = criterion_batch(criterion, trace.h[-1], yb)
        grads = backprop(model, trace, grads_out)
        for t in range(model.num_layers):
            model.weights[t] = model.weights[t] - cfg.learning_rate * grads.grad_weight[t]
            model.biases[t] = model.biases[t] - cfg.learning_rate * grads.grad_bias[t]
    else:
        _second_order_step(model, criterion, xb, yb, cfg.second_order, cfg.learning_rate)


@dataclass
class BoundCheckResult:
    layer: int
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-15


def run_bound_check(spec: ExperimentSpec, seed: int | None = None, batch: int = 8) -> list[BoundCheckResult]:
    """Evaluate the expectation-approximation error bound at every hidden layer."""
    run_seed = spec.train_cfg.seed if seed is None else seed
    ds = spec.load_dataset(run_seed)
    model = spec.build_model(run_seed)
    x_train, y_train, _, _ = ds.split()
    xb, yb = x_train[:batch], y_train[:batch]
    trace = forward(model, xb)
    lips = model.activation.lipschitz
    results = []
    for t in range(2, model.num_layers + 1):
        lhs, rhs = covariance_bound_check(model, trace, spec.criterion, yb, t, lips)
        results.append(BoundCheckResult(layer=t, lhs=lhs, rhs=rhs))
    return results


def median_total_errors(
    spec: ExperimentSpec, seeds: list[int]
) -> dict[str, float]:
    """Median (over seeds) of the total error per approximation column."""
    totals: dict[str, list[float]] = {}
    for seed in seeds:
        table = compare_curvatures(spec, seed=seed)
        for name, vals in table.columns.items():
            if vals is not None:
                totals.setdefault(name, []).append(vals[-1])
    return {name: statistics.median(vals) for name, vals in totals.items()}
