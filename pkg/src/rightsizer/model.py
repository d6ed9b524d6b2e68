"""Multi-target execution-time-ratio regressor.

A small fully connected network (ReLU hidden layers, linear output) trained
with mini-batch gradient descent, written directly in numpy so every
gradient can be checked against finite differences.  The sklearn estimator
interface (fit/predict/get_params) keeps it usable with standard tooling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from itertools import product
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from rightsizer.domain import (
    MEMORY_SIZES_MB,
    ExecutionCurve,
    MeasurementSummary,
    validate_memory_size,
)
from rightsizer.features import TargetVector, build_matrix, pair_dataset, target_matrix

OPTIMIZERS = ("sgd", "adam", "adagrad")
LOSSES = ("mse", "mae", "mape")

#: Denominator floor for the MAPE loss and metric.
MAPE_EPSILON = 1e-8

#: Predicted ratios are clamped here so a curve can never go nonpositive.
RATIO_FLOOR = 1e-3

MODEL_FORMAT_VERSION = 1

#: The full hyperparameter search grid (1,296 combinations).
GRID_KEY_ORDER = (
    "optimizer",
    "loss",
    "epochs",
    "neurons_per_layer",
    "l2",
    "hidden_layers",
    "learning_rate",
    "batch_size",
)
FULL_GRID: dict[str, tuple] = {
    "optimizer": ("sgd", "adam", "adagrad"),
    "loss": ("mse", "mae", "mape"),
    "epochs": (200, 500, 1000),
    "neurons_per_layer": (64, 128, 256),
    "l2": (0.0, 0.0001, 0.001, 0.01),
    "hidden_layers": (2, 3, 4, 5),
}


@dataclass(frozen=True)
class Hyperparameters:
    """Training configuration; defaults are the selected search winners."""

    optimizer: str = "adam"
    loss: str = "mape"
    epochs: int = 200
    neurons_per_layer: int = 256
    hidden_layers: int = 4
    l2: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        for name in ("epochs", "neurons_per_layer", "hidden_layers", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_HYPERPARAMETERS = Hyperparameters()


def _loss_terms(
    predictions: np.ndarray, y: np.ndarray, loss: str
) -> tuple[float, np.ndarray]:
    """Data loss and its gradient with respect to the predictions."""
    count = predictions.size
    diff = predictions - y
    if loss == "mse":
        return float(np.mean(diff**2)), 2.0 * diff / count
    if loss == "mae":
        return float(np.mean(np.abs(diff))), np.sign(diff) / count
    if loss == "mape":
        denominator = np.maximum(np.abs(y), MAPE_EPSILON)
        return (
            float(np.mean(np.abs(diff) / denominator)),
            np.sign(diff) / denominator / count,
        )
    raise ValueError(f"unknown loss {loss!r}")


def forward_backward(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    loss: str,
    l2: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Composite loss (data + L2 on weights) and its analytic gradients.

    Exposed at module level so the gradients can be verified against finite
    differences without touching training internals.
    """
    activations = [X]
    pre_activations = []
    for W, b in zip(weights[:-1], biases[:-1]):
        z = activations[-1] @ W + b
        pre_activations.append(z)
        activations.append(np.maximum(z, 0.0))
    predictions = activations[-1] @ weights[-1] + biases[-1]
    data_loss, delta = _loss_terms(predictions, y, loss)
    penalty = l2 * sum(float(np.sum(W * W)) for W in weights)
    grad_weights: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grad_biases: list[np.ndarray] = [None] * len(biases)  # type: ignore[list-item]
    for layer in range(len(weights) - 1, -1, -1):
        grad_weights[layer] = activations[layer].T @ delta + 2.0 * l2 * weights[layer]
        grad_biases[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (pre_activations[layer - 1] > 0)
    return data_loss + penalty, grad_weights, grad_biases


def _forward(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], X: np.ndarray
) -> np.ndarray:
    hidden = X
    for W, b in zip(weights[:-1], biases[:-1]):
        hidden = np.maximum(hidden @ W + b, 0.0)
    return hidden @ weights[-1] + biases[-1]


class _Sgd:
    def __init__(self, params: Sequence[np.ndarray], learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class _Adam:
    beta1 = 0.9
    beta2 = 0.999
    epsilon = 1e-8

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float):
        self.learning_rate = learning_rate
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


class _Adagrad:
    epsilon = 1e-8

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float):
        self.learning_rate = learning_rate
        self.accumulated = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for i, (p, g) in enumerate(zip(params, grads)):
            self.accumulated[i] += g * g
            p -= self.learning_rate * g / (np.sqrt(self.accumulated[i]) + self.epsilon)


_OPTIMIZER_CLASSES = {"sgd": _Sgd, "adam": _Adam, "adagrad": _Adagrad}


class MlpRegressor(BaseEstimator, RegressorMixin):
    """Fully connected multi-target regressor trained by mini-batch descent.

    Inputs are z-scored with statistics learned in fit; weights use seeded
    uniform He-style initialization, so identical data and parameters give
    identical weights.  `loss_curve_` records the full-dataset composite
    loss after every epoch.
    """

    def __init__(
        self,
        hidden_layers: int = 4,
        neurons_per_layer: int = 256,
        epochs: int = 200,
        optimizer: str = "adam",
        loss: str = "mape",
        l2: float = 0.01,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        seed: int = 0,
    ):
        self.hidden_layers = hidden_layers
        self.neurons_per_layer = neurons_per_layer
        self.epochs = epochs
        self.optimizer = optimizer
        self.loss = loss
        self.l2 = l2
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    @classmethod
    def from_hyperparameters(cls, hp: Hyperparameters) -> "MlpRegressor":
        return cls(
            hidden_layers=hp.hidden_layers,
            neurons_per_layer=hp.neurons_per_layer,
            epochs=hp.epochs,
            optimizer=hp.optimizer,
            loss=hp.loss,
            l2=hp.l2,
            learning_rate=hp.learning_rate,
            batch_size=hp.batch_size,
            seed=hp.seed,
        )

    def _initialize(self, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        sizes = [n_in] + [self.neurons_per_layer] * self.hidden_layers + [n_out]
        self.coefs_ = []
        self.intercepts_ = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / fan_in)
            self.coefs_.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.intercepts_.append(np.zeros(fan_out))

    def fit(self, X, y) -> "MlpRegressor":
        if self.optimizer not in _OPTIMIZER_CLASSES:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=float)
        y = np.asarray(y, dtype=float)
        self._single_target = y.ndim == 1
        if self._single_target:
            y = y.reshape(-1, 1)
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0  # constant columns pass through unscaled
        self.x_scale_ = scale
        X_std = (X - self.x_mean_) / self.x_scale_
        rng = np.random.default_rng(self.seed)
        self._initialize(X.shape[1], y.shape[1], rng)
        self.n_features_in_ = X.shape[1]
        params = self.coefs_ + self.intercepts_
        stepper = _OPTIMIZER_CLASSES[self.optimizer](params, self.learning_rate)
        n = X.shape[0]
        batch = min(self.batch_size, n)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start : start + batch]
                # the dataset objective charges the L2 penalty once per pass,
                # so each batch carries its share of the penalty gradient
                batch_l2 = self.l2 * len(idx) / n
                _, grad_w, grad_b = forward_backward(
                    self.coefs_, self.intercepts_, X_std[idx], y[idx], self.loss, batch_l2
                )
                stepper.step(params, list(grad_w) + list(grad_b))
            epoch_loss, _, _ = forward_backward(
                self.coefs_, self.intercepts_, X_std, y, self.loss, self.l2
            )
            self.loss_curve_.append(epoch_loss)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        X_std = (X - self.x_mean_) / self.x_scale_
        out = _forward(self.coefs_, self.intercepts_, X_std)
        return out[:, 0] if self._single_target else out


@dataclass(frozen=True)
class EvaluationMetrics:
    """Regression quality pooled over all targets and rows."""

    mse: float
    mape: float
    r_squared: float
    explained_variance: float

    @classmethod
    def from_predictions(
        cls, y_true: np.ndarray, y_pred: np.ndarray
    ) -> "EvaluationMetrics":
        t = np.asarray(y_true, dtype=float).ravel()
        p = np.asarray(y_pred, dtype=float).ravel()
        if t.size == 0:
            raise ValueError("cannot evaluate an empty set")
        if t.shape != p.shape:
            raise ValueError("prediction/target shape mismatch")
        residual = t - p
        mse = float(np.mean(residual**2))
        mape = float(np.mean(np.abs(residual) / np.maximum(np.abs(t), MAPE_EPSILON)))
        ss_res = float(np.sum(residual**2))
        ss_tot = float(np.sum((t - t.mean()) ** 2))
        if ss_tot == 0:
            r_squared = 1.0 if ss_res == 0 else 0.0
        else:
            r_squared = 1.0 - ss_res / ss_tot
        var_true = float(np.var(t))
        if var_true == 0:
            explained = 1.0 if float(np.var(residual)) == 0 else 0.0
        else:
            explained = 1.0 - float(np.var(residual)) / var_true
        return cls(mse=mse, mape=mape, r_squared=r_squared, explained_variance=explained)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _mean_metrics(parts: Sequence[EvaluationMetrics]) -> EvaluationMetrics:
    return EvaluationMetrics(
        mse=float(np.mean([m.mse for m in parts])),
        mape=float(np.mean([m.mape for m in parts])),
        r_squared=float(np.mean([m.r_squared for m in parts])),
        explained_variance=float(np.mean([m.explained_variance for m in parts])),
    )


@dataclass(frozen=True)
class RegressionModel:
    """A trained ratio predictor bound to its feature list and base size."""

    feature_names: tuple[str, ...]
    base_memory: int
    target_sizes: tuple[int, ...]
    estimator: MlpRegressor
    hyperparameters: Hyperparameters

    def __post_init__(self) -> None:
        validate_memory_size(self.base_memory)
        expected = tuple(m for m in MEMORY_SIZES_MB if m != self.base_memory)
        if tuple(self.target_sizes) != expected:
            raise ValueError(f"target_sizes must be {expected}")


def train(
    X: np.ndarray,
    targets: Sequence[TargetVector],
    hp: Hyperparameters,
    feature_names: Sequence[str],
) -> RegressionModel:
    """Fit the ratio regressor on prepared rows.

    Deterministic in hp.seed: initialization and batch shuffling both come
    from it.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(feature_names):
        raise ValueError("X must be 2-d with one column per feature name")
    if len(targets) != X.shape[0]:
        raise ValueError("row count mismatch between X and targets")
    if X.shape[0] < 2:
        raise ValueError("training needs at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    bases = {t.base_memory for t in targets}
    if len(bases) != 1:
        raise ValueError("all targets must share one base memory size")
    base = bases.pop()
    y = target_matrix(targets)
    estimator = MlpRegressor.from_hyperparameters(hp)
    estimator.fit(X, y)
    return RegressionModel(
        feature_names=tuple(feature_names),
        base_memory=base,
        target_sizes=tuple(m for m in MEMORY_SIZES_MB if m != base),
        estimator=estimator,
        hyperparameters=hp,
    )


def predict_ratios(model: RegressionModel, X: np.ndarray) -> np.ndarray:
    """Raw ratio predictions (n rows x 5 targets), floored at RATIO_FLOOR."""
    ratios = np.asarray(model.estimator.predict(np.asarray(X, dtype=float)))
    return np.maximum(ratios, RATIO_FLOOR)


def predict(model: RegressionModel, summary: MeasurementSummary) -> ExecutionCurve:
    """Execution-time curve for one monitored function.

    The base-size entry is the observed mean itself; the other five are
    predicted ratios times the observed base time.
    """
    if summary.memory != model.base_memory:
        raise ValueError(
            f"summary measured at {summary.memory} MB but model expects "
            f"{model.base_memory} MB"
        )
    base_time = summary.mean.execution_time
    if not base_time > 0:
        raise ValueError("observed base execution time must be positive")
    row = build_matrix(model.feature_names, [summary])
    ratios = predict_ratios(model, row)[0]
    times = {model.base_memory: base_time}
    for size, ratio in zip(model.target_sizes, ratios):
        times[size] = float(ratio) * base_time
    return ExecutionCurve(times_ms=times)


def evaluate(
    model: RegressionModel, X: np.ndarray, targets: Sequence[TargetVector]
) -> EvaluationMetrics:
    """Pooled ratio-space metrics of the model on a labeled set."""
    if len(targets) == 0:
        raise ValueError("cannot evaluate an empty set")
    return EvaluationMetrics.from_predictions(
        target_matrix(targets), predict_ratios(model, X)
    )


def _fold_job(args) -> EvaluationMetrics:
    X, targets, hp, feature_names, train_idx, val_idx = args
    fitted = train(X[train_idx], [targets[i] for i in train_idx], hp, feature_names)
    return evaluate(fitted, X[val_idx], [targets[i] for i in val_idx])


def cross_validate(
    X: np.ndarray,
    targets: Sequence[TargetVector],
    hp: Hyperparameters,
    feature_names: Sequence[str],
    folds: int = 5,
    repetitions: int = 10,
    workers: int = 1,
) -> EvaluationMetrics:
    """Mean metrics over `repetitions` seeded random k-fold splits."""
    X = np.asarray(X, dtype=float)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if X.shape[0] < folds:
        raise ValueError(f"dataset of {X.shape[0]} rows cannot fill {folds} folds")
    jobs = []
    for repetition in range(repetitions):
        splitter = KFold(n_splits=folds, shuffle=True, random_state=hp.seed + repetition)
        for train_idx, val_idx in splitter.split(X):
            jobs.append((X, list(targets), hp, tuple(feature_names), train_idx, val_idx))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_fold_job, jobs))
    else:
        parts = [_fold_job(job) for job in jobs]
    return _mean_metrics(parts)


def expand_grid(grid: Mapping[str, Sequence]) -> list[Hyperparameters]:
    """All combinations, nested in GRID_KEY_ORDER; absent keys use defaults."""
    if not grid:
        raise ValueError("grid must be nonempty")
    unknown = set(grid) - {f.name for f in fields(Hyperparameters)}
    if unknown:
        raise ValueError(f"unknown hyperparameters in grid: {sorted(unknown)}")
    keys = [k for k in GRID_KEY_ORDER if k in grid]
    leftovers = [k for k in grid if k not in GRID_KEY_ORDER]
    keys += sorted(leftovers)
    combos = []
    for values in product(*(grid[k] for k in keys)):
        combos.append(replace(DEFAULT_HYPERPARAMETERS, **dict(zip(keys, values))))
    return combos


def grid_search(
    X: np.ndarray,
    targets: Sequence[TargetVector],
    feature_names: Sequence[str],
    grid: Mapping[str, Sequence],
    folds: int = 5,
    repetitions: int = 10,
    workers: int = 1,
) -> tuple[Hyperparameters, list[tuple[Hyperparameters, EvaluationMetrics]]]:
    """Exhaustive search scored by cross-validated MAPE.

    Returns the winner and the full leaderboard sorted by MAPE ascending;
    ties keep grid enumeration order, so the argmin is reproducible.
    """
    combos = expand_grid(grid)
    scored = []
    for hp in combos:
        metrics = cross_validate(
            X, targets, hp, feature_names,
            folds=folds, repetitions=repetitions, workers=workers,
        )
        scored.append((hp, metrics))
    leaderboard = sorted(scored, key=lambda pair: pair[1].mape)
    return leaderboard[0][0], leaderboard


def leaderboard_csv(
    leaderboard: Sequence[tuple[Hyperparameters, EvaluationMetrics]], stream: IO[str]
) -> None:
    import csv

    names = [f.name for f in fields(Hyperparameters)]
    writer = csv.writer(stream)
    writer.writerow(names + ["mse", "mape", "r_squared", "explained_variance"])
    for hp, metrics in leaderboard:
        hp_dict = hp.as_dict()
        writer.writerow(
            [hp_dict[n] for n in names]
            + [metrics.mse, metrics.mape, metrics.r_squared, metrics.explained_variance]
        )


def basesize_study(
    summaries: Sequence[MeasurementSummary],
    hp: Hyperparameters,
    feature_names: Sequence[str],
    folds: int = 5,
    repetitions: int = 10,
    workers: int = 1,
) -> list[tuple[int, EvaluationMetrics]]:
    """Cross-validated metrics using each memory size as the feature source."""
    results = []
    for base in MEMORY_SIZES_MB:
        inputs, targets = pair_dataset(summaries, base)
        X = build_matrix(feature_names, inputs)
        metrics = cross_validate(
            X, targets, hp, feature_names,
            folds=folds, repetitions=repetitions, workers=workers,
        )
        results.append((base, metrics))
    return results


def basesize_csv(
    results: Sequence[tuple[int, EvaluationMetrics]], stream: IO[str]
) -> None:
    import csv

    writer = csv.writer(stream)
    writer.writerow(["base_memory", "mse", "mape", "r_squared", "explained_variance"])
    for base, metrics in results:
        writer.writerow(
            [base, metrics.mse, metrics.mape, metrics.r_squared, metrics.explained_variance]
        )


class ModelFormatError(Exception):
    """A model file that cannot be loaded: wrong syntax, fields, or version."""


def save_model(model: RegressionModel, path) -> None:
    record = {
        "version": MODEL_FORMAT_VERSION,
        "base_memory": model.base_memory,
        "target_sizes": list(model.target_sizes),
        "feature_names": list(model.feature_names),
        "hyperparameters": model.hyperparameters.as_dict(),
        "x_mean": model.estimator.x_mean_.tolist(),
        "x_scale": model.estimator.x_scale_.tolist(),
        "layer_sizes": [model.estimator.coefs_[0].shape[0]]
        + [W.shape[1] for W in model.estimator.coefs_],
        "weights": [W.ravel().tolist() for W in model.estimator.coefs_],
        "biases": [b.tolist() for b in model.estimator.intercepts_],
    }
    Path(path).write_text(json.dumps(record, separators=(",", ":")) + "\n")


def load_model(path) -> RegressionModel:
    text = Path(path).read_text()
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ModelFormatError("model file must contain a JSON object")
    version = record.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r}; "
            f"this build reads version {MODEL_FORMAT_VERSION}"
        )
    try:
        hp = Hyperparameters(**record["hyperparameters"])
        estimator = MlpRegressor.from_hyperparameters(hp)
        sizes = record["layer_sizes"]
        estimator.coefs_ = [
            np.array(flat, dtype=float).reshape(fan_in, fan_out)
            for flat, fan_in, fan_out in zip(record["weights"], sizes[:-1], sizes[1:])
        ]
        estimator.intercepts_ = [np.array(b, dtype=float) for b in record["biases"]]
        estimator.x_mean_ = np.array(record["x_mean"], dtype=float)
        estimator.x_scale_ = np.array(record["x_scale"], dtype=float)
        estimator.n_features_in_ = sizes[0]
        estimator._single_target = False
        model = RegressionModel(
            feature_names=tuple(record["feature_names"]),
            base_memory=int(record["base_memory"]),
            target_sizes=tuple(int(m) for m in record["target_sizes"]),
            estimator=estimator,
            hyperparameters=hp,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file is malformed: {exc}") from exc
    if len(model.feature_names) != sizes[0]:
        raise ModelFormatError(
            "feature name count disagrees with the input layer width"
        )
    return model
