"""Leave-one-out evaluation, hyperparameter grid search and method comparison."""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import pandas as pd
from loguru import logger
from scipy.linalg import LinAlgError

from .analytic_model import layer_latency
from .baselines import fit_linear, predict_linear
from .dataset import Dataset
from .gp_regression import (
    MeanFunctionSpec,
    MeanKind,
    NumericalFailure,
    fit,
    log_marginal_likelihood,
    loo_residuals,
    predict,
)
from .kernels import KernelKind, KernelSpec
from .observability import log_stage

REPORT_FORMAT = "latgp-report/1"


class MethodId(Enum):
    ANALYTIC = "analytic"
    GP_ZERO = "gp-zero"
    GP_ANALYTIC = "gp-analytic"
    LINREG = "linreg"

    @property
    def label(self) -> str:
        return _METHOD_LABELS[self]


_METHOD_LABELS = {
    MethodId.ANALYTIC: "Standard method",
    MethodId.GP_ZERO: "Gaussian process (zero mean)",
    MethodId.GP_ANALYTIC: "Gaussian process (analytic mean)",
    MethodId.LINREG: "Linear regression",
}


class SelectionCriterion(Enum):
    LOOCV_MAE = "loocv"
    LOG_MARGINAL_LIKELIHOOD = "lml"


class FoldError(RuntimeError):
    def __init__(self, index: int, cause: Exception) -> None:
        super().__init__(f"fold {index} failed: {cause}")
        self.index = index


class SelectionError(RuntimeError):
    pass


def _positive_tuple(name: str, values) -> tuple:
    values = tuple(values)
    if not values:
        raise ValueError(f"HyperGrid.{name} must not be empty")
    return values


@dataclass(frozen=True)
class HyperGrid:
    """Grid over kernel, lengthscale and variance factors.

    Signal and noise factors multiply the variance of the full-data residuals.
    """

    lengthscales: tuple[float, ...] = (0.1, 0.3, 1.0, 3.0, 10.0)
    signal_variance_factors: tuple[float, ...] = (0.1, 1.0, 10.0)
    noise_factors: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    kernels: tuple[KernelKind, ...] = (KernelKind.LINEAR, KernelKind.RBF, KernelKind.MATERN32)
    mean_scales: tuple[float, ...] = (1.0, 1.25, 1.5)

    def __post_init__(self) -> None:
        for name in ("lengthscales", "signal_variance_factors", "noise_factors", "mean_scales"):
            values = _positive_tuple(name, getattr(self, name))
            if any(not math.isfinite(value) or value <= 0 for value in values):
                raise ValueError(f"HyperGrid.{name} values must be positive")
            object.__setattr__(self, name, tuple(float(value) for value in values))
        kernels = _positive_tuple("kernels", self.kernels)
        object.__setattr__(self, "kernels", tuple(KernelKind(kind) for kind in kernels))


@dataclass(frozen=True)
class GridPoint:
    kind: KernelKind
    lengthscale: float
    signal_factor: float
    noise_factor: float
    mean_scale: float


def grid_points(grid: HyperGrid, mean: MeanFunctionSpec) -> Iterator[GridPoint]:
    scales = grid.mean_scales if mean.kind is MeanKind.ANALYTIC else (mean.scale,)
    seen = set()
    for kind, lengthscale, signal, noise, scale in product(
        grid.kernels,
        grid.lengthscales,
        grid.signal_variance_factors,
        grid.noise_factors,
        scales,
    ):
        if kind is KernelKind.LINEAR:
            lengthscale = 1.0
        point = GridPoint(kind, lengthscale, signal, noise, scale)
        if point not in seen:
            seen.add(point)
            yield point


@dataclass(frozen=True)
class HyperparameterChoice:
    kernel: KernelSpec
    noise_variance: float
    mean: MeanFunctionSpec
    criterion: SelectionCriterion
    score: float

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "noise_variance": self.noise_variance,
            "mean": self.mean.to_dict(),
            "criterion": self.criterion.value,
            "score": self.score,
        }

    def describe(self) -> str:
        parts = [f"kernel={self.kernel.kind.value}"]
        if self.kernel.kind is not KernelKind.LINEAR:
            parts.append(f"lengthscale={self.kernel.lengthscale:g}")
        parts.append(f"signal_variance={self.kernel.signal_variance:.4g}")
        parts.append(f"noise={self.noise_variance:.4g}")
        parts.append(f"mean={self.mean.kind.value}")
        if self.mean.kind is MeanKind.ANALYTIC:
            parts.append(f"mean_scale={self.mean.scale:g}")
        return " ".join(parts)


def _variance_scale(residuals: np.ndarray) -> float:
    variance = float(np.var(residuals)) if residuals.size else 0.0
    return variance if variance > 0 else 1.0


def _score(model, criterion: SelectionCriterion) -> float:
    if criterion is SelectionCriterion.LOOCV_MAE:
        return float(np.mean(np.abs(loo_residuals(model))))
    return -log_marginal_likelihood(model)


def select_hyperparameters(
    X,
    y,
    grid: HyperGrid,
    mean: MeanFunctionSpec,
    criterion: SelectionCriterion = SelectionCriterion.LOOCV_MAE,
) -> HyperparameterChoice:
    """Exhaustive search on the full data; LML is maximized, LOOCV MAE minimized."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    scales: dict[float, float] = {}
    best = None
    failures = []
    for order, point in enumerate(grid_points(grid, mean)):
        candidate_mean = replace(mean, scale=point.mean_scale)
        if point.mean_scale not in scales:
            scales[point.mean_scale] = _variance_scale(y - candidate_mean.evaluate(X))
        variance = scales[point.mean_scale]
        try:
            kernel = KernelSpec(
                kind=point.kind,
                signal_variance=point.signal_factor * variance,
                lengthscale=point.lengthscale,
            )
            noise = point.noise_factor * variance
            score = _score(fit(X, y, kernel, candidate_mean, noise), criterion)
        except (NumericalFailure, LinAlgError, ValueError) as exc:
            failures.append(f"{point}: {exc}")
            logger.bind(event="grid_point_failed", point=str(point), error=str(exc)).debug(
                "grid_point_failed"
            )
            continue
        if not math.isfinite(score):
            failures.append(f"{point}: non-finite score")
            continue
        key = (score, kernel.lengthscale, noise, order)
        if best is None or key < best[0]:
            best = (key, HyperparameterChoice(kernel, noise, candidate_mean, criterion, score))
    if best is None:
        raise SelectionError("every grid point failed: " + "; ".join(failures))
    choice = best[1]
    logger.bind(
        event="hyperparameters_selected",
        criterion=criterion.value,
        choice=choice.describe(),
        score=choice.score,
        failures=len(failures),
    ).info("hyperparameters_selected")
    return choice


@dataclass(frozen=True)
class EvaluationConfig:
    grid: HyperGrid = field(default_factory=HyperGrid)
    criterion: SelectionCriterion = SelectionCriterion.LOOCV_MAE
    workers: int = 1
    hyperparameters: HyperparameterChoice | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")


@dataclass(frozen=True)
class MethodResult:
    method: MethodId
    mae_ms: float
    per_sample_abs_errors: tuple[float, ...]
    chosen: HyperparameterChoice | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def configuration(self) -> str:
        if self.failed:
            return f"failed: {self.error}"
        if self.chosen is not None:
            return self.chosen.describe()
        return "default" if self.method is MethodId.LINREG else "none"

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "label": self.method.label,
            "mae_ms": None if self.failed else self.mae_ms,
            "chosen_hyperparameters": self.chosen.to_dict() if self.chosen else None,
            "per_sample_abs_errors": list(self.per_sample_abs_errors),
            "error": self.error,
        }


def mean_function_for(method: MethodId) -> MeanFunctionSpec:
    if method is MethodId.GP_ANALYTIC:
        return MeanFunctionSpec.analytic()
    return MeanFunctionSpec.zero()


def design_for(method: MethodId, dataset: Dataset) -> np.ndarray:
    return dataset.design_matrix(with_position=mean_function_for(method).uses_position_column)


def _run_folds(count: int, predict_fold: Callable[[int], float], workers: int) -> np.ndarray:
    def run(index: int) -> float:
        try:
            return predict_fold(index)
        except Exception as exc:
            logger.bind(event="loocv_fold_failed", fold=index, error=str(exc)).error(
                "loocv_fold_failed"
            )
            raise FoldError(index, exc) from exc

    if workers == 1:
        predictions = [run(index) for index in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            predictions = list(executor.map(run, range(count)))
    return np.asarray(predictions, dtype=float)


def _analytic_predictions(dataset: Dataset) -> np.ndarray:
    return np.array(
        [layer_latency(sample.layer, sample.hw, sample.position) for sample in dataset]
    )


def loocv_mae(
    method: MethodId, dataset: Dataset, config: EvaluationConfig = EvaluationConfig()
) -> MethodResult:
    size = len(dataset)
    y = dataset.y
    chosen = None
    if method is MethodId.ANALYTIC:
        if size < 1:
            raise ValueError("LOOCV needs at least 1 sample")
        predictions = _analytic_predictions(dataset)
    else:
        if size < 2:
            raise ValueError("LOOCV needs at least 2 samples for data-driven methods")
        X = design_for(method, dataset)

        def training(index: int) -> tuple[np.ndarray, np.ndarray]:
            return np.delete(X, index, axis=0), np.delete(y, index)

        if method is MethodId.LINREG:

            def predict_fold(index: int) -> float:
                model = fit_linear(*training(index))
                return float(predict_linear(model, X[index : index + 1])[0])

        else:
            chosen = config.hyperparameters
            mean = mean_function_for(method)
            if chosen is None:
                chosen = select_hyperparameters(X, y, config.grid, mean, config.criterion)
            elif chosen.mean.kind is not mean.kind:
                raise ValueError(
                    f"{method.value} needs a {mean.kind.value} mean, "
                    f"got {chosen.mean.kind.value}"
                )

            def predict_fold(index: int) -> float:
                model = fit(*training(index), chosen.kernel, chosen.mean, chosen.noise_variance)
                return float(predict(model, X[index : index + 1]).mean[0])

        predictions = _run_folds(size, predict_fold, config.workers)

    errors = np.abs(predictions - y)
    return MethodResult(
        method=method,
        mae_ms=float(np.mean(errors)),
        per_sample_abs_errors=tuple(float(error) for error in errors),
        chosen=chosen,
    )


@dataclass(frozen=True)
class EvalReport:
    sample_count: int
    targets: tuple[float, ...]
    entries: tuple[MethodResult, ...]

    def entry(self, method: MethodId) -> MethodResult:
        for entry in self.entries:
            if entry.method is method:
                return entry
        raise KeyError(method.value)

    @property
    def failed(self) -> bool:
        return any(entry.failed for entry in self.entries)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "sample_count": self.sample_count,
            "methods": [
                {"rank": rank, **entry.to_dict()}
                for rank, entry in enumerate(self.entries, start=1)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        rows = [
            (
                str(rank),
                entry.method.label,
                "-" if entry.failed else f"{entry.mae_ms:.3f}",
                entry.configuration(),
            )
            for rank, entry in enumerate(self.entries, start=1)
        ]
        header = ("Rank", "Method", "LOOCV MAE [ms]", "Configuration")
        widths = [max(len(row[column]) for row in [header, *rows]) for column in range(3)]
        lines = []
        for row in [header, *rows]:
            lines.append(
                f"{row[0]:<{widths[0]}}  {row[1]:<{widths[1]}}  "
                f"{row[2]:>{widths[2]}}  {row[3]}".rstrip()
            )
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"samples: {self.sample_count}")
        return "\n".join(lines) + "\n"

    def errors_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {"sample": range(self.sample_count), "target_ms": list(self.targets)}
        )
        for entry in self.entries:
            if not entry.failed:
                frame[entry.method.value] = list(entry.per_sample_abs_errors)
        return frame

    def to_csv(self, path: Path) -> None:
        self.errors_frame().to_csv(path, index=False, float_format="%.17g")


def _rank(entries: list[MethodResult]) -> tuple[MethodResult, ...]:
    order = list(MethodId)
    return tuple(
        sorted(
            entries,
            key=lambda entry: (
                entry.failed,
                0.0 if entry.failed else entry.mae_ms,
                order.index(entry.method),
            ),
        )
    )


def compare_methods(
    dataset: Dataset,
    grid: HyperGrid = HyperGrid(),
    criterion: SelectionCriterion = SelectionCriterion.LOOCV_MAE,
    workers: int = 1,
    methods: tuple[MethodId, ...] = tuple(MethodId),
) -> EvalReport:
    if len(dataset) < 2:
        raise ValueError("method comparison needs at least 2 samples")
    config = EvaluationConfig(grid=grid, criterion=criterion, workers=workers)
    entries = []
    for method in methods:
        try:
            with log_stage("method_evaluation", method=method.value):
                result = loocv_mae(method, dataset, config)
        except (FoldError, SelectionError, NumericalFailure, LinAlgError, ValueError) as exc:
            logger.bind(event="method_failed", method=method.value, error=str(exc)).error(
                "method_failed"
            )
            entries.append(MethodResult(method, math.nan, (), error=str(exc)))
            continue
        logger.bind(
            event="method_evaluated",
            method=method.value,
            mae_ms=result.mae_ms,
        ).info("method_evaluated")
        entries.append(result)
    return EvalReport(
        sample_count=len(dataset),
        targets=tuple(float(value) for value in dataset.y),
        entries=_rank(entries),
    )
