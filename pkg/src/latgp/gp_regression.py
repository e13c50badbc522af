"""Exact Gaussian process regression with a pluggable mean function.

The analytic mean lets the process learn only what the closed-form latency
model misses: predictions are m(x) plus a zero-mean process fitted on y - m(X).
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .analytic_model import HardwareConfig, LayerPosition, layer_latency
from .dataset import FEATURE_COUNT, FeatureStats, features_to_configs
from .kernels import KernelSpec, kernel_diagonal, kernel_matrix

MODEL_FORMAT = "latgp-model/1"
JITTER_START = 1e-10
JITTER_LIMIT = 1e-4


class NumericalFailure(ArithmeticError):
    pass


class ModelFormatError(ValueError):
    pass


class MeanKind(Enum):
    ZERO = "zero"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class MeanFunctionSpec:
    """Prior mean of the process.

    For the analytic kind, ``hardware=None`` reads the accelerator constants
    from the feature columns and ``position=None`` reads a trailing column of
    position codes that the kernel never sees.
    """

    kind: MeanKind = MeanKind.ZERO
    hardware: HardwareConfig | None = None
    position: LayerPosition | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"mean scale must be positive, got {self.scale}")

    @classmethod
    def zero(cls) -> "MeanFunctionSpec":
        return cls()

    @classmethod
    def analytic(
        cls,
        hardware: HardwareConfig | None = None,
        position: LayerPosition | None = None,
        scale: float = 1.0,
    ) -> "MeanFunctionSpec":
        return cls(MeanKind.ANALYTIC, hardware, position, scale)

    @property
    def uses_position_column(self) -> bool:
        return self.kind is MeanKind.ANALYTIC and self.position is None

    def kernel_features(self, X_raw: np.ndarray) -> np.ndarray:
        return X_raw[:, :-1] if self.uses_position_column else X_raw

    def evaluate(self, X_raw: np.ndarray) -> np.ndarray:
        if self.kind is MeanKind.ZERO:
            return np.zeros(X_raw.shape[0])
        expected = FEATURE_COUNT + (1 if self.uses_position_column else 0)
        if X_raw.shape[1] != expected:
            raise ValueError(
                f"analytic mean expects {expected} feature columns, got {X_raw.shape[1]}"
            )
        values = np.empty(X_raw.shape[0])
        for index, row in enumerate(X_raw):
            layer, hardware = features_to_configs(row[:FEATURE_COUNT])
            if self.hardware is not None:
                hardware = self.hardware
            position = self.position or LayerPosition.from_code(int(row[-1]))
            values[index] = layer_latency(layer, hardware, position)
        return values if self.scale == 1.0 else self.scale * values

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "hardware": self.hardware.to_dict() if self.hardware else None,
            "position": self.position.value if self.position else None,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeanFunctionSpec":
        hardware = data.get("hardware")
        position = data.get("position")
        return cls(
            kind=MeanKind(data["kind"]),
            hardware=HardwareConfig.from_dict(hardware) if hardware else None,
            position=LayerPosition(position) if position else None,
            scale=float(data.get("scale", 1.0)),
        )


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    variance: np.ndarray
    clamped: int = 0

    def __len__(self) -> int:
        return self.mean.shape[0]

    def __getitem__(self, index: int) -> Prediction:
        return Prediction(float(self.mean[index]), float(self.variance[index]))

    def __iter__(self) -> Iterator[Prediction]:
        return (self[index] for index in range(len(self)))


@dataclass(frozen=True)
class GpModel:
    kernel: KernelSpec
    mean: MeanFunctionSpec
    noise_variance: float
    train_raw_features: np.ndarray
    train_features: np.ndarray
    train_targets: np.ndarray
    residuals: np.ndarray
    cholesky_factor: np.ndarray
    alpha: np.ndarray
    standardization: FeatureStats
    jitter: float = field(default=0.0)

    @property
    def sample_count(self) -> int:
        return self.train_targets.shape[0]


def _as_matrix(name: str, values) -> np.ndarray:
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"{name} contains non-finite values")
    return matrix


def _factorize(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, escalating diagonal jitter when needed."""
    try:
        return cholesky(K, lower=True), 0.0
    except LinAlgError:
        pass
    scale = float(np.max(np.diag(K)))
    jitter = JITTER_START * scale
    identity = np.eye(K.shape[0])
    while jitter <= JITTER_LIMIT * scale:
        try:
            factor = cholesky(K + jitter * identity, lower=True)
        except LinAlgError:
            jitter *= 2
            continue
        logger.bind(event="gp_jitter_applied", jitter=jitter, size=K.shape[0]).warning(
            "gp_jitter_applied"
        )
        return factor, jitter
    raise NumericalFailure("kernel matrix not positive definite")


def _condition(
    X_raw: np.ndarray,
    y: np.ndarray,
    kernel: KernelSpec,
    mean: MeanFunctionSpec,
    noise: float,
    stats: FeatureStats | None = None,
) -> GpModel:
    features = mean.kernel_features(X_raw)
    stats = stats or FeatureStats.fit(features)
    standardized = stats.transform(features)
    residuals = y - mean.evaluate(X_raw)
    size = y.shape[0]
    if size == 0:
        factor, alpha, jitter = np.zeros((0, 0)), np.zeros(0), 0.0
    else:
        K = kernel_matrix(kernel, standardized)
        K[np.diag_indices_from(K)] += noise
        factor, jitter = _factorize(K)
        alpha = cho_solve((factor, True), residuals)
    return GpModel(
        kernel=kernel,
        mean=mean,
        noise_variance=noise,
        train_raw_features=X_raw,
        train_features=standardized,
        train_targets=y,
        residuals=residuals,
        cholesky_factor=factor,
        alpha=alpha,
        standardization=stats,
        jitter=jitter,
    )


def fit(
    X_raw,
    y,
    kernel: KernelSpec = KernelSpec(),
    mean: MeanFunctionSpec = MeanFunctionSpec(),
    noise: float = 1e-2,
    stats: FeatureStats | None = None,
) -> GpModel:
    """Condition the process on (X_raw, y).

    Standardization is estimated from X_raw unless ``stats`` fixes it.
    """
    X_raw = _as_matrix("X_raw", X_raw)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X_raw.shape[0] != y.shape[0]:
        raise ValueError(f"{X_raw.shape[0]} feature rows but {y.shape[0]} targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    if not math.isfinite(noise) or noise <= 0:
        raise ValueError(f"noise variance must be positive, got {noise}")
    if mean.uses_position_column and X_raw.shape[1] < 2:
        raise ValueError("analytic mean needs a trailing position column")
    return _condition(X_raw, y, kernel, mean, noise, stats)


def predict(model: GpModel, X_test_raw) -> Posterior:
    X_test_raw = _as_matrix("X_test_raw", X_test_raw)
    if X_test_raw.shape[1] != model.train_raw_features.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {X_test_raw.shape[1]} != "
            f"{model.train_raw_features.shape[1]}"
        )
    prior_mean = model.mean.evaluate(X_test_raw)
    test = model.standardization.transform(model.mean.kernel_features(X_test_raw))
    prior_variance = kernel_diagonal(model.kernel, test)
    if model.sample_count == 0:
        return Posterior(mean=prior_mean, variance=prior_variance)

    cross = kernel_matrix(model.kernel, test, model.train_features)
    mean = prior_mean + cross @ model.alpha
    v = solve_triangular(model.cholesky_factor, cross.T, lower=True)
    variance = prior_variance - np.einsum("ij,ij->j", v, v)
    negative = variance < 0
    clamped = int(np.count_nonzero(negative))
    if clamped:
        logger.bind(event="variance_clamped", count=clamped).debug("variance_clamped")
        variance = np.where(negative, 0.0, variance)
    return Posterior(mean=mean, variance=variance, clamped=clamped)


def log_marginal_likelihood(model: GpModel) -> float:
    size = model.sample_count
    data_fit = -0.5 * float(model.residuals @ model.alpha)
    complexity = -float(np.sum(np.log(np.diag(model.cholesky_factor))))
    return data_fit + complexity - 0.5 * size * math.log(2 * math.pi)


def loo_residuals(model: GpModel) -> np.ndarray:
    """Leave-one-out errors (target minus prediction) without refitting.

    Uses the full-data standardization, so it scores hyperparameters rather
    than replacing a per-fold refit.
    """
    if model.sample_count == 0:
        return np.zeros(0)
    inverse_factor = solve_triangular(
        model.cholesky_factor, np.eye(model.sample_count), lower=True
    )
    inverse_diagonal = np.einsum("ij,ij->j", inverse_factor, inverse_factor)
    return model.alpha / inverse_diagonal


def save_model(model: GpModel, path: Path) -> None:
    document = {
        "format": MODEL_FORMAT,
        "kernel": model.kernel.to_dict(),
        "mean": model.mean.to_dict(),
        "noise_variance": model.noise_variance,
        "standardization": model.standardization.to_dict(),
        "train_raw_features": model.train_raw_features.tolist(),
        "train_targets": model.train_targets.tolist(),
    }
    with Path(path).open("w") as handle:
        json.dump(document, handle, indent=2)
        handle.write("\n")


def load_model(path: Path) -> GpModel:
    with Path(path).open() as handle:
        document = json.load(handle)
    found = document.get("format") if isinstance(document, dict) else None
    if found != MODEL_FORMAT:
        raise ModelFormatError(f"expected model format {MODEL_FORMAT!r}, found {found!r}")
    try:
        mean = MeanFunctionSpec.from_dict(document["mean"])
        raw = np.asarray(document["train_raw_features"], dtype=float)
        columns = len(document["standardization"]["mean"]) + int(mean.uses_position_column)
        return _condition(
            raw.reshape(-1, columns),
            np.asarray(document["train_targets"], dtype=float),
            KernelSpec.from_dict(document["kernel"]),
            mean,
            float(document["noise_variance"]),
            FeatureStats.from_dict(document["standardization"]),
        )
    except KeyError as exc:
        raise ModelFormatError(f"model file is missing {exc.args[0]!r}") from exc
