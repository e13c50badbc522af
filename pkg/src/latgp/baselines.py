"""Ordinary least squares baseline."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dataset import FeatureStats

LINEAR_FORMAT = "latgp-linear/1"
RIDGE = 1e-8


@dataclass(frozen=True)
class LinearModel:
    """Weights act on standardized features; ``raw_*`` give the raw-space fit."""

    weights: np.ndarray
    intercept: float
    standardization: FeatureStats

    @property
    def raw_weights(self) -> np.ndarray:
        return self.weights / self.standardization.std

    @property
    def raw_intercept(self) -> float:
        return float(self.intercept - self.raw_weights @ self.standardization.mean)


def fit_linear(X, y) -> LinearModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2:
        raise ValueError(f"X must be a 2-D array, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
    if X.shape[0] < 1:
        raise ValueError("linear regression needs at least one sample")

    stats = FeatureStats.fit(X)
    design = np.column_stack([stats.transform(X), np.ones(X.shape[0])])
    gram = design.T @ design
    moment = design.T @ y
    full_rank = np.linalg.matrix_rank(design) == design.shape[1]
    coefficients = None
    if full_rank:
        try:
            coefficients = cho_solve(cho_factor(gram), moment)
        except LinAlgError:
            coefficients = None
    if coefficients is None:
        coefficients = cho_solve(cho_factor(gram + RIDGE * np.eye(gram.shape[0])), moment)
    return LinearModel(
        weights=coefficients[:-1],
        intercept=float(coefficients[-1]),
        standardization=stats,
    )


def predict_linear(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"feature dimension mismatch: expected {model.weights.shape[0]} columns, "
            f"got shape {X.shape}"
        )
    return model.standardization.transform(X) @ model.weights + model.intercept


def save_linear(model: LinearModel, path: Path) -> None:
    document = {
        "format": LINEAR_FORMAT,
        "weights": model.weights.tolist(),
        "intercept": model.intercept,
        "standardization": model.standardization.to_dict(),
    }
    with Path(path).open("w") as handle:
        json.dump(document, handle, indent=2)
        handle.write("\n")


def load_linear(path: Path) -> LinearModel:
    with Path(path).open() as handle:
        document = json.load(handle)
    found = document.get("format") if isinstance(document, dict) else None
    if found != LINEAR_FORMAT:
        raise ValueError(f"expected model format {LINEAR_FORMAT!r}, found {found!r}")
    return LinearModel(
        weights=np.asarray(document["weights"], dtype=float),
        intercept=float(document["intercept"]),
        standardization=FeatureStats.from_dict(document["standardization"]),
    )
