"""Covariance functions and Gram matrices."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

_SQRT3 = math.sqrt(3.0)


class KernelKind(Enum):
    LINEAR = "linear"
    RBF = "rbf"
    MATERN32 = "matern32"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.MATERN32
    signal_variance: float = 1.0
    lengthscale: float = 1.0
    bias_variance: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.kind, KernelKind):
            raise ValueError(f"KernelSpec.kind must be a KernelKind, got {self.kind!r}")
        if not math.isfinite(self.signal_variance) or self.signal_variance <= 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not math.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not math.isfinite(self.bias_variance) or self.bias_variance < 0:
            raise ValueError(f"bias_variance must be nonnegative, got {self.bias_variance}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "signal_variance": self.signal_variance,
            "lengthscale": self.lengthscale,
            "bias_variance": self.bias_variance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        try:
            return cls(
                kind=KernelKind(data["kind"]),
                signal_variance=float(data["signal_variance"]),
                lengthscale=float(data["lengthscale"]),
                bias_variance=float(data.get("bias_variance", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"kernel spec is missing {exc.args[0]!r}") from exc


def _as_rows(name: str, values) -> np.ndarray:
    rows = np.asarray(values, dtype=float)
    if rows.ndim == 1:
        rows = rows[np.newaxis, :]
    if rows.ndim != 2:
        raise ValueError(f"{name} must be a 2-D feature matrix, got shape {rows.shape}")
    return rows


def _stationary(spec: KernelSpec, distances: np.ndarray) -> np.ndarray:
    scaled = distances / spec.lengthscale
    if spec.kind is KernelKind.MATERN32:
        root3 = _SQRT3 * scaled
        return spec.signal_variance * ((1.0 + root3) * np.exp(-root3))
    return spec.signal_variance * np.exp(-0.5 * scaled**2)


def kernel_matrix(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Gram matrix between the rows of A and B; exactly symmetric whenever B equals A."""
    A = _as_rows("A", A)
    B = A if B is None else _as_rows("B", B)
    symmetric = B is A or (B.shape == A.shape and np.array_equal(A, B))
    if symmetric:
        B = A
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"feature dimension mismatch: {A.shape[1]} != {B.shape[1]}")

    if spec.kind is KernelKind.LINEAR:
        gram = A @ B.T
        if symmetric:
            upper = np.triu(gram)
            gram = upper + np.triu(gram, 1).T
        return spec.signal_variance * gram + spec.bias_variance

    if symmetric:
        if A.shape[0] == 0:
            return np.zeros((0, 0))
        distances = squareform(pdist(A, "euclidean"))
    else:
        if A.shape[0] == 0 or B.shape[0] == 0:
            return np.zeros((A.shape[0], B.shape[0]))
        distances = cdist(A, B, "euclidean")
    return _stationary(spec, distances)


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim != 1 or x2.ndim != 1:
        raise ValueError("kernel_eval takes two feature vectors")
    if x.shape != x2.shape:
        raise ValueError(f"feature dimension mismatch: {x.shape[0]} != {x2.shape[0]}")
    return float(kernel_matrix(spec, x[np.newaxis, :], x2[np.newaxis, :])[0, 0])


def kernel_diagonal(spec: KernelSpec, A) -> np.ndarray:
    """k(x, x) for every row of A."""
    A = _as_rows("A", A)
    if spec.kind is KernelKind.LINEAR:
        return spec.signal_variance * np.einsum("ij,ij->i", A, A) + spec.bias_variance
    return np.full(A.shape[0], spec.signal_variance)
