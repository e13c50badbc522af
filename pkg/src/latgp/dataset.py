"""Profiling samples: CSV schema, feature vectors and the synthetic generator."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
import pandas as pd
from loguru import logger

from .analytic_model import (
    EVALUATION_HARDWARE,
    HardwareConfig,
    LayerConfig,
    LayerPosition,
    compute_counts,
    layer_latency,
)

FEATURE_NAMES = (
    "h",
    "w",
    "h_o",
    "w_o",
    "k",
    "f",
    "c",
    "pf",
    "pc",
    "m_clk",
    "l_clk",
    "m_eff",
    "s",
    "dw",
)
FEATURE_COUNT = len(FEATURE_NAMES)

CSV_COLUMNS = (
    "h",
    "w",
    "h_o",
    "w_o",
    "k",
    "f",
    "c",
    "pf",
    "pc",
    "m_clk_mhz",
    "l_clk_mhz",
    "m_eff_pct",
    "s_bits",
    "dw_bits",
    "position",
    "latency_ms",
)
_INTEGER_COLUMNS = ("h", "w", "h_o", "w_o", "k", "f", "c", "pf", "pc", "s_bits", "dw_bits")
_REAL_COLUMNS = ("m_clk_mhz", "l_clk_mhz", "m_eff_pct", "latency_ms")
_INTEGRAL_FEATURES = tuple(
    index for index, name in enumerate(FEATURE_NAMES) if name not in ("m_clk", "l_clk", "m_eff")
)

# Bounds of the profiled layer population.
SHAPE_LIMITS = {
    "hw": (1, 418),
    "hw_o": (1, 416),
    "k": (1, 7),
    "c": (3, 2048),
    "f": (64, 2048),
}
LATENCY_LIMITS_MS = (0.018, 11.727)
# Consecutive out-of-window draws before the window is declared unreachable.
MAX_CONSECUTIVE_REDRAWS = 10_000
KERNEL_SIZES = (1, 3, 5, 7)
STRIDES = (1, 2)
POSITION_WEIGHTS = {
    LayerPosition.FIRST: 0.15,
    LayerPosition.MIDDLE: 0.70,
    LayerPosition.LAST: 0.15,
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    layer: LayerConfig
    hw: HardwareConfig
    position: LayerPosition
    latency_ms: float

    def __post_init__(self) -> None:
        if not isinstance(self.position, LayerPosition):
            raise ValueError(f"Sample.position must be a LayerPosition, got {self.position!r}")
        if not math.isfinite(self.latency_ms) or self.latency_ms <= 0:
            raise ValueError(f"latency_ms must be positive, got {self.latency_ms}")


def featurize(sample: Sample) -> np.ndarray:
    layer, hw = sample.layer, sample.hw
    return np.array(
        [
            layer.h,
            layer.w,
            layer.h_o,
            layer.w_o,
            layer.k,
            layer.f,
            layer.c,
            hw.pf,
            hw.pc,
            hw.m_clk,
            hw.l_clk,
            hw.m_eff,
            hw.s,
            hw.dw,
        ],
        dtype=float,
    )


def features_to_configs(row: Sequence[float]) -> tuple[LayerConfig, HardwareConfig]:
    """Rebuild the layer and hardware a feature vector was made from."""
    values = np.asarray(row, dtype=float)
    if values.shape[0] < FEATURE_COUNT:
        raise ValueError(f"expected {FEATURE_COUNT} features, got {values.shape[0]}")
    integral = {}
    for index in _INTEGRAL_FEATURES:
        value = float(values[index])
        if not value.is_integer():
            raise ValueError(f"feature {FEATURE_NAMES[index]} must be integral, got {value}")
        integral[index] = int(value)
    layer = LayerConfig(*(integral[index] for index in range(7)))
    hw = HardwareConfig(
        pf=integral[7],
        pc=integral[8],
        m_clk=float(values[9]),
        l_clk=float(values[10]),
        m_eff=float(values[11]),
        s=integral[12],
        dw=integral[13],
    )
    return layer, hw


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "FeatureStats":
        X = np.asarray(X, dtype=float)
        if X.shape[0] == 0:
            return cls(mean=np.zeros(X.shape[1]), std=np.ones(X.shape[1]))
        constant = np.all(X == X[0], axis=0)
        # Constant columns standardize to exactly zero.
        mean = np.where(constant, X[0], X.mean(axis=0))
        std = np.where(constant, 1.0, X.std(axis=0))
        return cls(mean=mean, std=std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.mean.shape[0]:
            raise ValueError(
                f"feature dimension mismatch: {X.shape[1]} != {self.mean.shape[0]}"
            )
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=float),
            std=np.asarray(data["std"], dtype=float),
        )


class Dataset:
    """An ordered, immutable collection of samples."""

    def __init__(self, samples: Iterable[Sample]) -> None:
        self._samples = tuple(samples)
        self._X = np.array([featurize(sample) for sample in self._samples], dtype=float)
        self._X = self._X.reshape(len(self._samples), FEATURE_COUNT)
        self._X.setflags(write=False)
        self._y = np.array([sample.latency_ms for sample in self._samples], dtype=float)
        self._y.setflags(write=False)

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, index: int) -> Sample:
        return self._samples[index]

    @property
    def samples(self) -> tuple[Sample, ...]:
        return self._samples

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def position_codes(self) -> np.ndarray:
        return np.array([sample.position.code for sample in self._samples], dtype=float)

    def design_matrix(self, with_position: bool = False) -> np.ndarray:
        if not with_position:
            return np.array(self._X)
        return np.column_stack([self._X, self.position_codes])


def _sample_to_row(sample: Sample) -> dict:
    row = {**sample.layer.to_dict(), **sample.hw.to_dict()}
    row["m_eff_pct"] = sample.hw.m_eff_pct_text
    row["position"] = sample.position.value
    row["latency_ms"] = sample.latency_ms
    return row


def write_csv(samples: Iterable[Sample], path: Path | TextIO) -> int:
    rows = [_sample_to_row(sample) for sample in samples]
    frame = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.17g")
    return len(rows)


def _numeric_column(frame: pd.DataFrame, name: str) -> pd.Series:
    values = pd.to_numeric(frame[name], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.astype(float))
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        raise DatasetError(f"row {index + 1}: {name} is not a number: {frame[name].iloc[index]!r}")
    return values


def load_csv(path: Path) -> list[Sample]:
    """Parse and validate a profiling CSV; row numbers count data rows from 1."""
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            float_precision="round_trip",
            skipinitialspace=True,
            dtype={"m_eff_pct": str},
        )
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"{path}: no samples") from exc
    missing = [name for name in CSV_COLUMNS if name not in frame.columns]
    if missing:
        raise DatasetError(f"{path}: missing columns: {', '.join(missing)}")
    if frame.empty:
        raise DatasetError(f"{path}: no samples")

    columns = {name: _numeric_column(frame, name) for name in _INTEGER_COLUMNS + _REAL_COLUMNS}
    for name in _INTEGER_COLUMNS:
        integral = columns[name] == np.floor(columns[name])
        if not integral.all():
            index = int(np.flatnonzero(~integral.to_numpy())[0])
            raise DatasetError(f"row {index + 1}: {name} must be an integer")

    samples = []
    for index in range(len(frame)):
        try:
            layer = LayerConfig(*(int(columns[name].iloc[index]) for name in _INTEGER_COLUMNS[:7]))
            hw = HardwareConfig.from_dict(
                {
                    "pf": int(columns["pf"].iloc[index]),
                    "pc": int(columns["pc"].iloc[index]),
                    "m_clk_mhz": float(columns["m_clk_mhz"].iloc[index]),
                    "l_clk_mhz": float(columns["l_clk_mhz"].iloc[index]),
                    "m_eff_pct": str(frame["m_eff_pct"].iloc[index]),
                    "s_bits": int(columns["s_bits"].iloc[index]),
                    "dw_bits": int(columns["dw_bits"].iloc[index]),
                }
            )
            position = LayerPosition(str(frame["position"].iloc[index]).strip().lower())
            samples.append(Sample(layer, hw, position, float(columns["latency_ms"].iloc[index])))
        except ValueError as exc:
            raise DatasetError(f"row {index + 1}: {exc}") from exc

    hardware = {sample.hw for sample in samples}
    if len(hardware) > 1:
        logger.bind(
            event="dataset_hardware_mixed",
            path=str(path),
            hardware_count=len(hardware),
        ).warning("dataset_hardware_mixed")
    logger.bind(event="dataset_loaded", path=str(path), sample_count=len(samples)).info(
        "dataset_loaded"
    )
    return samples


@dataclass(frozen=True)
class DistortionSpec:
    """Unmodelled runtime effects layered on top of the analytic latency."""

    bias_strength: float = 0.3
    bias_scale_ops: float = 1e8
    overhead_ms: float = 0.02
    noise_sigma_log: float = 0.05

    def __post_init__(self) -> None:
        if self.bias_strength < 0 or self.overhead_ms < 0 or self.noise_sigma_log < 0:
            raise ValueError("distortion parameters must be nonnegative")
        if self.bias_scale_ops <= 0:
            raise ValueError("bias_scale_ops must be positive")

    @classmethod
    def none(cls) -> "DistortionSpec":
        return cls(bias_strength=0.0, overhead_ms=0.0, noise_sigma_log=0.0)

    def bias(self, ops: int) -> float:
        return 1.0 + self.bias_strength * (1.0 - math.exp(-ops / self.bias_scale_ops))

    def apply(self, analytic_ms: float, ops: int, noise: float) -> float:
        return (analytic_ms * self.bias(ops) + self.overhead_ms) * math.exp(
            self.noise_sigma_log * noise
        )


def _log_uniform_int(rng: np.random.Generator, low: int, high: int) -> int:
    value = math.exp(rng.uniform(math.log(low), math.log(high)))
    return int(min(max(round(value), low), high))


def _output_size(size: int, kernel: int, stride: int) -> int:
    if size < kernel:
        return 1
    low, high = SHAPE_LIMITS["hw_o"]
    return min(max((size - kernel) // stride + 1, low), high)


def _draw_layer(rng: np.random.Generator) -> LayerConfig:
    h = _log_uniform_int(rng, *SHAPE_LIMITS["hw"])
    w = _log_uniform_int(rng, *SHAPE_LIMITS["hw"])
    k = int(rng.choice(KERNEL_SIZES))
    stride = int(rng.choice(STRIDES))
    c = _log_uniform_int(rng, *SHAPE_LIMITS["c"])
    f = _log_uniform_int(rng, *SHAPE_LIMITS["f"])
    return LayerConfig(
        h=h,
        w=w,
        h_o=_output_size(h, k, stride),
        w_o=_output_size(w, k, stride),
        k=k,
        f=f,
        c=c,
    )


def generate_synthetic(
    seed: int,
    count: int,
    hw: HardwareConfig = EVALUATION_HARDWARE,
    distortion: DistortionSpec = DistortionSpec(),
) -> list[Sample]:
    """Deterministic stand-in for a profiling run on the accelerator."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(seed)
    positions = list(POSITION_WEIGHTS)
    weights = np.array([POSITION_WEIGHTS[position] for position in positions])
    low, high = LATENCY_LIMITS_MS
    samples = []
    redraws = streak = 0
    while len(samples) < count:
        layer = _draw_layer(rng)
        position = positions[int(rng.choice(len(positions), p=weights))]
        noise = float(rng.standard_normal())
        analytic_ms = layer_latency(layer, hw, position)
        if not low <= analytic_ms <= high:
            redraws += 1
            streak += 1
            if streak >= MAX_CONSECUTIVE_REDRAWS:
                raise ValueError("latency window unreachable for this hardware")
            continue
        streak = 0
        latency = distortion.apply(analytic_ms, compute_counts(layer).ops, noise)
        samples.append(Sample(layer, hw, position, latency))
    logger.bind(
        event="synthetic_generated",
        seed=seed,
        sample_count=count,
        redraws=redraws,
    ).info("synthetic_generated")
    return samples
