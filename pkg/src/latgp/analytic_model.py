"""Closed-form load/compute/store latency model for 2D convolutions.

Clocks are given in MHz and every latency is reported in milliseconds.
"""

import json
import math
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

_HZ_PER_MHZ = 1e6
_MS_PER_S = 1e3


def _require_positive_int(owner: str, name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{owner}.{name} must be an integer, got {value!r}")
    if value <= 0:
        raise ValueError(f"{owner}.{name} must be positive, got {value}")


def _require_positive_real(owner: str, name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{owner}.{name} must be a number, got {value!r}")
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"{owner}.{name} must be positive and finite, got {value}")


def _read_keys(owner: str, data: dict, keys: Sequence[str]) -> list:
    if not isinstance(data, dict):
        raise ValueError(f"{owner} must be a JSON object, got {type(data).__name__}")
    missing = [key for key in keys if key not in data]
    if missing:
        raise ValueError(f"{owner} is missing keys: {', '.join(missing)}")
    return [data[key] for key in keys]


def _percent_to_fraction(value) -> float:
    """Percent to fraction, divided in decimal so written text reads back exactly."""
    if not isinstance(value, str):
        _require_positive_real("hardware", "m_eff_pct", value)
        value = repr(value)
    try:
        return float(Decimal(value.strip()).scaleb(-2))
    except InvalidOperation as exc:
        raise ValueError(f"hardware.m_eff_pct must be a number, got {value!r}") from exc


@dataclass(frozen=True)
class LayerConfig:
    """Shape of one 2D convolution."""

    h: int
    w: int
    h_o: int
    w_o: int
    k: int
    f: int
    c: int

    def __post_init__(self) -> None:
        for name in ("h", "w", "h_o", "w_o", "k", "f", "c"):
            _require_positive_int("LayerConfig", name, getattr(self, name))

    @classmethod
    def from_dict(cls, data: dict) -> "LayerConfig":
        return cls(*_read_keys("layer", data, ("h", "w", "h_o", "w_o", "k", "f", "c")))

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "w": self.w,
            "h_o": self.h_o,
            "w_o": self.w_o,
            "k": self.k,
            "f": self.f,
            "c": self.c,
        }


@dataclass(frozen=True)
class HardwareConfig:
    """Accelerator and device constants.

    ``m_clk`` and ``l_clk`` are in MHz, ``m_eff`` is a fraction in (0, 1],
    ``s`` and ``dw`` are in bits.
    """

    pf: int
    pc: int
    m_clk: float
    l_clk: float
    m_eff: float
    s: int
    dw: int

    def __post_init__(self) -> None:
        for name in ("pf", "pc", "s", "dw"):
            _require_positive_int("HardwareConfig", name, getattr(self, name))
        _require_positive_real("HardwareConfig", "m_clk", self.m_clk)
        _require_positive_real("HardwareConfig", "l_clk", self.l_clk)
        _require_positive_real("HardwareConfig", "m_eff", self.m_eff)
        if self.m_eff > 1:
            raise ValueError(f"HardwareConfig.m_eff must be at most 1, got {self.m_eff}")

    @property
    def memory_rate(self) -> float:
        """Effective off-chip words per second across the filter lanes."""
        return self.pf * self.m_clk * _HZ_PER_MHZ * self.s * self.m_eff

    @property
    def compute_rate(self) -> float:
        """Multiply-accumulates per second."""
        return self.pf * self.pc * self.l_clk * _HZ_PER_MHZ

    @property
    def m_eff_pct_text(self) -> str:
        """Shortest decimal percent that parses back to exactly ``m_eff``."""
        return format(Decimal(repr(self.m_eff)).scaleb(2).normalize(), "f")

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareConfig":
        pf, pc, m_clk, l_clk, m_eff_pct, s, dw = _read_keys(
            "hardware",
            data,
            ("pf", "pc", "m_clk_mhz", "l_clk_mhz", "m_eff_pct", "s_bits", "dw_bits"),
        )
        return cls(pf, pc, m_clk, l_clk, _percent_to_fraction(m_eff_pct), s, dw)

    def to_dict(self) -> dict:
        percent = self.m_eff_pct_text
        if _percent_to_fraction(float(percent)) == self.m_eff:
            percent = float(percent)
        return {
            "pf": self.pf,
            "pc": self.pc,
            "m_clk_mhz": self.m_clk,
            "l_clk_mhz": self.l_clk,
            "m_eff_pct": percent,
            "s_bits": self.s,
            "dw_bits": self.dw,
        }


EVALUATION_HARDWARE = HardwareConfig(
    pf=64, pc=64, m_clk=200.0, l_clk=200.0, m_eff=0.7, s=64, dw=8
)


class LayerPosition(Enum):
    FIRST = "first"
    MIDDLE = "middle"
    LAST = "last"
    FIRST_AND_LAST = "first-and-last"

    @property
    def code(self) -> int:
        return _POSITION_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "LayerPosition":
        for position, value in _POSITION_CODES.items():
            if value == code:
                return position
        raise ValueError(f"unknown layer position code {code!r}")

    @classmethod
    def for_index(cls, index: int, count: int) -> "LayerPosition":
        if count == 1:
            return cls.FIRST_AND_LAST
        if index == 0:
            return cls.FIRST
        if index == count - 1:
            return cls.LAST
        return cls.MIDDLE


_POSITION_CODES = {
    LayerPosition.FIRST: 0,
    LayerPosition.MIDDLE: 1,
    LayerPosition.LAST: 2,
    LayerPosition.FIRST_AND_LAST: 3,
}


@dataclass(frozen=True)
class LayerCounts:
    ops: int
    input_size: int
    weights_size: int
    output_size: int


@dataclass(frozen=True)
class LatencyBreakdown:
    t_weights: float
    t_data: float
    t_load: float
    t_compute: float
    t_store: float
    t_layer: float

    def to_dict(self) -> dict:
        return {
            "t_weights": self.t_weights,
            "t_data": self.t_data,
            "t_load": self.t_load,
            "t_compute": self.t_compute,
            "t_store": self.t_store,
            "t_layer": self.t_layer,
        }


@dataclass(frozen=True)
class NetworkLatency:
    per_layer: tuple[LatencyBreakdown, ...]
    total: float


def compute_counts(layer: LayerConfig) -> LayerCounts:
    """Operation and data counts; Python ints, so no overflow at any size."""
    return LayerCounts(
        ops=layer.f * layer.c * layer.h * layer.w * layer.k * layer.k,
        input_size=layer.h * layer.w * layer.c,
        weights_size=layer.f * layer.c * layer.k * layer.k,
        output_size=layer.h_o * layer.w_o * layer.f,
    )


def layer_breakdown(
    layer: LayerConfig, hw: HardwareConfig, position: LayerPosition
) -> LatencyBreakdown:
    counts = compute_counts(layer)
    memory_rate = hw.memory_rate
    t_weights = counts.weights_size * hw.dw / memory_rate * _MS_PER_S
    # T_data keeps the PF divisor exactly as the load formula states it.
    t_data = counts.input_size * hw.dw / memory_rate * _MS_PER_S
    t_store = counts.output_size * hw.dw / memory_rate * _MS_PER_S
    t_compute = counts.ops / hw.compute_rate * _MS_PER_S
    t_load = t_weights + t_data

    if position is LayerPosition.FIRST:
        t_layer = t_load + t_compute
    elif position is LayerPosition.MIDDLE:
        t_layer = max(t_weights, t_compute)
    elif position is LayerPosition.LAST:
        t_layer = max(t_weights, t_compute) + t_store
    elif position is LayerPosition.FIRST_AND_LAST:
        t_layer = t_load + t_compute + t_store
    else:
        raise ValueError(f"unknown layer position {position!r}")

    return LatencyBreakdown(
        t_weights=t_weights,
        t_data=t_data,
        t_load=t_load,
        t_compute=t_compute,
        t_store=t_store,
        t_layer=t_layer,
    )


def layer_latency(layer: LayerConfig, hw: HardwareConfig, position: LayerPosition) -> float:
    return layer_breakdown(layer, hw, position).t_layer


def generic_layer_latency(
    input_size: float,
    output_size: float,
    ops: float,
    memory_bandwidth: float,
    clock: float,
    parallelism: float,
) -> float:
    """Pipelined max-of-three estimate in ms; sizes per second and clock in Hz."""
    arguments = {
        "input_size": input_size,
        "output_size": output_size,
        "ops": ops,
        "memory_bandwidth": memory_bandwidth,
        "clock": clock,
        "parallelism": parallelism,
    }
    for name, value in arguments.items():
        _require_positive_real("generic_layer_latency", name, value)
    seconds = max(
        input_size / memory_bandwidth,
        ops / (clock * parallelism),
        output_size / memory_bandwidth,
    )
    return seconds * _MS_PER_S


def network_latency(layers: Sequence[LayerConfig], hw: HardwareConfig) -> NetworkLatency:
    if not layers:
        raise ValueError("empty network")
    count = len(layers)
    per_layer = tuple(
        layer_breakdown(layer, hw, LayerPosition.for_index(index, count))
        for index, layer in enumerate(layers)
    )
    return NetworkLatency(per_layer=per_layer, total=math.fsum(b.t_layer for b in per_layer))


@dataclass(frozen=True)
class ParallelismCandidate:
    hardware: HardwareConfig
    total: float


def explore_parallelism(
    layers: Sequence[LayerConfig],
    hw: HardwareConfig,
    pf_values: Iterable[int],
    pc_values: Iterable[int],
) -> list[ParallelismCandidate]:
    """Rank every (PF, PC) pair by network latency, other constants fixed."""
    candidates = [
        ParallelismCandidate(hardware=candidate, total=network_latency(layers, candidate).total)
        for candidate in (
            replace(hw, pf=pf, pc=pc) for pf, pc in product(pf_values, pc_values)
        )
    ]
    if not candidates:
        raise ValueError("no parallelism candidates")
    return sorted(
        candidates,
        key=lambda item: (item.total, item.hardware.pf * item.hardware.pc, item.hardware.pf),
    )


def read_network(path: Path) -> list[LayerConfig]:
    with Path(path).open() as handle:
        data = json.load(handle)
    if not isinstance(data, list):
        raise ValueError("network file must hold a JSON array of layers")
    return [LayerConfig.from_dict(item) for item in data]


def read_hardware(path: Path) -> HardwareConfig:
    with Path(path).open() as handle:
        return HardwareConfig.from_dict(json.load(handle))
