"""Depth <-> bin quantization.

Bins run 1..1000; bin 0 marks an invalid / out-of-range depth.  A depth is
assigned ``clamp(ceil(1000 * t), 1, 1000)`` where ``t`` is its normalized
position in the range (linear in meters, or linear in log-meters for the
log-uniform scheme).  Dequantization returns bin centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DenseNTPError
from .vocab import N_DEPTH_BINS

# ceil() of a value this close above an integer is snapped down; keeps
# exact edges like sqrt(0.5 * 100) in the log preset from drifting a bin
_EDGE_EPS = 1e-9


class InvalidDepth(DenseNTPError, ValueError):
    pass


class IgnoreBin(DenseNTPError, ValueError):
    pass


class UnknownPreset(DenseNTPError, KeyError):
    pass


@dataclass(frozen=True)
class DepthQuantizer:
    scheme: str = "linear"
    d_min: float = 0.0
    d_max: float = 10.0
    bins: int = N_DEPTH_BINS

    def __post_init__(self):
        if self.scheme not in ("linear", "log_uniform"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be < d_max")
        if self.scheme == "linear" and self.d_min < 0:
            raise ValueError("linear scheme needs d_min >= 0")
        if self.scheme == "log_uniform" and self.d_min <= 0:
            raise ValueError("log_uniform scheme needs d_min > 0")

    def _position(self, d):
        if self.scheme == "linear":
            return (d - self.d_min) / (self.d_max - self.d_min)
        lo, hi = math.log(self.d_min), math.log(self.d_max)
        return (np.log(d) - lo) / (hi - lo)

    def _valid(self, d):
        if self.scheme == "linear" and self.d_min == 0:
            return (d > 0) & (d <= self.d_max)
        return (d >= self.d_min) & (d <= self.d_max)

    def quantize_array(self, depth_m) -> np.ndarray:
        d = np.asarray(depth_m, dtype=np.float64)
        if np.any(np.isnan(d)):
            raise InvalidDepth("NaN depth")
        ok = self._valid(d)
        safe = np.where(ok, d, self.d_max)
        b = np.ceil(self._position(safe) * self.bins - _EDGE_EPS)
        b = np.clip(b, 1, self.bins).astype(np.int64)
        return np.where(ok, b, 0)

    def quantize(self, depth_m: float) -> int:
        return int(self.quantize_array(np.array([depth_m]))[0])

    def dequantize_array(self, bins) -> np.ndarray:
        b = np.asarray(bins)
        if np.any(b == 0):
            raise IgnoreBin("bin 0 is the ignore bin; mask it before dequantizing")
        if np.any((b < 0) | (b > self.bins)):
            raise ValueError(f"bins must lie in 1..{self.bins}")
        t = (b - 0.5) / self.bins
        if self.scheme == "linear":
            return self.d_min + t * (self.d_max - self.d_min)
        lo, hi = math.log(self.d_min), math.log(self.d_max)
        return np.exp(lo + t * (hi - lo))

    def dequantize(self, b: int) -> float:
        return float(self.dequantize_array(np.array([b]))[0])

    def bin_width(self, b: int) -> float:
        """Width in meters of bin ``b``."""
        t0, t1 = (b - 1) / self.bins, b / self.bins
        if self.scheme == "linear":
            return (t1 - t0) * (self.d_max - self.d_min)
        lo, hi = math.log(self.d_min), math.log(self.d_max)
        return math.exp(lo + t1 * (hi - lo)) - math.exp(lo + t0 * (hi - lo))


PRESETS = {
    "nyuv2": DepthQuantizer("linear", 0.0, 10.0),
    "cityscapes": DepthQuantizer("linear", 0.0, 80.0),
    "ddad": DepthQuantizer("linear", 0.05, 120.0),
    "openworld": DepthQuantizer("log_uniform", 0.5, 100.0),
}


def preset(name: str) -> DepthQuantizer:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise UnknownPreset(f"unknown depth preset {name!r}; choose from {sorted(PRESETS)}") from None
