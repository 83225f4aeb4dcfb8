"""Dense tensor containers shared by every compute path.

Feature maps are channel-major (C, H, W): flat index = c*H*W + y*W + x.
All real values are float32 and must stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, GeometryError


@dataclass
class FeatureMap:
    """A 3-D activation volume of float32 values, laid out channel-major."""

    data: np.ndarray  # shape (C, H, W), float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise GeometryError(f"feature map must be 3-D (C,H,W), got shape {self.data.shape}")
        if 0 in self.data.shape:
            raise GeometryError(f"feature map axes must be positive, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise GeometryError("feature map values must be finite")

    @classmethod
    def zeros(cls, c: int, h: int, w: int) -> "FeatureMap":
        if c < 1 or h < 1 or w < 1:
            raise GeometryError(f"feature map dims must be >= 1, got ({c},{h},{w})")
        return cls(np.zeros((c, h, w), dtype=np.float32))

    @classmethod
    def from_flat(cls, c: int, h: int, w: int, values) -> "FeatureMap":
        flat = np.asarray(values, dtype=np.float32)
        if flat.size != c * h * w:
            raise GeometryError(f"expected {c * h * w} values for ({c},{h},{w}), got {flat.size}")
        return cls(flat.reshape(c, h, w))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def _check(self, c: int, y: int, x: int):
        if not (0 <= c < self.c and 0 <= y < self.h and 0 <= x < self.w):
            raise BoundsError(
                f"index ({c},{y},{x}) out of range for ({self.c},{self.h},{self.w})"
            )

    def at(self, c: int, y: int, x: int) -> float:
        self._check(c, y, x)
        return float(self.data[c, y, x])

    def put(self, c: int, y: int, x: int, value: float):
        self._check(c, y, x)
        if not np.isfinite(value):
            raise GeometryError(f"feature map values must be finite, got {value}")
        self.data[c, y, x] = value


@dataclass
class Matrix:
    """A row-major 2-D matrix of float32 values."""

    data: np.ndarray  # shape (R, N)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise GeometryError(f"matrix must be 2-D, got shape {self.data.shape}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]
