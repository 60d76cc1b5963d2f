"""Domain types shared by every evaluation stage.

Coordinates live in the raw pixel frame: ``x`` is the column (increasing to
the right) and ``y`` is the row (increasing downward).  Orientations are
measured in that same frame, so a positive angle turns the +x axis toward
+y, which is clockwise on screen.  Annotations and perturbations both use
this convention.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class FPWBError(Exception):
    """Base class for toolkit errors."""


class DataError(FPWBError, ValueError):
    """Input data violates a documented contract."""


def wrap_angle(theta: float) -> float:
    """Wrap ``theta`` into ``[0, 2π)``."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    out = math.fmod(theta, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    # fmod of a tiny negative value can round up to exactly 2π
    if out >= TWO_PI:
        out = 0.0
    return out


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("angles must be finite")
    out = np.mod(theta, TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    theta: float
    quality: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"minutia coordinates must be finite: ({self.x}, {self.y})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        if self.quality is not None and not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"minutia quality must lie in [0, 1], got {self.quality}")


@dataclass(frozen=True)
class MinutiaeSet:
    """An ordered minutiae template tied to the image it was taken from.

    Sets produced by geometric perturbations may legitimately hold points
    outside the image; build those with ``strict=False`` and inspect
    :attr:`out_of_bounds`.
    """

    minutiae: tuple[Minutia, ...]
    width: int
    height: int
    resolution: int = 500
    strict: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.strict:
            for i, m in enumerate(self.minutiae):
                if not self._inside(m):
                    raise DataError(
                        f"minutia {i} at ({m.x}, {m.y}) lies outside the "
                        f"{self.width}x{self.height} image"
                    )

    def _inside(self, m: Minutia) -> bool:
        return 0.0 <= m.x < self.width and 0.0 <= m.y < self.height

    @classmethod
    def from_arrays(
        cls,
        x: Sequence[float],
        y: Sequence[float],
        theta: Sequence[float],
        width: int,
        height: int,
        resolution: int = 500,
        quality: Sequence[float | None] | None = None,
        strict: bool = True,
    ) -> "MinutiaeSet":
        if quality is None:
            quality = [None] * len(x)
        items = tuple(
            Minutia(float(a), float(b), float(t), None if q is None else float(q))
            for a, b, t, q in zip(x, y, theta, quality)
        )
        return cls(items, width, height, resolution, strict=strict)

    def replace(self, minutiae: Iterable[Minutia], strict: bool | None = None) -> "MinutiaeSet":
        return MinutiaeSet(
            tuple(minutiae),
            self.width,
            self.height,
            self.resolution,
            strict=self.strict if strict is None else strict,
        )

    def __len__(self) -> int:
        return len(self.minutiae)

    def __iter__(self):
        return iter(self.minutiae)

    def __getitem__(self, i: int) -> Minutia:
        return self.minutiae[i]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def xy(self) -> np.ndarray:
        """``(n, 2)`` float array of positions."""
        if not self.minutiae:
            return np.zeros((0, 2))
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)

    @property
    def theta(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)

    @property
    def out_of_bounds(self) -> np.ndarray:
        """Boolean mask of minutiae lying outside the image."""
        return np.array([not self._inside(m) for m in self.minutiae], dtype=bool)


@dataclass(frozen=True)
class GrayscaleImage:
    pixels: np.ndarray
    resolution: int = 500

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"expected a non-empty 2-D pixel array, got shape {px.shape}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_buffer(cls, data: Sequence[int], width: int, height: int, resolution: int = 500):
        data = np.asarray(data, dtype=np.uint8)
        if data.size != width * height:
            raise ValueError(f"pixel count {data.size} != {width}x{height}")
        return cls(data.reshape(height, width), resolution)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class CaptureCondition(str, enum.Enum):
    NORMAL = "Normal"
    DRY_FINGER = "DryFinger"
    WET_FINGER = "WetFinger"
    LOW_PRESSURE = "LowPressure"
    HIGH_PRESSURE = "HighPressure"
    BRIGHT_LIGHTING = "BrightLighting"
    DARK_LIGHTING = "DarkLighting"

    @classmethod
    def parse(cls, value: "str | CaptureCondition") -> "CaptureCondition":
        if isinstance(value, cls):
            return value
        key = str(value).replace(" ", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        raise DataError(f"unknown capture condition {value!r}")

    @property
    def is_adverse(self) -> bool:
        return self is not CaptureCondition.NORMAL


ADVERSE_CONDITIONS = tuple(c for c in CaptureCondition if c.is_adverse)

# condition families whose adverse members are compared against Normal references
CONDITION_FAMILIES: dict[str, tuple[CaptureCondition, ...]] = {
    "Finger Moisture": (CaptureCondition.DRY_FINGER, CaptureCondition.WET_FINGER),
    "Contact Pressure": (CaptureCondition.LOW_PRESSURE, CaptureCondition.HIGH_PRESSURE),
    "Illumination": (CaptureCondition.BRIGHT_LIGHTING, CaptureCondition.DARK_LIGHTING),
}


@dataclass(frozen=True)
class ConditionMetadata:
    """Acquisition measurements supplied with a dataset; never computed."""

    illumination_lux: float | None = None
    pressure_kpa: float | None = None
    moisture_pct: float | None = None

    def __post_init__(self) -> None:
        for name in ("illumination_lux", "pressure_kpa", "moisture_pct"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise DataError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class Pair:
    ground: int
    detected: int
    distance: float
    dtheta: float


@dataclass(frozen=True)
class Pairing:
    pairs: tuple[Pair, ...]
    unpaired_ground: tuple[int, ...]
    unpaired_detected: tuple[int, ...]
    delta: float = 10.0

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def ground_indices(self) -> np.ndarray:
        return np.array([p.ground for p in self.pairs], dtype=np.int64)

    @property
    def detected_indices(self) -> np.ndarray:
        return np.array([p.detected for p in self.pairs], dtype=np.int64)

    def validate(self, n_ground: int, n_detected: int) -> None:
        """Raise if the pairing is not an injective, δ-bounded partition."""
        g = [p.ground for p in self.pairs] + list(self.unpaired_ground)
        d = [p.detected for p in self.pairs] + list(self.unpaired_detected)
        if sorted(g) != list(range(n_ground)):
            raise AssertionError("ground-truth indices do not partition the input set")
        if sorted(d) != list(range(n_detected)):
            raise AssertionError("detected indices do not partition the input set")
        for p in self.pairs:
            if p.distance > self.delta:
                raise AssertionError(f"pair {p} exceeds delta={self.delta}")
