"""Block-wise image quality metrics for fingerprint reader evaluation.

All three metrics start from the gradient covariance of each block:

* OCL, the mean orientation coherence ``(λ1 - λ2) / (λ1 + λ2)`` over
  foreground blocks;
* RF, the fraction of foreground blocks whose ridge frequency falls in the
  plausible band for 500 dpi impressions;
* GOQ, one minus the mean orientation jump between neighbouring foreground
  blocks, normalised by π/2.

Each lies in [0, 1] with higher meaning better, and each is 0 when the
image has no foreground.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from . import kernels
from .core import CaptureCondition, GrayscaleImage

logger = logging.getLogger(__name__)

QUALITY_BLOCK = 32
FOREGROUND_FRACTION = 0.05
RF_BAND = (1.0 / 25.0, 1.0 / 3.0)
METRICS = ("GOQ", "RF", "OCL")


@dataclass(frozen=True)
class OrientationField:
    orientation: np.ndarray  # ridge direction per block, [0, π)
    coherence: np.ndarray
    foreground: np.ndarray
    block: int

    @property
    def gradient_axis(self) -> np.ndarray:
        """Dominant gradient direction per block, [0, π)."""
        return np.mod(self.orientation + math.pi / 2, math.pi)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.orientation.shape


@dataclass(frozen=True)
class QualityScore:
    metric: str
    value: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.metric} score {self.value} outside [0, 1]")


def _pixels(image: GrayscaleImage | np.ndarray) -> np.ndarray:
    px = image.pixels if isinstance(image, GrayscaleImage) else np.asarray(image)
    if px.ndim != 2 or px.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    return px.astype(np.float64)


def _block_sum(a: np.ndarray, block: int) -> np.ndarray:
    h, w = a.shape
    gh, gw = -(-h // block), -(-w // block)
    padded = np.zeros((gh * block, gw * block))
    padded[:h, :w] = a
    return padded.reshape(gh, block, gw, block).sum(axis=(1, 3))


def orientation_field(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK) -> OrientationField:
    """Per-block orientation and coherence from the gradient covariance.

    A block is foreground when its mean gradient energy reaches 5% of the
    image-wide mean block energy (and is non-zero).
    """
    if block < 8:
        raise ValueError(f"block must be >= 8 px, got {block}")
    img = _pixels(image)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = _block_sum(gx * gx, block)
    syy = _block_sum(gy * gy, block)
    sxy = _block_sum(gx * gy, block)
    area = _block_sum(np.ones_like(img), block)

    energy = (sxx + syy) / area
    floor = FOREGROUND_FRACTION * energy.mean()
    fg = (energy > 0) & (energy >= floor)

    total = sxx + syy
    with np.errstate(invalid="ignore", divide="ignore"):
        coh = np.where(total > 0, np.sqrt((sxx - syy) ** 2 + 4 * sxy ** 2) / total, 0.0)
    coh = np.clip(coh, 0.0, 1.0)
    grad_dir = 0.5 * np.arctan2(2 * sxy, sxx - syy)
    ridge = np.mod(grad_dir + math.pi / 2, math.pi)
    return OrientationField(ridge, coh, fg, block)


def ocl(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK) -> QualityScore:
    f = orientation_field(image, block)
    if not f.foreground.any():
        return QualityScore("OCL", 0.0)
    return QualityScore("OCL", float(np.clip(f.coherence[f.foreground].mean(), 0.0, 1.0)))


def ridge_frequency_map(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK,
                        field: OrientationField | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-block ridge frequency (cycles/px, 0 if undetermined) and the foreground mask."""
    img = _pixels(image)
    f = field or orientation_field(img, block)
    freq = kernels.block_frequencies(img, f.gradient_axis, f.foreground, block)
    return freq, f.foreground


def ridge_frequency(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK) -> QualityScore:
    freq, fg = ridge_frequency_map(image, block)
    if not fg.any():
        return QualityScore("RF", 0.0)
    good = (freq >= RF_BAND[0]) & (freq <= RF_BAND[1]) & fg
    return QualityScore("RF", float(good.sum()) / float(fg.sum()))


_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def goq(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK) -> QualityScore:
    f = orientation_field(image, block)
    o, fg = f.orientation, f.foreground
    gh, gw = o.shape
    total = 0.0
    count = 0
    for dy, dx in _NEIGHBOURS:
        ys = slice(max(dy, 0), gh + min(dy, 0))
        yd = slice(max(-dy, 0), gh + min(-dy, 0))
        xs = slice(max(dx, 0), gw + min(dx, 0))
        xd = slice(max(-dx, 0), gw + min(-dx, 0))
        both = fg[ys, xs] & fg[yd, xd]
        d = np.abs(o[ys, xs] - o[yd, xd])[both]
        d = np.minimum(d, math.pi - d)
        total += float(d.sum())
        count += int(d.size)
    if count == 0:
        return QualityScore("GOQ", 0.0)
    value = 1.0 - (total / count) / (math.pi / 2)
    return QualityScore("GOQ", float(np.clip(value, 0.0, 1.0)))


METRIC_FUNCS = {"GOQ": goq, "RF": ridge_frequency, "OCL": ocl}


def compute_all(image: GrayscaleImage | np.ndarray, block: int = QUALITY_BLOCK) -> dict[str, float]:
    return {name: fn(image, block).value for name, fn in METRIC_FUNCS.items()}


@dataclass
class QualityDistributions:
    by_condition: dict[tuple[str, str, str], list[float]]  # (reader, condition, metric)
    pooled: dict[tuple[str, str], list[float]]             # (reader, metric)
    skipped: int = 0

    def is_empty(self) -> bool:
        return not self.pooled


def quality_by_condition(
    entries: Iterable[tuple[str, CaptureCondition | str | None, dict[str, float]]],
) -> QualityDistributions:
    """Group quality scores per (reader, condition, metric) plus the pooled set.

    Each entry is ``(reader, condition, {metric: score})``.  Entries without
    a condition label are skipped with a warning.
    """
    by_cond: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    pooled: dict[tuple[str, str], list[float]] = defaultdict(list)
    skipped = 0
    for i, (reader, cond, scores) in enumerate(entries):
        if cond is None:
            logger.warning("entry %d (reader %s) has no capture condition; skipped", i, reader)
            skipped += 1
            continue
        c = CaptureCondition.parse(cond).value
        for metric, value in scores.items():
            by_cond[(reader, c, metric)].append(float(value))
            pooled[(reader, metric)].append(float(value))
    return QualityDistributions(dict(by_cond), dict(pooled), skipped)
