"""Two-sample t-tests with significance banding, and FNMR at a FAR threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DataError

# |t| cut-offs for the highlight bands (120 DOF, alpha = 0.05)
BAND_EDGES = ((10.0, "red"), (5.0, "orange"), (1.658, "yellow"))


def significance_band(t: float) -> str:
    """``none`` for |t| <= 1.658, else yellow (..5], orange (..10], red above."""
    a = abs(t)
    for edge, name in BAND_EDGES:
        if a > edge:
            return name
    return "none"


@dataclass(frozen=True)
class TTestResult:
    t: float
    dof: int
    band: str


@dataclass(frozen=True)
class ScoreDistribution:
    scores: np.ndarray
    label: str = ""
    kind: str | None = None  # "genuine" / "impostor" where it applies

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    def __len__(self) -> int:
        return int(self.scores.size)


def _as_array(x) -> np.ndarray:
    if isinstance(x, ScoreDistribution):
        return x.scores
    return np.asarray(x, dtype=np.float64).ravel()


def two_sample_t(a, b) -> TTestResult:
    """Student's two-sample t statistic with pooled variance.

    Raises :class:`DataError` when both samples have zero spread but
    different means (the statistic is unbounded).
    """
    a, b = _as_array(a), _as_array(b)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two scores")
    ma, mb = float(a.mean()), float(b.mean())
    ssa = float(((a - ma) ** 2).sum())
    ssb = float(((b - mb) ** 2).sum())
    dof = na + nb - 2
    pooled = (ssa + ssb) / dof
    se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    diff = ma - mb
    if se == 0.0:
        if diff == 0.0:
            return TTestResult(0.0, dof, "none")
        raise DataError("zero pooled variance with unequal means")
    t = diff / se
    return TTestResult(t, dof, significance_band(t))


def threshold_at_far(impostor, far: float) -> float:
    """Empirical decision threshold at a target false-accept rate.

    Higher scores mean more similar; a comparison is accepted when its score
    is ``>= threshold``.  Let ``s*`` be the highest impostor score that must
    be rejected for the accepted fraction to stay ``<= far``.  The threshold
    is the midpoint between ``s*`` and the next distinct impostor score
    above it, or the next float above ``s*`` when it is the maximum.
    """
    s = _as_array(impostor)
    if s.size == 0:
        raise ValueError("impostor distribution is empty")
    if not 0.0 < far < 1.0:
        raise ValueError(f"far must lie in (0, 1), got {far}")
    allowed = int(math.floor(far * s.size * (1.0 + 1e-12)))
    desc = np.sort(s)[::-1]
    s_star = float(desc[allowed])
    above = desc[desc > s_star]
    if above.size == 0:
        return float(np.nextafter(s_star, math.inf))
    return 0.5 * (s_star + float(above.min()))


def far_at_threshold(impostor, threshold: float) -> float:
    s = _as_array(impostor)
    if s.size == 0:
        raise ValueError("impostor distribution is empty")
    return float(np.count_nonzero(s >= threshold)) / s.size


def fnmr_at_threshold(genuine, threshold: float) -> float:
    """Fraction of genuine scores strictly below ``threshold``."""
    s = _as_array(genuine)
    if s.size == 0:
        raise ValueError("genuine distribution is empty")
    return float(np.count_nonzero(s < threshold)) / s.size


def fnmr_at_far(genuine, impostor, far: float = 0.001) -> tuple[float, float]:
    """Return ``(fnmr, threshold)`` at the empirical ``far`` threshold."""
    thr = threshold_at_far(impostor, far)
    return fnmr_at_threshold(genuine, thr), thr
