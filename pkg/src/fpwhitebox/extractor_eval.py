"""Detection and localisation metrics for minutiae extractors."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import CaptureCondition, DataError, MinutiaeSet, Pair, Pairing

logger = logging.getLogger(__name__)

PATCH = 16
DEFAULT_DELTA = 10.0


def angle_diff(theta1: float, theta2: float) -> float:
    """Signed orientation difference ``theta1 - theta2`` in ``[-π, π)``."""
    if not (math.isfinite(theta1) and math.isfinite(theta2)):
        raise ValueError("angles must be finite")
    d = theta1 - theta2
    if -math.pi <= d < math.pi:
        out = d
    elif d < -math.pi:
        out = 2.0 * math.pi + d
    else:
        out = -2.0 * math.pi + d
    if not -math.pi <= out < math.pi:
        # inputs further apart than one extra turn
        out = d - 2.0 * math.pi * math.floor((d + math.pi) / (2.0 * math.pi))
        if out >= math.pi:
            out -= 2.0 * math.pi
    return out


def _angle_diff_vec(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    return np.array([angle_diff(a, b) for a, b in zip(np.ravel(t1).tolist(), np.ravel(t2).tolist())])


def pair_minutiae(ground: MinutiaeSet, detected: MinutiaeSet, delta: float = DEFAULT_DELTA) -> Pairing:
    """Greedy one-to-one pairing of detected minutiae against ground truth.

    Candidates are every (ground, detected) couple within ``delta`` pixels,
    taken in order of increasing distance, then smaller absolute orientation
    difference, then ground index and detected index.
    """
    if ground.shape != detected.shape:
        raise DataError(f"image dimensions differ: {ground.shape} vs {detected.shape}")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    n_g, n_d = len(ground), len(detected)
    if n_g == 0 or n_d == 0:
        return Pairing((), tuple(range(n_g)), tuple(range(n_d)), delta)

    g, d = ground.xy, detected.xy
    dist = np.sqrt(((g[:, None, :] - d[None, :, :]) ** 2).sum(axis=2))
    gi, di = np.nonzero(dist <= delta)
    cand_dist = dist[gi, di]
    dtheta = _angle_diff_vec(ground.theta[gi], detected.theta[di])
    order = np.lexsort((di, gi, np.abs(dtheta), cand_dist))
    keep = kernels.greedy_select(gi[order], di[order], n_g, n_d)
    sel = order[keep]

    pairs = tuple(
        Pair(int(gi[k]), int(di[k]), float(cand_dist[k]), float(dtheta[k])) for k in sel
    )
    paired_g = {p.ground for p in pairs}
    paired_d = {p.detected for p in pairs}
    return Pairing(
        pairs,
        tuple(i for i in range(n_g) if i not in paired_g),
        tuple(j for j in range(n_d) if j not in paired_d),
        delta,
    )


@dataclass(frozen=True)
class PatchGrid:
    """Per-patch minutiae counts on the 16×16 grid, flattened row-major."""

    cols: int
    rows: int
    ground: np.ndarray    # M_i
    paired: np.ndarray    # P_i
    spurious: np.ndarray  # D_i, before clamping
    missing: np.ndarray   # I_i
    patch: int = PATCH

    @property
    def n_patches(self) -> int:
        return self.cols * self.rows

    @classmethod
    def build(cls, ground: MinutiaeSet, detected: MinutiaeSet, pairing: Pairing) -> "PatchGrid":
        cols = math.ceil(ground.width / PATCH)
        rows = math.ceil(ground.height / PATCH)

        def patch_ids(xy: np.ndarray) -> np.ndarray:
            if xy.size == 0:
                return np.zeros(0, dtype=np.int64)
            c = np.floor(xy[:, 0] / PATCH).astype(np.int64)
            r = np.floor(xy[:, 1] / PATCH).astype(np.int64)
            ids = r * cols + c
            ids[(c < 0) | (c >= cols) | (r < 0) | (r >= rows)] = -1
            return ids

        def count(ids: np.ndarray) -> np.ndarray:
            ids = ids[ids >= 0]
            return np.bincount(ids, minlength=cols * rows)

        g_ids = patch_ids(ground.xy)
        d_ids = patch_ids(detected.xy)
        paired_g = pairing.ground_indices
        missing_g = np.array(pairing.unpaired_ground, dtype=np.int64)
        spurious_d = np.array(pairing.unpaired_detected, dtype=np.int64)
        return cls(
            cols,
            rows,
            ground=count(g_ids),
            paired=count(g_ids[paired_g]) if paired_g.size else np.zeros(cols * rows, dtype=np.int64),
            spurious=count(d_ids[spurious_d]) if spurious_d.size else np.zeros(cols * rows, dtype=np.int64),
            missing=count(g_ids[missing_g]) if missing_g.size else np.zeros(cols * rows, dtype=np.int64),
        )


def goodness_index(ground: MinutiaeSet, detected: MinutiaeSet, pairing: Pairing) -> float:
    """Goodness Index over 16×16 patches holding at least one ground-truth minutia.

    Spurious counts are clamped to twice the patch's ground-truth count;
    spurious detections in patches without ground truth do not contribute.
    """
    if len(ground) == 0:
        raise DataError("goodness index needs at least one ground-truth minutia")
    grid = PatchGrid.build(ground, detected, pairing)
    m = grid.ground
    active = m > 0
    spurious = np.minimum(grid.spurious, 2 * m)
    num = (grid.paired - spurious - grid.missing)[active].sum()
    return float(num) / float(m[active].sum())


def _require_pairs(pairing: Pairing) -> None:
    if len(pairing) == 0:
        raise DataError("error metrics need at least one paired minutia")


def positional_error(ground: MinutiaeSet, detected: MinutiaeSet, pairing: Pairing) -> float:
    """Root-mean-square positional deviation over paired minutiae (pixels)."""
    _require_pairs(pairing)
    g = ground.xy[pairing.ground_indices]
    d = detected.xy[pairing.detected_indices]
    sq = ((g - d) ** 2).sum(axis=1)
    return math.sqrt(math.fsum(sq.tolist()) / len(pairing))


def orientation_error(ground: MinutiaeSet, detected: MinutiaeSet, pairing: Pairing) -> float:
    """Root-mean-square orientation difference over paired minutiae (radians)."""
    _require_pairs(pairing)
    tg = ground.theta[pairing.ground_indices]
    td = detected.theta[pairing.detected_indices]
    phi = _angle_diff_vec(tg, td)
    return math.sqrt(math.fsum((phi * phi).tolist()) / len(pairing))


@dataclass(frozen=True)
class CaseMetrics:
    paired_ratio: float
    missing_ratio: float
    spurious_ratio: float
    goodness_index: float
    positional_error: float | None
    orientation_error: float | None


METRIC_ROWS = (
    ("paired_ratio", "Paired Minutiae (P/M)"),
    ("missing_ratio", "Missing Minutiae (I/M)"),
    ("spurious_ratio", "Spurious Minutiae (D/M)"),
    ("goodness_index", "Goodness Index"),
    ("positional_error", "Positional Error e_p (px)"),
    ("orientation_error", "Orientation Error e_theta (rad)"),
)


def case_metrics(ground: MinutiaeSet, detected: MinutiaeSet, delta: float = DEFAULT_DELTA) -> CaseMetrics:
    pairing = pair_minutiae(ground, detected, delta)
    m = len(ground)
    if m == 0:
        raise DataError("case has an empty ground-truth set")
    p = len(pairing)
    return CaseMetrics(
        paired_ratio=p / m,
        missing_ratio=len(pairing.unpaired_ground) / m,
        spurious_ratio=len(pairing.unpaired_detected) / m,
        goodness_index=goodness_index(ground, detected, pairing),
        positional_error=positional_error(ground, detected, pairing) if p else None,
        orientation_error=orientation_error(ground, detected, pairing) if p else None,
    )


@dataclass
class ExtractorReport:
    """Per-condition mean and s.d. of each metric, plus bookkeeping."""

    rows: dict[str, dict[str, tuple[float, float, int]]]
    failures: list[dict]
    n_cases: int

    def to_dict(self) -> dict:
        return {
            "conditions": {
                cond: {k: {"mean": v[0], "sd": v[1], "n": v[2]} for k, v in metrics.items()}
                for cond, metrics in self.rows.items()
            },
            "failures": self.failures,
            "n_cases": self.n_cases,
        }


def _mean_sd(values: Sequence[float]) -> tuple[float, float, int]:
    if not values:
        return (math.nan, math.nan, 0)
    arr = np.asarray(values, dtype=np.float64)
    return (float(arr.mean()), float(arr.std()), int(arr.size))


def extractor_report(
    cases: Iterable[tuple[MinutiaeSet, MinutiaeSet, CaptureCondition | str]],
    delta: float = DEFAULT_DELTA,
) -> ExtractorReport:
    """Aggregate case metrics per capture condition.

    A case whose metric cannot be computed (for instance the error metrics
    when nothing pairs) is left out of that metric's aggregate and listed in
    ``failures``; its other metrics still count.
    """
    per_cond: dict[str, dict[str, list[float]]] = {}
    failures: list[dict] = []
    n = 0
    for idx, (ground, detected, cond) in enumerate(cases):
        n += 1
        label = CaptureCondition.parse(cond).value if cond is not None else "Unlabelled"
        bucket = per_cond.setdefault(label, {k: [] for k, _ in METRIC_ROWS})
        try:
            cm = case_metrics(ground, detected, delta)
        except (DataError, ValueError) as exc:
            failures.append({"case": idx, "condition": label, "metric": "*", "error": str(exc)})
            continue
        for key, _ in METRIC_ROWS:
            v = getattr(cm, key)
            if v is None:
                failures.append({"case": idx, "condition": label, "metric": key, "error": "no paired minutiae"})
            else:
                bucket[key].append(v)
    order = {c.value: i for i, c in enumerate(CaptureCondition)}
    rows = {
        cond: {k: _mean_sd(vals) for k, vals in per_cond[cond].items()}
        for cond in sorted(per_cond, key=lambda c: (order.get(c, len(order)), c))
    }
    return ExtractorReport(rows, failures, n)
