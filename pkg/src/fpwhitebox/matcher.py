"""Baseline minutiae matcher and the subprocess adapter for external systems.

The baseline matcher works in four stages:

1. a descriptor per minutia from its K nearest neighbours (distance, radial
   angle relative to the minutia direction, orientation difference), all
   invariant to rotation and translation;
2. the lowest-cost descriptor correspondences seed rigid alignment
   hypotheses, each implying a rotation and a translation;
3. under each hypothesis minutiae are paired greedily within a distance
   and orientation tolerance, then the transform is refined once by least
   squares on those pairs;
4. the score is ``2 * pairs / (|A| + |B|)`` for the best hypothesis, taking
   the better of the A-onto-B and B-onto-A searches so it is symmetric.

Hypotheses implying a rotation beyond ``max_rotation`` are discarded, as
in matchers that bound the rotation search range.
"""
from __future__ import annotations

import logging
import math
import os
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import DataError, MinutiaeSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatcherConfig:
    neighbors: int = 5
    dist_tol: float = 12.0
    angle_tol: float = math.pi / 6
    hypotheses: int = 20
    max_rotation: float = math.radians(12.0)


@dataclass(frozen=True)
class MatchScore:
    value: float
    pairs: int
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)


def _wrap_pi(a: np.ndarray) -> np.ndarray:
    return a - 2.0 * math.pi * np.floor((a + math.pi) / (2.0 * math.pi))


def _as_array(s: MinutiaeSet) -> np.ndarray:
    if len(s) == 0:
        return np.zeros((0, 3))
    return np.column_stack([s.xy, s.theta])


def local_descriptors(pts: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """``(n, k, 3)`` neighbour descriptors and the valid-row count per minutia."""
    n = pts.shape[0]
    kk = min(k, max(n - 1, 0))
    desc = np.zeros((n, max(k, 1), 3))
    counts = np.full(n, kk, dtype=np.int64)
    if kk == 0:
        return desc, counts
    dx = pts[None, :, 0] - pts[:, None, 0]
    dy = pts[None, :, 1] - pts[:, None, 1]
    d = np.hypot(dx, dy)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :kk]
    rows = np.arange(n)[:, None]
    desc[:, :kk, 0] = d[rows, nn]
    desc[:, :kk, 1] = _wrap_pi(np.arctan2(dy[rows, nn], dx[rows, nn]) - pts[:, None, 2])
    desc[:, :kk, 2] = _wrap_pi(pts[nn, 2] - pts[:, None, 2])
    return desc, counts


def alignment_hypotheses(a: np.ndarray, b: np.ndarray, cfg: MatcherConfig) -> np.ndarray:
    """Rigid ``(rot, tx, ty)`` candidates mapping ``a`` onto ``b``."""
    da, na = local_descriptors(a, cfg.neighbors)
    db, nb = local_descriptors(b, cfg.neighbors)
    cost = kernels.descriptor_costs(da, db, na, nb, cfg.dist_tol, cfg.angle_tol)
    rot = _wrap_pi(b[None, :, 2] - a[:, None, 2])
    ii, jj = np.nonzero(np.abs(rot) <= cfg.max_rotation)
    order = np.lexsort((jj, ii, cost[ii, jj]))[: cfg.hypotheses]
    ii, jj = ii[order], jj[order]
    r = rot[ii, jj]
    c, s = np.cos(r), np.sin(r)
    tx = b[jj, 0] - (c * a[ii, 0] - s * a[ii, 1])
    ty = b[jj, 1] - (s * a[ii, 0] + c * a[ii, 1])
    return np.column_stack([r, tx, ty])


def match(a: MinutiaeSet, b: MinutiaeSet, config: MatcherConfig | None = None) -> MatchScore:
    """Similarity in [0, 1] between two templates (1 when every minutia pairs)."""
    cfg = config or MatcherConfig()
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return MatchScore(0.0, 0)
    pa, pb = _as_array(a), _as_array(b)
    count, h = _search(pa, pb, cfg)
    back, hb = _search(pb, pa, cfg)
    if back > count:
        # express the B-onto-A winner as a transform of A onto B
        c, s = math.cos(hb[0]), math.sin(hb[0])
        count, h = back, np.array([-hb[0], -(c * hb[1] + s * hb[2]), s * hb[1] - c * hb[2]])
    return MatchScore(2.0 * count / (n + m), count, float(h[0]), (float(h[1]), float(h[2])))


def _search(pa: np.ndarray, pb: np.ndarray, cfg: MatcherConfig) -> tuple[int, np.ndarray]:
    hyps = alignment_hypotheses(pa, pb, cfg)
    if hyps.shape[0] == 0:
        return 0, np.zeros(3)
    return kernels.best_alignment(pa, pb, hyps, cfg.dist_tol, cfg.angle_tol, cfg.max_rotation)


def match_score(a: MinutiaeSet, b: MinutiaeSet, config: MatcherConfig | None = None) -> float:
    return match(a, b, config).value


# ---------------------------------------------------------------- external systems


class ExternalFailure(Exception):
    """An external system invocation that produced no usable score."""

    def __init__(self, cause: str, detail: str = ""):
        super().__init__(f"{cause}: {detail}" if detail else cause)
        self.cause = cause
        self.detail = detail


@dataclass(frozen=True)
class ExternalSystem:
    executable: str
    score_range: tuple[float, float] = (0.0, 1.0)
    timeout: float = 30.0
    role: str = "matcher"
    name: str = ""

    def __post_init__(self) -> None:
        lo, hi = self.score_range
        if not hi > lo:
            raise DataError(f"declared score range needs max > min, got {self.score_range}")
        if self.role not in ("matcher", "extractor", "quality"):
            raise DataError(f"unknown external role {self.role!r}")


@dataclass(frozen=True)
class ExternalResult:
    score: float | None
    raw: float | None = None
    clamped: bool = False
    failure: str | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.failure is None


def _invoke(system: ExternalSystem, args: Sequence[str]) -> subprocess.CompletedProcess:
    try:
        proc = subprocess.run(
            [system.executable, *args],
            capture_output=True,
            timeout=system.timeout,
            check=False,
        )
    except subprocess.TimeoutExpired as exc:
        raise ExternalFailure("timeout", f"exceeded {system.timeout}s") from exc
    except OSError as exc:
        raise ExternalFailure("launch", str(exc)) from exc
    if proc.returncode != 0:
        raise ExternalFailure("exit", f"exit code {proc.returncode}")
    return proc


def parse_score_output(stdout: bytes) -> float:
    """Parse one ASCII decimal, optionally padded with whitespace."""
    try:
        text = stdout.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise ExternalFailure("parse", "non-ASCII output") from exc
    if not text or "\n" in text:
        raise ExternalFailure("parse", f"expected a single number, got {text!r}")
    try:
        value = float(text)
    except ValueError as exc:
        raise ExternalFailure("parse", f"not a decimal number: {text!r}") from exc
    if not math.isfinite(value):
        raise ExternalFailure("parse", f"non-finite score {text!r}")
    return value


def _scored(system: ExternalSystem, args: Sequence[str]) -> ExternalResult:
    try:
        raw = parse_score_output(_invoke(system, args).stdout)
    except ExternalFailure as exc:
        return ExternalResult(None, failure=exc.cause, detail=exc.detail)
    lo, hi = system.score_range
    score = min(max(raw, lo), hi)
    return ExternalResult(score, raw, clamped=score != raw)


def match_external(system: ExternalSystem, a_path: str | os.PathLike, b_path: str | os.PathLike) -> ExternalResult:
    """Run ``<exe> <templateA> <templateB>`` and read the score from stdout."""
    return _scored(system, [str(a_path), str(b_path)])


def quality_external(system: ExternalSystem, image_path: str | os.PathLike) -> ExternalResult:
    """Run ``<exe> <image>`` and read the quality score from stdout."""
    return _scored(system, [str(image_path)])


def extract_external(system: ExternalSystem, image_path: str | os.PathLike,
                     out_path: str | os.PathLike) -> ExternalResult:
    """Run ``<exe> <image> <out_template>``; success means exit 0 and a template written.

    The returned ``score`` is unused (``None``) on success.
    """
    try:
        _invoke(system, [str(image_path), str(out_path)])
    except ExternalFailure as exc:
        return ExternalResult(None, failure=exc.cause, detail=exc.detail)
    if not Path(out_path).is_file():
        return ExternalResult(None, failure="output", detail="no template written")
    return ExternalResult(None)


@dataclass
class FailureLog:
    """Counts external invocations and failures per system."""

    calls: dict[str, int] = field(default_factory=dict)
    failures: dict[str, list[dict]] = field(default_factory=dict)
    clamped: dict[str, int] = field(default_factory=dict)

    def record(self, system: str, result: ExternalResult, context: dict) -> None:
        self.calls[system] = self.calls.get(system, 0) + 1
        self.failures.setdefault(system, [])
        self.clamped.setdefault(system, 0)
        if not result.ok:
            self.failures[system].append({**context, "cause": result.failure, "detail": result.detail})
        elif result.clamped:
            self.clamped[system] += 1

    def rate(self, system: str) -> float:
        calls = self.calls.get(system, 0)
        return len(self.failures.get(system, [])) / calls if calls else 0.0

    def exceeded(self, limit: float = 0.10) -> list[str]:
        return sorted(s for s in self.calls if self.rate(s) > limit)

    def to_dict(self) -> dict:
        return {
            s: {
                "calls": self.calls[s],
                "clamped": self.clamped.get(s, 0),
                "failed": len(self.failures.get(s, [])),
                "failures": self.failures.get(s, []),
            }
            for s in sorted(self.calls)
        }


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(fn, items: Sequence, jobs: int | None = None) -> list:
    """Order-preserving map over a bounded thread pool."""
    jobs = jobs or default_jobs()
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
