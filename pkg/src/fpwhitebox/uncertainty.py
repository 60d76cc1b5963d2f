"""Monte Carlo sensitivity of a module to controlled perturbations.

For each reference feature set ``S_k`` and its ``N`` perturbed versions, a
module-specific scorer produces ``s_{k,n}``.  Scores are min-max normalised
to [0, 1]; the per-reference standard uncertainty is the population RMS
deviation about the reference mean, and the total uncertainty is the RMS of
the per-reference values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

R = TypeVar("R")
P = TypeVar("P")

GI_RANGE = (-3.0, 1.0)


def normalize_scores(scores: Sequence[float], lo: float, hi: float) -> np.ndarray:
    """Min-max normalise to [0, 1], clamping values outside ``[lo, hi]``."""
    if not hi > lo:
        raise ValueError(f"normalisation bounds need max > min, got ({lo}, {hi})")
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def count_clamped(scores: Sequence[float], lo: float, hi: float) -> int:
    s = np.asarray(scores, dtype=np.float64)
    return int(np.count_nonzero((s < lo) | (s > hi)))


def gi_to_unit(gi: float) -> float:
    """Affine map of a Goodness Index from [-3, 1] onto [0, 1]."""
    return (gi - GI_RANGE[0]) / (GI_RANGE[1] - GI_RANGE[0])


def standard_uncertainty(scores: Sequence[float]) -> tuple[float, float]:
    """Mean and divide-by-N RMS deviation of normalised scores."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("standard uncertainty needs at least one score")
    if np.all(s == s[0]):
        # exact zero rather than rounding noise from the mean
        return float(s[0]), 0.0
    mu = float(s.mean())
    return mu, math.sqrt(float(np.mean((mu - s) ** 2)))


def total_uncertainty(u: Sequence[float]) -> float:
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ValueError("total uncertainty needs at least one reference")
    if np.any(u < 0):
        raise ValueError("standard uncertainties must be non-negative")
    return math.sqrt(float(np.mean(u * u)))


@dataclass
class UncertaintyReport:
    mu: list[float]
    u: list[float]
    u_total: float
    bounds: tuple[float, float]
    n_perturbations: list[int]
    clamped: int = 0
    labels: list[str] = field(default_factory=list)

    @property
    def n_references(self) -> int:
        return len(self.u)

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "clamped": self.clamped,
            "labels": list(self.labels),
            "mu": list(self.mu),
            "n_perturbations": list(self.n_perturbations),
            "n_references": self.n_references,
            "u": list(self.u),
            "u_total": self.u_total,
        }


class ScorerError(RuntimeError):
    def __init__(self, k: int, n: int, cause: BaseException):
        super().__init__(f"scorer failed on reference {k}, perturbation {n}: {cause}")
        self.k, self.n, self.cause = k, n, cause


def uncertainty_from_scores(
    raw: Sequence[Sequence[float]],
    bounds: tuple[float, float],
    labels: Sequence[str] | None = None,
) -> UncertaintyReport:
    """Assemble a report from raw (un-normalised) scores, one list per reference."""
    if not raw:
        raise ValueError("need at least one reference")
    lo, hi = bounds
    mu, u, ns, clamped = [], [], [], 0
    for k, row in enumerate(raw):
        if len(row) == 0:
            raise ValueError(f"reference {k} has no perturbed counterparts")
        clamped += count_clamped(row, lo, hi)
        m, uk = standard_uncertainty(normalize_scores(row, lo, hi))
        mu.append(m)
        u.append(uk)
        ns.append(len(row))
    return UncertaintyReport(
        mu=mu,
        u=u,
        u_total=total_uncertainty(u),
        bounds=(float(lo), float(hi)),
        n_perturbations=ns,
        clamped=clamped,
        labels=list(labels) if labels is not None else [],
    )


def run_uncertainty(
    references: Sequence[R],
    perturbed: Sequence[Sequence[P]],
    scorer: Callable[[R, P], float],
    bounds: tuple[float, float] = (0.0, 1.0),
    labels: Sequence[str] | None = None,
) -> UncertaintyReport:
    """Score every (reference, perturbed) couple and aggregate the uncertainty.

    Raises :class:`ScorerError` naming the failing couple if the scorer raises.
    """
    if len(references) != len(perturbed):
        raise ValueError("one perturbed list is required per reference")
    raw: list[list[float]] = []
    for k, (ref, perts) in enumerate(zip(references, perturbed)):
        row = []
        for n, pert in enumerate(perts):
            try:
                row.append(float(scorer(ref, pert)))
            except Exception as exc:
                raise ScorerError(k, n, exc) from exc
        raw.append(row)
    return uncertainty_from_scores(raw, bounds, labels)
