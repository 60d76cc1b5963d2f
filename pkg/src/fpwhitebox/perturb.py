"""Minutiae-set perturbations used to probe matcher sensitivity.

Every operator takes an explicit ``numpy.random.Generator`` (or a seed) and
never touches global RNG state.  A zero-magnitude parameter returns the
input set unchanged.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import DataError, Minutia, MinutiaeSet, wrap_angle, wrap_angles

RngLike = np.random.Generator | int | None


def _rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _rebuild(s: MinutiaeSet, xy: np.ndarray, theta: np.ndarray, strict: bool) -> MinutiaeSet:
    quality = [m.quality for m in s]
    items = tuple(
        Minutia(float(x), float(y), float(t), q)
        for (x, y), t, q in zip(xy.tolist(), theta.tolist(), quality)
    )
    return s.replace(items, strict=strict)


def rotate_global(s: MinutiaeSet, degrees: float) -> MinutiaeSet:
    """Rotate all minutiae about the image centre by ``degrees``.

    Positive angles turn +x toward +y (clockwise on screen, since y points
    down).  Points pushed outside the image are kept; the result is a
    non-strict set whose :attr:`~MinutiaeSet.out_of_bounds` flags them.
    """
    if not abs(degrees) <= 180.0:
        raise ValueError(f"|degrees| must be <= 180, got {degrees}")
    if degrees == 0 or len(s) == 0:
        return s
    a = math.radians(degrees)
    c, si = math.cos(a), math.sin(a)
    cx, cy = s.width / 2.0, s.height / 2.0
    xy = s.xy
    dx, dy = xy[:, 0] - cx, xy[:, 1] - cy
    out = np.stack([cx + c * dx - si * dy, cy + si * dx + c * dy], axis=1)
    return _rebuild(s, out, wrap_angles(s.theta + a), strict=False)


def occlude_block(s: MinutiaeSet, side: float, rng: RngLike = None) -> tuple[MinutiaeSet, tuple[int, int, int]]:
    """Remove every minutia inside a randomly placed ``side``×``side`` box.

    The box covers ``[x0, x0 + side) × [y0, y0 + side)`` with its top-left
    corner drawn uniformly from the integer positions that keep it inside
    the image (0 along an axis the box does not fit).  Returns the new set
    and ``(x0, y0, side)``.
    """
    if not 0 <= side <= max(s.width, s.height):
        raise ValueError(f"box side must lie in [0, {max(s.width, s.height)}], got {side}")
    if side == 0:
        return s, (0, 0, 0)
    g = _rng(rng)
    x0 = int(g.integers(0, max(s.width - side, 0) + 1))
    y0 = int(g.integers(0, max(s.height - side, 0) + 1))
    kept = tuple(
        m for m in s if not (x0 <= m.x < x0 + side and y0 <= m.y < y0 + side)
    )
    return s.replace(kept), (x0, y0, int(side))


def displace(s: MinutiaeSet, sigma_xy: float, sigma_theta: float, rng: RngLike = None) -> MinutiaeSet:
    """Independent Gaussian jitter on x, y and θ; positions clamped into the image."""
    if sigma_xy < 0 or sigma_theta < 0:
        raise ValueError("sigmas must be non-negative")
    if (sigma_xy == 0 and sigma_theta == 0) or len(s) == 0:
        return s
    g = _rng(rng)
    xy = s.xy + g.normal(0.0, sigma_xy, size=(len(s), 2)) if sigma_xy > 0 else s.xy
    theta = s.theta + g.normal(0.0, sigma_theta, size=len(s)) if sigma_theta > 0 else s.theta
    if sigma_xy > 0:
        xy[:, 0] = np.clip(xy[:, 0], 0.0, s.width - 1)
        xy[:, 1] = np.clip(xy[:, 1], 0.0, s.height - 1)
    return _rebuild(s, xy, wrap_angles(theta), strict=s.strict)


def add_remove(s: MinutiaeSet, n_add: int, n_remove: int, rng: RngLike = None) -> MinutiaeSet:
    """Delete ``n_remove`` random minutiae, then append ``n_add`` uniform ones."""
    if n_add < 0 or n_remove < 0:
        raise ValueError("counts must be non-negative")
    if n_remove > len(s):
        raise ValueError(f"cannot remove {n_remove} of {len(s)} minutiae")
    if n_add == 0 and n_remove == 0:
        return s
    g = _rng(rng)
    drop = set(g.choice(len(s), size=n_remove, replace=False).tolist()) if n_remove else set()
    kept = [m for i, m in enumerate(s) if i not in drop]
    if n_add:
        xs = g.uniform(0.0, s.width, size=n_add)
        ys = g.uniform(0.0, s.height, size=n_add)
        ts = g.uniform(0.0, 2.0 * math.pi, size=n_add)
        kept.extend(Minutia(float(x), float(y), float(t)) for x, y, t in zip(xs, ys, ts))
    return s.replace(kept)


# ---------------------------------------------------------------- thin-plate spline


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r, written in terms of r^2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


@dataclass(frozen=True)
class ThinPlateSpline:
    """2-D interpolating thin-plate spline from ``src`` control points onto ``dst``."""

    src: np.ndarray
    weights: np.ndarray  # (n, 2)
    affine: np.ndarray   # (3, 2): rows for 1, x, y

    @classmethod
    def fit(cls, src: np.ndarray, dst: np.ndarray) -> "ThinPlateSpline":
        src = np.asarray(src, dtype=np.float64)
        dst = np.asarray(dst, dtype=np.float64)
        n = src.shape[0]
        k = _tps_kernel(((src[:, None, :] - src[None, :, :]) ** 2).sum(axis=2))
        p = np.hstack([np.ones((n, 1)), src])
        a = np.zeros((n + 3, n + 3))
        a[:n, :n] = k
        a[:n, n:] = p
        a[n:, :n] = p.T
        rhs = np.zeros((n + 3, 2))
        rhs[:n] = dst
        sol = np.linalg.solve(a, rhs)
        return cls(src, sol[:n], sol[n:])

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        r2 = ((pts[:, None, :] - self.src[None, :, :]) ** 2).sum(axis=2)
        return _tps_kernel(r2) @ self.weights + self.affine[0] + pts @ self.affine[1:]

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        """``(m, 2, 2)`` Jacobians ``d(out_i)/d(in_j)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        diff = pts[:, None, :] - self.src[None, :, :]
        r2 = (diff ** 2).sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(r2 > 0, np.log(r2) + 1.0, 0.0)  # dU/dx_j = (x_j - c_j)(2 log r + 1)
        jac = np.einsum("mn,mnj,ni->mij", g, diff, self.weights)
        return jac + self.affine[1:].T[None, :, :]


def nonlinear_distort(s: MinutiaeSet, magnitude: float, rng: RngLike = None,
                      grid: int = 4) -> MinutiaeSet:
    """Warp positions through a random thin-plate spline.

    A ``grid``×``grid`` lattice of control points spanning the image is
    jittered with iid Gaussian noise of standard deviation ``magnitude``
    pixels.  Each θ turns by the rotation part of the local Jacobian.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    if magnitude == 0 or len(s) == 0:
        return s
    g = _rng(rng)
    gx, gy = np.meshgrid(np.linspace(0, s.width - 1, grid), np.linspace(0, s.height - 1, grid))
    src = np.stack([gx.ravel(), gy.ravel()], axis=1)
    dst = src + g.normal(0.0, magnitude, size=src.shape)
    tps = ThinPlateSpline.fit(src, dst)
    xy = s.xy
    out = tps(xy)
    jac = tps.jacobian(xy)
    rot = np.arctan2(jac[:, 1, 0] - jac[:, 0, 1], jac[:, 0, 0] + jac[:, 1, 1])
    return _rebuild(s, out, wrap_angles(s.theta + rot), strict=False)


# ---------------------------------------------------------------- specs


class PerturbationKind(str, enum.Enum):
    DISPLACE = "Displace"
    ADD_SPURIOUS = "AddSpurious"
    REMOVE_RANDOM = "RemoveRandom"
    OCCLUDE_BLOCK = "OccludeBlock"
    ROTATE_GLOBAL = "RotateGlobal"
    NONLINEAR_DISTORT = "NonlinearDistort"


_PARAMS = {
    PerturbationKind.DISPLACE: ("sigma_xy", "sigma_theta"),
    PerturbationKind.ADD_SPURIOUS: ("count",),
    PerturbationKind.REMOVE_RANDOM: ("count",),
    PerturbationKind.OCCLUDE_BLOCK: ("side",),
    PerturbationKind.ROTATE_GLOBAL: ("angle",),
    PerturbationKind.NONLINEAR_DISTORT: ("magnitude",),
}

FAMILY_NAMES = {
    PerturbationKind.DISPLACE: "Displacement",
    PerturbationKind.ADD_SPURIOUS: "Spurious Addition",
    PerturbationKind.REMOVE_RANDOM: "Random Removal",
    PerturbationKind.OCCLUDE_BLOCK: "Occlusion",
    PerturbationKind.ROTATE_GLOBAL: "Global Rotation",
    PerturbationKind.NONLINEAR_DISTORT: "Nonlinear Distortion",
}


@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation arm: a kind, its parameters, and an optional seed.

    ``RotateGlobal`` with ``random_sign`` draws the sign of ``angle`` per
    application, so both turning directions get exercised.
    """

    kind: PerturbationKind
    params: dict[str, float] = field(default_factory=dict)
    seed: int | None = None
    random_sign: bool = False

    def __post_init__(self) -> None:
        kind = PerturbationKind(self.kind)
        object.__setattr__(self, "kind", kind)
        params = {k: float(v) for k, v in dict(self.params).items()}
        expected = _PARAMS[kind]
        unknown = set(params) - set(expected)
        if unknown:
            raise DataError(f"{kind.value}: unknown parameter(s) {sorted(unknown)}")
        for name in expected:
            params.setdefault(name, 0.0)
            if kind is not PerturbationKind.ROTATE_GLOBAL and params[name] < 0:
                raise DataError(f"{kind.value}: {name} must be non-negative")
        if kind is PerturbationKind.ROTATE_GLOBAL and abs(params["angle"]) > 180:
            raise DataError("rotation angle must lie in [-180, 180]")
        object.__setattr__(self, "params", params)

    @property
    def family(self) -> str:
        return FAMILY_NAMES[self.kind]

    @property
    def magnitude(self) -> float:
        return abs(self.params[_PARAMS[self.kind][0]])

    @property
    def label(self) -> str:
        if self.kind is PerturbationKind.OCCLUDE_BLOCK:
            side = int(self.params["side"])
            return f"{side}x{side}"
        if self.kind is PerturbationKind.ROTATE_GLOBAL:
            a = self.params["angle"]
            return f"{'+-' if self.random_sign else ''}{a:g}deg"
        return ",".join(f"{k}={v:g}" for k, v in self.params.items())

    def apply(self, s: MinutiaeSet, rng: RngLike = None) -> MinutiaeSet:
        g = _rng(self.seed if rng is None else rng)
        p = self.params
        k = self.kind
        if k is PerturbationKind.DISPLACE:
            return displace(s, p["sigma_xy"], p["sigma_theta"], g)
        if k is PerturbationKind.ADD_SPURIOUS:
            return add_remove(s, int(p["count"]), 0, g)
        if k is PerturbationKind.REMOVE_RANDOM:
            return add_remove(s, 0, int(p["count"]), g)
        if k is PerturbationKind.OCCLUDE_BLOCK:
            side = min(p["side"], max(s.width, s.height))
            return occlude_block(s, side, g)[0]
        if k is PerturbationKind.ROTATE_GLOBAL:
            angle = p["angle"]
            if self.random_sign and angle != 0:
                angle = angle if g.integers(0, 2) == 0 else -angle
            return rotate_global(s, angle)
        return nonlinear_distort(s, p["magnitude"], g)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, **self.params}
        if self.seed is not None:
            out["seed"] = self.seed
        if self.random_sign:
            out["random_sign"] = True
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PerturbationSpec":
        d = dict(d)
        try:
            kind = PerturbationKind(d.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad perturbation kind in {d!r}") from exc
        seed = d.pop("seed", None)
        random_sign = bool(d.pop("random_sign", False))
        nested = d.pop("params", None)
        if isinstance(nested, dict):
            d.update(nested)
        return cls(kind, d, seed, random_sign)


def table_ladder() -> list[PerturbationSpec]:
    """Default matcher arms: occlusion boxes 32..256 px and rotations 5..20 degrees."""
    arms = [PerturbationSpec(PerturbationKind.OCCLUDE_BLOCK, {"side": s}) for s in (32, 64, 128, 256)]
    arms += [
        PerturbationSpec(PerturbationKind.ROTATE_GLOBAL, {"angle": a}, random_sign=True)
        for a in (5, 10, 15, 20)
    ]
    return arms
