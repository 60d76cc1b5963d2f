"""Deterministic synthetic fingerprint-like data for tests and demos.

Templates are random minutiae with a minimum spacing.  Impressions under
each capture condition are derived from a finger's master template through
the perturbation operators; images are smooth oriented ridge patterns with
condition-specific degradations (contrast, blur, brightness, noise).  None
of this imitates real sensor physics.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import CaptureCondition, DataError, MinutiaeSet
from .io import save_image, save_template
from .perturb import add_remove, displace, nonlinear_distort, occlude_block, rotate_global

C = CaptureCondition


def random_template(rng: np.random.Generator, n: int, width: int = 388, height: int = 374,
                    min_dist: float = 16.0, margin: float = 20.0) -> MinutiaeSet:
    """``n`` minutiae on integer pixels, pairwise at least ``min_dist`` apart."""
    pts: list[tuple[float, float, float]] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 200 * n:
            raise DataError(f"could not place {n} minutiae with spacing {min_dist}")
        x = float(rng.integers(int(margin), int(width - margin)))
        y = float(rng.integers(int(margin), int(height - margin)))
        if all((x - a) ** 2 + (y - b) ** 2 >= min_dist ** 2 for a, b, _ in pts):
            pts.append((x, y, float(rng.uniform(0.0, 2.0 * math.pi))))
    arr = np.array(pts)
    return MinutiaeSet.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], width, height)


def _capacity(width: int, height: int, min_dist: float = 16.0, margin: float = 20.0) -> int:
    # loose packing bound so rejection sampling terminates quickly
    area = max(width - 2 * margin, 0) * max(height - 2 * margin, 0)
    return max(1, int(area / (2.5 * min_dist ** 2)))


def _in_bounds(s: MinutiaeSet) -> MinutiaeSet:
    keep = [m for m in s if 0 <= round(m.x) < s.width and 0 <= round(m.y) < s.height]
    return s.replace(keep, strict=True)


def condition_template(master: MinutiaeSet, cond: CaptureCondition, rng: np.random.Generator) -> MinutiaeSet:
    """An impression of ``master`` as captured under ``cond``."""
    s = rotate_global(master, float(rng.uniform(-3.0, 3.0)))
    s = _in_bounds(s)
    n = len(s)
    if cond is C.NORMAL:
        s = displace(s, 1.0, 0.03, rng)
    elif cond is C.DRY_FINGER:
        s = add_remove(s, 4, n // 5, rng)
        s = displace(s, 2.0, 0.08, rng)
    elif cond is C.WET_FINGER:
        s = occlude_block(s, 96, rng)[0]
        s = displace(s, 1.5, 0.05, rng)
    elif cond is C.LOW_PRESSURE:
        s = add_remove(s, 0, int(0.3 * n), rng)
        s = displace(s, 1.5, 0.05, rng)
    elif cond is C.HIGH_PRESSURE:
        s = _in_bounds(nonlinear_distort(s, 3.0, rng))
        s = displace(s, 1.0, 0.05, rng)
    elif cond is C.BRIGHT_LIGHTING:
        s = add_remove(s, 0, n // 10, rng)
        s = displace(s, 1.5, 0.05, rng)
    else:
        s = add_remove(s, 2, int(0.15 * n), rng)
        s = displace(s, 1.5, 0.05, rng)
    return _in_bounds(s)


def ridge_image(rng: np.random.Generator, width: int, height: int, period: float,
                base_angle: float, bend: float) -> np.ndarray:
    """Float ridge pattern in [-1, 1] inside an elliptical finger mask (NaN outside)."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ph1, ph2 = rng.uniform(0, 2 * math.pi, size=2)
    angle = base_angle + bend * np.sin(xx / 90.0 + ph1) * np.cos(yy / 110.0 + ph2)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    ridges = np.cos(2 * math.pi * u / period)
    cx, cy = width / 2, height / 2
    inside = ((xx - cx) / (0.45 * width)) ** 2 + ((yy - cy) / (0.48 * height)) ** 2 <= 1.0
    return np.where(inside, ridges, np.nan)


def condition_image(pattern: np.ndarray, cond: CaptureCondition, rng: np.random.Generator) -> np.ndarray:
    inside = ~np.isnan(pattern)
    r = np.nan_to_num(pattern)
    mean, amp, noise, blur = 128.0, 90.0, 6.0, 0.0
    if cond is C.DRY_FINGER:
        amp, noise = 50.0, 18.0
        blotches = ndimage.gaussian_filter(rng.normal(size=r.shape), 6.0)
        r = np.where(blotches > 0.05, r, 0.3 * r)
    elif cond is C.WET_FINGER:
        mean, blur, amp = 90.0, 2.0, 70.0
    elif cond is C.LOW_PRESSURE:
        amp, noise = 35.0, 14.0
    elif cond is C.HIGH_PRESSURE:
        mean, amp = 100.0, 110.0
        r = np.clip(1.6 * r + 0.4, -1.0, 1.0)
    elif cond is C.BRIGHT_LIGHTING:
        mean, amp = 190.0, 45.0
    elif cond is C.DARK_LIGHTING:
        mean, amp = 60.0, 45.0
    img = mean + amp * r
    if blur:
        img = ndimage.gaussian_filter(img, blur)
    img = img + rng.normal(0.0, noise, size=img.shape)
    img = np.where(inside, img, 255.0)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate_dataset(out_dir: str | Path, n_fingers: int = 20, seed: int = 0,
                     width: int = 320, height: int = 320, readers: tuple[str, ...] = ("optical",),
                     conditions: tuple[CaptureCondition, ...] = tuple(CaptureCondition)) -> dict[str, Path]:
    """Write images, templates and one manifest per evaluation kind.

    Returns the manifest paths keyed by kind (``blackbox``, ``reader``,
    ``matcher``).  Output is a pure function of the arguments.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "templates").mkdir(parents=True, exist_ok=True)
    records = []
    for reader_idx, reader in enumerate(readers):
        for f in range(n_fingers):
            frng = np.random.default_rng([seed, reader_idx, f])
            n = min(int(frng.integers(25, 41)), _capacity(width, height))
            master = random_template(frng, n, width, height)
            pattern = ridge_image(frng, width, height, float(frng.uniform(8.0, 11.0)),
                                  float(frng.uniform(0, math.pi)), float(frng.uniform(0.2, 0.6)))
            finger = f"f{f:03d}"
            for ci, cond in enumerate(conditions):
                crng = np.random.default_rng([seed, reader_idx, f, 1000 + ci])
                rid = f"{reader}_{finger}_{cond.value}"
                tpl_rel = f"templates/{rid}.txt"
                img_rel = f"images/{rid}.png"
                save_template(condition_template(master, cond, crng), out / tpl_rel)
                save_image(condition_image(pattern, cond, crng), out / img_rel)
                records.append({
                    "id": rid,
                    "finger": finger,
                    "impression": 1,
                    "reader": reader,
                    "condition": cond.value,
                    "image": img_rel,
                    "template": tpl_rel,
                })
    manifests = {}
    for kind in ("blackbox", "reader", "matcher"):
        recs = records
        if kind == "matcher":
            recs = [r for r in records if r["condition"] == C.NORMAL.value]
        doc = {
            "kind": kind,
            "dataset_root": ".",
            "output_dir": f"out_{kind}",
            "seed": seed,
            "far": 0.001,
            "records": recs,
            "systems": [{"name": "baseline", "type": "baseline", "role": "matcher"}] if kind != "reader" else [],
        }
        p = out / f"manifest_{kind}.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifests[kind] = p
    return manifests
