"""Hot inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``FPWHITEBOX_NO_NUMBA`` is unset (or ``0``).  Both paths implement
the same arithmetic in the same order so results agree bit-for-bit on the
integer outputs (pair counts, selections) and to rounding on the floats.

``set_backend("numpy")`` / ``set_backend("numba")`` switch at runtime; the
benchmark and the cross-backend tests rely on it.
"""
from __future__ import annotations

import logging
import math
import os

import numpy as np

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("FPWHITEBOX_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


_backend = "numba" if HAS_NUMBA and not _env_disabled() else "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


if HAS_NUMBA:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def njit(f):
        return f


# ---------------------------------------------------------------- greedy pairing


@njit
def _greedy_select_nb(ci, cj, n_i, n_j):
    used_i = np.zeros(n_i, dtype=np.bool_)
    used_j = np.zeros(n_j, dtype=np.bool_)
    keep = np.zeros(ci.shape[0], dtype=np.bool_)
    for k in range(ci.shape[0]):
        a = ci[k]
        b = cj[k]
        if not used_i[a] and not used_j[b]:
            used_i[a] = True
            used_j[b] = True
            keep[k] = True
    return keep


def _greedy_select_np(ci, cj, n_i, n_j):
    used_i = np.zeros(n_i, dtype=bool)
    used_j = np.zeros(n_j, dtype=bool)
    keep = np.zeros(ci.shape[0], dtype=bool)
    for k, (a, b) in enumerate(zip(ci.tolist(), cj.tolist())):
        if not used_i[a] and not used_j[b]:
            used_i[a] = used_j[b] = True
            keep[k] = True
    return keep


def greedy_select(ci: np.ndarray, cj: np.ndarray, n_i: int, n_j: int) -> np.ndarray:
    """One-to-one selection over candidates already sorted by priority."""
    ci = np.ascontiguousarray(ci, dtype=np.int64)
    cj = np.ascontiguousarray(cj, dtype=np.int64)
    if _backend == "numba":
        return _greedy_select_nb(ci, cj, n_i, n_j)
    return _greedy_select_np(ci, cj, n_i, n_j)


# ---------------------------------------------------------------- rigid alignment


@njit
def _wrap_pi_nb(a):
    return a - TWO_PI * math.floor((a + math.pi) / TWO_PI)


def _wrap_pi_np(a):
    return a - TWO_PI * np.floor((a + math.pi) / TWO_PI)


@njit
def _pair_under_nb(ax, ay, at, bx, by, bt, rot, tx, ty, dtol, atol, out_i, out_j):
    n = ax.shape[0]
    m = bx.shape[0]
    c = math.cos(rot)
    s = math.sin(rot)
    ci = np.empty(n * m, dtype=np.int64)
    cj = np.empty(n * m, dtype=np.int64)
    cd = np.empty(n * m, dtype=np.float64)
    k = 0
    for i in range(n):
        px = c * ax[i] - s * ay[i] + tx
        py = s * ax[i] + c * ay[i] + ty
        pt = at[i] + rot
        for j in range(m):
            dx = px - bx[j]
            dy = py - by[j]
            d = math.sqrt(dx * dx + dy * dy)
            if d <= dtol:
                if abs(_wrap_pi_nb(pt - bt[j])) <= atol:
                    ci[k] = i
                    cj[k] = j
                    cd[k] = d
                    k += 1
    order = np.argsort(cd[:k], kind="mergesort")
    used_i = np.zeros(n, dtype=np.bool_)
    used_j = np.zeros(m, dtype=np.bool_)
    count = 0
    for o in order:
        a = ci[o]
        b = cj[o]
        if not used_i[a] and not used_j[b]:
            used_i[a] = True
            used_j[b] = True
            out_i[count] = a
            out_j[count] = b
            count += 1
    return count


def _pair_under_np(ax, ay, at, bx, by, bt, rot, tx, ty, dtol, atol, out_i, out_j):
    c = math.cos(rot)
    s = math.sin(rot)
    px = c * ax - s * ay + tx
    py = s * ax + c * ay + ty
    pt = at + rot
    dx = px[:, None] - bx[None, :]
    dy = py[:, None] - by[None, :]
    d = np.sqrt(dx * dx + dy * dy)
    ok = d <= dtol
    ok &= np.abs(_wrap_pi_np(pt[:, None] - bt[None, :])) <= atol
    ci, cj = np.nonzero(ok)
    order = np.argsort(d[ci, cj], kind="mergesort")
    keep = _greedy_select_np(ci[order], cj[order], ax.shape[0], bx.shape[0])
    sel_i = ci[order][keep]
    sel_j = cj[order][keep]
    out_i[: sel_i.size] = sel_i
    out_j[: sel_j.size] = sel_j
    return int(sel_i.size)


@njit
def _procrustes_nb(ax, ay, bx, by, ii, jj, count):
    mx = 0.0
    my = 0.0
    nx = 0.0
    ny = 0.0
    for k in range(count):
        mx += ax[ii[k]]
        my += ay[ii[k]]
        nx += bx[jj[k]]
        ny += by[jj[k]]
    mx /= count
    my /= count
    nx /= count
    ny /= count
    sxx = 0.0
    sxy = 0.0
    for k in range(count):
        px = ax[ii[k]] - mx
        py = ay[ii[k]] - my
        qx = bx[jj[k]] - nx
        qy = by[jj[k]] - ny
        sxx += px * qx + py * qy
        sxy += px * qy - py * qx
    rot = math.atan2(sxy, sxx)
    c = math.cos(rot)
    s = math.sin(rot)
    return rot, nx - (c * mx - s * my), ny - (s * mx + c * my)


def _procrustes_np(ax, ay, bx, by, ii, jj, count):
    # left-to-right sums keep agreement with the compiled path
    pxs = ax[ii[:count]].tolist()
    pys = ay[ii[:count]].tolist()
    qxs = bx[jj[:count]].tolist()
    qys = by[jj[:count]].tolist()
    mx, my = sum(pxs) / count, sum(pys) / count
    nx, ny = sum(qxs) / count, sum(qys) / count
    sxx = 0.0
    sxy = 0.0
    for px, py, qx, qy in zip(pxs, pys, qxs, qys):
        px -= mx
        py -= my
        qx -= nx
        qy -= ny
        sxx += px * qx + py * qy
        sxy += px * qy - py * qx
    rot = math.atan2(sxy, sxx)
    c, s = math.cos(rot), math.sin(rot)
    return rot, nx - (c * mx - s * my), ny - (s * mx + c * my)


@njit
def _best_alignment_nb(ax, ay, at, bx, by, bt, hyps, dtol, atol, max_rot):
    n = ax.shape[0]
    m = bx.shape[0]
    cap = min(n, m)
    ii = np.empty(max(cap, 1), dtype=np.int64)
    jj = np.empty(max(cap, 1), dtype=np.int64)
    best = 0
    best_h = np.zeros(3)
    for h in range(hyps.shape[0]):
        rot = hyps[h, 0]
        tx = hyps[h, 1]
        ty = hyps[h, 2]
        if abs(rot) > max_rot:
            continue
        cnt = _pair_under_nb(ax, ay, at, bx, by, bt, rot, tx, ty, dtol, atol, ii, jj)
        if cnt >= 2:
            r2, tx2, ty2 = _procrustes_nb(ax, ay, bx, by, ii, jj, cnt)
            if abs(r2) <= max_rot:
                c2 = _pair_under_nb(ax, ay, at, bx, by, bt, r2, tx2, ty2, dtol, atol, ii, jj)
                if c2 > cnt:
                    cnt = c2
                    rot = r2
                    tx = tx2
                    ty = ty2
        if cnt > best:
            best = cnt
            best_h[0] = rot
            best_h[1] = tx
            best_h[2] = ty
    return best, best_h


def _best_alignment_np(ax, ay, at, bx, by, bt, hyps, dtol, atol, max_rot):
    cap = max(min(ax.shape[0], bx.shape[0]), 1)
    ii = np.empty(cap, dtype=np.int64)
    jj = np.empty(cap, dtype=np.int64)
    best = 0
    best_h = np.zeros(3)
    for rot, tx, ty in hyps.tolist():
        if abs(rot) > max_rot:
            continue
        cnt = _pair_under_np(ax, ay, at, bx, by, bt, rot, tx, ty, dtol, atol, ii, jj)
        if cnt >= 2:
            r2, tx2, ty2 = _procrustes_np(ax, ay, bx, by, ii, jj, cnt)
            if abs(r2) <= max_rot:
                c2 = _pair_under_np(ax, ay, at, bx, by, bt, r2, tx2, ty2, dtol, atol, ii, jj)
                if c2 > cnt:
                    cnt, rot, tx, ty = c2, r2, tx2, ty2
        if cnt > best:
            best = cnt
            best_h[:] = (rot, tx, ty)
    return best, best_h


def best_alignment(a: np.ndarray, b: np.ndarray, hyps: np.ndarray, dist_tol: float,
                   angle_tol: float, max_rotation: float) -> tuple[int, np.ndarray]:
    """Best pair count over rigid hypotheses ``(rot, tx, ty)`` mapping ``a`` onto ``b``.

    ``a`` and ``b`` are ``(n, 3)`` arrays of ``x, y, theta``.  Every hypothesis
    whose pairing has two or more pairs gets one least-squares refinement.
    Returns the count and the winning ``(rot, tx, ty)``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    hyps = np.ascontiguousarray(hyps, dtype=np.float64).reshape(-1, 3)
    args = (
        np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]), np.ascontiguousarray(a[:, 2]),
        np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]), np.ascontiguousarray(b[:, 2]),
        hyps, float(dist_tol), float(angle_tol), float(max_rotation),
    )
    if _backend == "numba":
        cnt, h = _best_alignment_nb(*args)
    else:
        cnt, h = _best_alignment_np(*args)
    return int(cnt), h


# ---------------------------------------------------------------- descriptor costs


@njit
def _descriptor_costs_nb(da, db, na, nb, dscale, ascale):
    n = da.shape[0]
    m = db.shape[0]
    out = np.ones((n, m))
    for i in range(n):
        for j in range(m):
            if na[i] == 0 or nb[j] == 0:
                continue
            fwd = 0.0
            for k in range(na[i]):
                best = 1.0
                for l in range(nb[j]):
                    c = (abs(da[i, k, 0] - db[j, l, 0]) / dscale
                         + abs(_wrap_pi_nb(da[i, k, 1] - db[j, l, 1])) / ascale
                         + abs(_wrap_pi_nb(da[i, k, 2] - db[j, l, 2])) / ascale)
                    if c < best:
                        best = c
                fwd += best
            bwd = 0.0
            for l in range(nb[j]):
                best = 1.0
                for k in range(na[i]):
                    c = (abs(da[i, k, 0] - db[j, l, 0]) / dscale
                         + abs(_wrap_pi_nb(da[i, k, 1] - db[j, l, 1])) / ascale
                         + abs(_wrap_pi_nb(da[i, k, 2] - db[j, l, 2])) / ascale)
                    if c < best:
                        best = c
                bwd += best
            out[i, j] = 0.5 * (fwd / na[i] + bwd / nb[j])
    return out


def _descriptor_costs_np(da, db, na, nb, dscale, ascale):
    n, m = da.shape[0], db.shape[0]
    out = np.ones((n, m))
    if n == 0 or m == 0:
        return out
    c = (np.abs(da[:, None, :, None, 0] - db[None, :, None, :, 0]) / dscale
         + np.abs(_wrap_pi_np(da[:, None, :, None, 1] - db[None, :, None, :, 1])) / ascale
         + np.abs(_wrap_pi_np(da[:, None, :, None, 2] - db[None, :, None, :, 2])) / ascale)
    ka = np.arange(da.shape[1])
    kb = np.arange(db.shape[1])
    valid = (ka[None, None, :, None] < na[:, None, None, None]) & (kb[None, None, None, :] < nb[None, :, None, None])
    c = np.where(valid, np.minimum(c, 1.0), 1.0)
    fwd_rows = c.min(axis=3)
    bwd_rows = c.min(axis=2)
    fwd = np.where(ka[None, None, :] < na[:, None, None], fwd_rows, 0.0).sum(axis=2)
    bwd = np.where(kb[None, None, :] < nb[None, :, None], bwd_rows, 0.0).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        cost = 0.5 * (fwd / na[:, None] + bwd / nb[None, :])
    empty = (na[:, None] == 0) | (nb[None, :] == 0)
    out[~empty] = cost[~empty]
    return out


def descriptor_costs(da: np.ndarray, db: np.ndarray, na: np.ndarray, nb: np.ndarray,
                     dist_scale: float, angle_scale: float) -> np.ndarray:
    """Symmetric neighbourhood dissimilarity between every descriptor pair.

    ``da`` is ``(n, K, 3)`` holding (distance, radial angle, orientation
    difference) per neighbour, with ``na[i]`` valid rows for minutia ``i``.
    Each neighbour contributes the cost of its best counterpart, capped at 1.
    """
    da = np.ascontiguousarray(da, dtype=np.float64)
    db = np.ascontiguousarray(db, dtype=np.float64)
    na = np.ascontiguousarray(na, dtype=np.int64)
    nb = np.ascontiguousarray(nb, dtype=np.int64)
    if _backend == "numba":
        return _descriptor_costs_nb(da, db, na, nb, float(dist_scale), float(angle_scale))
    return _descriptor_costs_np(da, db, na, nb, float(dist_scale), float(angle_scale))


# ---------------------------------------------------------------- ridge frequency


@njit
def _signature_frequency_nb(block, normal, min_count, max_dev):
    h, w = block.shape
    c = math.cos(normal)
    s = math.sin(normal)
    cy = 0.5 * (h - 1)
    cx = 0.5 * (w - 1)
    half = int(math.ceil(math.sqrt(cx * cx + cy * cy))) + 1
    nbins = 2 * half + 1
    sums = np.zeros(nbins)
    counts = np.zeros(nbins, dtype=np.int64)
    for r in range(h):
        for q in range(w):
            u = (q - cx) * c + (r - cy) * s
            k = int(math.floor(u + 0.5)) + half
            sums[k] += block[r, q]
            counts[k] += 1
    first = -1
    last = -1
    for k in range(nbins):
        if counts[k] >= min_count:
            if first < 0:
                first = k
            last = k
    if first < 0 or last - first < 4:
        return 0.0
    n = last - first + 1
    sig = np.empty(n)
    for k in range(n):
        if counts[first + k] >= min_count:
            sig[k] = sums[first + k] / counts[first + k]
        else:
            sig[k] = sig[k - 1]
    sm = np.empty(n)
    sm[0] = sig[0]
    sm[n - 1] = sig[n - 1]
    for k in range(1, n - 1):
        sm[k] = 0.25 * sig[k - 1] + 0.5 * sig[k] + 0.25 * sig[k + 1]
    mean = 0.0
    for k in range(n):
        mean += sm[k]
    mean /= n
    pos = np.empty(n)
    npk = 0
    for k in range(1, n - 1):
        if sm[k] > sm[k - 1] and sm[k] >= sm[k + 1] and sm[k] > mean:
            den = sm[k - 1] - 2.0 * sm[k] + sm[k + 1]
            off = 0.0
            if den < 0.0:
                off = 0.5 * (sm[k - 1] - sm[k + 1]) / den
            pos[npk] = k + off
            npk += 1
    if npk < 2 or pos[npk - 1] <= pos[0]:
        return 0.0
    spacing = (pos[npk - 1] - pos[0]) / (npk - 1)
    for k in range(1, npk):
        if abs(pos[k] - pos[k - 1] - spacing) > max_dev * spacing:
            return 0.0
    return 1.0 / spacing


def _signature_frequency_np(block, normal, min_count, max_dev):
    h, w = block.shape
    c, s = math.cos(normal), math.sin(normal)
    cy, cx = 0.5 * (h - 1), 0.5 * (w - 1)
    half = int(math.ceil(math.sqrt(cx * cx + cy * cy))) + 1
    nbins = 2 * half + 1
    rr, qq = np.mgrid[0:h, 0:w]
    u = (qq - cx) * c + (rr - cy) * s
    k = np.floor(u + 0.5).astype(np.int64) + half
    sums = np.bincount(k.ravel(), weights=block.ravel(), minlength=nbins)
    counts = np.bincount(k.ravel(), minlength=nbins)
    good = np.nonzero(counts >= min_count)[0]
    if good.size == 0 or good[-1] - good[0] < 4:
        return 0.0
    first, last = int(good[0]), int(good[-1])
    sig = np.empty(last - first + 1)
    for i, kk in enumerate(range(first, last + 1)):
        sig[i] = sums[kk] / counts[kk] if counts[kk] >= min_count else sig[i - 1]
    sm = sig.copy()
    sm[1:-1] = 0.25 * sig[:-2] + 0.5 * sig[1:-1] + 0.25 * sig[2:]
    mean = float(np.sum(sm)) / sm.size
    mid = sm[1:-1]
    is_peak = (mid > sm[:-2]) & (mid >= sm[2:]) & (mid > mean)
    idx = np.nonzero(is_peak)[0] + 1
    if idx.size < 2:
        return 0.0
    den = sm[idx - 1] - 2.0 * sm[idx] + sm[idx + 1]
    off = np.where(den < 0.0, 0.5 * (sm[idx - 1] - sm[idx + 1]) / np.where(den < 0.0, den, 1.0), 0.0)
    pos = idx + off
    if pos[-1] <= pos[0]:
        return 0.0
    spacing = (pos[-1] - pos[0]) / (idx.size - 1)
    if np.any(np.abs(np.diff(pos) - spacing) > max_dev * spacing):
        return 0.0
    return 1.0 / spacing


@njit
def _block_frequencies_nb(img, normals, mask, block, min_count, max_dev):
    gh, gw = normals.shape
    out = np.zeros((gh, gw))
    for by in range(gh):
        for bx in range(gw):
            if mask[by, bx]:
                y0 = min(by * block, max(img.shape[0] - block, 0))
                x0 = min(bx * block, max(img.shape[1] - block, 0))
                tile = img[y0:y0 + block, x0:x0 + block]
                out[by, bx] = _signature_frequency_nb(tile, normals[by, bx], min_count, max_dev)
    return out


def _block_frequencies_np(img, normals, mask, block, min_count, max_dev):
    out = np.zeros(normals.shape)
    for by, bx in zip(*np.nonzero(mask)):
        y0 = min(by * block, max(img.shape[0] - block, 0))
        x0 = min(bx * block, max(img.shape[1] - block, 0))
        tile = img[y0:y0 + block, x0:x0 + block]
        out[by, bx] = _signature_frequency_np(tile, normals[by, bx], min_count, max_dev)
    return out


def block_frequencies(img: np.ndarray, normals: np.ndarray, mask: np.ndarray, block: int,
                      min_count: int = 4, max_dev: float = 0.35) -> np.ndarray:
    """Ridge frequency (cycles/px) per block from the projected intensity signature.

    Pixels of each block are binned by their coordinate along the block's
    normal direction (``normals``, radians).  Peaks of the lightly smoothed
    signature, refined to sub-pixel by a parabola fit, give the mean ridge
    spacing.  Edge blocks use a full-size window shifted back inside the
    image.  Blocks with fewer than two peaks, or whose peak spacings stray
    from their mean by more than ``max_dev`` of it, get 0.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if _backend == "numba":
        return _block_frequencies_nb(img, normals, mask, int(block), int(min_count), float(max_dev))
    return _block_frequencies_np(img, normals, mask, int(block), int(min_count), float(max_dev))
