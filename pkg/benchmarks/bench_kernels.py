"""Compare the numba and numpy kernel backends on matcher and quality workloads.

    python benchmarks/bench_kernels.py [--pairs 200] [--images 20]

Each workload is run once per backend after a warm-up call (so JIT
compilation is excluded) and the results are checked for agreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fpwhitebox import kernels
from fpwhitebox.matcher import match_score
from fpwhitebox.quality import compute_all
from fpwhitebox.synth import condition_image, random_template, ridge_image
from fpwhitebox.core import CaptureCondition
from fpwhitebox.perturb import displace, rotate_global


def _workloads(n_pairs: int, n_images: int, seed: int):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        a = random_template(rng, int(rng.integers(25, 41)))
        b = displace(rotate_global(a, float(rng.uniform(-15, 15))), 2.0, 0.05, rng)
        pairs.append((a, b))
    images = []
    for _ in range(n_images):
        pat = ridge_image(rng, 320, 320, float(rng.uniform(8, 11)), float(rng.uniform(0, np.pi)), 0.4)
        images.append(condition_image(pat, CaptureCondition.NORMAL, rng))
    return pairs, images


def _time(fn, repeat: int = 3) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not kernels.HAS_NUMBA:
        print("numba is not installed; only the numpy backend is available")
    pairs, images = _workloads(args.pairs, args.images, args.seed)
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    results: dict[str, dict[str, tuple[float, object]]] = {}
    prev = kernels.get_backend()
    try:
        for name in backends:
            kernels.set_backend(name)
            match_score(*pairs[0])
            compute_all(images[0])  # warm-up / JIT compile
            results[name] = {
                "match": _time(lambda: [match_score(a, b) for a, b in pairs]),
                "quality": _time(lambda: [compute_all(im) for im in images]),
            }
    finally:
        kernels.set_backend(prev)

    print(f"{'workload':<10} {'items':>6} " + " ".join(f"{b + ' ms/item':>16}" for b in backends) + "  speedup")
    for work, n in (("match", len(pairs)), ("quality", len(images))):
        times = [results[b][work][0] / n * 1e3 for b in backends]
        speed = f"{times[0] / times[1]:7.1f}x" if len(times) == 2 else "      -"
        print(f"{work:<10} {n:>6} " + " ".join(f"{t:>16.3f}" for t in times) + "  " + speed)
    if len(backends) == 2:
        same = (results["numpy"]["match"][1] == results["numba"]["match"][1]
                and results["numpy"]["quality"][1] == results["numba"]["quality"][1])
        print("backends agree:", same)


if __name__ == "__main__":
    main()
