"""Benchmark the compiled suppression kernels against the pure-Python fallback.

Both backends must return bit-identical results; this script asserts that on
every case before timing. Run from the repository root:

    python3 benchmarks/bench_kernels.py --sizes 200 1000 5000 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from detpipe._kernels import BACKEND, pykernels

try:
    from detpipe._kernels import ckernels
except ImportError:
    ckernels = None


def clustered_boxes(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Boxes around a handful of cluster centres so suppression has work to do."""
    centres = rng.uniform(0.0, 100.0, size=(max(1, n // 8), 2))
    which = rng.integers(0, len(centres), size=n)
    x0 = centres[which, 0] + rng.uniform(-2.0, 2.0, size=n)
    y0 = centres[which, 1] + rng.uniform(-2.0, 2.0, size=n)
    w = rng.uniform(1.0, 6.0, size=n)
    h = rng.uniform(1.0, 6.0, size=n)
    boxes = np.stack([x0, y0, x0 + w, y0 + h], axis=1)
    scores = rng.uniform(0.0, 1.0, size=n)
    return boxes, scores


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def check_identical(boxes, scores, gt_boxes, thr) -> None:
    kp = pykernels.nms_kernel(boxes, scores, thr)
    kc = ckernels.nms_kernel(boxes, scores, thr)
    assert np.array_equal(kp, kc), "nms_kernel outputs differ between backends"

    hp, mp = pykernels.nmw_kernel(boxes, scores, thr)
    hc, mc = ckernels.nmw_kernel(boxes, scores, thr)
    assert np.array_equal(hp, hc), "nmw_kernel head indices differ between backends"
    assert mp.tobytes() == mc.tobytes(), "nmw_kernel merged boxes differ between backends"

    order = np.argsort(-scores, kind="stable")
    gp = pykernels.greedy_match_kernel(boxes[order], gt_boxes, thr)
    gc = ckernels.greedy_match_kernel(boxes[order], gt_boxes, thr)
    assert np.array_equal(gp, gc), "greedy_match_kernel outputs differ between backends"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 5000])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iou-threshold", type=float, default=0.5)
    args = parser.parse_args()

    if ckernels is None:
        print("compiled backend not built; nothing to compare (active backend: python)")
        return 1
    print(f"active package backend: {BACKEND}")
    print(f"{'kernel':<20} {'boxes':>6} {'python':>10} {'compiled':>10} {'speedup':>8}")

    rng = np.random.default_rng(args.seed)
    thr = args.iou_threshold
    for n in args.sizes:
        boxes, scores = clustered_boxes(rng, n)
        gt_boxes, _ = clustered_boxes(rng, max(1, n // 4))
        check_identical(boxes, scores, gt_boxes, thr)
        order = np.argsort(-scores, kind="stable")
        sorted_boxes = np.ascontiguousarray(boxes[order])

        cases = [
            ("nms_kernel", lambda m: m.nms_kernel(boxes, scores, thr)),
            ("nmw_kernel", lambda m: m.nmw_kernel(boxes, scores, thr)),
            ("greedy_match_kernel", lambda m: m.greedy_match_kernel(sorted_boxes, gt_boxes, thr)),
        ]
        for name, call in cases:
            t_py = best_of(lambda: call(pykernels), args.repeats)
            t_c = best_of(lambda: call(ckernels), args.repeats)
            print(
                f"{name:<20} {n:>6} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
                f"{t_py / t_c:>7.1f}x"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
