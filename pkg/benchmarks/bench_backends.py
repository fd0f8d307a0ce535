"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_backends.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from wmspot import _backend, _fallback
from wmspot.geometry import boxes_to_polygons
from wmspot.selfcheck import random_boxes


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def workloads():
    gen = np.random.default_rng(0)
    pa = boxes_to_polygons(random_boxes(gen, 150), 1024, 800)
    pb = boxes_to_polygons(random_boxes(gen, 150), 1024, 800)
    words = ["".join(gen.choice(list("abcdefghij"), 15)) for _ in range(400)]
    return {
        "iou_matrix 150x150": lambda m: m.iou_matrix(pa, pb),
        "edit_counts 400 pairs of 15 chars": lambda m: [m.edit_counts(a, b) for a, b in zip(words, words[1:])],
        "beta_fill 1e5 draws": lambda m: m.beta_fill(42, 1.0, 1.5, 100_000),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _backend.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    from wmspot import _core

    print(f"{'kernel':<36} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, fn in workloads().items():
        slow = best_of(lambda: fn(_fallback), args.repeat)
        fast = best_of(lambda: fn(_core), args.repeat)
        print(f"{name:<36} {slow:9.4f}s {fast:9.4f}s {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
