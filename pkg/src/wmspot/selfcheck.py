"""Numerical self-checks runnable from the command line.

Kernels are looked up through their modules at call time, so a patched
kernel is what gets checked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _backend, _fallback, geometry, kernels, sampling


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(x)
        flat[i] = old - eps
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return grad


def random_boxes(gen: np.random.Generator, n: int) -> np.ndarray:
    x0 = gen.uniform(0, 0.6, n)
    y0 = gen.uniform(0, 0.6, n)
    return np.stack(
        [x0, y0, x0 + gen.uniform(0.05, 0.4, n), y0 + gen.uniform(0.05, 0.4, n), gen.uniform(-1.5, 1.5, n)],
        axis=1,
    )


def random_box_pair(gen: np.random.Generator) -> tuple[geometry.RotatedBox, geometry.RotatedBox]:
    """Two boxes with sides in [0.1, 0.5] whose centres are close enough to overlap often."""
    cx, cy = gen.uniform(0.3, 0.7, 2)
    boxes = []
    for _ in range(2):
        bw, bh = gen.uniform(0.1, 0.5, 2)
        ox, oy = gen.normal(0, 0.08, 2)
        boxes.append(geometry.RotatedBox(
            cx + ox - bw / 2, cy + oy - bh / 2, cx + ox + bw / 2, cy + oy + bh / 2,
            float(gen.uniform(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6)),
        ))
    return boxes[0], boxes[1]


def check_gradients(instances: int = 100) -> list[str]:
    gen = np.random.default_rng(1234)
    failures = []
    worst_var = worst_ce = 0.0
    for _ in range(instances):
        boxes = random_boxes(gen, int(gen.integers(2, 9)))
        num = central_difference(kernels.variance_loss, boxes.copy())
        worst_var = max(worst_var, relative_error(kernels.variance_loss_grad(boxes), num))
        length = int(gen.integers(1, 8))
        target = "".join(gen.choice(list(kernels.LETTERS), length))
        logits = gen.normal(0, 2, (length + 1, kernels.VOCAB_SIZE))
        _, grad = kernels.sequence_cross_entropy_logits(logits, target)
        num = central_difference(lambda z: kernels.sequence_cross_entropy_logits(z, target)[0], logits.copy())
        worst_ce = max(worst_ce, relative_error(grad, num))
    if worst_var >= 1e-4:
        failures.append(f"variance_loss_grad (max rel err {worst_var:.2e})")
    if worst_ce >= 1e-4:
        failures.append(f"sequence_cross_entropy (max rel err {worst_ce:.2e})")
    return failures


def check_iou(pairs: int = 200, resolution: int = 1000) -> list[str]:
    gen = np.random.default_rng(99)
    failures = []
    a = geometry.RotatedBox(0, 0, 1, 1, 0)
    b = geometry.RotatedBox(0.5, 0, 1.5, 1, 0)
    if abs(geometry.rotated_iou(a, b, 1, 1) - 1 / 3) > 1e-9:
        failures.append("rotated_iou (analytic half-overlap case)")
    worst = 0.0
    for _ in range(pairs):
        a, b = random_box_pair(gen)
        worst = max(worst, abs(geometry.rotated_iou(a, b, 1, 1) - geometry.rasterized_iou_oracle(a, b, 1, 1, resolution)))
    if worst >= 5e-3:
        failures.append(f"rotated_iou (max oracle deviation {worst:.2e})")
    return failures


def ks_statistic(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    x = np.sort(samples)
    n = x.size
    f = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))


def check_beta(n: int = 100_000) -> list[str]:
    failures = []
    t = sampling.TRANSPARENCY_MIN + sampling.TRANSPARENCY_SPAN * sampling.Rng(2024).beta_array(1.0, 1.5, n)
    if abs(t.mean() - 0.30) > 0.005:
        failures.append(f"sample_transparency (mean {t.mean():.4f})")
    ks = ks_statistic(t, sampling.transparency_cdf)
    if ks >= 0.01:
        failures.append(f"beta_sample (KS {ks:.4f})")
    if t.min() < 0.1 or t.max() > 0.6:
        failures.append("sample_transparency (support)")
    return failures


def check_determinism() -> list[str]:
    failures = []
    seq = [sampling.Rng(7).next_u64() for _ in range(3)]
    if seq != [sampling.Rng(7).next_u64() for _ in range(3)]:
        failures.append("Rng (repeatability)")
    rng = sampling.Rng(11)
    scalar = [rng.uniform() for _ in range(64)]
    if not np.array_equal(np.array(scalar), sampling.Rng(11).uniform_array(64)):
        failures.append("Rng.uniform_array (bulk/scalar mismatch)")
    rng = sampling.Rng(5)
    scalar = [rng.beta(0.7, 2.5) for _ in range(200)]
    if not np.array_equal(np.array(scalar), sampling.Rng(5).beta_array(0.7, 2.5, 200)):
        failures.append("beta_fill (backend/scalar mismatch)")
    fonts, words = ["a.ttf", "b.ttf"], ["draft", "secret", "copy"]
    p1 = [sampling.sample_page_params(sampling.Rng.for_page(42, i), fonts, words) for i in range(50)]
    p2 = [sampling.sample_page_params(sampling.Rng.for_page(42, i), fonts, words) for i in reversed(range(50))]
    if p1 != p2[::-1]:
        failures.append("sample_page_params (order independence)")
    if _backend.BACKEND == "compiled":
        gen = np.random.default_rng(3)
        pa = geometry.boxes_to_polygons(random_boxes(gen, 20), 640, 480)
        pb = geometry.boxes_to_polygons(random_boxes(gen, 15), 640, 480)
        if not np.array_equal(_backend.iou_matrix(pa, pb), _fallback.iou_matrix(pa, pb)):
            failures.append("iou_matrix (compiled/python mismatch)")
        if _backend.edit_counts("significane", "significance") != _fallback.edit_counts("significane", "significance"):
            failures.append("edit_counts (compiled/python mismatch)")
    return failures


def check_attention() -> list[str]:
    failures = []
    config = kernels.AttentionConfig()
    weights = kernels.AttentionWeights.init(config, sampling.Rng(17))
    gen = np.random.default_rng(5)
    desc = gen.normal(size=(config.d_h, config.d_w, config.d_rpn))
    local = kernels.local_embed(desc, weights, config)
    if local.shape != (7, 224):
        failures.append(f"local_embed (shape {local.shape})")
    q = kernels.project_local(desc, weights.local_q, config)
    k = kernels.project_local(desc, weights.local_k, config)
    rows = kernels.attention_weights(q, k).sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > 1e-9:
        failures.append("scaled_dot_attention (softmax rows)")
    logits = gen.normal(size=(5, 9))
    if np.max(np.abs(kernels.softmax(logits) - kernels.softmax(logits + gen.normal(size=(5, 1)) * 10))) > 1e-12:
        failures.append("softmax (shift invariance)")
    roi = gen.normal(size=(6, config.d_global))
    perm = gen.permutation(6)
    out = kernels.global_attend(roi, weights, config)
    if np.max(np.abs(kernels.global_attend(roi[perm], weights, config) - out[perm])) > 1e-12:
        failures.append("global_attend (permutation equivariance)")
    never_stop = np.full(kernels.VOCAB_SIZE, 0.0)
    never_stop[0] = 1.0
    if len(kernels.greedy_decode(None, lambda th, pre: never_stop)) != 15:
        failures.append("greedy_decode (length cap)")
    stop = np.zeros(kernels.VOCAB_SIZE)
    stop[kernels.EOW] = 1.0
    if kernels.greedy_decode(None, lambda th, pre: stop) != "":
        failures.append("greedy_decode ([EOW])")
    return failures


SUITES: dict[str, Callable[[], list[str]]] = {
    "gradients": check_gradients,
    "iou_oracle": check_iou,
    "beta_cdf": check_beta,
    "determinism": check_determinism,
    "attention": check_attention,
}


def run_selfcheck(names: list[str] | None = None) -> list[SuiteResult]:
    results = []
    for name in names or list(SUITES):
        start = time.perf_counter()
        try:
            failures = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            failures = [f"{type(exc).__name__}: {exc}"]
        results.append(SuiteResult(name, not failures, "; ".join(failures) or "ok", time.perf_counter() - start))
    return results
