"""Pure-Python implementations of the hot kernels.

These define the reference semantics. ``_core.pyx`` mirrors every function
here and must agree bit-for-bit; ``tests/test_backend.py`` enforces that.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
TWO_PI = 6.283185307179586
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class _Stream:
    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state

    def uniform(self) -> float:
        self.state = (self.state + GOLDEN) & MASK64
        return ((mix64(self.state) >> 11) + 0.5) * INV_2_53

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)

    def gamma(self, shape: float) -> float:
        if shape < 1.0:
            g = self.gamma(shape + 1.0)
            u = self.uniform()
            return g * math.pow(u, 1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.uniform()
            x2 = x * x
            if u < 1.0 - 0.0331 * (x2 * x2):
                return d * v
            if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
                return d * v

    def beta(self, a: float, b: float) -> float:
        while True:
            x = self.gamma(a)
            y = self.gamma(b)
            s = x + y
            if s > 0.0:
                return x / s


def beta_fill(state: int, a: float, b: float, n: int) -> tuple[np.ndarray, int]:
    """Draw ``n`` Beta(a, b) variates from a SplitMix64 stream at ``state``."""
    stream = _Stream(state)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = stream.beta(a, b)
    return out, stream.state


def _signed_area(xs, ys) -> float:
    n = len(xs)
    s = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        s += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * s


def clip_area(p: np.ndarray, q: np.ndarray) -> float:
    """Area of the intersection of two positively oriented convex polygons."""
    xs = [float(v) for v in p[:, 0]]
    ys = [float(v) for v in p[:, 1]]
    m = q.shape[0]
    for k in range(m):
        ax, ay = float(q[k, 0]), float(q[k, 1])
        nk = k + 1 if k + 1 < m else 0
        bx, by = float(q[nk, 0]), float(q[nk, 1])
        ex, ey = bx - ax, by - ay
        nxs: list[float] = []
        nys: list[float] = []
        n = len(xs)
        if n == 0:
            break
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            px, py = xs[i], ys[i]
            qx, qy = xs[j], ys[j]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                nxs.append(px)
                nys.append(py)
                if sq < 0.0:
                    t = sp / (sp - sq)
                    nxs.append(px + t * (qx - px))
                    nys.append(py + t * (qy - py))
            elif sq >= 0.0:
                t = sp / (sp - sq)
                nxs.append(px + t * (qx - px))
                nys.append(py + t * (qy - py))
        xs, ys = nxs, nys
    if len(xs) < 3:
        return 0.0
    area = _signed_area(xs, ys)
    return area if area > 0.0 else 0.0


def iou_matrix(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Pairwise IoU of positively oriented convex quads, shapes (N,4,2) x (M,4,2)."""
    n, m = pa.shape[0], pb.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    areas_a = [max(_signed_area(pa[i, :, 0], pa[i, :, 1]), 0.0) for i in range(n)]
    areas_b = [max(_signed_area(pb[j, :, 0], pb[j, :, 1]), 0.0) for j in range(m)]
    lo_a, hi_a = pa.min(axis=1), pa.max(axis=1)
    lo_b, hi_b = pb.min(axis=1), pb.max(axis=1)
    for i in range(n):
        for j in range(m):
            if (
                lo_a[i, 0] >= hi_b[j, 0]
                or lo_b[j, 0] >= hi_a[i, 0]
                or lo_a[i, 1] >= hi_b[j, 1]
                or lo_b[j, 1] >= hi_a[i, 1]
            ):
                continue
            inter = clip_area(pa[i], pb[j])
            union = areas_a[i] + areas_b[j] - inter
            if union > 0.0 and inter > 0.0:
                out[i, j] = inter / union
    return out


def edit_counts(pred: str, truth: str) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of one minimal alignment.

    A deletion is a truth character missing from ``pred``; an insertion is an
    extra character in ``pred``. Backtrace prefers diagonal, then deletion.
    """
    n, m = len(pred), len(truth)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        pc = pred[i - 1]
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            cost = 0 if pc == truth[j - 1] else 1
            best = prev[j - 1] + cost
            if row[j - 1] + 1 < best:
                best = row[j - 1] + 1
            if prev[j] + 1 < best:
                best = prev[j] + 1
            row[j] = best
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if pred[i - 1] == truth[j - 1] else 1
            if dist[i][j] == dist[i - 1][j - 1] + cost:
                subs += cost
                i -= 1
                j -= 1
                continue
        if j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            dels += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return subs, dels, ins
