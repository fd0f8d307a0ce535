"""Loss and attention kernels of the watermark spotting model.

Everything is float64 numpy. Box arrays are ``(N, 5)`` rows of
``(x0, y0, x1, y1, angle)``. The recognition vocabulary is ``a..z`` followed
by ``[BOS]`` and ``[EOW]``.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ParameterError, ShapeError
from .geometry import RotatedBox, boxes_to_array
from .sampling import Rng

LETTERS = string.ascii_lowercase
BOS = len(LETTERS)
EOW = BOS + 1
VOCAB_SIZE = EOW + 1
MAX_DECODE_LEN = 15


def _box_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    else:
        boxes = list(boxes)
        arr = boxes_to_array(boxes) if boxes and isinstance(boxes[0], RotatedBox) else np.asarray(boxes, dtype=np.float64).reshape(-1, 5)
    if arr.shape[0] == 0:
        raise ParameterError("variance loss needs at least one box")
    return arr


def _features(arr: np.ndarray) -> np.ndarray:
    return np.stack([arr[:, 2] - arr[:, 0], arr[:, 3] - arr[:, 1], arr[:, 4]], axis=1)


def variance_loss(boxes) -> float:
    """Sum of population variances of box widths, heights and angles.

    Deviations are taken from the first box before centring, so a set of
    identical values gives exactly 0.
    """
    feats = _features(_box_array(boxes))
    shifted = feats - feats[0]
    dev = shifted - shifted.mean(axis=0)
    return float((dev * dev).sum() / feats.shape[0])


def variance_loss_grad(boxes) -> np.ndarray:
    """Gradient of :func:`variance_loss` w.r.t. each box's ``(x0, y0, x1, y1, angle)``."""
    arr = _box_array(boxes)
    n = arr.shape[0]
    feats = _features(arr)
    shifted = feats - feats[0]
    g = 2.0 * (shifted - shifted.mean(axis=0)) / n
    grad = np.zeros_like(arr)
    grad[:, 0], grad[:, 2] = -g[:, 0], g[:, 0]
    grad[:, 1], grad[:, 3] = -g[:, 1], g[:, 1]
    grad[:, 4] = g[:, 2]
    return grad


@dataclass(frozen=True)
class LossWeights:
    obj_cls: float = 1.0
    obj_box: float = 1.0
    rpn: float = 1.0
    var: float = 1.0
    txt: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    l_obj_cls: float
    l_obj_box: float
    l_rpn: float
    l_var: float
    l_txt: float
    total: float


def total_loss(
    l_obj_cls: float,
    l_obj_box: float,
    l_rpn: float,
    l_var: float,
    l_txt: float,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Detector, variance and text losses combined by a weighted sum (unit weights by default)."""
    parts = (l_obj_cls, l_obj_box, l_rpn, l_var, l_txt)
    if not all(math.isfinite(p) for p in parts):
        raise NumericError(f"non-finite loss component in {parts}")
    w = (weights.obj_cls, weights.obj_box, weights.rpn, weights.var, weights.txt)
    total = sum(wi * pi for wi, pi in zip(w, parts))
    return LossBreakdown(*map(float, parts), float(total))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(q: np.ndarray, k: np.ndarray, scale_dim: int | None = None) -> np.ndarray:
    d = q.shape[-1] if scale_dim is None else scale_dim
    return softmax(q @ k.T / math.sqrt(d))


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int = 1) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` per head, heads concatenated along features."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention inputs must be 2-D")
    if q.shape != k.shape or v.shape[0] != k.shape[0]:
        raise ShapeError(f"inconsistent attention shapes Q{q.shape} K{k.shape} V{v.shape}")
    if heads < 1 or q.shape[1] % heads or v.shape[1] % heads:
        raise ShapeError(f"{heads} heads do not divide d_k={q.shape[1]}, d_v={v.shape[1]}")
    dk, dv = q.shape[1] // heads, v.shape[1] // heads
    out = [
        attention_weights(q[:, h * dk:(h + 1) * dk], k[:, h * dk:(h + 1) * dk]) @ v[:, h * dv:(h + 1) * dv]
        for h in range(heads)
    ]
    return np.concatenate(out, axis=1)


@dataclass(frozen=True)
class AttentionConfig:
    d_h: int = 7
    d_w: int = 7
    d_rpn: int = 256
    d_local: int = 224
    d_global: int = 256
    d_fused: int = 256
    heads: int = 1

    def __post_init__(self):
        if min(self.d_h, self.d_w, self.d_rpn, self.d_local, self.d_global, self.d_fused, self.heads) < 1:
            raise ConfigError("attention dimensions must be positive")
        if self.d_local % self.d_w:
            raise ConfigError(f"d_local={self.d_local} is not divisible by d_w={self.d_w}")
        if self.d_local % self.heads or self.d_global % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_local and d_global")

    @property
    def channels_per_column(self) -> int:
        return self.d_local // self.d_w

    @property
    def fused_input(self) -> int:
        return self.d_h * self.d_local + self.d_global


@dataclass
class Linear:
    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias

    @classmethod
    def zeros(cls, d_in: int, d_out: int) -> "Linear":
        return cls(np.zeros((d_in, d_out)), np.zeros(d_out))

    @classmethod
    def random(cls, d_in: int, d_out: int, rng: Rng) -> "Linear":
        w = rng.normal_array(d_in * d_out).reshape(d_in, d_out) / math.sqrt(d_in)
        return cls(w, np.zeros(d_out))


@dataclass
class AttentionWeights:
    """Shared projections: one pointwise map per role for local attention, one per role for global."""

    local_q: Linear
    local_k: Linear
    local_v: Linear
    global_q: Linear
    global_k: Linear
    global_v: Linear
    fuse: Linear

    @classmethod
    def init(cls, config: AttentionConfig, rng: Rng) -> "AttentionWeights":
        c = config.channels_per_column
        return cls(
            *(Linear.random(config.d_rpn, c, rng) for _ in range(3)),
            *(Linear.random(config.d_global, config.d_global, rng) for _ in range(3)),
            Linear.random(config.fused_input, config.d_fused, rng),
        )

    def save(self, path: str | Path) -> None:
        tensors = {}
        for f in fields(self):
            lin = getattr(self, f.name)
            for part in ("weight", "bias"):
                arr = getattr(lin, part)
                tensors[f"{f.name}.{part}"] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        doc = {"format": "wmspot-attention-weights", "version": 1, "tensors": tensors}
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AttentionWeights":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != "wmspot-attention-weights" or doc.get("version") != 1:
            raise ConfigError(f"{path} is not a version-1 weight file")
        tensors = doc["tensors"]

        def get(name: str) -> np.ndarray:
            t = tensors[name]
            arr = np.asarray(t["data"], dtype=np.float64)
            return arr.reshape(t["shape"])

        return cls(*(Linear(get(f"{f.name}.weight"), get(f"{f.name}.bias")) for f in fields(cls)))


def project_local(rpn_desc: np.ndarray, proj: Linear, config: AttentionConfig) -> np.ndarray:
    """1x1 convolution ``d_rpn -> d_local / d_w`` then flatten width: ``(d_h, d_local)``."""
    x = np.asarray(rpn_desc, dtype=np.float64)
    if x.shape != (config.d_h, config.d_w, config.d_rpn):
        raise ShapeError(f"descriptor shape {x.shape} != {(config.d_h, config.d_w, config.d_rpn)}")
    return proj(x).reshape(config.d_h, config.d_local)


def local_embed(rpn_desc: np.ndarray, weights: AttentionWeights, config: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """Self-attention over the height rows of one proposal's descriptor, ``(d_h, d_local)``."""
    q = project_local(rpn_desc, weights.local_q, config)
    k = project_local(rpn_desc, weights.local_k, config)
    v = project_local(rpn_desc, weights.local_v, config)
    return scaled_dot_attention(q, k, v, config.heads)


def global_attend(roi_descs: np.ndarray, weights: AttentionWeights, config: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """Self-attention across the ``N_p`` proposal descriptors, ``(N_p, d_global)``.

    An empty proposal set returns an empty ``(0, d_global)`` array.
    """
    x = np.asarray(roi_descs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.d_global:
        raise ShapeError(f"ROI descriptors must be (N_p, {config.d_global}), got {x.shape}")
    if x.shape[0] == 0:
        return np.zeros((0, config.d_global))
    return scaled_dot_attention(weights.global_q(x), weights.global_k(x), weights.global_v(x), config.heads)


def fuse(local: Sequence[np.ndarray], global_: np.ndarray, proj: Linear) -> np.ndarray:
    """Concatenate flattened local embeddings with global rows and project, ``(N_p, d)``."""
    global_ = np.asarray(global_, dtype=np.float64)
    if len(local) != global_.shape[0]:
        raise ShapeError(f"{len(local)} local embeddings for {global_.shape[0]} global rows")
    if not len(local):
        return np.zeros((0, proj.weight.shape[1]))
    flat = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in local])
    cat = np.concatenate([flat, global_], axis=1)
    if cat.shape[1] != proj.weight.shape[0]:
        raise ShapeError(f"fused input width {cat.shape[1]} != projection input {proj.weight.shape[0]}")
    return proj(cat)


def encode(rpn_descs: Sequence[np.ndarray], roi_descs: np.ndarray, weights: AttentionWeights,
           config: AttentionConfig = AttentionConfig()) -> np.ndarray:
    local = [local_embed(d, weights, config) for d in rpn_descs]
    return fuse(local, global_attend(roi_descs, weights, config), weights.fuse)


StepFn = Callable[[np.ndarray, list[int]], np.ndarray]


def greedy_decode(theta: np.ndarray, step_fn: StepFn, max_len: int = MAX_DECODE_LEN) -> str:
    """Append the most likely letter until ``[EOW]`` wins or ``max_len`` letters exist.

    ``step_fn(theta, prefix)`` gets the token ids so far (starting with
    ``[BOS]``) and must return a distribution over the 28 tokens.
    """
    prefix = [BOS]
    out = []
    while len(out) < max_len:
        dist = np.asarray(step_fn(theta, list(prefix)), dtype=np.float64)
        if dist.shape != (VOCAB_SIZE,) or not np.all(np.isfinite(dist)) or dist.min() < 0 \
                or abs(dist.sum() - 1.0) > 1e-6:
            raise ContractError(f"step_fn returned an invalid distribution at step {len(out)}")
        masked = dist.copy()
        masked[BOS] = -1.0
        token = int(np.argmax(masked))
        if token == EOW:
            break
        out.append(LETTERS[token])
        prefix.append(token)
    return "".join(out)


def encode_target(text: str) -> np.ndarray:
    """Token ids of ``text`` followed by ``[EOW]``."""
    if any(ch not in LETTERS for ch in text):
        raise ParameterError(f"target {text!r} leaves the a-z alphabet")
    return np.array([LETTERS.index(ch) for ch in text] + [EOW], dtype=np.int64)


def sequence_cross_entropy(probs: np.ndarray, target: str) -> float:
    """Mean negative log-likelihood of ``target`` + ``[EOW]`` under per-step distributions."""
    probs = np.asarray(probs, dtype=np.float64)
    ids = encode_target(target)
    if probs.shape != (len(ids), VOCAB_SIZE):
        raise ShapeError(f"expected ({len(ids)}, {VOCAB_SIZE}) distributions, got {probs.shape}")
    p = probs[np.arange(len(ids)), ids]
    if np.any(p <= 0.0):
        raise NumericError("zero probability assigned to a target token (loss is +inf)")
    return float(-np.log(p).mean())


def sequence_cross_entropy_logits(logits: np.ndarray, target: str) -> tuple[float, np.ndarray]:
    """Loss from unnormalised logits and its gradient ``(softmax - onehot) / L``."""
    logits = np.asarray(logits, dtype=np.float64)
    ids = encode_target(target)
    if logits.shape != (len(ids), VOCAB_SIZE):
        raise ShapeError(f"expected ({len(ids)}, {VOCAB_SIZE}) logits, got {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(ids))
    loss = float((log_norm - z[rows, ids]).mean())
    grad = softmax(logits)
    grad[rows, ids] -= 1.0
    return loss, grad / len(ids)
