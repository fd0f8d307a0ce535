"""Seeded sampling of per-page watermark parameters.

Randomness comes from a SplitMix64 stream. The generator is counter based:
the k-th output depends only on ``state + k * GOLDEN``, so bulk draws can be
vectorised with numpy and child generators are derived with pure hashing of
``(master_seed, *keys)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from ._fallback import GOLDEN, INV_2_53, MASK64, TWO_PI, _Stream, mix64
from .errors import ConfigError, ParameterError

MAX_WORD_LEN = 15
MAX_GRID_DIM = 12
TRANSPARENCY_MIN = 0.1
TRANSPARENCY_SPAN = 0.5
HALF_PI = math.pi / 2

FONT_SUFFIXES = (".ttf", ".otf")

_WORD_RE = re.compile(r"[a-z]+")


def derive_seed(master_seed: int, *keys: int) -> int:
    """Hash ``master_seed`` and integer keys into a child seed."""
    h = mix64(master_seed & MASK64)
    for key in keys:
        h = mix64(h ^ mix64((key + GOLDEN) & MASK64))
    return h


def string_key(text: str) -> int:
    """Stable 64-bit key for a string (FNV-1a followed by a SplitMix finaliser)."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return mix64(h)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator. Single owner; derive children instead of sharing."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    @classmethod
    def for_page(cls, master_seed: int, *keys: int) -> "Rng":
        return cls(derive_seed(master_seed, *keys))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Draw from the open interval (lo, hi) (up to rounding at the ends)."""
        u = ((self.next_u64() >> 11) + 0.5) * INV_2_53
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive."""
        if hi < lo:
            raise ParameterError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + min(int(self.uniform() * span), span - 1)

    def choice_index(self, weights: Sequence[float]) -> int:
        total = float(sum(weights))
        if total <= 0 or any(w < 0 for w in weights):
            raise ParameterError("weights must be non-negative with a positive sum")
        target = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if target < acc:
                return i
        return max(i for i, w in enumerate(weights) if w > 0)

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)

    def uniform_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
        states = steps + np.uint64(self.state)
        self.state = (self.state + n * GOLDEN) & MASK64
        bits = _mix64_array(states) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * INV_2_53

    def normal_array(self, n: int) -> np.ndarray:
        u = self.uniform_array(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(TWO_PI * u[:, 1])

    def beta(self, alpha: float, beta: float) -> float:
        _check_shapes(alpha, beta)
        stream = _Stream(self.state)
        value = stream.beta(alpha, beta)
        self.state = stream.state
        return value

    def beta_array(self, alpha: float, beta: float, n: int) -> np.ndarray:
        """Same sequence as ``n`` calls to :meth:`beta`, via the active backend."""
        _check_shapes(alpha, beta)
        values, self.state = _backend.beta_fill(self.state, float(alpha), float(beta), n)
        return values


def _check_shapes(alpha: float, beta: float) -> None:
    if not (alpha > 0 and beta > 0) or not (math.isfinite(alpha) and math.isfinite(beta)):
        raise ParameterError(f"Beta shape parameters must be positive, got ({alpha}, {beta})")


def beta_sample(alpha: float, beta: float, rng: Rng) -> float:
    """One Beta(alpha, beta) draw as the ratio X / (X + Y) of two Gamma draws."""
    return rng.beta(alpha, beta)


def sample_transparency(rng: Rng) -> float:
    return TRANSPARENCY_MIN + TRANSPARENCY_SPAN * rng.beta(1.0, 1.5)


def transparency_cdf(t):
    """Closed-form CDF of 0.1 + 0.5 * Beta(1, 1.5)."""
    x = np.clip((np.asarray(t, dtype=np.float64) - TRANSPARENCY_MIN) / TRANSPARENCY_SPAN, 0.0, 1.0)
    return 1.0 - (1.0 - x) ** 1.5


def sample_angle(rng: Rng) -> float:
    while True:
        angle = rng.uniform(-HALF_PI, HALF_PI)
        if abs(angle) < HALF_PI:
            return angle


@dataclass(frozen=True)
class PageParams:
    angle: float
    grid_dim: int
    transparency: float
    font_id: int
    word: str

    @property
    def n_watermarks(self) -> int:
        return self.grid_dim * self.grid_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PageParams":
        return cls(
            angle=float(data["angle"]),
            grid_dim=int(data["grid_dim"]),
            transparency=float(data["transparency"]),
            font_id=int(data["font_id"]),
            word=str(data["word"]),
        )


def sample_page_params(
    rng: Rng,
    fonts: Sequence,
    words: Sequence[str],
    grid_weights: Sequence[float] | None = None,
) -> PageParams:
    """Draw one page configuration: angle, grid size, transparency, font, word.

    Every watermark on the page shares the returned parameters.
    """
    if len(fonts) == 0:
        raise ConfigError("font catalog is empty")
    if len(words) == 0:
        raise ConfigError("word list is empty")
    angle = sample_angle(rng)
    if grid_weights is None:
        grid_dim = rng.randint(1, MAX_GRID_DIM)
    else:
        if len(grid_weights) != MAX_GRID_DIM:
            raise ConfigError(f"grid_weights needs {MAX_GRID_DIM} entries, got {len(grid_weights)}")
        grid_dim = 1 + rng.choice_index(grid_weights)
    transparency = sample_transparency(rng)
    font_id = rng.randint(0, len(fonts) - 1)
    word = words[rng.randint(0, len(words) - 1)]
    return PageParams(angle, grid_dim, transparency, font_id, word)


def normalize_word(raw: str) -> str | None:
    """Lowercase ``raw``; ``None`` if it leaves a-z or exceeds 15 characters."""
    word = raw.strip().lower()
    if not word or len(word) > MAX_WORD_LEN or not _WORD_RE.fullmatch(word):
        return None
    return word


def load_word_list(path: str | Path) -> list[str]:
    """Read one word per line, keeping valid words in first-seen order."""
    seen: dict[str, None] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = normalize_word(line)
            if word is not None:
                seen.setdefault(word)
    return list(seen)


def list_fonts(directory: str | Path) -> list[Path]:
    """Outline font files in ``directory``, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"font directory not found: {directory}")
    return sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in FONT_SUFFIXES and p.is_file()),
        key=lambda p: p.name,
    )
