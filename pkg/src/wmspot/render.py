"""Watermark rasterisation and compositing.

A page is an ``(h, w, 3)`` uint8 array. Watermarks are stamped on a regular
grid; all stamps on one page share word, font, size, angle and transparency.
Compositing keeps a per-pixel "keep" factor ``prod(1 - t * coverage)`` and
rounds once, so pixels no stamp touches come out byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .errors import FontError, ParameterError, PlacementError
from .geometry import RotatedBox
from .sampling import PageParams, Rng, list_fonts, normalize_word

MIN_POINT_SIZE = 8.0
MAX_POINT_SIZE = 200.0
SIZE_STEP = 0.25
DEFAULT_FILL = 0.8
BOX_QUANTUM = 2.0 ** -24

RGB = tuple[int, int, int]


def as_page(image) -> np.ndarray:
    """Validate and return an ``(h, w, 3)`` uint8 page array."""
    page = np.asarray(image)
    if page.ndim != 3 or page.shape[2] != 3 or page.dtype != np.uint8:
        raise ParameterError(f"expected (h, w, 3) uint8 page, got {page.shape} {page.dtype}")
    if page.shape[0] < 1 or page.shape[1] < 1:
        raise ParameterError("page must be at least 1x1")
    return page


def load_page(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def save_page(page: np.ndarray, path: str | Path) -> None:
    Image.fromarray(as_page(page), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


class FontCatalog:
    """Fonts indexed by position in sorted file-name order."""

    def __init__(self, paths: Sequence[str | Path]):
        self.paths = [Path(p) for p in paths]

    @classmethod
    def from_directory(cls, directory: str | Path) -> "FontCatalog":
        return cls(list_fonts(directory))

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.paths]

    def path(self, font_id: int) -> Path:
        if not 0 <= font_id < len(self.paths):
            raise FontError(f"font id {font_id} outside catalog of {len(self.paths)}")
        return self.paths[font_id]


@lru_cache(maxsize=64)
def _codepoints(path: str) -> frozenset[int]:
    from fontTools.ttLib import TTFont

    try:
        with TTFont(path, lazy=True, fontNumber=0) as tt:
            cmap = tt.getBestCmap() or {}
    except Exception as exc:  # fontTools raises a zoo of types on bad files
        raise FontError(f"cannot read font {path}: {exc}") from exc
    return frozenset(cmap)


@lru_cache(maxsize=256)
def _font(path: str, size: float) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path, size=size, layout_engine=ImageFont.Layout.BASIC)


@dataclass(frozen=True)
class WordBitmap:
    """Anti-aliased coverage in [0, 1], cropped to the tight ink extent."""

    coverage: np.ndarray = field(repr=False)
    width: int
    height: int


@lru_cache(maxsize=512)
def _rasterize(path: str, word: str, point_size: float) -> WordBitmap:
    font = _font(path, point_size)
    left, top, right, bottom = font.getbbox(word)
    canvas = Image.new("L", (right - left + 4, bottom - top + 4), 0)
    ImageDraw.Draw(canvas).text((2 - left, 2 - top), word, fill=255, font=font)
    cov = np.asarray(canvas, dtype=np.float64) / 255.0
    rows = np.flatnonzero(cov.any(axis=1))
    cols = np.flatnonzero(cov.any(axis=0))
    if rows.size == 0:
        raise FontError(f"font {Path(path).name} produced no ink for {word!r}")
    cov = cov[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].copy()
    cov.setflags(write=False)
    return WordBitmap(cov, cov.shape[1], cov.shape[0])


def rasterize_word(word: str, font: str | Path, point_size: float) -> WordBitmap:
    """Render ``word`` with the font file at ``font``; ``point_size`` is in pixels."""
    if normalize_word(word) != word:
        raise ParameterError(f"invalid watermark word {word!r}")
    if not point_size > 0:
        raise ParameterError("point_size must be positive")
    path = str(font)
    cmap = _codepoints(path)
    for ch in word:
        if ord(ch) not in cmap:
            raise FontError(f"font {Path(path).name} has no glyph for U+{ord(ch):04X} ({ch!r})")
    return _rasterize(path, word, float(point_size))


def fit_point_size(
    word: str,
    font: str | Path,
    grid_dim: int,
    page_width: int,
    fill: float = DEFAULT_FILL,
) -> tuple[float, bool]:
    """Largest size (in 0.25 steps) whose ink width fits ``fill * page_width / grid_dim``.

    Returns ``(size, clamped)``; ``clamped`` is set when the target width
    cannot be reached inside [8, 200] and the nearest bound is used.
    """
    if grid_dim < 1:
        raise ParameterError("grid_dim must be >= 1")
    target = fill * page_width / grid_dim
    steps = int(round((MAX_POINT_SIZE - MIN_POINT_SIZE) / SIZE_STEP))

    def width(k: int) -> int:
        return rasterize_word(word, font, MIN_POINT_SIZE + k * SIZE_STEP).width

    if width(0) > target:
        return MIN_POINT_SIZE, True
    if width(steps) <= target:
        return MAX_POINT_SIZE, width(steps) < target
    lo, hi = 0, steps  # width(lo) <= target < width(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if width(mid) <= target:
            lo = mid
        else:
            hi = mid
    return MIN_POINT_SIZE + lo * SIZE_STEP, False


def _snap(v: float) -> float:
    return round(v / BOX_QUANTUM) * BOX_QUANTUM


def _stamp_box(bitmap: WordBitmap, angle: float, anchor: tuple[float, float], w: int, h: int):
    """Snapped anchor and the normalised unrotated box centred on it."""
    ax, ay = anchor
    if not (0.0 <= ax < w and 0.0 <= ay < h):
        raise PlacementError(f"anchor {anchor} outside {w}x{h} page")
    cx, cy = _snap(ax / w), _snap(ay / h)
    hw, hh = _snap(0.5 * bitmap.width / w), _snap(0.5 * bitmap.height / h)
    box = RotatedBox(cx - hw, cy - hh, cx + hw, cy + hh, angle)
    return (cx * w, cy * h), box


def rotated_coverage(bitmap: WordBitmap, angle: float, anchor: tuple[float, float], w: int, h: int):
    """Bilinear resample of the bitmap turned by ``angle`` and centred at ``anchor``.

    Returns ``(row0, col0, patch)``; ``patch`` covers only the on-page part.
    """
    ax, ay = anchor
    c, s = math.cos(angle), math.sin(angle)
    hw, hh = 0.5 * bitmap.width, 0.5 * bitmap.height
    ex = abs(hw * c) + abs(hh * s)
    ey = abs(hw * s) + abs(hh * c)
    c0, c1 = max(0, math.floor(ax - ex) - 1), min(w, math.ceil(ax + ex) + 1)
    r0, r1 = max(0, math.floor(ay - ey) - 1), min(h, math.ceil(ay + ey) + 1)
    if c0 >= c1 or r0 >= r1:
        return r0, c0, np.zeros((0, 0))
    dx = (np.arange(c0, c1) + 0.5 - ax)[None, :]
    dy = (np.arange(r0, r1) + 0.5 - ay)[:, None]
    # inverse of the screen-space counter-clockwise rotation
    u = dx * c - dy * s + hw - 0.5
    v = dx * s + dy * c + hh - 0.5
    cov = bitmap.coverage
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx, fy = u - x0, v - y0
    padded = np.pad(cov, 1)

    def tap(yy, xx):
        yy = np.clip(yy + 1, 0, padded.shape[0] - 1)
        xx = np.clip(xx + 1, 0, padded.shape[1] - 1)
        return padded[yy, xx]

    patch = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    outside = (u < -1) | (v < -1) | (u > bitmap.width) | (v > bitmap.height)
    patch[outside] = 0.0
    return r0, c0, np.clip(patch, 0.0, 1.0)


def _blend(page: np.ndarray, keep: np.ndarray, color: RGB) -> np.ndarray:
    col = np.asarray(color, dtype=np.float64)
    out = col + (page.astype(np.float64) - col) * keep[..., None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def insert_watermark(
    page: np.ndarray,
    bitmap: WordBitmap,
    angle: float,
    anchor: tuple[float, float],
    t: float,
    color: RGB = (0, 0, 0),
    clamp: bool = True,
) -> tuple[np.ndarray, RotatedBox]:
    """Composite one rotated word onto a copy of ``page``.

    Blend: ``out = (1 - t*cov) * page + t*cov * color``. The returned box is
    the unrotated ink extent around ``anchor``; it is clamped to [0, 1]
    unless ``clamp`` is false.
    """
    page = as_page(page)
    if not 0.1 <= t <= 0.6:
        raise ParameterError(f"transparency {t} outside [0.1, 0.6]")
    h, w = page.shape[:2]
    anchor, box = _stamp_box(bitmap, angle, anchor, w, h)
    r0, c0, patch = rotated_coverage(bitmap, angle, anchor, w, h)
    out = page.copy()
    if patch.size:
        r1, c1 = r0 + patch.shape[0], c0 + patch.shape[1]
        out[r0:r1, c0:c1] = _blend(page[r0:r1, c0:c1], 1.0 - t * patch, color)
    return out, (box.clamped() if clamp else box)


@dataclass
class PageAnnotation:
    """Ground truth for one rendered page; ``params is None`` means no watermark."""

    image_id: str
    params: PageParams | None
    boxes: list[RotatedBox]
    word: str
    point_size: float | None = None
    size_clamped: bool = False
    offset: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "params": None if self.params is None else self.params.to_dict(),
            "word": self.word,
            "point_size": self.point_size,
            "size_clamped": self.size_clamped,
            "offset": None if self.offset is None else list(self.offset),
            "boxes": [b.to_dict() for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PageAnnotation":
        params = data.get("params")
        offset = data.get("offset")
        return cls(
            image_id=data["image_id"],
            params=None if params is None else PageParams.from_dict(params),
            boxes=[RotatedBox.from_dict(b) for b in data.get("boxes", [])],
            word=data.get("word", ""),
            point_size=data.get("point_size"),
            size_clamped=bool(data.get("size_clamped", False)),
            offset=None if offset is None else (float(offset[0]), float(offset[1])),
        )


def grid_anchors(w: int, h: int, n: int, offset: tuple[float, float]) -> list[tuple[float, float]]:
    """Cell-centred grid positions shifted by one page-level offset, column-major."""
    dx, dy = offset
    return [((j - 0.5) * w / n + dx, (k - 0.5) * h / n + dy) for j in range(1, n + 1) for k in range(1, n + 1)]


def wrender_page(
    doc: np.ndarray,
    params: PageParams | None,
    rng: Rng,
    fonts: FontCatalog,
    *,
    image_id: str = "",
    color: RGB = (0, 0, 0),
    fill: float = DEFAULT_FILL,
) -> tuple[np.ndarray, PageAnnotation]:
    """Stamp a ``grid_dim x grid_dim`` watermark pattern onto ``doc``.

    Draws the grid offset from ``rng``. Boxes are kept for every anchor on
    the page and reported unclamped, so per-page widths, heights and angles
    are bit-identical.
    """
    doc = as_page(doc)
    if params is None:
        return doc.copy(), PageAnnotation(image_id, None, [], "")
    h, w = doc.shape[:2]
    n = params.grid_dim
    font_path = fonts.path(params.font_id)
    size, clamped = fit_point_size(params.word, font_path, n, w, fill)
    bitmap = rasterize_word(params.word, font_path, size)
    offset = (rng.uniform(0.0, w / (2 * n)), rng.uniform(0.0, h / (2 * n)))
    keep = np.ones((h, w), dtype=np.float64)
    boxes = []
    for anchor in grid_anchors(w, h, n, offset):
        if not (0.0 <= anchor[0] < w and 0.0 <= anchor[1] < h):
            continue
        snapped, box = _stamp_box(bitmap, params.angle, anchor, w, h)
        r0, c0, patch = rotated_coverage(bitmap, params.angle, snapped, w, h)
        if patch.size:
            keep[r0:r0 + patch.shape[0], c0:c0 + patch.shape[1]] *= 1.0 - params.transparency * patch
        boxes.append(box)
    image = _blend(doc, keep, color)
    ann = PageAnnotation(image_id, params, boxes, params.word, size, clamped, offset)
    return image, ann
