"""Split generation, manifests and split statistics.

A manifest is a JSON document listing one record per rendered page, each
with its image path, SHA-256 digest and full ground truth. Records are sorted
by ``image_id`` and serialised with sorted keys, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .geometry import (
    RotatedBox,
    box_to_polygon,
    boxes_to_polygons,
    clip_polygon,
    points_in_convex,
    polygon_area,
    union_area,
)
from .render import FontCatalog, PageAnnotation, load_page, save_page, wrender_page
from .sampling import Rng, derive_seed, load_word_list, sample_page_params, string_key

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BORDER_POLICY = "anchors on page kept; extents reported unclamped"
INK_THRESHOLD = 250
PAGE_SUFFIXES = (".png",)


@dataclass
class GeneratorConfig:
    pages_dir: str
    fonts_dir: str
    words_file: str
    out_dir: str = "out"
    split: str = "train"
    seed: int = 0
    grid_weights: list[float] | None = None
    color: tuple[int, int, int] = (0, 0, 0)
    fill: float = 0.8
    no_watermark_fraction: float = 0.0
    downscale: bool = False
    disjoint_from: list[str] = field(default_factory=list)
    disjoint_words: bool = False
    max_pages: int | None = None
    workers: int = 1

    def __post_init__(self):
        self.color = tuple(int(c) for c in self.color)
        if len(self.color) != 3 or not all(0 <= c <= 255 for c in self.color):
            raise ConfigError(f"color must be three 0-255 integers, got {self.color}")
        if not 0.0 <= self.no_watermark_fraction <= 1.0:
            raise ConfigError("no_watermark_fraction must lie in [0, 1]")
        if not 0.0 < self.fill <= 1.0:
            raise ConfigError("fill must lie in (0, 1]")
        if self.grid_weights is not None:
            self.grid_weights = [float(w) for w in self.grid_weights]

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "GeneratorConfig":
        """Load a JSON config; relative paths resolve against the config's directory."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("pages_dir", "fonts_dir", "words_file", "out_dir"):
            if key in raw and not Path(raw[key]).is_absolute():
                raw[key] = str(path.parent / raw[key])
        raw["disjoint_from"] = [
            p if Path(p).is_absolute() else str(path.parent / p) for p in raw.get("disjoint_from", [])
        ]
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def manifest_config(self) -> dict:
        return {
            "seed": self.seed,
            "grid_weights": self.grid_weights,
            "color": list(self.color),
            "fill": self.fill,
            "no_watermark_fraction": self.no_watermark_fraction,
            "downscale": self.downscale,
            "border_policy": BORDER_POLICY,
        }


@dataclass
class Catalogs:
    fonts: FontCatalog
    words: list[str]

    @classmethod
    def load(cls, config: GeneratorConfig) -> "Catalogs":
        if not Path(config.fonts_dir).is_dir():
            raise ConfigError(f"font directory not found: {config.fonts_dir}")
        if not Path(config.words_file).is_file():
            raise ConfigError(f"word list not found: {config.words_file}")
        fonts = FontCatalog.from_directory(config.fonts_dir)
        words = load_word_list(config.words_file)
        if not len(fonts):
            raise ConfigError(f"no .ttf/.otf fonts in {config.fonts_dir}")
        if not words:
            raise ConfigError(f"no usable a-z words in {config.words_file}")
        return cls(fonts, words)


def check_disjoint(catalogs: Catalogs, manifests: Sequence[str | Path], words: bool = False) -> None:
    """Raise if a font (or, with ``words``, a word) is shared with the splits behind ``manifests``."""
    names = set(catalogs.fonts.names)
    vocab = set(catalogs.words)
    for path in manifests:
        other = Manifest.read(path)
        shared_fonts = names & set(other.fonts)
        shared_words = vocab & set(other.words) if words else set()
        if shared_fonts or shared_words:
            raise ConfigError(
                f"catalogs overlap split {other.split!r} ({path}): "
                f"fonts {sorted(shared_fonts)[:5]}, words {sorted(shared_words)[:5]}"
            )


@dataclass
class ManifestRecord:
    image_id: str
    image: str
    source: str
    sha256: str
    width: int
    height: int
    annotation: PageAnnotation

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "image": self.image,
            "source": self.source,
            "sha256": self.sha256,
            "width": self.width,
            "height": self.height,
            "annotation": self.annotation.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestRecord":
        return cls(
            image_id=data["image_id"],
            image=data["image"],
            source=data["source"],
            sha256=data["sha256"],
            width=int(data["width"]),
            height=int(data["height"]),
            annotation=PageAnnotation.from_dict(data["annotation"]),
        )


@dataclass
class Manifest:
    split: str
    config: dict
    fonts: list[str]
    words: list[str]
    records: list[ManifestRecord]
    pages_dir: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.image_id)
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate image_id in manifest")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "split": self.split,
            "config": self.config,
            "pages_dir": self.pages_dir,
            "fonts": self.fonts,
            "words": self.words,
            "records": [r.to_dict() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        try:
            data = json.loads(text)
            if not isinstance(data, dict):
                raise DataError("manifest must be a JSON object")
            if data.get("schema_version") != SCHEMA_VERSION:
                raise DataError(f"unsupported manifest schema {data.get('schema_version')!r}")
            return cls(
                split=data["split"],
                config=data["config"],
                fonts=list(data["fonts"]),
                words=list(data["words"]),
                records=[ManifestRecord.from_dict(r) for r in data["records"]],
                pages_dir=data.get("pages_dir", ""),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"corrupt manifest: {exc}") from None

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        return cls.loads(text)

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.image_id: r for r in self.records}

    def verify(self, base_dir: str | Path) -> None:
        """Check every referenced image exists and matches its digest."""
        base = Path(base_dir)
        for rec in self.records:
            path = base / rec.image
            if not path.is_file():
                raise DataError(f"{rec.image_id}: missing image {path}")
            if sha256_file(path) != rec.sha256:
                raise DataError(f"{rec.image_id}: digest mismatch for {path}")


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def list_pages(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"pages directory not found: {directory}")
    return sorted((p for p in directory.iterdir() if p.suffix.lower() in PAGE_SUFFIXES), key=lambda p: p.name)


def no_watermark_indices(n_pages: int, fraction: float) -> set[int]:
    """Evenly spread page indices with exactly ``floor(n_pages * fraction)`` members."""
    frac = Fraction(fraction).limit_denominator(10**6)
    return {i for i in range(n_pages) if math.floor((i + 1) * frac) > math.floor(i * frac)}


@dataclass(frozen=True)
class DownscaleTransform:
    scale_x: float
    scale_y: float


def downscale_page(image: np.ndarray, min_edge: int = 800, max_edge: int = 1024) -> tuple[np.ndarray, DownscaleTransform]:
    """Resize so the longest edge lies in ``[min_edge, max_edge]``; no-op when it already does.

    Normalised box coordinates are scale-free and need no change.
    """
    h, w = image.shape[:2]
    longest = max(h, w)
    if min_edge <= longest <= max_edge:
        return image, DownscaleTransform(1.0, 1.0)
    target = max_edge if longest > max_edge else min_edge
    s = target / longest
    nw, nh = max(1, round(w * s)), max(1, round(h * s))
    out = np.asarray(Image.fromarray(image).resize((nw, nh), Image.Resampling.BILINEAR))
    return out, DownscaleTransform(nw / w, nh / h)


def _image_id(split: str, index: int, source: Path) -> str:
    return f"{split}-{index:06d}-{source.stem}"


def _render_record(
    index: int,
    source: Path,
    page_seed: int,
    skip_watermark: bool | None,
    config: GeneratorConfig,
    catalogs: Catalogs,
    image_id: str,
    images_dir: Path,
    no_wm_fraction: float,
) -> ManifestRecord:
    doc = load_page(source)
    if config.downscale:
        doc, _ = downscale_page(doc)
    rng = Rng(page_seed)
    if skip_watermark is None:
        skip_watermark = rng.uniform() < no_wm_fraction
    params = None if skip_watermark else sample_page_params(rng, catalogs.fonts, catalogs.words, config.grid_weights)
    image, ann = wrender_page(
        doc, params, rng, catalogs.fonts, image_id=image_id, color=config.color, fill=config.fill
    )
    out = images_dir / f"{image_id}.png"
    save_page(image, out)
    return ManifestRecord(
        image_id=image_id,
        image=f"{images_dir.name}/{out.name}",
        source=source.name,
        sha256=sha256_file(out),
        width=image.shape[1],
        height=image.shape[0],
        annotation=ann,
    )


class PageFailures(DataError):
    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = failures
        super().__init__(f"{len(failures)} page(s) failed: " + "; ".join(f"{s}: {e}" for s, e in failures[:5]))


def _run_jobs(jobs: list[tuple], workers: int) -> list[ManifestRecord]:
    records, failures = [], []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(job[1], pool.submit(_render_record, *job)) for job in jobs]
            results = []
            for source, fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:  # reported per page
                    failures.append((source.name, f"{type(exc).__name__}: {exc}"))
            records = results
    else:
        for job in jobs:
            try:
                records.append(_render_record(*job))
            except Exception as exc:  # reported per page
                failures.append((job[1].name, f"{type(exc).__name__}: {exc}"))
    if failures:
        raise PageFailures(failures)
    return records


def generate_split(pages: Sequence[Path], config: GeneratorConfig, catalogs: Catalogs | None = None) -> Manifest:
    """Render every page once into ``config.out_dir`` and write ``manifest.json``.

    Page ``i`` uses a generator seeded from ``(config.seed, i)``; no-watermark
    pages are an evenly spread, deterministic subset.
    """
    catalogs = catalogs or Catalogs.load(config)
    check_disjoint(catalogs, config.disjoint_from, config.disjoint_words)
    pages = list(pages)[: config.max_pages] if config.max_pages else list(pages)
    out = Path(config.out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    skip = no_watermark_indices(len(pages), config.no_watermark_fraction)
    jobs = [
        (i, src, derive_seed(config.seed, i), i in skip, config, catalogs,
         _image_id(config.split, i, src), images_dir, config.no_watermark_fraction)
        for i, src in enumerate(pages)
    ]
    manifest = Manifest(
        split=config.split,
        config=config.manifest_config(),
        fonts=catalogs.fonts.names,
        words=catalogs.words,
        records=_run_jobs(jobs, config.workers),
        pages_dir=str(config.pages_dir),
    )
    manifest.write(out / "manifest.json")
    return manifest


def epoch_seed(master_seed: int, epoch: int, page_id: str) -> int:
    return derive_seed(master_seed, epoch, string_key(page_id))


def dynamic_epoch(
    pages: Sequence[tuple[str, np.ndarray]],
    config: GeneratorConfig,
    epoch: int,
    catalogs: Catalogs,
) -> Iterator[tuple[str, np.ndarray, PageAnnotation]]:
    """Freshly watermark each ``(page_id, image)`` for one training epoch.

    Seeds are keyed by page id, not position, so output per page is
    independent of ordering and differs between epochs.
    """
    if epoch < 0:
        raise ConfigError("epoch index must be >= 0")
    for page_id, doc in pages:
        rng = Rng(epoch_seed(config.seed, epoch, page_id))
        skip = rng.uniform() < config.no_watermark_fraction
        params = None if skip else sample_page_params(rng, catalogs.fonts, catalogs.words, config.grid_weights)
        image, ann = wrender_page(doc, params, rng, catalogs.fonts, image_id=page_id, color=config.color, fill=config.fill)
        yield page_id, image, ann


def generate_epoch(pages: Sequence[Path], config: GeneratorConfig, epoch: int, catalogs: Catalogs | None = None) -> Manifest:
    """Write one dynamically rendered epoch to ``out_dir/epoch_NNN`` with its manifest."""
    catalogs = catalogs or Catalogs.load(config)
    check_disjoint(catalogs, config.disjoint_from, config.disjoint_words)
    pages = list(pages)[: config.max_pages] if config.max_pages else list(pages)
    out = Path(config.out_dir) / f"epoch_{epoch:03d}"
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (i, src, epoch_seed(config.seed, epoch, src.stem), None, config, catalogs,
         f"{config.split}-e{epoch:03d}-{src.stem}", images_dir, config.no_watermark_fraction)
        for i, src in enumerate(pages)
    ]
    manifest = Manifest(
        split=f"{config.split}-epoch{epoch:03d}",
        config={**config.manifest_config(), "epoch": epoch},
        fonts=catalogs.fonts.names,
        words=catalogs.words,
        records=_run_jobs(jobs, config.workers),
        pages_dir=str(config.pages_dir),
    )
    manifest.write(out / "manifest.json")
    return manifest


@dataclass
class SplitStats:
    n_pages: int
    total: int
    mean: float
    std: float
    median: float
    n_boxes: int
    overlap_mean: float
    overlap_std: float
    overlap_median: float
    overlap_source: str

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def table_row(self, name: str) -> str:
        return (
            f"{name:<12} total {self.total:>8d} | mean {self.mean:.2f} ± {self.std:.2f} | "
            f"median {self.median:.1f} | overlap {self.overlap_mean:.2f} ± {self.overlap_std:.2f} "
            f"(median {self.overlap_median:.1f})"
        )


def luminance(image: np.ndarray) -> np.ndarray:
    img = image.astype(np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def ink_overlap(poly: np.ndarray, ink: np.ndarray) -> float:
    """Percent of on-page pixel centres inside ``poly`` that are ink."""
    h, w = ink.shape
    c0 = max(0, math.floor(poly[:, 0].min()))
    c1 = min(w, math.ceil(poly[:, 0].max()) + 1)
    r0 = max(0, math.floor(poly[:, 1].min()))
    r1 = min(h, math.ceil(poly[:, 1].max()) + 1)
    if c0 >= c1 or r0 >= r1:
        return 0.0
    gx, gy = np.meshgrid(np.arange(c0, c1) + 0.5, np.arange(r0, r1) + 0.5)
    inside = points_in_convex(gx, gy, poly)
    n_inside = np.count_nonzero(inside)
    if n_inside == 0:
        return 0.0
    return 100.0 * np.count_nonzero(inside & ink[r0:r1, c0:c1]) / n_inside


def text_overlap(poly: np.ndarray, text_polys: Sequence[np.ndarray]) -> float:
    """Percent of ``poly``'s area covered by the union of the document text boxes."""
    area = polygon_area(poly)
    if area == 0.0:
        return 0.0
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    pieces = []
    for tp in text_polys:
        if np.any(tp.max(axis=0) <= lo) or np.any(tp.min(axis=0) >= hi):
            continue
        piece = clip_polygon(tp, poly)
        if len(piece) >= 3:
            pieces.append(piece)
    return min(100.0, 100.0 * union_area(pieces) / area)


def load_text_boxes(path: str | Path) -> dict[str, list[RotatedBox]]:
    """``{image_id: [box, ...]}`` with boxes as ``[x0, y0, x1, y1(, angle)]`` lists or dicts."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read text boxes {path}: {exc}") from None
    out = {}
    for image_id, boxes in raw.items():
        parsed = []
        for b in boxes:
            if isinstance(b, dict):
                parsed.append(RotatedBox.from_dict(b))
            else:
                parsed.append(RotatedBox(*map(float, b[:4]), float(b[4]) if len(b) > 4 else 0.0))
        out[image_id] = parsed
    return out


def compute_stats(
    manifest: Manifest,
    text_boxes: dict[str, list[RotatedBox]] | None = None,
    pages_dir: str | Path | None = None,
) -> SplitStats:
    """Watermark counts per page and document-text overlap per watermark box.

    With ``text_boxes`` overlap is exact polygon coverage; otherwise it is the
    fraction of dark (luminance < 250) pixels of the clean page under the box.
    """
    counts = [len(r.annotation.boxes) for r in manifest.records]
    if not counts:
        log.warning("split %r has no pages; reporting zeros", manifest.split)
        return SplitStats(0, 0, 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0.0, "none")
    source = "text_boxes" if text_boxes is not None else "ink"
    pages_dir = Path(pages_dir if pages_dir is not None else manifest.pages_dir)
    overlaps: list[float] = []
    for rec in manifest.records:
        if not rec.annotation.boxes:
            continue
        polys = boxes_to_polygons(rec.annotation.boxes, rec.width, rec.height)
        if text_boxes is not None:
            tps = [box_to_polygon(b, rec.width, rec.height) for b in text_boxes.get(rec.image_id, [])]
            overlaps.extend(text_overlap(p, tps) for p in polys)
        else:
            clean = pages_dir / rec.source
            if not clean.is_file():
                raise DataError(f"{rec.image_id}: clean page {clean} not found for ink overlap")
            page = load_page(clean)
            if page.shape[:2] != (rec.height, rec.width):
                page = np.asarray(Image.fromarray(page).resize((rec.width, rec.height), Image.Resampling.BILINEAR))
            ink = luminance(page) < INK_THRESHOLD
            overlaps.extend(ink_overlap(p, ink) for p in polys)
    arr = np.asarray(counts, dtype=np.float64)
    ov = np.asarray(overlaps, dtype=np.float64)
    return SplitStats(
        n_pages=len(counts),
        total=int(arr.sum()),
        mean=float(arr.mean()),
        std=float(arr.std()),
        median=float(statistics.median_low(counts)),
        n_boxes=len(overlaps),
        overlap_mean=float(ov.mean()) if ov.size else 0.0,
        overlap_std=float(ov.std()) if ov.size else 0.0,
        overlap_median=float(np.median(ov)) if ov.size else 0.0,
        overlap_source=source,
    )
