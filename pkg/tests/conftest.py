import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from wmspot.render import FontCatalog

DEJAVU = Path("/usr/share/fonts/truetype/dejavu")


def _font_dirs() -> list[Path]:
    dirs = [DEJAVU]
    try:  # matplotlib ships DejaVu too, when installed
        import matplotlib
        dirs.append(Path(matplotlib.__file__).parent / "mpl-data" / "fonts" / "ttf")
    except ImportError:
        pass
    return dirs


def _find_font(name: str) -> Path:
    for base in _font_dirs():
        if (base / name).is_file():
            return base / name
    pytest.skip(f"font {name} not available")


@pytest.fixture(scope="session")
def sans() -> Path:
    return _find_font("DejaVuSans.ttf")


@pytest.fixture(scope="session")
def fonts_dir(tmp_path_factory, sans) -> Path:
    d = tmp_path_factory.mktemp("fonts")
    shutil.copy(sans, d / "DejaVuSans.ttf")
    shutil.copy(_find_font("DejaVuSerif.ttf"), d / "DejaVuSerif.ttf")
    return d


@pytest.fixture(scope="session")
def catalog(fonts_dir) -> FontCatalog:
    return FontCatalog.from_directory(fonts_dir)


def synthetic_page(seed: int, w: int = 320, h: int = 400) -> np.ndarray:
    """White page with a few dark 'text line' bars."""
    gen = np.random.default_rng(seed)
    page = np.full((h, w, 3), 255, dtype=np.uint8)
    for _ in range(int(gen.integers(3, 9))):
        y = int(gen.integers(10, h - 20))
        x0 = int(gen.integers(5, w // 3))
        x1 = int(gen.integers(w // 2, w - 5))
        page[y:y + 6, x0:x1] = gen.integers(0, 80)
    return page


def write_pages(directory: Path, n: int, w: int = 320, h: int = 400) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        p = directory / f"page{i:04d}.png"
        Image.fromarray(synthetic_page(i, w, h)).save(p)
        paths.append(p)
    return paths


@pytest.fixture
def workspace(tmp_path, fonts_dir):
    """A config file with 10 clean pages, two fonts and a small word list."""
    write_pages(tmp_path / "pages", 10)
    (tmp_path / "words.txt").write_text("draft\nconfidential\ncopy\nsample\nNon-stop\nsecret\n", encoding="utf-8")
    config = {
        "pages_dir": "pages",
        "fonts_dir": str(fonts_dir),
        "words_file": "words.txt",
        "out_dir": "out",
        "split": "train",
        "seed": 7,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
