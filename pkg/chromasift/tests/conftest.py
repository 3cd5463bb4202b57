from __future__ import annotations

import os
import sys
from typing import List

import numpy as np
import pytest
from hypothesis import settings
from PIL import Image

# アプリは flat import（main.py と同じ階層をパスに載せる）
APP_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if APP_DIR not in sys.path:
    sys.path.insert(0, APP_DIR)

settings.register_profile("chromasift", derandomize=True, deadline=None)
settings.load_profile("chromasift")

from analysis import ColorFeature, extract_features  # noqa: E402
from ingest import PixelGrid  # noqa: E402
from synth import make_reference_sequence, write_reference_sequence  # noqa: E402


@pytest.fixture(scope="session")
def reference_grids() -> List[PixelGrid]:
    return make_reference_sequence()


@pytest.fixture(scope="session")
def reference_features(reference_grids: List[PixelGrid]) -> List[ColorFeature]:
    return [extract_features(g, i) for i, g in enumerate(reference_grids)]


@pytest.fixture
def reference_dir(tmp_path) -> str:
    out = tmp_path / "frames"
    write_reference_sequence(str(out))
    return str(out)


def save_png(path: str, pixels: np.ndarray) -> str:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG")
    return path


def uniform_pixels(color, width: int = 4, height: int = 4) -> np.ndarray:
    arr = np.empty((height, width, 3), dtype=np.uint8)
    arr[:, :] = np.array(color, dtype=np.uint8)
    return arr
