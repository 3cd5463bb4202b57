from __future__ import annotations

import glob
import logging
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import DecodeError, EmptyInput, InvalidConfig, InvalidStride, IoError

logger = logging.getLogger("chromasift.ingest")


# ---------------------------
# Defaults
# ---------------------------

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}
DEFAULT_RESIZE: Tuple[int, int] = (256, 256)  # (width, height)
DEFAULT_STRIDE = 1


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class FrameRef:
    index: int
    source_id: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise InvalidConfig("frame index must be >= 0", index=self.index)
        if not self.source_id:
            raise InvalidConfig("source_id is empty", index=self.index)

    @property
    def display_id(self) -> str:
        return display_source_id(self.source_id)


def display_source_id(source_id: str) -> str:
    """
    レポート出力用の表示名。UTF-8 でないファイル名（surrogateescape された文字）は
    元のバイト列を \\xNN で表す。
    """
    return os.fsencode(source_id).decode("utf-8", "backslashreplace")


@dataclass(frozen=True, eq=False)
class PixelGrid:
    """
    リサイズ済みの 8bit RGB ラスタ。
    pixels は shape (height, width, 3) / dtype uint8 の row-major 配列。
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidConfig("pixel grid must be non-empty", width=self.width, height=self.height)
        if self.pixels.shape != (self.height, self.width, 3):
            raise InvalidConfig(
                "pixel array shape does not match grid dimensions",
                shape=tuple(self.pixels.shape),
                width=self.width,
                height=self.height,
            )
        if self.pixels.dtype != np.uint8:
            raise InvalidConfig("pixel array must be uint8", dtype=str(self.pixels.dtype))
        # 呼び出し側の配列は凍結せず、複製を読み取り専用にして持つ
        frozen = np.array(self.pixels, dtype=np.uint8, order="C", copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "pixels", frozen)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelGrid":
        data = np.asarray(arr, dtype=np.uint8)
        if data.ndim != 3 or data.shape[2] != 3:
            raise InvalidConfig("expected an (H, W, 3) array", shape=tuple(data.shape))
        return cls(width=int(data.shape[1]), height=int(data.shape[0]), pixels=data)

    def same_pixels(self, other: "PixelGrid") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.pixels, other.pixels))
        )


# ---------------------------
# Discovery / sampling
# ---------------------------

def _is_image_path(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in IMAGE_EXTENSIONS


def _candidate_paths(path_spec: str) -> List[str]:
    if os.path.isdir(path_spec):
        return [
            os.path.join(path_spec, name)
            for name in os.listdir(path_spec)
            if os.path.isfile(os.path.join(path_spec, name))
        ]
    if os.path.isfile(path_spec):
        return [path_spec]
    return [p for p in glob.glob(path_spec) if os.path.isfile(p)]


def discover_frames(path_spec: str) -> List[FrameRef]:
    """
    ディレクトリまたは glob から画像ファイル（PNG/JPEG/BMP）を集め、
    source_id のバイト列の辞書順で並べて 0..N-1 を振る。
    """
    if not path_spec:
        raise EmptyInput("input path is empty")

    paths = [p for p in _candidate_paths(path_spec) if _is_image_path(p)]
    if not paths:
        raise EmptyInput("no PNG/JPEG/BMP files matched", path_spec=path_spec)

    # ファイルシステムの列挙順に依存しないようバイト列でソート
    paths.sort(key=os.fsencode)

    for p in paths:
        if not os.access(p, os.R_OK):
            raise IoError("input file is not readable", path=p)

    frames = [FrameRef(index=i, source_id=p) for i, p in enumerate(paths)]
    logger.info("frames_discovered count=%d path_spec=%s", len(frames), path_spec)
    return frames


def sample_keyframes(frames: Sequence[FrameRef], stride: int) -> List[FrameRef]:
    """等間隔抽出: 元の 0, stride, 2*stride, ... 番目を取り、0..M-1 に振り直す。"""
    if not isinstance(stride, int) or isinstance(stride, bool) or stride < 1:
        raise InvalidStride("stride must be a positive integer", stride=stride)

    picked = list(frames)[::stride]
    sampled = [FrameRef(index=i, source_id=f.source_id) for i, f in enumerate(picked)]
    logger.info("keyframes_sampled total=%d stride=%d kept=%d", len(frames), stride, len(sampled))
    return sampled


# ---------------------------
# Decode / resize
# ---------------------------

def _to_rgb(img: Image.Image) -> Image.Image:
    # アルファは捨てる / グレースケール・パレットは 3ch に展開
    if img.mode == "RGB":
        # with ブロックを抜けると元画像は close されるので複製して返す
        return img.copy()
    if img.mode in ("RGBA", "LA", "P", "PA", "L", "1", "CMYK", "YCbCr", "RGBX"):
        return img.convert("RGB")
    if img.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
        # 16bit/32bit グレースケールは 8bit に落としてから展開
        arr = np.asarray(img, dtype=np.float64)
        peak = 65535.0 if img.mode.startswith("I;16") else max(float(arr.max()), 1.0)
        scaled = np.clip(np.rint(arr * 255.0 / peak), 0, 255).astype(np.uint8)
        return Image.fromarray(scaled).convert("RGB")
    return img.convert("RGB")


def load_and_resize(ref: FrameRef, target: Tuple[int, int] = DEFAULT_RESIZE) -> PixelGrid:
    """
    1 フレームをデコードし target (width, height) へバイリニアでリサイズする。
    既に target と同じサイズなら画素はそのまま。
    """
    width, height = target
    if width < 1 or height < 1:
        raise InvalidConfig("resize target must be at least 1x1", width=width, height=height)

    try:
        with open(ref.source_id, "rb") as f:
            with Image.open(f) as img:
                img.load()
                rgb = _to_rgb(img)
    except FileNotFoundError as e:
        raise IoError("input file not found", path=ref.source_id, index=ref.index) from e
    except PermissionError as e:
        raise IoError("input file is not readable", path=ref.source_id, index=ref.index) from e
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise DecodeError(
            f"cannot decode image: {type(e).__name__}",
            path=ref.source_id,
            index=ref.index,
        ) from e
    except OSError as e:
        # Pillow は壊れた画像でも OSError を投げる（truncated など）
        raise DecodeError(
            f"cannot decode image: {e}",
            path=ref.source_id,
            index=ref.index,
        ) from e

    if rgb.size != (width, height):
        rgb = rgb.resize((width, height), resample=Image.Resampling.BILINEAR)

    grid = PixelGrid.from_array(np.asarray(rgb, dtype=np.uint8))
    logger.debug("frame_loaded index=%d path=%s size=%dx%d", ref.index, ref.source_id, width, height)
    return grid
