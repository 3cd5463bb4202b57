from __future__ import annotations

import os

import numpy as np
import pytest

from conftest import save_png, uniform_pixels
from errors import DecodeError, EmptyInput, InvalidConfig, InvalidStride, IoError
from ingest import (
    FrameRef,
    PixelGrid,
    discover_frames,
    display_source_id,
    load_and_resize,
    sample_keyframes,
)


# ---------------------------
# discover_frames
# ---------------------------

def test_discover_sorts_by_name_and_filters_extensions(tmp_path):
    for name in ("b.png", "a.jpg", "c.bmp", "notes.txt", "d.PNG"):
        p = tmp_path / name
        if name.endswith(".txt"):
            p.write_text("x")
        else:
            save_png(str(p), uniform_pixels((1, 2, 3)))

    frames = discover_frames(str(tmp_path))

    assert [os.path.basename(f.source_id) for f in frames] == ["a.jpg", "b.png", "c.bmp", "d.PNG"]
    assert [f.index for f in frames] == [0, 1, 2, 3]


def test_discover_glob(tmp_path):
    for name in ("k1.png", "k2.png", "other.png"):
        save_png(str(tmp_path / name), uniform_pixels((0, 0, 0)))

    frames = discover_frames(str(tmp_path / "k*.png"))

    assert [os.path.basename(f.source_id) for f in frames] == ["k1.png", "k2.png"]


def test_discover_empty_directory(tmp_path):
    with pytest.raises(EmptyInput):
        discover_frames(str(tmp_path))


def test_discover_missing_path(tmp_path):
    with pytest.raises(EmptyInput):
        discover_frames(str(tmp_path / "nowhere" / "*.png"))


# ---------------------------
# sample_keyframes
# ---------------------------

def _refs(n):
    return [FrameRef(index=i, source_id=f"f{i:02d}.png") for i in range(n)]


def test_sample_stride_three_of_ten():
    picked = sample_keyframes(_refs(10), 3)
    assert [f.source_id for f in picked] == ["f00.png", "f03.png", "f06.png", "f09.png"]
    assert [f.index for f in picked] == [0, 1, 2, 3]


def test_sample_stride_one_keeps_all():
    refs = _refs(5)
    assert [f.source_id for f in sample_keyframes(refs, 1)] == [f.source_id for f in refs]


def test_sample_stride_larger_than_input():
    picked = sample_keyframes(_refs(4), 10)
    assert [f.source_id for f in picked] == ["f00.png"]


@pytest.mark.parametrize("stride", [0, -1])
def test_sample_invalid_stride(stride):
    with pytest.raises(InvalidStride):
        sample_keyframes(_refs(3), stride)


# ---------------------------
# load_and_resize
# ---------------------------

def test_load_same_size_keeps_pixels(tmp_path):
    rng = np.random.default_rng(7)
    arr = rng.integers(0, 256, size=(8, 6, 3), dtype=np.uint8)
    path = save_png(str(tmp_path / "x.png"), arr)

    grid = load_and_resize(FrameRef(0, path), (6, 8))

    assert (grid.width, grid.height) == (6, 8)
    assert np.array_equal(np.asarray(grid.pixels), arr)


def test_load_uniform_stays_uniform_after_resize(tmp_path):
    path = save_png(str(tmp_path / "u.png"), uniform_pixels((10, 200, 30), 13, 7))

    grid = load_and_resize(FrameRef(0, path), (256, 256))

    assert grid.pixels.shape == (256, 256, 3)
    assert np.all(grid.pixels == np.array([10, 200, 30], dtype=np.uint8))


def test_bilinear_upscale_interpolates(tmp_path):
    arr = np.zeros((1, 2, 3), dtype=np.uint8)
    arr[0, 1] = 255
    path = save_png(str(tmp_path / "ramp.png"), arr)

    grid = load_and_resize(FrameRef(0, path), (4, 1))
    row = grid.pixels[0, :, 0].astype(int)

    # ピクセル中心基準: 端は clamp、中間は 1/4, 3/4 の補間
    for got, want in zip(row, [0, 64, 191, 255]):
        assert abs(got - want) <= 1


def test_bilinear_downscale_averages_area(tmp_path):
    arr = np.zeros((1, 4, 3), dtype=np.uint8)
    arr[0, 2:] = 255
    path = save_png(str(tmp_path / "step.png"), arr)

    grid = load_and_resize(FrameRef(0, path), (2, 1))
    row = grid.pixels[0, :, 0].astype(int)

    # 縮小時はフィルタ幅が倍率に合わせて広がる（重み 0.75, 0.75, 0.25 の加重平均）
    for got, want in zip(row, [36, 219]):
        assert abs(got - want) <= 1


def test_load_drops_alpha(tmp_path):
    from PIL import Image

    path = str(tmp_path / "rgba.png")
    Image.new("RGBA", (3, 3), (50, 60, 70, 0)).save(path)

    grid = load_and_resize(FrameRef(0, path), (3, 3))

    assert np.all(grid.pixels == np.array([50, 60, 70], dtype=np.uint8))


def test_load_grayscale_is_expanded(tmp_path):
    from PIL import Image

    path = str(tmp_path / "gray.png")
    Image.new("L", (2, 2), 77).save(path)

    grid = load_and_resize(FrameRef(0, path), (2, 2))

    assert np.all(grid.pixels == 77)


def test_load_corrupt_file(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"not an image at all")

    with pytest.raises(DecodeError) as ei:
        load_and_resize(FrameRef(3, str(path)), (4, 4))
    assert ei.value.context["index"] == 3


def test_load_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_and_resize(FrameRef(0, str(tmp_path / "gone.png")), (4, 4))


# ---------------------------
# PixelGrid
# ---------------------------

def test_pixel_grid_is_read_only():
    grid = PixelGrid.from_array(uniform_pixels((1, 1, 1)))
    with pytest.raises(ValueError):
        grid.pixels[0, 0, 0] = 9


def test_pixel_grid_from_array_does_not_freeze_caller():
    arr = uniform_pixels((1, 1, 1))
    PixelGrid.from_array(arr)
    arr[0, 0, 0] = 5
    assert arr[0, 0, 0] == 5


def test_pixel_grid_constructor_does_not_freeze_caller():
    arr = uniform_pixels((1, 1, 1))
    grid = PixelGrid(width=4, height=4, pixels=arr)

    arr[0, 0, 0] = 5
    assert arr.flags.writeable
    assert grid.pixels[0, 0, 0] == 1
    assert not grid.pixels.flags.writeable


def test_pixel_grid_shape_mismatch():
    with pytest.raises(InvalidConfig):
        PixelGrid(width=3, height=4, pixels=np.zeros((4, 4, 3), dtype=np.uint8))


def test_frame_ref_rejects_negative_index():
    with pytest.raises(InvalidConfig):
        FrameRef(index=-1, source_id="x.png")


@pytest.mark.skipif(os.name != "posix", reason="surrogateescape はバイト列パスの OS のみ")
def test_display_id_escapes_non_utf8_bytes():
    ref = FrameRef(0, os.fsdecode(b"frames/f\xff0.png"))

    assert ref.display_id == "frames/f\\xff0.png"
    ref.display_id.encode("utf-8")
    assert display_source_id("frames/夜間_01.png") == "frames/夜間_01.png"
