from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np
from PIL import Image

from errors import InvalidRecipe, IoError
from ingest import PixelGrid

logger = logging.getLogger("chromasift.synth")

CHANNEL_ORDER = ("R", "G", "B")
REFERENCE_SEQUENCE_FILE = "reference_sequence.json"


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class MassComponent:
    """1 チャネル内の混合成分。spread=0 なら一点集中、>0 ならガウス。"""

    mean: float
    spread: float
    weight: float


ChannelRecipe = Tuple[MassComponent, ...]


@dataclass(frozen=True)
class SceneSpec:
    name: str
    channels: Dict[str, ChannelRecipe]
    width: int
    height: int
    seed: int

    def __post_init__(self) -> None:
        validate_recipe(self.channels)
        if self.width < 1 or self.height < 1:
            raise InvalidRecipe("frame dimensions must be at least 1x1", width=self.width, height=self.height)

    def render(self) -> PixelGrid:
        return make_frame(self.channels, (self.width, self.height), self.seed)


# ---------------------------
# Validation
# ---------------------------

def validate_recipe(recipe: Mapping[str, Sequence[MassComponent]]) -> None:
    if set(recipe) != set(CHANNEL_ORDER):
        raise InvalidRecipe("recipe must define exactly the R, G and B channels", channels=",".join(sorted(recipe)))
    for channel in CHANNEL_ORDER:
        components = recipe[channel]
        if not components:
            raise InvalidRecipe("channel recipe is empty", channel=channel)
        total = 0.0
        for comp in components:
            if not (0.0 <= comp.mean <= 255.0):
                raise InvalidRecipe("mass mean outside [0, 255]", channel=channel, mean=comp.mean)
            if not (comp.spread >= 0.0):
                raise InvalidRecipe("mass spread must be >= 0", channel=channel, spread=comp.spread)
            if not (comp.weight >= 0.0):
                raise InvalidRecipe("mass weight must be >= 0", channel=channel, weight=comp.weight)
            total += comp.weight
        if abs(total - 1.0) > 1e-9:
            raise InvalidRecipe("mixture weights must sum to 1", channel=channel, total=total)


def _allocate_counts(weights: Sequence[float], total: int) -> List[int]:
    # 最大剰余法で画素数を割り当てる（端数が同じなら先の成分を優先）
    raw = [w * total for w in weights]
    counts = [int(np.floor(r)) for r in raw]
    leftover = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _draw_channel(components: ChannelRecipe, pixel_count: int, rng: np.random.Generator) -> np.ndarray:
    counts = _allocate_counts([c.weight for c in components], pixel_count)
    parts = []
    for comp, count in zip(components, counts):
        if count == 0:
            continue
        if comp.spread == 0.0:
            parts.append(np.full(count, int(round(comp.mean)), dtype=np.int64))
        else:
            draws = rng.normal(loc=comp.mean, scale=comp.spread, size=count)
            parts.append(np.clip(np.rint(draws), 0, 255).astype(np.int64))
    values = np.concatenate(parts)
    return rng.permutation(values).astype(np.uint8)


# ---------------------------
# Operations
# ---------------------------

def make_uniform_frame(color: Tuple[int, int, int], dims: Tuple[int, int]) -> PixelGrid:
    width, height = dims
    if any(not (0 <= int(c) <= 255) for c in color):
        raise InvalidRecipe("color components must be in [0, 255]", color=tuple(color))
    if width < 1 or height < 1:
        raise InvalidRecipe("frame dimensions must be at least 1x1", width=width, height=height)
    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :] = np.array(color, dtype=np.uint8)
    return PixelGrid.from_array(pixels)


def make_frame(
    recipe: Mapping[str, Sequence[MassComponent]],
    dims: Tuple[int, int],
    seed: int,
) -> PixelGrid:
    """
    チャネル毎の混合分布レシピから画素を生成する。
    成分ごとの画素数は重みから厳密に割り当て、位置は seed 固定の乱数でシャッフルする。
    """
    validate_recipe(recipe)
    width, height = dims
    if width < 1 or height < 1:
        raise InvalidRecipe("frame dimensions must be at least 1x1", width=width, height=height)

    rng = np.random.default_rng(seed)
    p = width * height
    planes = [_draw_channel(tuple(recipe[c]), p, rng).reshape(height, width) for c in CHANNEL_ORDER]
    return PixelGrid.from_array(np.stack(planes, axis=-1))


def _parse_component(raw: Mapping[str, Any]) -> MassComponent:
    try:
        return MassComponent(
            mean=float(raw["mean"]),
            spread=float(raw.get("spread", 0.0)),
            weight=float(raw["weight"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidRecipe(f"malformed mass component: {e}") from e


def load_scene_specs(path: str) -> List[SceneSpec]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise IoError("cannot read recipe file", path=path) from e
    except json.JSONDecodeError as e:
        raise InvalidRecipe(f"recipe file is not valid JSON: {e}", path=path) from e

    width = int(data["width"])
    height = int(data["height"])
    specs = []
    for frame in data["frames"]:
        channels = {
            c: tuple(_parse_component(m) for m in frame["channels"][c])
            for c in frame["channels"]
        }
        specs.append(
            SceneSpec(
                name=str(frame["name"]),
                channels=channels,
                width=width,
                height=height,
                seed=int(frame["seed"]),
            )
        )
    return specs


def _reference_sequence_path() -> str:
    return os.path.join(os.path.dirname(__file__), "fixtures", REFERENCE_SEQUENCE_FILE)


def reference_sequence_specs() -> List[SceneSpec]:
    return load_scene_specs(_reference_sequence_path())


def make_reference_sequence() -> List[PixelGrid]:
    """
    安定ペア（1,3）・赤チャネル急増ペア（2,4）・青ピークを持つ孤立フレーム（5）の
    5 フレームを生成する。レシピは fixtures/reference_sequence.json に固定。
    """
    return [spec.render() for spec in reference_sequence_specs()]


def write_reference_sequence(out_dir: str) -> List[str]:
    """make_reference_sequence の 5 フレームを PNG として書き出す（frame_01.png ...）。"""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError("cannot create output directory", path=out_dir) from e

    written = []
    for spec in reference_sequence_specs():
        grid = spec.render()
        path = os.path.join(out_dir, f"{spec.name}.png")
        try:
            Image.fromarray(np.asarray(grid.pixels)).save(path, format="PNG")
        except OSError as e:
            raise IoError("cannot write synthetic frame", path=path) from e
        written.append(path)
    logger.info("synth_written count=%d out_dir=%s", len(written), out_dir)
    return written
