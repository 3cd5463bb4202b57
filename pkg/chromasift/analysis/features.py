from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Literal, Tuple

import numpy as np

from errors import InvalidConfig, NonFiniteInput
from ingest import PixelGrid

logger = logging.getLogger("chromasift.features")

Channel = Literal["R", "G", "B"]
CHANNELS: Tuple[Channel, ...] = ("R", "G", "B")
CHANNEL_AXIS: Dict[str, int] = {"R": 0, "G": 1, "B": 2}

BIN_COUNT = 256
HIGH_BAND = (180, 255)  # 両端含む
LOW_BAND = (0, 89)

# 平均輝度の定性ラベル（レポート用のみ。判定には使わない）
LEVEL_EDGES = (85.0, 170.0)


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class MeanVector:
    r_mean: float
    g_mean: float
    b_mean: float

    def __post_init__(self) -> None:
        for name in ("r_mean", "g_mean", "b_mean"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise NonFiniteInput("mean component is NaN or infinite", component=name)
            if not (0.0 <= v <= 255.0):
                raise InvalidConfig("mean component out of [0, 255]", component=name, value=v)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.r_mean, self.g_mean, self.b_mean)

    def component(self, channel: str) -> float:
        return self.as_tuple()[CHANNEL_AXIS[channel]]


@dataclass(frozen=True, eq=False)
class ChannelHistogram:
    channel: Channel
    bins: np.ndarray  # 256 要素、合計 1

    def __post_init__(self) -> None:
        if self.channel not in CHANNEL_AXIS:
            raise InvalidConfig("unknown channel", channel=self.channel)
        # 呼び出し側の配列は凍結しない
        object.__setattr__(self, "bins", np.array(self.bins, dtype=np.float64, copy=True))
        if self.bins.shape != (BIN_COUNT,):
            raise InvalidConfig("histogram must have 256 bins", shape=tuple(self.bins.shape))
        if np.any(self.bins < 0):
            raise InvalidConfig("histogram bins must be non-negative", channel=self.channel)
        if abs(float(self.bins.sum()) - 1.0) > 1e-9:
            raise InvalidConfig("histogram bins must sum to 1", total=float(self.bins.sum()))
        self.bins.setflags(write=False)

    def mean_intensity(self) -> float:
        return float(np.dot(np.arange(BIN_COUNT, dtype=np.float64), self.bins))


@dataclass(frozen=True)
class HistogramStats:
    peak_value: float
    peak_bin: int
    high_band_mass: float
    low_band_mass: float
    skewness: float
    total_variation: float


@dataclass(frozen=True, eq=False)
class ColorFeature:
    frame_index: int
    mean: MeanVector
    histograms: Dict[str, ChannelHistogram]
    stats: Dict[str, HistogramStats]

    def __post_init__(self) -> None:
        if set(self.histograms) != set(CHANNELS) or set(self.stats) != set(CHANNELS):
            raise InvalidConfig("exactly one histogram and stats entry per channel is required")

    def peak_value(self, channel: str) -> float:
        return self.stats[channel].peak_value


# ---------------------------
# Operations
# ---------------------------

def channel_means(grid: PixelGrid) -> MeanVector:
    """チャネル毎の算術平均。uint64 で総和を取るので 2^32 画素でも桁あふれしない。"""
    flat = grid.pixels.reshape(-1, 3)
    totals = flat.sum(axis=0, dtype=np.uint64)
    p = grid.pixel_count
    r, g, b = (int(t) / p for t in totals)
    return MeanVector(r_mean=r, g_mean=g, b_mean=b)


def channel_counts(grid: PixelGrid, channel: str) -> np.ndarray:
    # 正規化前の度数（int64）
    values = grid.pixels[:, :, CHANNEL_AXIS[channel]].ravel()
    return np.bincount(values, minlength=BIN_COUNT).astype(np.int64)


def channel_histogram(grid: PixelGrid, channel: str) -> ChannelHistogram:
    if channel not in CHANNEL_AXIS:
        raise InvalidConfig("unknown channel", channel=channel)
    counts = channel_counts(grid, channel)
    bins = counts.astype(np.float64) / float(grid.pixel_count)
    return ChannelHistogram(channel=channel, bins=bins)  # type: ignore[arg-type]


def histogram_stats(h: ChannelHistogram) -> HistogramStats:
    bins = np.asarray(h.bins, dtype=np.float64)
    # argmax は同値なら最小インデックスを返す
    peak_bin = int(np.argmax(bins))
    peak_value = float(bins[peak_bin])

    high = float(bins[HIGH_BAND[0]:HIGH_BAND[1] + 1].sum())
    low = float(bins[LOW_BAND[0]:LOW_BAND[1] + 1].sum())

    levels = np.arange(BIN_COUNT, dtype=np.float64)
    mu = float(np.dot(levels, bins))
    centered = levels - mu
    var = float(np.dot(centered ** 2, bins))
    if var <= 0.0:
        # 一点集中（分散 0）の歪度は 0 とする
        skew = 0.0
    else:
        skew = float(np.dot(centered ** 3, bins) / var ** 1.5)

    tv = float(np.abs(np.diff(bins)).sum())

    return HistogramStats(
        peak_value=peak_value,
        peak_bin=peak_bin,
        high_band_mass=high,
        low_band_mass=low,
        skewness=skew,
        total_variation=tv,
    )


def channel_level(value: float) -> str:
    if value < LEVEL_EDGES[0]:
        return "Low"
    if value < LEVEL_EDGES[1]:
        return "Medium"
    return "High"


def extract_features(grid: PixelGrid, frame_index: int) -> ColorFeature:
    """1 フレーム分の平均ベクトル・3ch ヒストグラム・統計量をまとめて計算する。"""
    mean = channel_means(grid)
    histograms = {c: channel_histogram(grid, c) for c in CHANNELS}
    stats = {c: histogram_stats(histograms[c]) for c in CHANNELS}
    logger.debug(
        "features index=%d mean=(%.3f,%.3f,%.3f) r_peak=%.4f g_peak=%.4f b_peak=%.4f",
        frame_index,
        mean.r_mean,
        mean.g_mean,
        mean.b_mean,
        stats["R"].peak_value,
        stats["G"].peak_value,
        stats["B"].peak_value,
    )
    return ColorFeature(frame_index=frame_index, mean=mean, histograms=histograms, stats=stats)
