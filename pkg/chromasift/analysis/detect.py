from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Sequence, Tuple

from errors import InvalidConfig, LengthMismatch, TooFewFrames

from .cluster import ClusterModel, rarity_flags
from .features import CHANNELS, ColorFeature

logger = logging.getLogger("chromasift.detect")

Grade = Literal["Stable", "Suspicious", "HighlyAnomalous"]
GRADES: Tuple[Grade, ...] = ("Stable", "Suspicious", "HighlyAnomalous")
GRADE_RANK: Dict[str, int] = {g: i for i, g in enumerate(GRADES)}

DEFAULT_RESPONSE_THRESHOLD = 0.25
DEFAULT_RULE_CHANNELS: Tuple[str, ...] = ("R",)

# 発火したルールに付ける戦術的な読み（判定には使わない）
CHANNEL_CUES: Dict[str, str] = {
    "R": "赤チャネル急増: 強い光源・炎・爆発・金属反射の可能性",
    "G": "緑チャネル急増: 照明条件の変化の可能性",
    "B": "青チャネル突出: 夜間シーン・鏡面反射・ガラス面の可能性",
}
RARITY_CUE = "孤立した色構造: 突発的な光源・反射・新たな対象の出現の可能性"


# ---------------------------
# Types
# ---------------------------

@dataclass(frozen=True)
class DetectorConfig:
    response_threshold: float = DEFAULT_RESPONSE_THRESHOLD
    rule_channels: Tuple[str, ...] = DEFAULT_RULE_CHANNELS
    # 比較基準は「自分以外の全フレームのピーク値の平均」に固定
    comparison: Literal["leave_one_out_mean"] = "leave_one_out_mean"

    def __post_init__(self) -> None:
        if not (self.response_threshold > 0.0):
            raise InvalidConfig("response_threshold must be > 0", threshold=self.response_threshold)
        if not self.rule_channels:
            raise InvalidConfig("rule_channels must be non-empty")
        unknown = [c for c in self.rule_channels if c not in CHANNELS]
        if unknown:
            raise InvalidConfig("unknown rule channel", channels=",".join(unknown))
        # 重複を除き R,G,B の順に正規化
        normalized = tuple(c for c in CHANNELS if c in self.rule_channels)
        object.__setattr__(self, "rule_channels", normalized)
        if self.comparison != "leave_one_out_mean":
            raise InvalidConfig("unsupported comparison", comparison=self.comparison)


@dataclass(frozen=True)
class AnomalyVerdict:
    frame_index: int
    structurally_rare: bool
    channel_flags: Dict[str, bool]
    grade: Grade
    rationale: Tuple[str, ...]
    evidence: Tuple[Dict[str, Any], ...] = field(default=())
    cues: Tuple[str, ...] = field(default=())

    @property
    def any_channel_flag(self) -> bool:
        return any(self.channel_flags.values())


# ---------------------------
# Rules
# ---------------------------

def leave_one_out_baselines(peaks: Sequence[float]) -> List[float]:
    n = len(peaks)
    if n < 2:
        raise TooFewFrames("leave-one-out baseline needs at least 2 frames", n=n)
    # 自分の値を含む総和から引かず、前後の部分和だけで作る（自分のピークに依存しない）
    values = [float(p) for p in peaks]
    prefix = [0.0] + list(itertools.accumulate(values[:-1]))
    suffix = list(itertools.accumulate(reversed(values[1:])))[::-1] + [0.0]
    return [(before + after) / (n - 1) for before, after in zip(prefix, suffix)]


def peak_response_flags(peaks: Sequence[float], threshold: float) -> List[bool]:
    """peak_i > (1 + threshold) * mean_{j != i}(peak_j) を厳密不等号で判定する。"""
    baselines = leave_one_out_baselines(peaks)
    return [p > (1.0 + threshold) * b for p, b in zip(peaks, baselines)]


def channel_response_flags(
    features: Sequence[ColorFeature],
    channel: str,
    config: DetectorConfig,
) -> List[bool]:
    if channel not in CHANNELS:
        raise InvalidConfig("unknown channel", channel=channel)
    if len(features) < 2:
        raise TooFewFrames("channel response rule needs at least 2 frames", n=len(features))
    peaks = [f.peak_value(channel) for f in features]
    return peak_response_flags(peaks, config.response_threshold)


def grade_frame(structurally_rare: bool, any_channel_flag: bool) -> Grade:
    if structurally_rare and any_channel_flag:
        return "HighlyAnomalous"
    if structurally_rare or any_channel_flag:
        return "Suspicious"
    return "Stable"


def max_grade(verdicts: Sequence[AnomalyVerdict]) -> Grade:
    if not verdicts:
        return "Stable"
    return max((v.grade for v in verdicts), key=lambda g: GRADE_RANK[g])


# ---------------------------
# Composite detection
# ---------------------------

def run_detection(
    features: Sequence[ColorFeature],
    model: ClusterModel,
    config: DetectorConfig,
) -> List[AnomalyVerdict]:
    """
    構造的希少性（単独クラスタ）とチャネル応答（ピーク値の LOO 比較）を合成して
    フレーム毎の判定・根拠を作る。
    """
    n = len(features)
    if n != len(model.assignments):
        raise LengthMismatch(
            "features and cluster assignments differ in length",
            features=n,
            assignments=len(model.assignments),
        )
    if n < 2:
        raise TooFewFrames("detection needs at least 2 frames", n=n)

    rare = rarity_flags(model.assignments)
    sizes = model.cluster_sizes()

    per_channel: Dict[str, Tuple[List[float], List[float], List[bool]]] = {}
    for c in config.rule_channels:
        peaks = [f.peak_value(c) for f in features]
        baselines = leave_one_out_baselines(peaks)
        flags = channel_response_flags(features, c, config)
        per_channel[c] = (peaks, baselines, flags)

    factor = 1.0 + config.response_threshold
    verdicts: List[AnomalyVerdict] = []
    for i, feat in enumerate(features):
        cluster_id = model.assignments[i]
        rationale: List[str] = []
        evidence: List[Dict[str, Any]] = []
        cues: List[str] = []

        evidence.append({
            "rule": "structural_rarity",
            "fired": rare[i],
            "cluster": cluster_id,
            "cluster_size": sizes[cluster_id],
            "frames": n,
        })
        if rare[i]:
            rationale.append(
                f"構造的希少: cluster={cluster_id} size={sizes[cluster_id]} "
                f"（{n} フレーム中 1 回のみ出現）"
            )
            cues.append(RARITY_CUE)

        channel_flags: Dict[str, bool] = {}
        for c in config.rule_channels:
            peaks, baselines, flags = per_channel[c]
            peak, baseline, fired = peaks[i], baselines[i], flags[i]
            ratio = peak / baseline if baseline > 0 else float("inf")
            channel_flags[c] = fired
            evidence.append({
                "rule": "channel_response",
                "channel": c,
                "fired": fired,
                "peak": peak,
                "baseline": baseline,
                "ratio": ratio,
                "threshold": config.response_threshold,
            })
            if fired:
                rationale.append(
                    f"{c} チャネル応答: peak={peak:.6f} baseline={baseline:.6f} "
                    f"ratio={ratio:.4f} > {factor:.4f}"
                )
                cues.append(CHANNEL_CUES[c])

        grade = grade_frame(rare[i], any(channel_flags.values()))
        rationale.append(
            f"判定: structurally_rare={str(rare[i]).lower()} "
            f"any_channel_flag={str(any(channel_flags.values())).lower()} -> {grade}"
        )
        verdicts.append(
            AnomalyVerdict(
                frame_index=feat.frame_index,
                structurally_rare=rare[i],
                channel_flags=channel_flags,
                grade=grade,
                rationale=tuple(rationale),
                evidence=tuple(evidence),
                cues=tuple(cues),
            )
        )
        logger.info(
            "verdict index=%d cluster=%d rare=%s flags=%s grade=%s",
            feat.frame_index,
            cluster_id,
            rare[i],
            ",".join(f"{c}:{int(v)}" for c, v in channel_flags.items()),
            grade,
        )

    return verdicts
