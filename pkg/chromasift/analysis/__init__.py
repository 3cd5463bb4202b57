from .cluster import ClusterConfig, ClusterModel, assign_point, kmeans_fit, rarity_flags
from .detect import (
    AnomalyVerdict,
    DetectorConfig,
    channel_response_flags,
    grade_frame,
    max_grade,
    run_detection,
)
from .features import (
    CHANNELS,
    ChannelHistogram,
    ColorFeature,
    HistogramStats,
    MeanVector,
    channel_histogram,
    channel_means,
    extract_features,
    histogram_stats,
)

__all__ = [
    "AnomalyVerdict",
    "CHANNELS",
    "ChannelHistogram",
    "ClusterConfig",
    "ClusterModel",
    "ColorFeature",
    "DetectorConfig",
    "HistogramStats",
    "MeanVector",
    "assign_point",
    "channel_histogram",
    "channel_means",
    "channel_response_flags",
    "extract_features",
    "grade_frame",
    "histogram_stats",
    "kmeans_fit",
    "max_grade",
    "rarity_flags",
    "run_detection",
]
