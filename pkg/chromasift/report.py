from __future__ import annotations

import csv
import io
import json
import logging
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence

from typing_extensions import TypedDict

from analysis import CHANNELS, AnomalyVerdict, ClusterModel, ColorFeature
from analysis.features import channel_level
from errors import IoError
from ingest import FrameRef

import matplotlib
matplotlib.use("Agg")  # ファイル出力のみ（画面表示しない）
import matplotlib.pyplot as plt

logger = logging.getLogger("chromasift.report")

SCHEMA_VERSION = "1"
TOOL_VERSION = "0.1.0"

CSV_HEADER = [
    "index",
    "source_id",
    "r_mean",
    "g_mean",
    "b_mean",
    "cluster",
    "r_peak_value",
    "r_peak_bin",
    "r_high_band_mass",
    "g_peak_value",
    "g_peak_bin",
    "g_high_band_mass",
    "b_peak_value",
    "b_peak_bin",
    "b_high_band_mass",
    "structurally_rare",
    "r_flag",
    "g_flag",
    "b_flag",
    "grade",
]

SERIES_COLORS = {"R": "tab:red", "G": "tab:green", "B": "tab:blue"}
_SAVE_METADATA: Dict[str, Dict[str, Any]] = {
    "png": {"Software": None},
    "svg": {"Date": None},
}


# ---------------------------
# Report Types
# ---------------------------

class MeanRecord(TypedDict):
    r: float
    g: float
    b: float


class ChannelStatsRecord(TypedDict):
    peak_value: float
    peak_bin: int
    high_band_mass: float
    low_band_mass: float
    skewness: float
    total_variation: float


class FrameSummary(TypedDict):
    index: int
    source_id: str
    mean: MeanRecord
    levels: Dict[str, str]
    stats: Dict[str, ChannelStatsRecord]


class ClusterSummary(TypedDict):
    id: int
    size: int
    members: List[int]
    centroid: List[float]
    singleton: bool


class ClusterSection(TypedDict):
    k: int
    seed: int
    centroids: List[List[float]]
    assignments: List[int]
    inertia: float
    iterations: int
    inertia_trace: List[float]
    converged: bool
    restarts_run: int
    best_restart: int
    clusters: List[ClusterSummary]


class VerdictRecord(TypedDict):
    frame_index: int
    structurally_rare: bool
    channel_flags: Dict[str, bool]
    grade: str
    rationale: List[str]
    evidence: List[Dict[str, Any]]
    cues: List[str]


class RunReport(TypedDict):
    schema_version: str
    tool_version: str
    config_echo: Dict[str, Any]
    frame_summaries: List[FrameSummary]
    cluster_section: ClusterSection
    verdicts: List[VerdictRecord]


class ChartArtifact(TypedDict):
    path: str
    data: Any  # 描画に渡した系列そのもの（テストはこちらを検証する）


# ---------------------------
# Build
# ---------------------------

def _frame_summary(ref: FrameRef, feat: ColorFeature) -> FrameSummary:
    stats: Dict[str, ChannelStatsRecord] = {}
    for c in CHANNELS:
        s = feat.stats[c]
        stats[c] = ChannelStatsRecord(
            peak_value=float(s.peak_value),
            peak_bin=int(s.peak_bin),
            high_band_mass=float(s.high_band_mass),
            low_band_mass=float(s.low_band_mass),
            skewness=float(s.skewness),
            total_variation=float(s.total_variation),
        )
    return FrameSummary(
        index=feat.frame_index,
        source_id=ref.display_id,
        mean=MeanRecord(r=feat.mean.r_mean, g=feat.mean.g_mean, b=feat.mean.b_mean),
        levels={c: channel_level(feat.mean.component(c)) for c in CHANNELS},
        stats=stats,
    )


def _cluster_section(model: ClusterModel) -> ClusterSection:
    sizes = model.cluster_sizes()
    clusters: List[ClusterSummary] = []
    for j, centroid in enumerate(model.centroids):
        clusters.append(
            ClusterSummary(
                id=j,
                size=sizes[j],
                members=[i for i, a in enumerate(model.assignments) if a == j],
                centroid=[float(v) for v in centroid],
                singleton=sizes[j] == 1,
            )
        )
    return ClusterSection(
        k=model.k,
        seed=model.seed,
        centroids=[[float(v) for v in c] for c in model.centroids],
        assignments=list(model.assignments),
        inertia=float(model.inertia),
        iterations=model.iterations_run,
        inertia_trace=[float(v) for v in model.inertia_trace],
        converged=model.converged,
        restarts_run=model.restarts_run,
        best_restart=model.best_restart,
        clusters=clusters,
    )


def _plain(value: Any) -> Any:
    # numpy スカラーやタプルを JSON にそのまま載る形へ
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return int(value)
    if hasattr(value, "item"):
        return _plain(value.item())
    if isinstance(value, float):
        return float(value)
    return value


def _verdict_record(v: AnomalyVerdict) -> VerdictRecord:
    return VerdictRecord(
        frame_index=v.frame_index,
        structurally_rare=v.structurally_rare,
        channel_flags=dict(v.channel_flags),
        grade=v.grade,
        rationale=list(v.rationale),
        evidence=[_plain(e) for e in v.evidence],
        cues=list(v.cues),
    )


def build_report(
    config_echo: Mapping[str, Any],
    frames: Sequence[FrameRef],
    features: Sequence[ColorFeature],
    model: ClusterModel,
    verdicts: Sequence[AnomalyVerdict],
) -> RunReport:
    return RunReport(
        schema_version=SCHEMA_VERSION,
        tool_version=TOOL_VERSION,
        config_echo=_plain(dict(config_echo)),
        frame_summaries=[_frame_summary(r, f) for r, f in zip(frames, features)],
        cluster_section=_cluster_section(model),
        verdicts=[_verdict_record(v) for v in verdicts],
    )


# ---------------------------
# JSON / CSV
# ---------------------------

def _ensure_parent(destination: str) -> None:
    parent = os.path.dirname(os.path.abspath(destination))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as e:
        raise IoError("cannot create output directory", path=parent) from e


def to_canonical_json(report: RunReport) -> str:
    # キーはソート、実数は repr（最短で往復可能な表現）
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def emit_json(report: RunReport, destination: str) -> str:
    # 先に文字列・バイト列まで作る（失敗時に書きかけのファイルを残さない）
    data = to_canonical_json(report).encode("utf-8")
    _ensure_parent(destination)
    try:
        with open(destination, "wb") as f:
            f.write(data)
    except OSError as e:
        raise IoError("cannot write JSON report", path=destination) from e
    logger.info("report_written format=json path=%s", destination)
    return destination


def load_json(path: str) -> RunReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise IoError("cannot read JSON report", path=path) from e


def _csv_bool(value: Optional[bool]) -> str:
    if value is None:
        return ""
    return "true" if value else "false"


def csv_rows(report: RunReport) -> List[List[str]]:
    rows: List[List[str]] = []
    assignments = report["cluster_section"]["assignments"]
    for summary, verdict in zip(report["frame_summaries"], report["verdicts"]):
        i = summary["index"]
        row = [
            str(i),
            summary["source_id"],
            repr(summary["mean"]["r"]),
            repr(summary["mean"]["g"]),
            repr(summary["mean"]["b"]),
            str(assignments[i]),
        ]
        for c in CHANNELS:
            s = summary["stats"][c]
            row += [repr(s["peak_value"]), str(s["peak_bin"]), repr(s["high_band_mass"])]
        row.append(_csv_bool(verdict["structurally_rare"]))
        for c in CHANNELS:
            row.append(_csv_bool(verdict["channel_flags"].get(c)))
        row.append(verdict["grade"])
        rows.append(row)
    return rows


def to_csv_text(report: RunReport) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(csv_rows(report))
    return buf.getvalue()


def emit_csv(report: RunReport, destination: str) -> str:
    data = to_csv_text(report).encode("utf-8")
    _ensure_parent(destination)
    try:
        with open(destination, "wb") as f:
            f.write(data)
    except OSError as e:
        raise IoError("cannot write CSV report", path=destination) from e
    logger.info("report_written format=csv path=%s", destination)
    return destination


# ---------------------------
# Charts
# ---------------------------

def histogram_series(feat: ColorFeature) -> Dict[str, List[float]]:
    series: Dict[str, List[float]] = {"x": [float(i) for i in range(256)]}
    for c in CHANNELS:
        series[c] = [float(v) for v in feat.histograms[c].bins]
    return series


def cluster_scatter_table(features: Sequence[ColorFeature], model: ClusterModel) -> List[Dict[str, Any]]:
    sizes = model.cluster_sizes()
    table = []
    for feat, cluster in zip(features, model.assignments):
        table.append({
            "frame_index": feat.frame_index,
            "r_mean": feat.mean.r_mean,
            "cluster": cluster,
            "cluster_size": sizes[cluster],
            "singleton": sizes[cluster] == 1,
        })
    return table


def _save(fig: Any, path: str, ext: str) -> None:
    try:
        fig.savefig(path, format=ext, dpi=100, metadata=_SAVE_METADATA.get(ext))
    except OSError as e:
        raise IoError("cannot write chart", path=path) from e
    finally:
        plt.close(fig)


def render_histograms(features: Sequence[ColorFeature], out_dir: str, ext: str = "png") -> List[ChartArtifact]:
    """フレーム毎に R/G/B の正規化ヒストグラムを 3 本の折れ線で描く（hist_<index>.<ext>）。"""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError("cannot create chart directory", path=out_dir) from e

    artifacts: List[ChartArtifact] = []
    for feat in features:
        series = histogram_series(feat)
        fig, ax = plt.subplots(figsize=(8, 4.5))
        for c in CHANNELS:
            ax.plot(series["x"], series[c], color=SERIES_COLORS[c], linewidth=1.0, label=c)
        ax.set_xlim(0, 255)
        ax.set_xlabel("Intensity (0-255)")
        ax.set_ylabel("Normalized frequency")
        ax.set_title(f"RGB histogram: keyframe {feat.frame_index}")
        ax.grid(True, linestyle="--", linewidth=0.5)
        ax.legend()
        fig.tight_layout()

        path = os.path.join(out_dir, f"hist_{feat.frame_index}.{ext}")
        _save(fig, path, ext)
        artifacts.append(ChartArtifact(path=path, data=series))

    logger.info("charts_written kind=histogram count=%d out_dir=%s", len(artifacts), out_dir)
    return artifacts


def render_cluster_scatter(
    features: Sequence[ColorFeature],
    model: ClusterModel,
    out_dir: str,
    ext: str = "png",
) -> ChartArtifact:
    """キーフレーム番号 × 赤チャネル平均の散布図。色はクラスタ、単独クラスタは星印で強調。"""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError("cannot create chart directory", path=out_dir) from e

    table = cluster_scatter_table(features, model)
    cmap = plt.get_cmap("tab10")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for cluster in sorted({row["cluster"] for row in table}):
        rows = [row for row in table if row["cluster"] == cluster]
        singleton = rows[0]["singleton"]
        ax.scatter(
            [row["frame_index"] for row in rows],
            [row["r_mean"] for row in rows],
            color=cmap(cluster % 10),
            marker="*" if singleton else "o",
            s=220 if singleton else 80,
            edgecolors="black" if singleton else "none",
            label=f"Cluster {cluster} (n={rows[0]['cluster_size']})" + (" singleton" if singleton else ""),
        )
    ax.set_xlabel("Keyframe index")
    ax.set_ylabel("Red channel mean intensity")
    ax.set_title("Keyframe color clusters vs red channel mean")
    ax.grid(True, linestyle="--", linewidth=0.5)
    ax.legend()
    fig.tight_layout()

    path = os.path.join(out_dir, f"clusters.{ext}")
    _save(fig, path, ext)
    logger.info("charts_written kind=cluster_scatter path=%s", path)
    return ChartArtifact(path=path, data=table)
