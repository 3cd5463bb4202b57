# main.py（chromasift CLI）
# - run    : キーフレーム列を読み込み、平均ベクトル KMeans + チャネルヒストグラム規則で異常フレームを判定
# - synth  : 再現用の 5 フレーム合成フィクスチャを PNG で書き出す
# - inspect: 1 枚の画像の色特徴を JSON で表示（デバッグ用）
#
# 処理段階（run）:
#   1) ingest   : ファイル列挙 → 等間隔抽出 → デコード + 256x256 バイリニア縮小
#   2) features : RGB 平均ベクトルと 256 bin 正規化ヒストグラム
#   3) cluster  : seed 固定の Lloyd KMeans（K=3, 最大 300 回）
#   4) detect   : 構造的希少（単独クラスタ）+ チャネルピーク応答（+25% 超）
#   5) report   : report.json / report.csv / グラフ
#
# 終了コード:
#   0 : 正常終了（HighlyAnomalous なし）
#   2 : HighlyAnomalous のフレームが 1 つ以上ある
#   1 : エラー（引数エラーを含む）
#
# 環境変数は使わない（再現性のため全てフラグで指定）。
#
# ローカル実行:
#   python main.py synth --out frames
#   python main.py run --input frames --rule-channels RB --out out --charts

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from analysis import (
    CHANNELS,
    ClusterConfig,
    DetectorConfig,
    extract_features,
    kmeans_fit,
    max_grade,
    run_detection,
)
from analysis.cluster import (
    DEFAULT_K,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_RESTARTS,
    DEFAULT_SEED,
    DEFAULT_TOLERANCE,
    U64_MAX,
)
from analysis.detect import DEFAULT_RESPONSE_THRESHOLD, DEFAULT_RULE_CHANNELS
from errors import ChromaSiftError, InsufficientPoints, TooFewFrames, UsageError
from ingest import (
    DEFAULT_RESIZE,
    DEFAULT_STRIDE,
    FrameRef,
    PixelGrid,
    discover_frames,
    display_source_id,
    load_and_resize,
    sample_keyframes,
)
from report import (
    RunReport,
    build_report,
    emit_csv,
    emit_json,
    render_cluster_scatter,
    render_histograms,
)
from synth import write_reference_sequence

PROG = "chromasift"

logger = logging.getLogger("chromasift")

DEFAULT_OUT_DIR = "chromasift_out"
DEFAULT_FORMATS: Tuple[str, ...] = ("json", "csv")
DEFAULT_WORKERS = 4
CHART_FORMATS = ("png", "svg")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HIGHLY_ANOMALOUS = 2


# ----------------------------
# 設定
# ----------------------------
@dataclass(frozen=True)
class RunConfig:
    input: str
    stride: int = DEFAULT_STRIDE
    resize: Tuple[int, int] = DEFAULT_RESIZE
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    out_dir: str = DEFAULT_OUT_DIR
    formats: Tuple[str, ...] = DEFAULT_FORMATS
    charts: bool = False
    chart_format: str = "png"
    workers: int = DEFAULT_WORKERS

    def to_echo(self) -> Dict[str, Any]:
        return {
            "input": display_source_id(self.input),
            "stride": self.stride,
            "resize": [self.resize[0], self.resize[1]],
            "cluster": {
                "k": self.cluster.k,
                "seed": self.cluster.seed,
                "max_iterations": self.cluster.max_iterations,
                "convergence_tolerance": self.cluster.convergence_tolerance,
                "restarts": self.cluster.restarts,
            },
            "detector": {
                "response_threshold": self.detector.response_threshold,
                "rule_channels": list(self.detector.rule_channels),
                "comparison": self.detector.comparison,
            },
            "out_dir": display_source_id(self.out_dir),
            "formats": list(self.formats),
            "charts": self.charts,
            "chart_format": self.chart_format,
        }


@dataclass(frozen=True)
class SynthCommand:
    out_dir: str


@dataclass(frozen=True)
class InspectCommand:
    input: str
    resize: Tuple[int, int] = DEFAULT_RESIZE


Command = Union[RunConfig, SynthCommand, InspectCommand]


# ----------------------------
# ログヘルパー
# ----------------------------
def _log_json(payload: Dict[str, Any]) -> None:
    # stdout はコマンド出力用なので構造化ログは stderr へ
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


# ----------------------------
# 引数パース
# ----------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message, usage=self.format_usage().strip())


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return value


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not (0 <= value <= U64_MAX):
        raise argparse.ArgumentTypeError(f"must be an unsigned 64-bit integer: {value}")
    return value


def _non_negative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (value >= 0.0) or value == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0: {text}")
    return value


def _positive_float(text: str) -> float:
    value = _non_negative_float(text)
    if value == 0.0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text}")
    return value


def _resize(text: str) -> Tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected <W>x<H>: {text!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected <W>x<H>: {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"dimensions must be >= 1: {text!r}")
    return (w, h)


def _rule_channels(text: str) -> Tuple[str, ...]:
    letters = [ch for ch in text.upper() if ch not in ", "]
    if not letters:
        raise argparse.ArgumentTypeError("at least one of R, G, B is required")
    bad = sorted({ch for ch in letters if ch not in CHANNELS})
    if bad:
        raise argparse.ArgumentTypeError(f"unknown channel(s): {''.join(bad)}")
    return tuple(c for c in CHANNELS if c in letters)


def _formats(text: str) -> Tuple[str, ...]:
    items = [s.strip().lower() for s in text.split(",") if s.strip()]
    bad = [s for s in items if s not in ("json", "csv")]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s): {','.join(bad)}")
    return tuple(f for f in ("json", "csv") if f in items)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog=PROG,
        description="色特徴（RGB 平均ベクトル KMeans + チャネルヒストグラム規則）によるキーフレーム異常検知",
    )
    parser.add_argument("--log-level", default="INFO", help="ログレベル（既定: INFO）")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="パイプラインを実行する")
    run.add_argument("--input", required=True, help="入力ディレクトリまたは glob（PNG/JPEG/BMP）")
    run.add_argument("--stride", type=_positive_int, default=DEFAULT_STRIDE,
                     help="等間隔抽出の間隔（既定: 1 = 全フレーム）")
    run.add_argument("--resize", type=_resize, default=DEFAULT_RESIZE,
                     help="リサイズ先 <W>x<H>（既定: 256x256）")
    run.add_argument("--k", type=_positive_int, default=DEFAULT_K,
                     help="クラスタ数（既定: 3）")
    run.add_argument("--seed", type=_u64, default=DEFAULT_SEED,
                     help="初期重心選択の乱数シード（既定: 42）")
    run.add_argument("--max-iter", type=_positive_int, default=DEFAULT_MAX_ITERATIONS,
                     help="Lloyd 反復の上限（既定: 300）")
    run.add_argument("--tol", type=_non_negative_float, default=DEFAULT_TOLERANCE,
                     help="収束判定: 重心移動量の最大値（既定: 1e-6）")
    run.add_argument("--restarts", type=_positive_int, default=DEFAULT_RESTARTS,
                     help="初期化のやり直し回数。最小 inertia を採用（既定: 10）")
    run.add_argument("--threshold", type=_positive_float, default=DEFAULT_RESPONSE_THRESHOLD,
                     help="チャネル応答のしきい値。ピークが他フレーム平均の (1+t) 倍を超えたら発火"
                          "（既定: 0.25 = 25%%。0.20 で 20%% 規則）")
    run.add_argument("--rule-channels", type=_rule_channels, default=DEFAULT_RULE_CHANNELS,
                     help="応答規則を適用するチャネル（R/G/B の組み合わせ、既定: R = 赤のみ）")
    run.add_argument("--out", default=DEFAULT_OUT_DIR, help=f"出力ディレクトリ（既定: {DEFAULT_OUT_DIR}）")
    run.add_argument("--format", type=_formats, default=DEFAULT_FORMATS,
                     help="レポート形式 json,csv のカンマ区切り（既定: json,csv）")
    run.add_argument("--charts", action="store_true", help="ヒストグラムと散布図を出力する（既定: 出力しない）")
    run.add_argument("--chart-format", choices=CHART_FORMATS, default="png", help="グラフ形式（既定: png）")
    run.add_argument("--workers", type=_positive_int, default=DEFAULT_WORKERS,
                     help=f"フレーム読み込みの並列数（既定: {DEFAULT_WORKERS}）")

    synth = sub.add_parser("synth", help="5 フレームの合成フィクスチャを PNG で書き出す")
    synth.add_argument("--out", required=True, help="出力ディレクトリ")

    inspect = sub.add_parser("inspect", help="1 枚の画像の色特徴を表示する（デバッグ用）")
    inspect.add_argument("--input", required=True, help="画像ファイル")
    inspect.add_argument("--resize", type=_resize, default=DEFAULT_RESIZE, help="リサイズ先（既定: 256x256）")
    return parser


def _command_from_namespace(ns: argparse.Namespace) -> Command:
    if ns.command == "synth":
        return SynthCommand(out_dir=ns.out)
    if ns.command == "inspect":
        return InspectCommand(input=ns.input, resize=ns.resize)
    return RunConfig(
        input=ns.input,
        stride=ns.stride,
        resize=ns.resize,
        cluster=ClusterConfig(
            k=ns.k,
            seed=ns.seed,
            max_iterations=ns.max_iter,
            convergence_tolerance=ns.tol,
            restarts=ns.restarts,
        ),
        detector=DetectorConfig(
            response_threshold=ns.threshold,
            rule_channels=ns.rule_channels,
        ),
        out_dir=ns.out,
        formats=ns.format,
        charts=ns.charts,
        chart_format=ns.chart_format,
        workers=ns.workers,
    )


def parse_args(argv: Sequence[str]) -> Command:
    """argv（プログラム名を除く）を解釈する。不正な引数は UsageError。"""
    ns = _build_parser().parse_args(list(argv))
    return _command_from_namespace(ns)


def _log_level_from_argv(argv: Sequence[str]) -> str:
    # パース前にログ設定を済ませたいので --log-level だけ先に拾う
    for i, token in enumerate(argv):
        if token.startswith("--log-level="):
            return token.split("=", 1)[1]
        if token == "--log-level" and i + 1 < len(argv):
            return argv[i + 1]
    return "INFO"


# ----------------------------
# フレーム読み込み（並列）
# ----------------------------
async def _load_grids_async(
    refs: Sequence[FrameRef],
    target: Tuple[int, int],
    workers: int,
) -> List[PixelGrid]:
    sem = asyncio.Semaphore(workers)

    async def _one(ref: FrameRef) -> PixelGrid:
        async with sem:
            try:
                return await asyncio.to_thread(load_and_resize, ref, target)
            except ChromaSiftError as e:
                raise e.with_context(index=ref.index, path=ref.source_id) from e

    # gather は入力順で結果を返すので完了順に関係なくフレーム順になる
    return list(await asyncio.gather(*(_one(r) for r in refs)))


def load_grids(refs: Sequence[FrameRef], target: Tuple[int, int], workers: int = DEFAULT_WORKERS) -> List[PixelGrid]:
    return asyncio.run(_load_grids_async(refs, target, workers))


# ----------------------------
# パイプライン
# ----------------------------
def run_pipeline(config: RunConfig) -> RunReport:
    """
    ingest → features → cluster → detect → report を順に実行し、
    RunReport を返す（ファイル出力は config に従う）。
    """
    run_id = uuid.uuid4().hex
    timings: Dict[str, int] = {}
    start = time.perf_counter()

    def _lap(stage: str, t0: float) -> None:
        timings[stage] = int((time.perf_counter() - t0) * 1000)

    t0 = time.perf_counter()
    frames = sample_keyframes(discover_frames(config.input), config.stride)
    n = len(frames)
    if n < config.cluster.k:
        raise InsufficientPoints("not enough keyframes for the requested cluster count", n=n, k=config.cluster.k)
    if n < 2:
        raise TooFewFrames("at least 2 keyframes are required", n=n)
    grids = load_grids(frames, config.resize, config.workers)
    _lap("ingest", t0)

    t0 = time.perf_counter()
    features = [extract_features(g, ref.index) for g, ref in zip(grids, frames)]
    _lap("features", t0)

    t0 = time.perf_counter()
    model = kmeans_fit([f.mean for f in features], config.cluster)
    _lap("cluster", t0)

    t0 = time.perf_counter()
    verdicts = run_detection(features, model, config.detector)
    _lap("detect", t0)

    t0 = time.perf_counter()
    report = build_report(config.to_echo(), frames, features, model, verdicts)
    if "json" in config.formats:
        emit_json(report, os.path.join(config.out_dir, "report.json"))
    if "csv" in config.formats:
        emit_csv(report, os.path.join(config.out_dir, "report.csv"))
    _lap("report", t0)

    if config.charts:
        t0 = time.perf_counter()
        render_histograms(features, config.out_dir, config.chart_format)
        render_cluster_scatter(features, model, config.out_dir, config.chart_format)
        _lap("charts", t0)

    top = max_grade(verdicts)
    _log_json({
        "event": "pipeline",
        "run_id": run_id,
        "status": "HIGHLY_ANOMALOUS" if top == "HighlyAnomalous" else "SUCCESS",
        "frames": n,
        "grades": [v.grade for v in verdicts],
        "elapsed_ms": int((time.perf_counter() - start) * 1000),
        "stage_ms": timings,
        "out_dir": config.out_dir,
    })
    return report


def exit_code_for(report: RunReport) -> int:
    grades = [v["grade"] for v in report["verdicts"]]
    return EXIT_HIGHLY_ANOMALOUS if "HighlyAnomalous" in grades else EXIT_OK


# ----------------------------
# サブコマンド
# ----------------------------
def _run_synth(cmd: SynthCommand) -> int:
    paths = write_reference_sequence(cmd.out_dir)
    for p in paths:
        print(p)
    return EXIT_OK


def _run_inspect(cmd: InspectCommand) -> int:
    ref = FrameRef(index=0, source_id=cmd.input)
    feat = extract_features(load_and_resize(ref, cmd.resize), 0)
    payload = {
        "source_id": ref.display_id,
        "resize": list(cmd.resize),
        "mean": {"r": feat.mean.r_mean, "g": feat.mean.g_mean, "b": feat.mean.b_mean},
        "stats": {
            c: {
                "peak_value": s.peak_value,
                "peak_bin": s.peak_bin,
                "high_band_mass": s.high_band_mass,
                "low_band_mass": s.low_band_mass,
                "skewness": s.skewness,
                "total_variation": s.total_variation,
            }
            for c, s in feat.stats.items()
        },
    }
    print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    _configure_logging(_log_level_from_argv(args))
    run_id = uuid.uuid4().hex

    try:
        cmd = parse_args(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"{PROG}: usage error: {e.message}", file=sys.stderr)
        print(e.context.get("usage", ""), file=sys.stderr)
        return EXIT_ERROR

    try:
        if isinstance(cmd, SynthCommand):
            return _run_synth(cmd)
        if isinstance(cmd, InspectCommand):
            return _run_inspect(cmd)

        report = run_pipeline(cmd)
        code = exit_code_for(report)
        grades = ",".join(v["grade"] for v in report["verdicts"])
        print(f"frames={len(report['verdicts'])} grades={grades} out={display_source_id(cmd.out_dir)}")
        return code

    except ChromaSiftError as e:
        print(f"{PROG}: {type(e).__name__}: {e}", file=sys.stderr)
        _log_json({
            "event": "pipeline",
            "run_id": run_id,
            "status": e.reason,
            "reason": e.reason,
            "error_type": type(e).__name__,
            "error_message": str(e),
        })
        return EXIT_ERROR
    except Exception as e:
        logger.exception("unhandled_error")
        _log_json({
            "event": "pipeline",
            "run_id": run_id,
            "status": "UNHANDLED_ERROR",
            "error_type": type(e).__name__,
            "error_message": str(e),
        })
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
