from __future__ import annotations

import csv
import io
import json
import os

import pytest

from analysis import ClusterConfig, DetectorConfig, extract_features, kmeans_fit, run_detection
from ingest import FrameRef
from synth import make_uniform_frame
from report import (
    CSV_HEADER,
    SCHEMA_VERSION,
    build_report,
    cluster_scatter_table,
    emit_csv,
    emit_json,
    load_json,
    render_cluster_scatter,
    render_histograms,
    to_canonical_json,
)


@pytest.fixture
def reference_report(reference_features):
    model = kmeans_fit([f.mean for f in reference_features], ClusterConfig())
    verdicts = run_detection(reference_features, model, DetectorConfig(rule_channels=("R", "B")))
    frames = [FrameRef(i, f"frame_0{i + 1}.png") for i in range(len(reference_features))]
    echo = {"input": "frames", "detector": {"rule_channels": ("R", "B")}}
    return build_report(echo, frames, reference_features, model, verdicts), model


def test_report_sections(reference_report):
    report, model = reference_report

    assert report["schema_version"] == SCHEMA_VERSION
    assert report["config_echo"]["detector"]["rule_channels"] == ["R", "B"]
    assert [s["index"] for s in report["frame_summaries"]] == [0, 1, 2, 3, 4]
    assert report["cluster_section"]["assignments"] == list(model.assignments)
    sizes = sorted(c["size"] for c in report["cluster_section"]["clusters"])
    assert sizes == [1, 2, 2]
    assert [v["grade"] for v in report["verdicts"]] == [
        "Stable", "Suspicious", "Stable", "Suspicious", "HighlyAnomalous",
    ]
    assert report["frame_summaries"][1]["levels"]["R"] == "High"


def test_canonical_json_is_stable(reference_report, tmp_path):
    report, _ = reference_report
    text = to_canonical_json(report)

    assert text == to_canonical_json(json.loads(text))
    assert text.endswith("\n")
    path = emit_json(report, str(tmp_path / "nested" / "report.json"))
    with open(path, "rb") as f:
        assert f.read() == text.encode("utf-8")
    assert load_json(path) == json.loads(text)


def _two_frame_report(source_ids):
    feats = [extract_features(make_uniform_frame((40, 80, 120), (4, 4)), i) for i in range(2)]
    model = kmeans_fit([f.mean for f in feats], ClusterConfig(k=1))
    verdicts = run_detection(feats, model, DetectorConfig())
    frames = [FrameRef(i, s) for i, s in enumerate(source_ids)]
    return build_report({"k": 1, "resize": (4, 4)}, frames, feats, model, verdicts)


def test_json_round_trip_matches_built_report(tmp_path):
    report = _two_frame_report(["a.png", "b.png"])
    assert [v["grade"] for v in report["verdicts"]] == ["Stable", "Stable"]

    path = emit_json(report, str(tmp_path / "report.json"))
    assert load_json(path) == report


def test_failed_serialization_leaves_no_file(tmp_path):
    report = _two_frame_report(["a.png", "b.png"])
    report["cluster_section"]["inertia"] = float("nan")
    dest = tmp_path / "report.json"

    with pytest.raises(ValueError):
        emit_json(report, str(dest))
    assert not dest.exists()


@pytest.mark.skipif(os.name != "posix", reason="surrogateescape はバイト列パスの OS のみ")
def test_non_utf8_source_ids_are_escaped(tmp_path):
    names = [os.fsdecode(b"f\xff%d.png" % i) for i in range(2)]
    report = _two_frame_report(names)

    json_path = emit_json(report, str(tmp_path / "report.json"))
    csv_path = emit_csv(report, str(tmp_path / "report.csv"))

    assert [s["source_id"] for s in load_json(json_path)["frame_summaries"]] == ["f\\xff0.png", "f\\xff1.png"]
    with open(csv_path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert [r[1] for r in rows[1:]] == ["f\\xff0.png", "f\\xff1.png"]


def test_csv_layout(reference_report, tmp_path):
    report, _ = reference_report
    path = emit_csv(report, str(tmp_path / "report.csv"))

    with open(path, "rb") as f:
        raw = f.read()
    assert raw.count(b"\r\n") == 6
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"), newline="")))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 6
    last = dict(zip(CSV_HEADER, rows[5]))
    assert last["structurally_rare"] == "true"
    assert last["b_flag"] == "true"
    assert last["g_flag"] == ""  # 評価していないチャネルは空欄
    assert last["grade"] == "HighlyAnomalous"
    assert float(last["r_mean"]) == report["frame_summaries"][4]["mean"]["r"]


def test_histogram_charts(reference_features, tmp_path):
    artifacts = render_histograms(reference_features, str(tmp_path), "png")

    assert [os.path.basename(a["path"]) for a in artifacts] == [f"hist_{i}.png" for i in range(5)]
    for a, feat in zip(artifacts, reference_features):
        assert os.path.getsize(a["path"]) > 0
        assert len(a["data"]["x"]) == 256
        for c in ("R", "G", "B"):
            assert sum(a["data"][c]) == pytest.approx(1.0, abs=1e-9)
            assert max(a["data"][c]) == feat.peak_value(c)


def test_cluster_scatter(reference_features, tmp_path):
    model = kmeans_fit([f.mean for f in reference_features], ClusterConfig())
    artifact = render_cluster_scatter(reference_features, model, str(tmp_path), "svg")

    assert os.path.basename(artifact["path"]) == "clusters.svg"
    assert os.path.getsize(artifact["path"]) > 0
    table = cluster_scatter_table(reference_features, model)
    assert artifact["data"] == table
    assert [row["singleton"] for row in table] == [False, False, False, False, True]
    assert [row["r_mean"] for row in table] == [f.mean.r_mean for f in reference_features]


def test_csv_quotes_commas(reference_features, tmp_path):
    model = kmeans_fit([f.mean for f in reference_features], ClusterConfig())
    verdicts = run_detection(reference_features, model, DetectorConfig())
    frames = [FrameRef(i, f"shot,{i}.png") for i in range(len(reference_features))]
    report = build_report({}, frames, reference_features, model, verdicts)

    path = emit_csv(report, str(tmp_path / "report.csv"))
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert [r[1] for r in rows[1:]] == [f"shot,{i}.png" for i in range(5)]


def test_gray_point_mass_histogram_series(tmp_path):
    from analysis import extract_features
    from synth import make_uniform_frame

    feat = extract_features(make_uniform_frame((128, 128, 128), (8, 8)), 0)
    artifacts = render_histograms([feat], str(tmp_path))

    data = artifacts[0]["data"]
    for c in ("R", "G", "B"):
        assert [x for x, v in zip(data["x"], data[c]) if v != 0.0] == [128.0]


def test_single_cluster_scatter(reference_features, tmp_path):
    model = kmeans_fit([f.mean for f in reference_features], ClusterConfig(k=1))
    artifact = render_cluster_scatter(reference_features, model, str(tmp_path))

    assert {row["cluster"] for row in artifact["data"]} == {0}
    assert not any(row["singleton"] for row in artifact["data"])
