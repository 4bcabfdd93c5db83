import csv
import json
from collections import Counter

import pytest

from lcaas import bench
from lcaas.bench import BenchError, ExperimentConfig


def fake_report(tps, n, g, latencies):
    cfg = ExperimentConfig(tps, n, g, 100)
    return {"cell": cfg.label, "config": {"tps": tps, "n": n, "gas_gwei": g},
            "latency_ms": list(latencies), "mean_ms": sum(latencies) / len(latencies),
            "median_ms": sorted(latencies)[len(latencies) // 2], "p95_ms": max(latencies)}


def test_matrix_shape():
    cells = bench.matrix(seed=4)
    assert len(cells) == 36
    assert len({c.label for c in cells}) == 36
    assert Counter(c.gas_gwei for c in cells) == {6: 12, 9: 12, 20: 12}
    assert Counter(c.tps for c in cells) == {0.1: 9, 1: 9, 10: 9, 100: 9}
    assert {c.file_count for c in cells if c.tps >= 10} == {1000}
    assert len({c.seed for c in cells}) == 36


def test_config_derived_values():
    cfg = ExperimentConfig(100, 100, 9, 1000)
    assert cfg.expected_sbs == 10 and cfg.interarrival_ms == 10.0
    assert ExperimentConfig(0.1, 1, 6, 200).label == "tps0.1-n1-g6"


def test_synthetic_digests_deterministic():
    cfg = ExperimentConfig(10, 10, 9, 50, seed=7)
    a = bench.synthetic_digests(cfg)
    assert a == bench.synthetic_digests(cfg)
    assert len(set(a)) == 50 and all(len(d) == 64 for d in a)


def test_sim_cell_counts_and_confirms():
    report = bench.run_cell(ExperimentConfig(100, 100, 9, 1000, seed=1))
    assert report["sb_count"] == 10 and report["confirmed_sbs"] == 10
    assert report["rejected"] == 0
    assert all(v > 0 for v in report["latency_ms"])
    assert report["send_window_s"] == pytest.approx(9.99)
    assert report["factor_correlations"] == {"tps": None, "n": None, "gas_gwei": None}


def test_sim_cell_reproducible():
    cfg = ExperimentConfig(1, 10, 6, 60, seed=11)
    assert bench.run_cell(cfg)["latency_ms"] == bench.run_cell(cfg)["latency_ms"]
    other = bench.run_cell(ExperimentConfig(1, 10, 6, 60, seed=12))["latency_ms"]
    assert other != bench.run_cell(cfg)["latency_ms"]


def test_open_loop_schedule():
    # n=1 seals on every submission, so seal times expose the send schedule
    raw = bench.generate_load(ExperimentConfig(0.1, 1, 9, 5, seed=2))
    assert [t.sealed_at for t in raw.sbs] == [0, 10_000, 20_000, 30_000, 40_000]
    assert [t.submitted_at for t in raw.sbs] == [0, 10_000, 20_000, 30_000, 40_000]


def test_wall_cell_short():
    report = bench.run_cell(ExperimentConfig(100, 10, 9, 30, seed=3), clock="wall",
                            receipt_timeout_s=0.2)
    assert report["rejected"] == 0
    assert report["sb_count"] == 3
    assert 0.25 <= report["send_window_s"] <= 0.45
    assert report["ingest_ms"]["count"] == 30


def test_analyze_insufficient():
    with pytest.raises(BenchError) as exc:
        bench.analyze([fake_report(1, 1, 9, [1000, 2000])])
    assert exc.value.code == "insufficient_data"
    with pytest.raises(BenchError):
        bench.analyze([fake_report(1, 1, 9, [1000]), {"cell": "x", "error": "boom", "latency_ms": []}])


def test_analyze_identical_tiers():
    sample = [20_000 + 37 * i for i in range(40)]
    reports = [fake_report(1, 1, g, sample) for g in (6, 9, 20)]
    analysis = bench.analyze(reports)
    for pair in analysis["ks"].values():
        assert pair["D"] == 0 and pair["p_value"] == pytest.approx(1.0)
    assert analysis["total_sbs"] == 120


def test_analyze_constant_factor_reports_error():
    sample = [1000, 3000, 2000]
    analysis = bench.analyze([fake_report(1, 10, 9, sample), fake_report(10, 10, 9, sample)])
    raw_n = analysis["correlations"]["raw"]["n"]
    assert raw_n["pearson"] is None and raw_n["pearson_error"] == "constant_input"
    assert analysis["correlations"]["raw"]["tps"]["pearson"] == pytest.approx(0.0, abs=1e-12)


def test_histogram():
    h = bench.histogram(list(range(100)), bins=10, hi=100)
    assert h["counts"] == [10] * 10 and h["edges"][-1] == 100
    assert bench.histogram([]) == {"edges": [], "counts": []}


def test_write_outputs(tmp_path):
    reports = [fake_report(1, 1, g, [1000, 5000, 9000]) for g in (6, 9)]
    analysis = bench.analyze(reports)
    written = bench.write_outputs(tmp_path, reports, analysis)
    assert {p.name for p in written} == {
        "report-tps1-n1-g6.json", "report-tps1-n1-g9.json", "analysis.json",
        "density-g6.csv", "density-g9.csv",
    }
    assert json.loads((tmp_path / "analysis.json").read_text())["cells"] == 2
    rows = list(csv.reader(open(tmp_path / "density-g6.csv")))
    assert rows[0] == ["bin_lo", "bin_hi", "count"] and len(rows) == 51


def test_failed_cell_does_not_sink_matrix(monkeypatch):
    calls = []

    def flaky(cfg, clock="sim", **kw):
        calls.append(cfg.label)
        if len(calls) == 1:
            raise RuntimeError("boom")
        return fake_report(cfg.tps, cfg.n, cfg.gas_gwei, [1, 2, 3])

    monkeypatch.setattr(bench, "run_cell", flaky)
    reports = bench.run_matrix(0, cells=bench.matrix()[:3])
    assert "error" in reports[0] and len(reports) == 3
    assert bench.analyze(reports)["failed_cells"] == [reports[0]["cell"]]
