import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from seqbias import harness as H


def test_default_grid_size_and_ids():
    cells = H.default_grid()
    assert len(cells) == 72
    ids = [c.config_id for c in cells]
    assert len(set(ids)) == 72


def test_span_fractions():
    assert H.span_for_fraction(2, 0.4) == 1
    assert H.span_for_fraction(3, 0.4) == 1
    assert H.span_for_fraction(5, 0.4) == 2
    assert H.span_for_fraction(10, 0.4) == 4
    assert H.span_for_fraction(10, 1.0) == 10


def test_grid_from_dict_subsets():
    cells = H.grid_from_dict({"kinds": ["object"], "seq_lens": [2],
                              "targets": [0.9], "span_fractions": [1.0],
                              "seeds": [0, 1]})
    assert len(cells) == 2
    assert all(c.kind == "object" for c in cells)


def test_sweep_skips_completed(tmp_path, monkeypatch):
    cells = H.default_grid(kinds=("object",), seq_lens=(2,), targets=(0.9,),
                           span_fractions=(1.0,), seeds=(0,))
    cell = cells[0]
    out = tmp_path / cell.config_id
    out.mkdir(parents=True)
    record = {"config_id": cell.config_id, "cell": vars(cell).copy(),
              "stage": "complete", "passed_gates": False}
    (out / "record.json").write_text(json.dumps(record))

    def boom(*a, **kw):
        raise AssertionError("completed cell must not rerun")

    monkeypatch.setattr(H, "run_config", boom)
    records = H.sweep(cells, tmp_path, resume=True, log=lambda *a: None)
    assert records[0]["stage"] == "complete"


def test_empty_grid_yields_empty_report(tmp_path):
    records = H.sweep([], tmp_path, log=lambda *a: None)
    assert records == []
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_cells"] == 0
    assert (tmp_path / "summary.csv").exists()


def _fake_record(kind, n, v, span, p10s, passed=True):
    cell = H.SweepCell(kind=kind, seq_len=n, target_v=v, span=span, seed=0)
    metrics = {m: {"p@10": p, "p@25": p, "p@100": p, "r_prec": p}
               for m, p in p10s.items()}
    return {"config_id": cell.config_id, "cell": vars(cell).copy(),
            "stage": "complete", "passed_gates": passed, "metrics": metrics,
            "mitigation": {"n_victim": 4, "base_victim": 0.25,
                           "mitigated_victim": 0.75, "base_overall": 0.9,
                           "mitigated_overall": 0.9}}


def test_aggregate_means_and_breakdowns():
    rows = [
        _fake_record("object", 5, 0.9, 2,
                     {"trove": 1.0, "trove_sbs_only": 0.6,
                      "confidence": 0.8, "random": 0.2}),
        _fake_record("object", 10, 0.9, 10,
                     {"trove": 0.8, "trove_sbs_only": 0.4,
                      "confidence": 0.6, "random": 0.1}),
        _fake_record("background", 2, 0.9, 1,
                     {"trove": 1.0, "trove_sbs_only": 1.0,
                      "confidence": 1.0, "random": 0.3}, passed=False),
    ]
    summary = H.aggregate(rows)
    assert summary["n_passing"] == 2
    assert summary["by_kind"]["object"]["trove"]["p@10"] == pytest.approx(0.9)
    assert "background" not in summary["by_kind"]
    assert summary["by_span_fraction"]["20-49"]["n"] == 1
    assert summary["by_span_fraction"]["80-100"]["n"] == 1
    assert summary["mitigation"]["n_improved_10pt"] == 2
    assert summary["overall"]["random"]["p@10"] == pytest.approx(0.15)


def test_summary_csv_layout(tmp_path):
    rows = [_fake_record("attribute", 3, 0.8, 3,
                         {"trove": 1.0, "trove_sbs_only": 0.9,
                          "confidence": 0.7, "random": 0.2})]
    H.write_summary(H.aggregate(rows), tmp_path)
    lines = (tmp_path / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == ("group,value,n,method,p@10,p@25,p@100,r_prec")
    assert any(line.startswith("kind,attribute,1,trove,") for line in lines)
    assert any(line.startswith("overall,all,") for line in lines)


def test_metrics_csv_text_deterministic():
    rows = {m: {"p@10": 0.5, "p@25": 0.5, "p@100": 0.5, "r_prec": 0.5}
            for m in H.METHODS}
    a = H.metrics_csv_text("cfg", rows)
    b = H.metrics_csv_text("cfg", rows)
    assert a == b
    assert a.splitlines()[1] == "cfg,trove,0.500000,0.500000,0.500000,0.500000"


# ---- command line -----------------------------------------------------------

def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "seqbias.cli", *args],
                          capture_output=True, text=True)


def test_cli_requires_subcommand():
    out = run_cli()
    assert out.returncode != 0


def test_cli_discover_missing_model(tmp_path):
    from seqbias import io as IO
    from seqbias.synth import DatasetConfig, FeatureSpec, FeatureKind, generate_dataset
    ds = generate_dataset(DatasetConfig(
        feature=FeatureSpec(FeatureKind.OBJECT), seq_len=2, feature_span=1,
        target_cramers_v=0.9, n_train=40, n_val=20, n_test=20, rng_seed=1))
    ddir = tmp_path / "data"
    IO.save_dataset(ds, ddir, tensors=False)
    out = run_cli("discover", "--dataset", str(ddir),
                  "--model", str(tmp_path / "missing.bin"),
                  "--out", str(tmp_path / "rep"))
    assert out.returncode != 0
    assert "no such model" in out.stderr
    assert not (tmp_path / "rep").exists()


def test_cli_generate_invalid_config(tmp_path):
    out = run_cli("generate", "--feature", "object", "--seq-len", "3",
                  "--span", "7", "--out", str(tmp_path / "d"))
    assert out.returncode != 0


def test_cli_generate_writes_dataset(tmp_path):
    cfg = {"feature": {"kind": "object"}, "seq_len": 2, "feature_span": 1,
           "target_cramers_v": 0.9, "n_train": 40, "n_val": 20, "n_test": 20,
           "rng_seed": 3}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = run_cli("generate", "--config", str(cfg_path), "--no-tensors",
                  "--out", str(tmp_path / "d"))
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "d" / "meta.json").exists()
    assert (tmp_path / "d" / "val.csv").exists()


def test_cli_report_empty_dir(tmp_path):
    out = run_cli("report", str(tmp_path))
    assert out.returncode != 0
