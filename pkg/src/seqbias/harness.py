"""Experiment harness: configuration grid, per-cell pipeline, aggregation.

A cell fixes (feature kind, sequence length, association target, feature
span, seed).  Running a cell generates the dataset, checks the task gate,
trains the biased model, checks the model gate and, when the gates pass,
runs discovery (full and ablation modes), the reference baselines, ranking
metrics and prompt mitigation.  Every artifact lands under
``runs/<config_id>/`` and reruns with the same seeds reproduce the metrics
byte for byte; completed cells are skipped on resume.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cluster as CL
from . import discovery as D
from . import gates as G
from . import io as IO
from . import metrics as X
from . import mitigation as MIT
from . import model as M
from .synth import (DatasetConfig, FeatureKind, FeatureSpec, MotionLabel,
                    generate_dataset)

WORKERS_ENV = "SEQBIAS_WORKERS"

DEFAULT_KINDS = ("background", "object", "attribute")
DEFAULT_SEQ_LENS = (2, 3, 5, 10)
DEFAULT_TARGETS = (0.8, 0.9, 0.95)
DEFAULT_SPAN_FRACTIONS = (0.4, 1.0)
DEFAULT_SEEDS = (0,)

METHODS = ("trove", "trove_sbs_only", "confidence", "random")
PRECISION_KS = (10, 25, 100)


@dataclass(frozen=True)
class SweepCell:
    kind: str
    seq_len: int
    target_v: float
    span: int
    seed: int

    @property
    def config_id(self):
        return (f"{self.kind[:3]}_n{self.seq_len}_v{int(round(self.target_v * 100))}"
                f"_s{self.span}_seed{self.seed}")

    def dataset_config(self):
        return DatasetConfig(feature=FeatureSpec(FeatureKind(self.kind)),
                             seq_len=self.seq_len,
                             target_cramers_v=self.target_v,
                             feature_span=self.span,
                             rng_seed=self.seed)


def span_for_fraction(seq_len, fraction):
    return max(1, min(seq_len, int(round(fraction * seq_len))))


def default_grid(kinds=DEFAULT_KINDS, seq_lens=DEFAULT_SEQ_LENS,
                 targets=DEFAULT_TARGETS, span_fractions=DEFAULT_SPAN_FRACTIONS,
                 seeds=DEFAULT_SEEDS):
    cells = []
    for kind in kinds:
        for n in seq_lens:
            spans = sorted({span_for_fraction(n, f) for f in span_fractions})
            for v in targets:
                for span in spans:
                    for seed in seeds:
                        cells.append(SweepCell(kind=kind, seq_len=n,
                                               target_v=v, span=span,
                                               seed=seed))
    return cells


def grid_from_dict(payload):
    return default_grid(
        kinds=tuple(payload.get("kinds", DEFAULT_KINDS)),
        seq_lens=tuple(payload.get("seq_lens", DEFAULT_SEQ_LENS)),
        targets=tuple(payload.get("targets", DEFAULT_TARGETS)),
        span_fractions=tuple(payload.get("span_fractions",
                                         DEFAULT_SPAN_FRACTIONS)),
        seeds=tuple(payload.get("seeds", DEFAULT_SEEDS)),
    )


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.6f}"


class TaskGateCache:
    """gate_task depends only on (seq_len, counts, seed); share across kinds."""

    def __init__(self, root=None):
        self.root = Path(root) if root else None
        self.memory = {}

    def get(self, cell, train_cfg):
        key = f"taskgate_n{cell.seq_len}_seed{cell.seed}"
        if key in self.memory:
            return self.memory[key]
        if self.root is not None:
            path = self.root / "_shared" / f"{key}.json"
            if path.exists():
                gap = json.loads(path.read_text())["task_gap"]
                self.memory[key] = gap
                return gap
        gap = G.gate_task(cell.dataset_config(), train_cfg)
        self.memory[key] = gap
        if self.root is not None:
            path = self.root / "_shared" / f"{key}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({"task_gap": gap}) + "\n")
        return gap


def evaluate_rankings(records, report_full, report_sbs, affected_label, flags,
                      seed):
    """Metric rows for every method on the affected class's image ranking."""
    lists = {
        "trove": D.rank_images(report_full, affected_label),
        "trove_sbs_only": D.rank_images(report_sbs, affected_label),
        "confidence": X.baseline_confidence(records.static_logits),
        "random": X.baseline_random(records.n_images, seed=seed),
    }
    rows = {}
    for method, ranked in lists.items():
        row = {}
        for k in PRECISION_KS:
            if ranked:
                row[f"p@{k}"], _ = X.precision_at_k(ranked, flags, k)
            else:
                row[f"p@{k}"] = 0.0
        if ranked and flags.any():
            row["r_prec"], _ = X.r_precision(ranked, flags)
        else:
            row["r_prec"] = 0.0
        rows[method] = row
    return rows


def metrics_csv_text(config_id, rows):
    lines = ["config_id,method," + ",".join([f"p@{k}" for k in PRECISION_KS]
                                            + ["r_prec"])]
    for method in METHODS:
        row = rows[method]
        vals = [_fmt(row[f"p@{k}"]) for k in PRECISION_KS] + [_fmt(row["r_prec"])]
        lines.append(f"{config_id},{method}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def run_config(cell, out_dir, train_cfg=None, task_gate_cache=None,
               mitigate=True, top_k=5, save_tensors=False, log=print):
    """Full pipeline for one cell; returns the run record dict."""
    t_start = time.time()
    out = Path(out_dir) / cell.config_id
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = train_cfg or M.TrainConfig(rng_seed=cell.seed)
    cache = task_gate_cache or TaskGateCache()
    record = {"config_id": cell.config_id, "cell": vars(cell).copy(),
              "stage": "start", "passed_gates": False}

    def fail(stage, err):
        record["stage"] = stage
        record["error"] = str(err)
        record["wall_clock_s"] = round(time.time() - t_start, 2)
        _write_record(out, record)
        return record

    try:
        dataset = generate_dataset(cell.dataset_config())
        record["realized_cramers_v"] = dataset.realized_cramers_v
        record["q_effective"] = dataset.q_effective
        record["r_other"] = dataset.r_other
        IO.save_dataset(dataset, out / "dataset", tensors=save_tensors)
    except Exception as err:
        return fail("generate", err)

    try:
        task_gap = cache.get(cell, train_cfg)
        record["task_gap"] = task_gap
    except Exception as err:
        return fail("gate_task", err)

    try:
        model = M.train(dataset, train_cfg, temporal=True)
        record["val_acc"] = model.best_val_acc
        record["epochs"] = len(model.history)
        IO.save_model(model, out / "model.bin")
    except Exception as err:
        return fail("train", err)

    try:
        gate = G.gate_model(model, dataset, task_gap)
        record["gate"] = gate.to_dict()
        (out / "gate.txt").write_text(_gate_text(cell, gate))
    except Exception as err:
        return fail("gate_model", err)

    record["passed_gates"] = gate.passed
    if not gate.passed:
        record["stage"] = "gated_out"
        record["wall_clock_s"] = round(time.time() - t_start, 2)
        _write_record(out, record)
        log(f"[{cell.config_id}] gated out "
            f"(task {gate.task_gap:.0f}, img {gate.image_gap:.0f}, "
            f"seq {gate.sequence_gap:.0f})")
        return record

    try:
        records = D.compute_records(model, dataset, "val")
        fit = CL.select_k(records.embeddings, CL.default_k_range(),
                          seed=cell.seed)
        report = D.discover(model, dataset, records=records, fit=fit,
                            seed=cell.seed)
        report_sbs = D.discover(model, dataset, records=records, fit=fit,
                                seed=cell.seed, ablation="sbs-only",
                                temperature=report.temperature)
        IO.save_report(report, records, out / "report")
        IO.save_centroids(fit, out / "report")
        flags = np.concatenate(
            [s.feature_flags for s in dataset.split("val")])
        rows = evaluate_rankings(records, report, report_sbs,
                                 gate.affected_label, flags, cell.seed)
        record["metrics"] = rows
        record["k"] = report.k
        record["temperature"] = report.temperature
        (out / "metrics.csv").write_text(
            metrics_csv_text(cell.config_id, rows))
    except Exception as err:
        return fail("discover", err)

    if mitigate:
        try:
            prompts = MIT.fit_prompts(model, records, report, top_k=top_k,
                                      seed=cell.seed)
            IO.save_prompts(prompts, out / "prompts.json")
            mit = MIT.evaluate_mitigation(model, prompts, fit, dataset,
                                          gate.affected_label)
            mit.update(_victim_subset_eval(model, prompts, fit, dataset,
                                           gate.affected_label))
            record["mitigation"] = mit
        except Exception as err:
            return fail("mitigate", err)

    record["stage"] = "complete"
    record["wall_clock_s"] = round(time.time() - t_start, 2)
    _write_record(out, record)
    p10 = record["metrics"]["trove"]["p@10"]
    log(f"[{cell.config_id}] ok: P@10={p10:.2f} "
        f"k={record['k']} ({record['wall_clock_s']:.0f}s)")
    return record


def _victim_subset_eval(model, prompts, cluster_fit, dataset, affected_label):
    """Accuracy on test sequences of the affected class that carry the
    feature, before and after routing; the sharpest view of the repair."""
    feats = M.featurize_split(dataset, "test", model.featurizer)
    labels = M.split_labels(dataset, "test")
    _, base_logits = model.forward_features(feats)
    base_pred = np.argmax(base_logits, axis=1)
    routed_pred, _ = MIT.route_predict_batch(model, prompts, cluster_fit,
                                             feats)
    has = np.array([s.has_feature for s in dataset.split("test")])
    mask = (labels == affected_label) & has
    if not mask.any():
        return {"n_victim": 0, "base_victim": float("nan"),
                "mitigated_victim": float("nan")}
    return {"n_victim": int(mask.sum()),
            "base_victim": float(np.mean(base_pred[mask] == labels[mask])),
            "mitigated_victim": float(np.mean(routed_pred[mask] == labels[mask]))}


def _gate_text(cell, gate):
    label = (MotionLabel(gate.affected_label).name
             if gate.affected_label >= 0 else "none")
    return (f"config_id: {cell.config_id}\n"
            f"task_gap: {_fmt(gate.task_gap)}\n"
            f"image_gap: {_fmt(gate.image_gap)}\n"
            f"sequence_gap: {_fmt(gate.sequence_gap)}\n"
            f"affected_label: {label}\n"
            f"passed: {gate.passed}\n")


def _write_record(out, record):
    tmp = out / "record.json.tmp"
    tmp.write_text(json.dumps(record, indent=2, default=float) + "\n")
    tmp.replace(out / "record.json")


def load_record(out_dir, config_id):
    path = Path(out_dir) / config_id / "record.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError:
        return None


def _run_cell_worker(args):
    cell, out_dir, mitigate, top_k = args
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    cache = TaskGateCache(out_dir)
    return run_config(cell, out_dir,
                      M.TrainConfig(rng_seed=cell.seed),
                      task_gate_cache=cache, mitigate=mitigate, top_k=top_k,
                      log=lambda *_: None)


def sweep(cells, out_dir, train_cfg=None, mitigate=True, top_k=5,
          resume=True, workers=None, log=print):
    """Run every cell, skipping the ones already recorded; returns records.

    Cells are independent; with workers > 1 they run in separate processes
    (each internally single-threaded so reruns stay deterministic).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or worker_count()
    cache = TaskGateCache(out)
    records, pending = [], []
    for cell in cells:
        existing = load_record(out, cell.config_id) if resume else None
        if existing is not None and existing.get("stage") in ("complete",
                                                              "gated_out"):
            log(f"[{cell.config_id}] cached ({existing['stage']})")
            records.append(existing)
        else:
            pending.append(cell)
    if workers > 1 and len(pending) > 1:
        # shared task-gate results must exist before cells race for them
        for cell in {(c.seq_len, c.seed): c for c in pending}.values():
            cache.get(cell, train_cfg or M.TrainConfig(rng_seed=cell.seed))
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            args = [(c, str(out), mitigate, top_k) for c in pending]
            for record in pool.map(_run_cell_worker, args):
                log(f"[{record['config_id']}] {record['stage']}")
                records.append(record)
    else:
        for cell in pending:
            cfg = train_cfg or M.TrainConfig(rng_seed=cell.seed)
            records.append(run_config(cell, out, cfg, task_gate_cache=cache,
                                      mitigate=mitigate, top_k=top_k, log=log))
    summary = aggregate(records)
    write_summary(summary, out)
    return records


def aggregate(records):
    """Mean metrics per (feature kind, method) over gate-passing cells, plus
    breakdowns by sequence length and feature-span fraction."""
    passing = [r for r in records if r.get("passed_gates")
               and "metrics" in r]
    summary = {"n_cells": len(records), "n_passing": len(passing),
               "by_kind": {}, "by_seq_len": {}, "by_span_fraction": {},
               "overall": {}, "mitigation": {}}

    def mean_rows(rows):
        out = {}
        for method in METHODS:
            agg = {}
            for key in [f"p@{k}" for k in PRECISION_KS] + ["r_prec"]:
                vals = [r["metrics"][method][key] for r in rows]
                agg[key] = float(np.mean(vals)) if vals else float("nan")
            out[method] = agg
        return out

    for kind in DEFAULT_KINDS:
        rows = [r for r in passing if r["cell"]["kind"] == kind]
        if rows:
            summary["by_kind"][kind] = {"n": len(rows), **mean_rows(rows)}
    for n in sorted({r["cell"]["seq_len"] for r in passing}):
        rows = [r for r in passing if r["cell"]["seq_len"] == n]
        summary["by_seq_len"][str(n)] = {"n": len(rows), **mean_rows(rows)}
    frac_bins = (("20-49", 0.2, 0.495), ("50-79", 0.495, 0.795),
                 ("80-100", 0.795, 1.001))
    for name, lo, hi in frac_bins:
        rows = [r for r in passing
                if lo <= r["cell"]["span"] / r["cell"]["seq_len"] < hi]
        if rows:
            summary["by_span_fraction"][name] = {"n": len(rows),
                                                 **mean_rows(rows)}
    if passing:
        summary["overall"] = mean_rows(passing)

    mits = [r for r in passing if "mitigation" in r
            and r["mitigation"].get("n_victim", 0) > 0]
    if mits:
        gains = [100 * (r["mitigation"]["mitigated_victim"]
                        - r["mitigation"]["base_victim"]) for r in mits]
        drops = [100 * (r["mitigation"]["base_overall"]
                        - r["mitigation"]["mitigated_overall"]) for r in mits]
        summary["mitigation"] = {
            "n_evaluated": len(mits),
            "n_improved_10pt": int(sum(g >= 10 for g in gains)),
            "mean_victim_gain_pts": float(np.mean(gains)),
            "max_overall_drop_pts": float(np.max(drops)),
        }
    return summary


def write_summary(summary, out_dir):
    out = Path(out_dir)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, default=float) + "\n")
    lines = ["group,value,n,method," + ",".join(
        [f"p@{k}" for k in PRECISION_KS] + ["r_prec"])]
    sections = (("kind", summary["by_kind"]),
                ("seq_len", summary["by_seq_len"]),
                ("span_fraction", summary["by_span_fraction"]),
                ("overall", {"all": {"n": summary["n_passing"],
                                     **summary.get("overall", {})}}
                 if summary.get("overall") else {}))
    for group, table in sections:
        for value, entry in table.items():
            for method in METHODS:
                if method not in entry:
                    continue
                row = entry[method]
                vals = [_fmt(row[f"p@{k}"]) for k in PRECISION_KS]
                vals.append(_fmt(row["r_prec"]))
                lines.append(f"{group},{value},{entry['n']},{method},"
                             + ",".join(vals))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")


def collect_records(out_dir):
    out = Path(out_dir)
    records = []
    for path in sorted(out.glob("*/record.json")):
        try:
            records.append(json.loads(path.read_text()))
        except json.JSONDecodeError:
            continue
    return records


def worker_count(default=1):
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, default)))
    except ValueError:
        return default
