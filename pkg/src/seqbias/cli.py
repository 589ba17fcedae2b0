"""Command-line entry points.

Subcommands: generate, train, discover, evaluate, mitigate, sweep, report.
Each validates its inputs, writes into an output directory and never mutates
inputs.  Configuration files are JSON; flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _die(msg, code=2):
    print(f"error: {msg}", file=sys.stderr)
    sys.exit(code)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        _die(f"no such file: {path}")
    except json.JSONDecodeError as err:
        _die(f"malformed JSON in {path}: {err}")


def _dataset_config(args):
    from .synth import DatasetConfig, FeatureKind, FeatureSpec, config_from_dict
    if args.config:
        cfg = config_from_dict(_load_json(args.config))
    else:
        cfg = DatasetConfig()
    overrides = {}
    if getattr(args, "feature", None):
        overrides["feature"] = (None if args.feature == "none"
                                else FeatureSpec(FeatureKind(args.feature)))
    for name in ("seq_len", "target_cramers_v", "feature_span", "rng_seed"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg


def cmd_generate(args):
    from . import io
    from .synth import generate_dataset
    cfg = _dataset_config(args)
    try:
        dataset = generate_dataset(cfg)
    except ValueError as err:
        _die(str(err))
    io.save_dataset(dataset, args.out, tensors=not args.no_tensors)
    print(f"dataset written to {args.out} "
          f"(realized V = {dataset.realized_cramers_v:.4f})")


def _load_dataset(path):
    from . import io
    if not (Path(path) / "meta.json").exists():
        _die(f"not a dataset directory: {path}")
    return io.load_dataset(path)


def cmd_train(args):
    from . import io
    from .model import TrainConfig, train
    dataset = _load_dataset(args.dataset)
    cfg = TrainConfig(rng_seed=args.seed, max_epochs=args.epochs)
    model = train(dataset, cfg, temporal=not args.control)
    io.save_model(model, args.out)
    print(f"model written to {args.out} "
          f"(best val acc = {model.best_val_acc:.4f})")


def cmd_discover(args):
    from . import discovery, io
    from . import cluster as CL
    if not Path(args.model).exists():
        _die(f"no such model checkpoint: {args.model}")
    dataset = _load_dataset(args.dataset)
    model = io.load_model(args.model)
    records = discovery.compute_records(model, dataset, "val")
    fit = CL.select_k(records.embeddings, CL.default_k_range(),
                      seed=args.seed)
    ablation = "sbs-only" if args.ablation == "sbs-only" else "full"
    report = discovery.discover(model, dataset, records=records, fit=fit,
                                seed=args.seed, ablation=ablation)
    out = io.save_report(report, records, args.out)
    io.save_centroids(fit, out)
    n = sum(len(c) for c in report.candidates.values())
    print(f"report written to {out} ({n} candidates, k={report.k}, "
          f"T={report.temperature:.3f})")


def cmd_evaluate(args):
    from . import discovery, gates, harness, io
    from . import cluster as CL
    from . import mitigation as MIT
    dataset = _load_dataset(args.dataset)
    if not Path(args.model).exists():
        _die(f"no such model checkpoint: {args.model}")
    model = io.load_model(args.model)
    records = discovery.compute_records(model, dataset, "val")
    fit = CL.select_k(records.embeddings, CL.default_k_range(), seed=args.seed)
    report = discovery.discover(model, dataset, records=records, fit=fit,
                                seed=args.seed)
    report_sbs = discovery.discover(model, dataset, records=records, fit=fit,
                                    seed=args.seed, ablation="sbs-only",
                                    temperature=report.temperature)
    gaps = gates.bias_gaps(model, dataset)
    ok = {c: g for c, g in gaps.items() if not np.isnan(min(g))}
    if not ok:
        _die("no class shows both bias gaps; nothing to evaluate")
    affected = max(ok, key=lambda c: min(ok[c]))
    flags = np.concatenate([s.feature_flags for s in dataset.split("val")])
    rows = harness.evaluate_rankings(records, report, report_sbs, affected,
                                     flags, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(harness.metrics_csv_text(args.config_id, rows))
    print(f"metrics written to {args.out}")
    if args.with_mitigation:
        prompts = (io.load_prompts(args.prompts) if args.prompts
                   else MIT.fit_prompts(model, records, report,
                                        top_k=args.top_k, seed=args.seed))
        result = MIT.evaluate_mitigation(model, prompts, fit, dataset,
                                         affected)
        print(json.dumps(result, indent=2))


def cmd_mitigate(args):
    from . import discovery, io
    from . import cluster as CL
    from . import mitigation as MIT
    dataset = _load_dataset(args.dataset)
    if not Path(args.model).exists():
        _die(f"no such model checkpoint: {args.model}")
    model = io.load_model(args.model)
    records = discovery.compute_records(model, dataset, "val")
    fit = CL.select_k(records.embeddings, CL.default_k_range(), seed=args.seed)
    report = discovery.discover(model, dataset, records=records, fit=fit,
                                seed=args.seed)
    prompts = MIT.fit_prompts(model, records, report, top_k=args.top_k,
                              seed=args.seed)
    io.save_prompts(prompts, args.out)
    print(f"{len(prompts)} cluster prompts written to {args.out}")


def cmd_sweep(args):
    from . import harness
    if args.grid == "default":
        cells = harness.default_grid()
    else:
        cells = harness.grid_from_dict(_load_json(args.grid))
    print(f"sweep over {len(cells)} cells -> {args.out}")
    records = harness.sweep(cells, args.out, mitigate=not args.no_mitigation,
                            top_k=args.top_k, resume=not args.no_resume,
                            workers=args.workers)
    n_pass = sum(1 for r in records if r.get("passed_gates"))
    print(f"done: {n_pass}/{len(records)} cells passed the gates")


def cmd_report(args):
    from . import harness
    records = harness.collect_records(args.runs)
    if not records:
        _die(f"no run records under {args.runs}")
    summary = harness.aggregate(records)
    harness.write_summary(summary, args.runs)
    print(json.dumps(summary, indent=2, default=float))


def build_parser():
    p = argparse.ArgumentParser(prog="seqbias",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a biased dataset")
    g.add_argument("--config", help="JSON dataset config")
    g.add_argument("--feature", choices=["background", "object", "attribute",
                                         "none"])
    g.add_argument("--seq-len", dest="seq_len", type=int)
    g.add_argument("--target-v", dest="target_cramers_v", type=float)
    g.add_argument("--span", dest="feature_span", type=int)
    g.add_argument("--seed", dest="rng_seed", type=int)
    g.add_argument("--no-tensors", action="store_true",
                   help="skip the rendered frame tensors")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--dataset", required=True)
    t.add_argument("--control", action="store_true",
                   help="train the single-image control instead")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("discover", help="run bias discovery")
    d.add_argument("--dataset", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--ablation", choices=["sbs-only"])
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_discover)

    e = sub.add_parser("evaluate", help="rank-quality metrics vs baselines")
    e.add_argument("--dataset", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--config-id", default="manual")
    e.add_argument("--with-mitigation", action="store_true")
    e.add_argument("--prompts", help="prompt file from `mitigate`")
    e.add_argument("--top-k", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("mitigate", help="learn per-cluster class prompts")
    m.add_argument("--dataset", required=True)
    m.add_argument("--model", required=True)
    m.add_argument("--top-k", type=int, default=5)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("sweep", help="run the evaluation grid")
    s.add_argument("--grid", default="default",
                   help="'default' or a JSON grid file")
    s.add_argument("--out", required=True)
    s.add_argument("--top-k", type=int, default=5)
    s.add_argument("--no-mitigation", action="store_true")
    s.add_argument("--no-resume", action="store_true")
    s.add_argument("--workers", type=int,
                   help="process count (default: SEQBIAS_WORKERS or 1)")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="aggregate run records into a summary")
    r.add_argument("runs")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
