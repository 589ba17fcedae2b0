#!/usr/bin/env python3
"""Run bias discovery end to end and inspect the report.

Every validation image becomes a static sequence and is embedded; spherical
k-means groups the embeddings; each (cluster, class) pair is scored by error
contribution and calibrated static-bias strength.  The top candidate should
be the injected red feature paired with a non-south class.
"""

import numpy as np

from seqbias import cluster as CL
from seqbias.discovery import compute_records, discover, rank_images
from seqbias.metrics import precision_at_k, r_precision
from seqbias.model import TrainConfig, train
from seqbias.synth import (DatasetConfig, FeatureKind, FeatureSpec,
                           MotionLabel, generate_dataset)


def main():
    config = DatasetConfig(feature=FeatureSpec(FeatureKind.OBJECT),
                           seq_len=5, feature_span=2, target_cramers_v=0.9,
                           rng_seed=1)
    dataset = generate_dataset(config)
    model = train(dataset, TrainConfig(rng_seed=1), temporal=True)
    print(f"biased model val acc: {model.best_val_acc:.3f}")

    records = compute_records(model, dataset, "val")
    fit = CL.select_k(records.embeddings, CL.default_k_range(), seed=1)
    report = discover(model, dataset, records=records, fit=fit, seed=1)
    print(f"selected k={report.k} (silhouette {report.silhouette:.3f}), "
          f"temperature T={report.temperature:.3f}")

    flags = np.concatenate([s.feature_flags for s in dataset.val])
    for y in range(4):
        cands = report.candidates[y]
        if not cands:
            continue
        print(f"\nclass {MotionLabel(y).name}:")
        for cand in cands[:3]:
            frac = flags[cand.member_rows].mean()
            print(f"  cluster {cand.cluster_id:2d}  ECS={cand.ecs:.3f} "
                  f"SBS={cand.sbs:.3f}  score={cand.score:.3f}  "
                  f"({cand.n_cluster_images} images, "
                  f"{100 * frac:.0f}% feature-bearing)")
        ranked = rank_images(report, y)
        p10, _ = precision_at_k(ranked, flags, 10)
        rp, _ = r_precision(ranked, flags)
        print(f"  ranked list: P@10={p10:.2f}  R-Precision={rp:.2f}")


if __name__ == "__main__":
    main()
