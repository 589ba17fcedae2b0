"""Quality gates deciding whether a configuration enters the benchmark.

Two checks mirror the synthetic-framework verification protocol:

  * task gate: on a feature-free copy of the dataset, a temporal model must
    beat the single-image control by at least 20 accuracy points, confirming
    the task genuinely requires temporal reasoning;
  * model gate: the trained biased model must show a static-classification
    accuracy gap and a sequence accuracy gap both above 20 points between
    feature-free and feature-bearing inputs on some class other than the
    bias-associated one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model as M
from .synth import BIAS_CLASS, generate_dataset, render_sequence

TASK_GAP_MIN = 20.0
BIAS_GAP_MIN = 20.0


@dataclass
class GateResult:
    task_gap: float
    image_gap: float
    sequence_gap: float
    affected_label: int
    passed: bool

    def to_dict(self):
        return {"task_gap": self.task_gap, "image_gap": self.image_gap,
                "sequence_gap": self.sequence_gap,
                "affected_label": self.affected_label, "passed": self.passed}


def _test_accuracy(model, dataset, middle_only=False):
    feats = M.featurize_split(dataset, "test", model.featurizer,
                              middle_only=middle_only)
    labels = M.split_labels(dataset, "test")
    return M.accuracy(model, feats, labels)


def gate_task(config, train_cfg=None):
    """Temporal-minus-control test accuracy, in points, on feature-free data."""
    clean_cfg = replace(config, feature=None)
    dataset = generate_dataset(clean_cfg)
    temporal = M.train(dataset, train_cfg, temporal=True)
    control = M.train(dataset, train_cfg, temporal=False)
    acc_t = _test_accuracy(temporal, dataset)
    acc_c = _test_accuracy(control, dataset, middle_only=True)
    return 100.0 * (acc_t - acc_c)


def bias_gaps(model, dataset, split="val"):
    """Per-class (image_gap, sequence_gap) in points for classes != bias class.

    image gap: static-classification accuracy on feature-free images minus on
    feature-bearing images, parents restricted to the class.  sequence gap:
    the same contrast at sequence level.  Classes with no feature-bearing
    items on either level yield NaN gaps.
    """
    samples = dataset.split(split)
    feats = M.featurize_split(dataset, split, model.featurizer)
    labels = M.split_labels(dataset, split)
    s, n, _ = feats.shape
    dyn_logits = np.empty((s, 4))
    for lo in range(0, s, 512):
        _, dyn_logits[lo:lo + 512] = model.forward_features(feats[lo:lo + 512])
    seq_pred = np.argmax(dyn_logits, axis=1)

    flat = feats.reshape(s * n, -1)
    static_pred = np.empty(s * n, dtype=int)
    for lo in range(0, s * n, 512):
        rep = np.repeat(flat[lo:lo + 512, None, :], model.n_frames, axis=1)
        _, logits = model.forward_features(rep)
        static_pred[lo:lo + 512] = np.argmax(logits, axis=1)
    parent = np.repeat(np.arange(s), n)
    flags = np.concatenate([smp.feature_flags for smp in samples])
    seq_has = np.array([smp.has_feature for smp in samples])

    gaps = {}
    for c in range(4):
        if c == BIAS_CLASS:
            continue
        img_c = labels[parent] == c
        seq_c = labels == c
        img_gap = seq_gap = np.nan
        if np.any(img_c & flags) and np.any(img_c & ~flags):
            img_gap = 100.0 * (np.mean(static_pred[img_c & ~flags] == c)
                               - np.mean(static_pred[img_c & flags] == c))
        if np.any(seq_c & seq_has) and np.any(seq_c & ~seq_has):
            seq_gap = 100.0 * (np.mean(seq_pred[seq_c & ~seq_has] == c)
                               - np.mean(seq_pred[seq_c & seq_has] == c))
        gaps[c] = (float(img_gap), float(seq_gap))
    return gaps


def gate_model(model, dataset, task_gap, split="val"):
    """Full gate decision for a trained model on a biased dataset.

    The affected class maximizes min(image_gap, sequence_gap) over classes
    other than the bias class; the gate passes when the task gap reaches 20
    points and both bias gaps exceed 20 points.
    """
    gaps = bias_gaps(model, dataset, split)
    best_label, best_pair = None, (-np.inf, -np.inf)
    for c, (ig, sg) in gaps.items():
        if np.isnan(ig) or np.isnan(sg):
            continue
        if min(ig, sg) > min(best_pair):
            best_label, best_pair = c, (ig, sg)
    if best_label is None:
        return GateResult(task_gap=task_gap, image_gap=float("nan"),
                          sequence_gap=float("nan"), affected_label=-1,
                          passed=False)
    image_gap, sequence_gap = best_pair
    passed = (task_gap >= TASK_GAP_MIN and image_gap > BIAS_GAP_MIN
              and sequence_gap > BIAS_GAP_MIN)
    return GateResult(task_gap=float(task_gap), image_gap=image_gap,
                      sequence_gap=sequence_gap, affected_label=best_label,
                      passed=bool(passed))
