"""Discovery of error-inducing static-feature biases.

Pipeline: embed every constituent image as a static sequence, cluster the
embeddings, then score each (cluster, class) pair by

  * error contribution (ECS): accuracy on label-y sequences without the
    cluster minus accuracy with it, and
  * static-bias strength (SBS): mean calibrated static-sequence probability
    assigned to the wrongly predicted label over mispredicted members.

Candidates ranked by ECS + SBS form the bias report.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import cluster as C
from .calibration import fit_temperature
from .model import featurize_split, softmax, split_labels
from .synth import MotionLabel

N_CLASSES = 4

ECS_THRESHOLD = 0.1
CHANCE_SBS = 1.0 / N_CLASSES


@dataclass
class PredictionRecords:
    """Cached model outputs for one split; everything discovery needs."""

    labels: np.ndarray           # (S,) true labels
    preds: np.ndarray            # (S,) predicted labels (dynamic sequences)
    dyn_logits: np.ndarray       # (S, 4)
    seq_embeddings: np.ndarray   # (S, emb_dim) dynamic-sequence embeddings
    static_logits: np.ndarray    # (M, 4) per image, M = S * n_frames
    embeddings: np.ndarray       # (M, emb_dim) static-sequence embeddings
    parent: np.ndarray           # (M,) sequence index of each image
    frame_idx: np.ndarray        # (M,) frame position of each image
    n_frames: int

    @property
    def n_sequences(self):
        return len(self.labels)

    @property
    def n_images(self):
        return len(self.parent)

    def image_id(self, row):
        return f"{self.parent[row]}:{self.frame_idx[row]}"


@dataclass
class BiasCandidate:
    cluster_id: int
    label: int
    ecs: float
    sbs: float
    score: float
    n_cluster_images: int
    n_wrong_images: int
    n_seq_with: int
    n_seq_without: int
    member_rows: np.ndarray = field(repr=False)   # image rows, centroid order


@dataclass
class BiasReport:
    candidates: dict             # label -> [BiasCandidate], score descending
    skipped: list                # (cluster_id, label, reason)
    k: int
    temperature: float
    silhouette: float
    ablation: str                # "full" or "sbs-only"
    provenance: dict


def compute_records(model, dataset, split="val", batch=512):
    """Run the model over a split and cache predictions plus static outputs."""
    feats = featurize_split(dataset, split, model.featurizer)
    labels = split_labels(dataset, split)
    s, n, d = feats.shape
    emb_dim = model.params["class_emb"].shape[1]
    dyn_logits = np.empty((s, N_CLASSES))
    seq_embeddings = np.empty((s, emb_dim))
    for lo in range(0, s, batch):
        e, lg = model.forward_features(feats[lo:lo + batch])
        seq_embeddings[lo:lo + batch] = e
        dyn_logits[lo:lo + batch] = lg
    preds = np.argmax(dyn_logits, axis=1)

    flat = feats.reshape(s * n, d)
    embeddings = np.empty((s * n, emb_dim))
    static_logits = np.empty((s * n, N_CLASSES))
    for lo in range(0, s * n, batch):
        rep = np.repeat(flat[lo:lo + batch, None, :], model.n_frames, axis=1)
        emb, logits = model.forward_features(rep)
        embeddings[lo:lo + batch] = emb
        static_logits[lo:lo + batch] = logits
    parent = np.repeat(np.arange(s), n)
    frame_idx = np.tile(np.arange(n), s)
    return PredictionRecords(labels=labels, preds=preds, dyn_logits=dyn_logits,
                             seq_embeddings=seq_embeddings,
                             static_logits=static_logits, embeddings=embeddings,
                             parent=parent, frame_idx=frame_idx, n_frames=n)


def sequences_with_cluster(records, member_rows):
    """Boolean mask over sequences: has >= 1 constituent image in the cluster."""
    mask = np.zeros(records.n_sequences, dtype=bool)
    mask[np.unique(records.parent[member_rows])] = True
    return mask


def compute_ecs(records, member_rows, label):
    """Accuracy on label-y sequences without the cluster minus with it."""
    has = sequences_with_cluster(records, member_rows)
    is_y = records.labels == label
    with_c = is_y & has
    without_c = is_y & ~has
    if not with_c.any():
        raise _Skip("no label sequences with cluster membership")
    if not without_c.any():
        raise _Skip("no label sequences without cluster membership")
    correct = records.preds == records.labels
    return float(np.mean(correct[without_c]) - np.mean(correct[with_c]))


def compute_sbs(records, member_rows, label, temperature):
    """Mean calibrated static probability at the wrongly predicted label,
    over cluster images whose parent sequence has the label and is wrong."""
    parents = records.parent[member_rows]
    wrong = (records.labels[parents] == label) & \
            (records.preds[parents] != records.labels[parents])
    rows = member_rows[wrong]
    if len(rows) == 0:
        raise _Skip("no mispredicted member images for label")
    probs = softmax(records.static_logits[rows] / temperature)
    picked = probs[np.arange(len(rows)), records.preds[records.parent[rows]]]
    return float(np.mean(picked))


class _Skip(Exception):
    pass


def _member_rows_by_proximity(records, fit, cluster_id):
    rows = np.flatnonzero(fit.assignment == cluster_id)
    unit = records.embeddings[rows]
    unit = unit / np.linalg.norm(unit, axis=1, keepdims=True)
    dist = 1.0 - unit @ fit.centroids[cluster_id]
    order = np.argsort(dist, kind="stable")
    return rows[order]


def discover(model, dataset, split="val", k_range=None, seed=0,
             ablation="full", records=None, fit=None, temperature=None):
    """End-to-end bias discovery over a labeled split.

    ablation="sbs-only" ranks and filters by the static-bias score alone,
    ignoring the error contribution entirely.
    """
    if ablation not in ("full", "sbs-only"):
        raise ValueError("ablation must be 'full' or 'sbs-only'")
    if records is None:
        records = compute_records(model, dataset, split)
    if fit is None:
        fit = C.select_k(records.embeddings,
                         k_range or C.default_k_range(N_CLASSES), seed=seed)
    if temperature is None:
        temperature = fit_temperature(records.dyn_logits, records.labels)

    candidates = {c: [] for c in range(N_CLASSES)}
    skipped = []
    for cid in range(fit.k):
        member_rows = _member_rows_by_proximity(records, fit, cid)
        if len(member_rows) == 0:
            continue
        seq_mask = sequences_with_cluster(records, member_rows)
        labels_here = np.unique(records.labels[seq_mask])
        for y in labels_here:
            y = int(y)
            try:
                sbs = compute_sbs(records, member_rows, y, temperature)
                if ablation == "sbs-only":
                    ecs = np.nan
                    if sbs <= CHANCE_SBS:
                        raise _Skip("sbs at or below chance")
                    score = sbs
                else:
                    ecs = compute_ecs(records, member_rows, y)
                    if ecs < ECS_THRESHOLD:
                        raise _Skip("ecs below threshold")
                    if sbs <= CHANCE_SBS:
                        raise _Skip("sbs at or below chance")
                    score = ecs + sbs
            except _Skip as why:
                skipped.append((cid, y, str(why)))
                continue
            is_y = records.labels == y
            candidates[y].append(BiasCandidate(
                cluster_id=cid, label=y,
                ecs=float(ecs), sbs=sbs, score=float(score),
                n_cluster_images=len(member_rows),
                n_wrong_images=int(np.sum(
                    (records.labels[records.parent[member_rows]] == y)
                    & (records.preds[records.parent[member_rows]] != y))),
                n_seq_with=int(np.sum(is_y & seq_mask)),
                n_seq_without=int(np.sum(is_y & ~seq_mask)),
                member_rows=member_rows))
    for y in candidates:
        candidates[y].sort(key=lambda c: (-c.score, c.cluster_id))
    provenance = {
        "split": split,
        "seed": seed,
        "ablation": ablation,
        "ranking": "all cluster members, ascending centroid distance",
        "temperature_fit": "dynamic-sequence logits on the analysis split",
    }
    return BiasReport(candidates=candidates, skipped=skipped, k=fit.k,
                      temperature=float(temperature),
                      silhouette=float(getattr(fit, "silhouette_score", np.nan)),
                      ablation=ablation, provenance=provenance)


def rank_images(report, label):
    """Ranked image rows for one class: candidates by descending score, then
    members by ascending distance to their centroid."""
    rows = []
    for cand in report.candidates.get(int(label), []):
        rows.extend(cand.member_rows.tolist())
    return rows


def report_to_dict(report, records=None):
    out = {
        "k": report.k,
        "temperature": report.temperature,
        "silhouette": report.silhouette,
        "ablation": report.ablation,
        "provenance": report.provenance,
        "skipped": [{"cluster": c, "label": int(y), "reason": r}
                    for c, y, r in report.skipped],
        "classes": {},
    }
    for y, cands in report.candidates.items():
        out["classes"][MotionLabel(y).name] = [{
            "cluster": c.cluster_id,
            "label": int(c.label),
            "ecs": None if np.isnan(c.ecs) else c.ecs,
            "sbs": c.sbs,
            "score": c.score,
            "n_cluster_images": c.n_cluster_images,
            "n_wrong_images": c.n_wrong_images,
            "n_seq_with": c.n_seq_with,
            "n_seq_without": c.n_seq_without,
            "member_image_ids": ([records.image_id(r) for r in c.member_rows]
                                 if records is not None
                                 else c.member_rows.tolist()),
        } for c in cands]
    return out


def provenance_hash(payload):
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]
