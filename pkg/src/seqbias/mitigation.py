"""Test-time mitigation of discovered biases via per-cluster class prompts.

For each identified bias cluster, a small set of per-class context vectors is
learned on the member sequences of the analysis split; the vectors are added
to the class embeddings (then renormalized) before cosine scoring.  The base
model stays frozen.  At test time a sequence is routed to a cluster's prompt
only when at least one of its frames falls in that cluster; everything else
gets the untouched base scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .discovery import sequences_with_cluster

PROMPT_EPOCHS = 20
PROMPT_LR = 0.02
PROMPT_BATCH = 32
MIN_MEMBER_SEQUENCES = 10


@dataclass
class ClusterPrompt:
    cluster_id: int
    context: np.ndarray      # (4, emb_dim) additive class-embedding offsets
    score: float             # discovery score, used to break routing ties
    member_accuracy: float   # accuracy on member sequences after learning


def _prompted_logits(model, seq_emb, context):
    adjusted = model.params["class_emb"] + context
    adjusted = adjusted / np.maximum(
        np.linalg.norm(adjusted, axis=1, keepdims=True), 1e-12)
    unit = seq_emb / np.maximum(
        np.linalg.norm(seq_emb, axis=1, keepdims=True), 1e-12)
    return float(model.params["logit_scale"][0]) * (unit @ adjusted.T)


# checkpoint guard: a context is only kept when overall member accuracy
# improves and no well-populated class loses more than this much
GUARD_SLACK = 0.02
GUARD_MIN_CLASS = 10


def learn_cluster_prompts(model, records, candidate, epochs=PROMPT_EPOCHS,
                          lr=PROMPT_LR, batch=PROMPT_BATCH, class_mask=None,
                          seed=0):
    """Fit context vectors on the cluster's member sequences.

    The loss is class-balanced cross-entropy: bias clusters are dominated by
    the bias-associated class, and an unweighted loss settles on keeping the
    majority tight instead of repairing the handful of cross-class victims.
    `class_mask` freezes the context rows of classes without discovery
    evidence on this cluster, which keeps their scores bit-identical and
    bounds collateral damage.

    The returned context is the best checkpoint (including the zero start):
    overall member accuracy must improve and no class with at least
    GUARD_MIN_CLASS member sequences may lose more than GUARD_SLACK.
    Clusters whose members cannot be repaired under these constraints yield
    a zero context, which routes as a no-op.
    """
    member_seqs = np.flatnonzero(
        sequences_with_cluster(records, candidate.member_rows))
    if len(member_seqs) < MIN_MEMBER_SEQUENCES:
        return None
    # under a frozen model the sequence embeddings never move, so the fit
    # runs entirely on cached embeddings
    seq_emb = records.seq_embeddings[member_seqs]
    labels = records.labels[member_seqs]
    base = model.params["class_emb"]
    n_classes = base.shape[0]
    scale = float(model.params["logit_scale"][0])
    unit = seq_emb / np.maximum(
        np.linalg.norm(seq_emb, axis=1, keepdims=True), 1e-12)

    counts = np.bincount(labels, minlength=n_classes).astype(float)
    class_w = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    if class_mask is None:
        class_mask = np.ones(n_classes, dtype=bool)
    row_mask = np.asarray(class_mask, dtype=float)[:, None]
    context = np.zeros_like(base)
    adam_m = np.zeros_like(context)
    adam_v = np.zeros_like(context)
    step = 0
    rng = np.random.default_rng((seed, candidate.cluster_id, 0xCB))

    def member_stats(ctx):
        pred = np.argmax(_prompted_logits(model, seq_emb, ctx), axis=1)
        per = {c: float(np.mean(pred[labels == c] == c))
               for c in range(n_classes) if counts[c] > 0}
        return float(np.mean(pred == labels)), per

    base_acc, base_per = member_stats(context)
    best_ctx, best_acc = context.copy(), base_acc
    guarded = [c for c in base_per if counts[c] >= GUARD_MIN_CLASS]
    for _ in range(epochs):
        order = rng.permutation(len(labels))
        for lo in range(0, len(order), batch):
            idx = order[lo:lo + batch]
            u, y = unit[idx], labels[idx]
            w = class_w[y]
            v = base + context
            vnorm = np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
            vhat = v / vnorm
            logits = scale * (u @ vhat.T)
            probs = M.softmax(logits)
            d = probs.copy()
            d[np.arange(len(y)), y] -= 1.0
            d *= (w / max(w.sum(), 1e-12))[:, None]
            # backprop through the per-class renormalization of v
            dvhat = scale * (d.T @ u)
            proj = np.sum(dvhat * vhat, axis=1, keepdims=True)
            grad = (dvhat - proj * vhat) / vnorm * row_mask
            step += 1
            adam_m = 0.9 * adam_m + 0.1 * grad
            adam_v = 0.999 * adam_v + 0.001 * grad * grad
            corr = np.sqrt(1.0 - 0.999 ** step) / (1.0 - 0.9 ** step)
            context -= lr * corr * adam_m / (np.sqrt(adam_v) + 1e-8)
        acc, per = member_stats(context)
        harmless = all(per[c] >= base_per[c] - GUARD_SLACK for c in guarded)
        if acc > best_acc and harmless:
            best_acc, best_ctx = acc, context.copy()
    return ClusterPrompt(cluster_id=candidate.cluster_id, context=best_ctx,
                         score=candidate.score, member_accuracy=best_acc)


def top_clusters(report, top_k):
    """Highest-scoring candidates across classes, one per cluster id."""
    seen, picked = set(), []
    ordered = sorted((c for cands in report.candidates.values() for c in cands),
                     key=lambda c: (-c.score, c.cluster_id, c.label))
    for cand in ordered:
        if cand.cluster_id in seen:
            continue
        seen.add(cand.cluster_id)
        picked.append(cand)
        if len(picked) >= top_k:
            break
    return picked


def fit_prompts(model, records, report, top_k=5, seed=0):
    """Prompts for the top clusters; context rows open only for classes with
    discovery evidence on the cluster."""
    classes_by_cluster = {}
    for y, cands in report.candidates.items():
        for cand in cands:
            classes_by_cluster.setdefault(cand.cluster_id, set()).add(int(y))
    n_classes = model.params["class_emb"].shape[0]
    prompts = []
    for cand in top_clusters(report, top_k):
        mask = np.zeros(n_classes, dtype=bool)
        for y in classes_by_cluster.get(cand.cluster_id, ()):
            mask[y] = True
        prompt = learn_cluster_prompts(model, records, cand, class_mask=mask,
                                       seed=seed)
        if prompt is not None:
            prompts.append(prompt)
    return prompts


def route_predict_batch(model, prompts, cluster_fit, feats):
    """Prompt-routed predictions for featurized sequences (B, n, d_enc).

    Frames are assigned to clusters through their static embeddings; a
    sequence touching any prompted cluster uses the highest-scoring matching
    prompt, all others keep the base scores bit-identically.
    """
    b, n, d = feats.shape
    emb, base_logits = model.forward_features(feats)
    if not prompts:
        return np.argmax(base_logits, axis=1), base_logits
    flat = feats.reshape(b * n, d)
    static_emb = np.empty((b * n, model.params["class_emb"].shape[1]))
    for lo in range(0, b * n, 1024):
        rep = np.repeat(flat[lo:lo + 1024, None, :], model.n_frames, axis=1)
        e, _ = model.forward_features(rep)
        static_emb[lo:lo + 1024] = e
    frame_cluster = cluster_fit.assign(static_emb).reshape(b, n)

    logits = base_logits.copy()
    by_rank = sorted(prompts, key=lambda p: -p.score)
    chosen = np.full(b, -1, dtype=int)
    for rank, prompt in enumerate(by_rank):
        hit = np.any(frame_cluster == prompt.cluster_id, axis=1) & (chosen < 0)
        chosen[hit] = rank
    for rank, prompt in enumerate(by_rank):
        rows = chosen == rank
        if rows.any():
            logits[rows] = _prompted_logits(model, emb[rows], prompt.context)
    return np.argmax(logits, axis=1), logits


def route_predict(model, prompts, cluster_fit, frames):
    """Routed prediction for a single sequence of frames."""
    feats = model.featurizer(np.asarray(frames, dtype=np.float32))
    pred, logits = route_predict_batch(model, prompts, cluster_fit, feats[None])
    return int(pred[0]), logits[0]


def evaluate_mitigation(model, prompts, cluster_fit, dataset, affected_label,
                        split="test"):
    """Base vs routed accuracy on test sequences touching prompted clusters.

    Returns the subset sizes and accuracies overall and on the affected
    class, mirroring a worst-group / average comparison.
    """
    feats = M.featurize_split(dataset, split, model.featurizer)
    labels = M.split_labels(dataset, split)
    _, base_logits = model.forward_features(feats)
    base_pred = np.argmax(base_logits, axis=1)
    routed_pred, _ = route_predict_batch(model, prompts, cluster_fit, feats)

    b, n, d = feats.shape
    flat = feats.reshape(b * n, d)
    static_emb = np.empty((b * n, model.params["class_emb"].shape[1]))
    for lo in range(0, b * n, 1024):
        rep = np.repeat(flat[lo:lo + 1024, None, :], model.n_frames, axis=1)
        e, _ = model.forward_features(rep)
        static_emb[lo:lo + 1024] = e
    frame_cluster = cluster_fit.assign(static_emb).reshape(b, n)
    prompted_ids = {p.cluster_id for p in prompts}
    touched = np.zeros(b, dtype=bool)
    for cid in prompted_ids:
        touched |= np.any(frame_cluster == cid, axis=1)

    def acc(pred, mask):
        return float(np.mean(pred[mask] == labels[mask])) if mask.any() else float("nan")

    on_label = touched & (labels == affected_label)
    return {
        "n_overall": int(touched.sum()),
        "n_label": int(on_label.sum()),
        "affected_label": int(affected_label),
        "base_overall": acc(base_pred, touched),
        "mitigated_overall": acc(routed_pred, touched),
        "base_label": acc(base_pred, on_label),
        "mitigated_label": acc(routed_pred, on_label),
    }
