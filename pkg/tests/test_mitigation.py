import numpy as np
import pytest

from seqbias import discovery as D
from seqbias import io as IO
from seqbias import mitigation as T
from seqbias.cluster import ClusterModel, select_k, default_k_range
from seqbias.discovery import discover
from seqbias.mitigation import (ClusterPrompt, evaluate_mitigation,
                                fit_prompts, learn_cluster_prompts,
                                route_predict_batch, top_clusters)
from seqbias.model import featurize_split, split_labels


@pytest.fixture(scope="module")
def pipeline(tiny_biased_model, tiny_biased_dataset, tiny_records):
    fit = select_k(tiny_records.embeddings, default_k_range(), seed=7)
    report = discover(tiny_biased_model, tiny_biased_dataset,
                      records=tiny_records, fit=fit, seed=7)
    return tiny_biased_model, tiny_biased_dataset, tiny_records, fit, report


def test_zero_context_is_identity(pipeline):
    model, dataset, records, fit, report = pipeline
    feats = featurize_split(dataset, "test", model.featurizer)
    _, base = model.forward_features(feats)
    prompt = ClusterPrompt(cluster_id=0, context=np.zeros_like(
        model.params["class_emb"]), score=1.0, member_accuracy=0.0)
    pred, logits = route_predict_batch(model, [prompt], fit, feats)
    assert np.array_equal(pred, np.argmax(base, axis=1))
    assert np.allclose(logits, base, atol=1e-9)


def test_no_prompts_identity(pipeline):
    model, dataset, records, fit, report = pipeline
    feats = featurize_split(dataset, "test", model.featurizer)
    _, base = model.forward_features(feats)
    pred, logits = route_predict_batch(model, [], fit, feats)
    assert np.array_equal(logits, base)


def test_untouched_sequences_bit_identical(pipeline):
    model, dataset, records, fit, report = pipeline
    prompts = fit_prompts(model, records, report, top_k=2, seed=7)
    if not prompts:
        pytest.skip("no prompts survived on this fixture")
    feats = featurize_split(dataset, "test", model.featurizer)
    _, base = model.forward_features(feats)
    _, routed = route_predict_batch(model, prompts, fit, feats)
    b, n, d = feats.shape
    flat = feats.reshape(b * n, d)
    static_emb = np.empty((b * n, model.params["class_emb"].shape[1]))
    for lo in range(0, b * n, 1024):
        rep = np.repeat(flat[lo:lo + 1024, None, :], model.n_frames, axis=1)
        e, _ = model.forward_features(rep)
        static_emb[lo:lo + 1024] = e
    clusters = fit.assign(static_emb).reshape(b, n)
    prompted = {p.cluster_id for p in prompts}
    untouched = ~np.any(np.isin(clusters, list(prompted)), axis=1)
    assert untouched.any()
    assert np.array_equal(routed[untouched], base[untouched])


def test_frozen_base_model(pipeline, tmp_path):
    model, dataset, records, fit, report = pipeline
    before = IO.save_model(model, tmp_path / "before.bin").read_bytes()
    prompts = fit_prompts(model, records, report, top_k=3, seed=7)
    affected = max(report.candidates, key=lambda y: len(report.candidates[y]))
    evaluate_mitigation(model, prompts, fit, dataset, affected)
    after = IO.save_model(model, tmp_path / "after.bin").read_bytes()
    assert before == after


def test_min_member_requirement(pipeline):
    model, dataset, records, fit, report = pipeline
    tiny = D.BiasCandidate(cluster_id=0, label=0, ecs=1.0, sbs=1.0, score=2.0,
                           n_cluster_images=1, n_wrong_images=1, n_seq_with=1,
                           n_seq_without=1,
                           member_rows=np.array([0]))
    assert learn_cluster_prompts(model, records, tiny) is None


def test_top_clusters_dedup_and_order(pipeline):
    *_, report = pipeline
    picked = top_clusters(report, 10)
    ids = [c.cluster_id for c in picked]
    assert len(ids) == len(set(ids))
    scores = [c.score for c in picked]
    assert scores == sorted(scores, reverse=True)


def test_guard_keeps_prompt_no_worse_than_base(pipeline):
    model, dataset, records, fit, report = pipeline
    for cand in top_clusters(report, 3):
        prompt = learn_cluster_prompts(model, records, cand, seed=7)
        if prompt is None:
            continue
        member_seqs = np.flatnonzero(
            T.sequences_with_cluster(records, cand.member_rows))
        base_acc = float(np.mean(records.preds[member_seqs]
                                 == records.labels[member_seqs]))
        assert prompt.member_accuracy >= base_acc - 1e-12


def test_route_single_sequence_matches_batch(pipeline):
    model, dataset, records, fit, report = pipeline
    prompts = fit_prompts(model, records, report, top_k=2, seed=7)
    from seqbias.synth import render_sequence
    frames = render_sequence(dataset.test[0], dataset.config)
    pred, logits = T.route_predict(model, prompts, fit, frames)
    feats = featurize_split(dataset, "test", model.featurizer)[:1]
    pred_b, logits_b = route_predict_batch(model, prompts, fit, feats)
    assert pred == int(pred_b[0])
    assert np.allclose(logits, logits_b[0], atol=1e-9)


def test_evaluate_mitigation_fields(pipeline):
    model, dataset, records, fit, report = pipeline
    prompts = fit_prompts(model, records, report, top_k=3, seed=7)
    out = evaluate_mitigation(model, prompts, fit, dataset, affected_label=3)
    assert set(out) >= {"n_overall", "n_label", "base_overall",
                        "mitigated_overall", "base_label", "mitigated_label"}
    assert out["n_overall"] >= out["n_label"]


def test_empty_prompts_mitigation_equals_base(pipeline):
    model, dataset, records, fit, report = pipeline
    out = evaluate_mitigation(model, [], fit, dataset, affected_label=3)
    assert out["n_overall"] == 0
