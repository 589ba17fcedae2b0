"""On-disk formats: rendered datasets, model checkpoints, reports, prompts.

Dataset directory layout:
    meta.json            config, realized association, prevalences
    <split>.bin          rendered frames, custom little-endian f32 tensor
    <split>.csv          sidecar: sequence_id, label, flag bitstring

Tensor file header (all little-endian uint32 unless noted):
    magic b"SEQT", version, n_sequences, n_frames, height, width, channels
followed by n_sequences * n_frames * H * W * C float32 values.

Model checkpoints are a single binary file: magic b"STNS", a JSON index of
named tensors (name, shape, offset) and a flat little-endian float32 payload,
plus a JSON config sidecar.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import synth
from .model import Featurizer, TemporalModel

TENSOR_MAGIC = b"SEQT"
TENSOR_VERSION = 1
CKPT_MAGIC = b"STNS"

_SPLITS = ("train", "val", "test")


def write_tensor(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 5:
        raise ValueError("expected (n_seq, n_frames, H, W, C) array")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<6I", TENSOR_VERSION, *array.shape))
        f.write(array.tobytes())


def read_tensor(path, mmap=True):
    with open(path, "rb") as f:
        if f.read(4) != TENSOR_MAGIC:
            raise ValueError(f"{path}: not a frame tensor file")
        version, *shape = struct.unpack("<6I", f.read(24))
        if version != TENSOR_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        offset = f.tell()
    if mmap:
        return np.memmap(path, dtype="<f4", mode="r", offset=offset,
                         shape=tuple(shape))
    data = np.fromfile(path, dtype="<f4", offset=offset)
    return data.reshape(shape)


def _flags_to_bits(flags):
    return "".join("1" if b else "0" for b in flags)


def save_dataset(dataset, out_dir, tensors=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": synth.config_to_dict(dataset.config),
        "realized_cramers_v": dataset.realized_cramers_v,
        "q_effective": dataset.q_effective,
        "r_other": dataset.r_other,
        "tensors": bool(tensors),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for name in _SPLITS:
        samples = dataset.split(name)
        lines = ["sequence_id,label,flags"]
        lines += [f"{i},{int(s.label)},{_flags_to_bits(s.feature_flags)}"
                  for i, s in enumerate(samples)]
        (out / f"{name}.csv").write_text("\n".join(lines) + "\n")
        if tensors:
            frames = np.stack([synth.render_sequence(s, dataset.config)
                               for s in samples])
            write_tensor(out / f"{name}.bin", frames)
    return out


def load_dataset(in_dir):
    """Rebuild a dataset from disk.

    When frame tensors are present they are memory-mapped and attached to the
    samples; otherwise frames re-render from the stored config, which is
    byte-identical by construction.
    """
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / "meta.json").read_text())
    config = synth.config_from_dict(meta["config"])
    dataset = synth.generate_dataset(config)
    if abs(dataset.realized_cramers_v - meta["realized_cramers_v"]) > 1e-9:
        raise ValueError(f"{in_dir}: stored metadata does not match the "
                         "regenerated dataset; file corrupt or version skew")
    for name in _SPLITS:
        tpath = in_dir / f"{name}.bin"
        if meta.get("tensors") and tpath.exists():
            frames = read_tensor(tpath)
            for i, s in enumerate(dataset.split(name)):
                s.frames = frames[i]
    return dataset


def save_model(model, path):
    path = Path(path)
    tensors = dict(model.params)
    tensors["featurizer_weight"] = model.featurizer.weight
    index, offset = [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    blob = json.dumps(index).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for entry in index:
            f.write(np.ascontiguousarray(
                tensors[entry["name"]], dtype="<f4").tobytes())
    sidecar = {
        "n_frames": model.n_frames,
        "seed": model.seed,
        "featurizer": {"frame_size": model.featurizer.frame_size,
                       "d_enc": model.featurizer.d_enc,
                       "seed": model.featurizer.seed},
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n")
    return path


def load_model(path):
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        index = json.loads(f.read(blob_len))
        payload = f.read()
    fz = Featurizer(**sidecar["featurizer"])
    model = TemporalModel(sidecar["n_frames"], fz, seed=sidecar["seed"])
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=entry["offset"]).reshape(shape)
        if entry["name"] == "featurizer_weight":
            fz.weight = arr.astype(np.float32)
        else:
            model.params[entry["name"]] = arr.astype(np.float64)
    return model


def save_report(report, records, out_dir):
    from .discovery import rank_images, report_to_dict
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report, records), indent=2) + "\n")
    for label, cands in report.candidates.items():
        if not cands:
            continue
        name = synth.MotionLabel(label).name.lower()
        lines = ["rank,image_id,cluster,score"]
        rank = 0
        for cand in cands:
            for row in cand.member_rows:
                lines.append(f"{rank},{records.image_id(row)},"
                             f"{cand.cluster_id},{cand.score:.6f}")
                rank += 1
        (out / f"ranking_{name}.csv").write_text("\n".join(lines) + "\n")
    return out


def save_prompts(prompts, path):
    path = Path(path)
    payload = [{"cluster_id": p.cluster_id, "score": p.score,
                "member_accuracy": p.member_accuracy,
                "context": p.context.tolist()} for p in prompts]
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def load_prompts(path):
    from .mitigation import ClusterPrompt
    payload = json.loads(Path(path).read_text())
    return [ClusterPrompt(cluster_id=p["cluster_id"], score=p["score"],
                          member_accuracy=p["member_accuracy"],
                          context=np.array(p["context"]))
            for p in payload]


CENTROID_MAGIC = b"SEQC"


def save_centroids(fit, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cents = np.ascontiguousarray(fit.centroids, dtype="<f4")
    with open(out / "centroids.bin", "wb") as f:
        f.write(CENTROID_MAGIC)
        f.write(struct.pack("<2I", *cents.shape))
        f.write(cents.tobytes())
    lines = ["image_row,cluster"]
    lines += [f"{i},{int(c)}" for i, c in enumerate(fit.assignment)]
    (out / "assignment.csv").write_text("\n".join(lines) + "\n")
    return out


def load_centroids(in_dir):
    from .cluster import ClusterModel
    in_dir = Path(in_dir)
    with open(in_dir / "centroids.bin", "rb") as f:
        if f.read(4) != CENTROID_MAGIC:
            raise ValueError("not a centroid file")
        k, d = struct.unpack("<2I", f.read(8))
        centroids = np.frombuffer(f.read(), dtype="<f4",
                                  count=k * d).astype(np.float64).reshape(k, d)
    centroids = centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
    rows = (in_dir / "assignment.csv").read_text().strip().splitlines()[1:]
    assignment = np.array([int(r.split(",")[1]) for r in rows])
    return ClusterModel(centroids=centroids, assignment=assignment,
                        k=centroids.shape[0], inertia=float("nan"))
