"""Temporal sequence classifier over a frozen random featurizer.

Architecture: each frame is downsampled, flattened and passed through a fixed
random linear map.  A trainable two-layer head per sequence position maps the
frame code to 128 dims; the per-position outputs are concatenated in order and
a three-layer head produces the sequence embedding.  Class scores are scaled
cosine similarities against learnable unit-norm class embeddings.

Only the heads, class embeddings and the logit scale train; the featurizer is
frozen.  All math is plain numpy so training is deterministic for a fixed
seed on a single thread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import MotionLabel, render_sequence

D_ENC = 256
POS_HIDDEN = 256
POS_OUT = 128
SEQ_DIMS = (256, 128, 64)
POOL = 4
N_CLASSES = 4
LOGIT_SCALE_INIT = 10.0
LOGIT_SCALE_RANGE = (1.0, 100.0)

# fixed gain keeping featurizer outputs at O(1) for plain circle frames
FEATURIZER_GAIN = 12.0

# sequences rendered per chunk while featurizing, caps pixel memory
_RENDER_CHUNK = 128


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-4
    max_epochs: int = 100
    patience: int = 10
    optimizer: str = "adam"  # "adam" or "sgd" (momentum 0.9)
    momentum: float = 0.9
    rng_seed: int = 0

    def validate(self):
        if min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class Featurizer:
    """Frozen, bias-free random linear map over 4x-downsampled pixels."""

    def __init__(self, frame_size=60, d_enc=D_ENC, seed=0):
        if frame_size % POOL != 0:
            raise ValueError("frame_size must be divisible by the pool factor")
        self.frame_size = frame_size
        self.d_enc = d_enc
        self.seed = seed
        grid = frame_size // POOL
        d_in = grid * grid * 3
        rng = np.random.default_rng(seed)
        self.weight = (rng.standard_normal((d_in, d_enc)).astype(np.float32)
                       * (FEATURIZER_GAIN / np.sqrt(d_in)))

    def __call__(self, images):
        """images: (H, W, 3) or (B, H, W, 3) -> (d_enc,) or (B, d_enc)."""
        single = images.ndim == 3
        if single:
            images = images[None]
        b, h, w, _ = images.shape
        if h != self.frame_size or w != self.frame_size:
            raise ValueError(f"expected {self.frame_size}px frames, got {h}x{w}")
        g = h // POOL
        pooled = images.reshape(b, g, POOL, g, POOL, 3).mean(axis=(2, 4))
        out = pooled.reshape(b, -1).astype(np.float32) @ self.weight
        return out[0] if single else out


def _he(rng, shape):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / shape[0])).astype(np.float64)


class TemporalModel:
    """Trainable heads on top of a frozen featurizer; see module docstring."""

    def __init__(self, n_frames, featurizer, seed=0):
        if n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        self.n_frames = n_frames
        self.featurizer = featurizer
        self.seed = seed
        rng = np.random.default_rng((seed, 0xA11))
        d = featurizer.d_enc
        p = {}
        for i in range(n_frames):
            p[f"pos{i}_W1"] = _he(rng, (d, POS_HIDDEN))
            p[f"pos{i}_b1"] = np.zeros(POS_HIDDEN)
            p[f"pos{i}_W2"] = _he(rng, (POS_HIDDEN, POS_OUT))
            p[f"pos{i}_b2"] = np.zeros(POS_OUT)
        dims = (POS_OUT * n_frames,) + SEQ_DIMS
        for i in range(3):
            p[f"seq_W{i + 1}"] = _he(rng, (dims[i], dims[i + 1]))
            p[f"seq_b{i + 1}"] = np.zeros(dims[i + 1])
        emb = rng.standard_normal((N_CLASSES, SEQ_DIMS[-1]))
        p["class_emb"] = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        p["logit_scale"] = np.array([LOGIT_SCALE_INIT])
        self.params = p

    # ---- forward -----------------------------------------------------------

    def _forward(self, feats, cache=False):
        """feats: (B, n, d_enc) -> (embedding (B, 64), logits (B, 4))."""
        p = self.params
        b, n, _ = feats.shape
        if n != self.n_frames:
            raise ValueError(f"model expects {self.n_frames} frames, got {n}")
        saved = {"feats": feats} if cache else None
        outs = []
        for i in range(n):
            a1 = feats[:, i] @ p[f"pos{i}_W1"] + p[f"pos{i}_b1"]
            h1 = np.maximum(a1, 0.0)
            outs.append(h1 @ p[f"pos{i}_W2"] + p[f"pos{i}_b2"])
            if cache:
                saved[f"h1_{i}"] = h1
        z = np.concatenate(outs, axis=1)
        g1 = np.maximum(z @ p["seq_W1"] + p["seq_b1"], 0.0)
        g2 = np.maximum(g1 @ p["seq_W2"] + p["seq_b2"], 0.0)
        emb = g2 @ p["seq_W3"] + p["seq_b3"]
        norm = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
        unit = emb / norm
        cos = unit @ p["class_emb"].T
        logits = float(p["logit_scale"][0]) * cos
        if cache:
            saved.update(z=z, g1=g1, g2=g2, unit=unit, norm=norm, cos=cos)
            return emb, logits, saved
        return emb, logits

    def forward_features(self, feats):
        return self._forward(feats)

    def forward(self, frames):
        """frames: list of images or (n, H, W, 3) array, one sequence."""
        feats = self.featurizer(np.asarray(frames, dtype=np.float32))
        emb, logits = self._forward(feats[None])
        return emb[0], logits[0]

    def embed_static_batch(self, images):
        """Static-sequence embeddings: each image replicated n_frames times.

        Featurizes each image once and repeats the code across positions;
        equivalent to forward on the replicated frames up to float rounding.
        """
        f = self.featurizer(images)
        if f.ndim == 1:
            f = f[None]
        feats = np.repeat(f[:, None, :], self.n_frames, axis=1)
        return self._forward(feats)

    def embed_static(self, image):
        # exact forward on the replicated sequence, bit for bit
        emb, _ = self.forward([image] * self.n_frames)
        return emb

    def predict(self, frames):
        _, logits = self.forward(frames)
        return MotionLabel(int(np.argmax(logits))), logits

    def predict_static(self, image):
        _, logits = self.forward([image] * self.n_frames)
        return MotionLabel(int(np.argmax(logits))), logits

    # ---- backward ----------------------------------------------------------

    def _backward(self, saved, dlogits):
        """Gradients of the summed loss given d(loss)/d(logits)."""
        p = self.params
        grads = {}
        s = float(p["logit_scale"][0])
        grads["logit_scale"] = np.array([np.sum(dlogits * saved["cos"])])
        dcos = s * dlogits
        grads["class_emb"] = dcos.T @ saved["unit"]
        # through the row-wise normalization of the embedding
        dunit = dcos @ p["class_emb"]
        proj = np.sum(dunit * saved["unit"], axis=1, keepdims=True)
        demb = (dunit - proj * saved["unit"]) / saved["norm"]
        g2, g1, z = saved["g2"], saved["g1"], saved["z"]
        grads["seq_W3"] = g2.T @ demb
        grads["seq_b3"] = demb.sum(axis=0)
        dg2 = (demb @ p["seq_W3"].T) * (g2 > 0)
        grads["seq_W2"] = g1.T @ dg2
        grads["seq_b2"] = dg2.sum(axis=0)
        dg1 = (dg2 @ p["seq_W2"].T) * (g1 > 0)
        grads["seq_W1"] = z.T @ dg1
        grads["seq_b1"] = dg1.sum(axis=0)
        dz = dg1 @ p["seq_W1"].T
        feats = saved["feats"]
        for i in range(self.n_frames):
            du = dz[:, i * POS_OUT:(i + 1) * POS_OUT]
            h1 = saved[f"h1_{i}"]
            grads[f"pos{i}_W2"] = h1.T @ du
            grads[f"pos{i}_b2"] = du.sum(axis=0)
            dh1 = (du @ p[f"pos{i}_W2"].T) * (h1 > 0)
            grads[f"pos{i}_W1"] = feats[:, i].T @ dh1
            grads[f"pos{i}_b1"] = dh1.sum(axis=0)
        return grads

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params):
        self.params = {k: v.copy() for k, v in params.items()}


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    p = softmax(logits)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels],
                                            1e-300))))


def featurize_split(dataset, split, featurizer, middle_only=False):
    """(N, n, d_enc) float32 features for a split, rendering in chunks."""
    samples = dataset.split(split) if isinstance(split, str) else split
    n = dataset.config.seq_len
    chunks = []
    for lo in range(0, len(samples), _RENDER_CHUNK):
        batch = samples[lo:lo + _RENDER_CHUNK]
        frames = np.stack([render_sequence(s, dataset.config) for s in batch])
        if middle_only:
            frames = frames[:, n // 2:n // 2 + 1]
        b, k, h, w, c = frames.shape
        f = featurizer(frames.reshape(b * k, h, w, c))
        chunks.append(f.reshape(b, k, -1))
    return np.concatenate(chunks, axis=0)


def split_labels(dataset, split):
    samples = dataset.split(split) if isinstance(split, str) else split
    return np.array([int(s.label) for s in samples])


def accuracy(model, feats, labels, batch=1024):
    hits = 0
    for lo in range(0, len(labels), batch):
        _, logits = model.forward_features(feats[lo:lo + batch])
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[lo:lo + batch]))
    return hits / len(labels)


class _MomentumState:
    def __init__(self, params, momentum):
        self.momentum = momentum
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, params, grads, lr):
        for k, g in grads.items():
            self.v[k] = self.momentum * self.v[k] + g
            params[k] -= lr * self.v[k]


class _AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= lr * corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


def train(dataset, cfg=None, temporal=True, featurizer=None, verbose=False):
    """Train a model on a dataset with early stopping on validation accuracy.

    temporal=False trains the single-image control: only the middle frame of
    each sequence is used and the model has a single position head.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not dataset.train or not dataset.val:
        raise ValueError("train and val splits must be nonempty")
    featurizer = featurizer or Featurizer(dataset.config.frame_size,
                                          seed=cfg.rng_seed)
    n_frames = dataset.config.seq_len if temporal else 1
    model = TemporalModel(n_frames, featurizer, seed=cfg.rng_seed)

    mid = not temporal
    tr_x = featurize_split(dataset, "train", featurizer, middle_only=mid)
    tr_y = split_labels(dataset, "train")
    va_x = featurize_split(dataset, "val", featurizer, middle_only=mid)
    va_y = split_labels(dataset, "val")

    rng = np.random.default_rng((cfg.rng_seed, 0x7121))
    opt = (_AdamState(model.params) if cfg.optimizer == "adam"
           else _MomentumState(model.params, cfg.momentum))
    best_acc, best_params, since_best = -1.0, model.copy_params(), 0
    history = []

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(tr_y))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x, y = tr_x[idx], tr_y[idx]
            _, logits, saved = model._forward(x, cache=True)
            probs = softmax(logits)
            loss = -np.mean(np.log(np.maximum(
                probs[np.arange(len(y)), y], 1e-300)))
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}: loss={loss}, "
                    f"logit_scale={model.params['logit_scale'][0]:.3f}")
            losses.append(loss)
            dlogits = probs.copy()
            dlogits[np.arange(len(y)), y] -= 1.0
            dlogits /= len(y)
            grads = model._backward(saved, dlogits)
            opt.step(model.params, grads, cfg.learning_rate)
            emb = model.params["class_emb"]
            model.params["class_emb"] = emb / np.maximum(
                np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
            np.clip(model.params["logit_scale"], *LOGIT_SCALE_RANGE,
                    out=model.params["logit_scale"])
        val_acc = accuracy(model, va_x, va_y)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_acc": val_acc})
        if verbose:
            print(f"epoch {epoch:3d}  loss {np.mean(losses):.4f}  "
                  f"val_acc {val_acc:.4f}")
        if val_acc > best_acc:
            best_acc, best_params, since_best = val_acc, model.copy_params(), 0
        else:
            since_best += 1
        if val_acc >= 1.0 or since_best >= cfg.patience:
            break

    model.set_params(best_params)
    model.history = history
    model.best_val_acc = best_acc
    return model
