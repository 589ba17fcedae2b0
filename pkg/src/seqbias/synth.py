"""Synthetic moving-circle datasets with a controllable static-feature bias.

Each sample is a short sequence of 60x60 RGB frames showing a blue circle
that moves north, south, west or east at a fixed number of pixels per frame.
A red static feature (background fill, rectangle object, or circle recolor)
can be injected into a contiguous span of frames; its prevalence is tied to
the "south" class with a strength controlled through Cramer's V.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum, IntEnum

import numpy as np

FRAME_SIZE = 60
CIRCLE_DIAMETER = 10
BLUE = (0.0, 0.0, 1.0)
RED = (1.0, 0.0, 0.0)

# index of the class the injected feature is associated with
BIAS_CLASS = 1  # MotionLabel.SOUTH

OBJECT_PLACEMENT_RETRIES = 64


class MotionLabel(IntEnum):
    NORTH = 0
    SOUTH = 1
    WEST = 2
    EAST = 3

    @property
    def caption(self):
        return "moving " + self.name.lower()


# (row, col) displacement per step; row 0 is the top border
DIRECTIONS = {
    MotionLabel.NORTH: (-1, 0),
    MotionLabel.SOUTH: (1, 0),
    MotionLabel.WEST: (0, -1),
    MotionLabel.EAST: (0, 1),
}


class FeatureKind(Enum):
    BACKGROUND = "background"
    OBJECT = "object"
    ATTRIBUTE = "attribute"


@dataclass(frozen=True)
class FeatureSpec:
    kind: FeatureKind
    color: tuple = RED
    object_size: int = 15


@dataclass(frozen=True)
class DatasetConfig:
    feature: FeatureSpec | None = None
    seq_len: int = 5
    target_cramers_v: float = 0.9
    feature_span: int = 5
    n_train: int = 2000
    n_val: int = 1000
    n_test: int = 1000
    frame_size: int = FRAME_SIZE
    circle_diameter: int = CIRCLE_DIAMETER
    step_size: int = 4
    q_south: float = 0.9
    rng_seed: int = 0

    def validate(self):
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.feature is not None and \
                not 1 <= self.feature_span <= self.seq_len:
            raise ValueError("feature_span must lie in [1, seq_len]")
        if self.feature is not None and not 0.0 < self.target_cramers_v < 1.0:
            raise ValueError("target_cramers_v must lie in (0, 1)")
        if not 0.0 < self.q_south <= 1.0:
            raise ValueError("q_south must lie in (0, 1]")
        if min(self.n_train, self.n_val, self.n_test) < 4:
            raise ValueError("split sizes must be >= 4")
        if self.feature is not None and self.feature.kind is FeatureKind.OBJECT:
            if self.feature.object_size >= self.frame_size:
                raise ValueError("object does not fit inside the frame")
        # raises if no trajectory fits
        _midpoint_bounds(self.seq_len, self.step_size, self.frame_size,
                         self.circle_diameter)


@dataclass
class SequenceSample:
    """Geometry and ground truth of one sequence; frames render on demand."""

    label: MotionLabel
    centers: np.ndarray          # (n, 2) int, (row, col) circle centers
    feature_flags: np.ndarray    # (n,) bool, per-frame ground truth
    rect_corners: np.ndarray     # (n, 2) int, top-left of object rect, -1 unused
    caption: str
    frames: np.ndarray | None = None  # set when loaded from a rendered file

    @property
    def has_feature(self):
        return bool(self.feature_flags.any())


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    config: DatasetConfig
    realized_cramers_v: float
    q_effective: float
    r_other: float

    def split(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


class PrevalenceInfeasibleError(ValueError):
    """Target association not reachable for the given conditional prevalence."""

    def __init__(self, target_v, q_south, max_v):
        self.target_v = target_v
        self.q_south = q_south
        self.max_v = max_v
        super().__init__(
            f"Cramer's V target {target_v:.4f} infeasible for "
            f"q_south={q_south:.4f}; maximum achievable is {max_v:.4f}"
        )


def _radius(diameter):
    return diameter / 2.0


def _center_bounds(frame_size, diameter):
    r = int(np.ceil(_radius(diameter)))
    return r, frame_size - 1 - r


def _midpoint_bounds(n, step, frame_size, diameter):
    """Valid range for the middle frame's center coordinate, on either axis.

    The range is shrunk symmetrically so that it is identical for all four
    directions; otherwise the position of a single frame leaks the class and
    the non-temporal control model beats chance.
    """
    lo, hi = _center_bounds(frame_size, diameter)
    mid = n // 2
    reach = max(mid, n - 1 - mid) * step
    lo, hi = lo + reach, hi - reach
    if lo > hi:
        raise ValueError(
            f"no valid start position: seq_len={n}, step={step} does not fit "
            f"in a {frame_size}px frame"
        )
    return lo, hi


def sample_trajectory(label, n, rng, step_size=4, frame_size=FRAME_SIZE,
                      circle_diameter=CIRCLE_DIAMETER):
    """Sample circle centers for one sequence, strictly monotone along the
    labeled axis and constant on the other."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = _midpoint_bounds(n, step_size, frame_size, circle_diameter)
    mid_rc = rng.integers(lo, hi + 1, size=2)
    mid = n // 2
    offsets = (np.arange(n) - mid) * step_size
    delta = np.array(DIRECTIONS[MotionLabel(label)])
    return mid_rc[None, :] + offsets[:, None] * delta[None, :]


def circle_mask(center, frame_size=FRAME_SIZE, diameter=CIRCLE_DIAMETER):
    rows = np.arange(frame_size)[:, None]
    cols = np.arange(frame_size)[None, :]
    r = _radius(diameter)
    cy, cx = center
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= r * r


def sample_rect_corner(center, rng, object_size=15, frame_size=FRAME_SIZE,
                       diameter=CIRCLE_DIAMETER):
    """Top-left corner of a feature rectangle that avoids the circle."""
    disk = circle_mask(center, frame_size, diameter)
    hi = frame_size - object_size
    for _ in range(OBJECT_PLACEMENT_RETRIES):
        top, left = rng.integers(0, hi + 1, size=2)
        if not disk[top:top + object_size, left:left + object_size].any():
            return int(top), int(left)
    raise RuntimeError(
        f"no non-overlapping rectangle placement found after "
        f"{OBJECT_PLACEMENT_RETRIES} retries"
    )


def render_frame(center, feature=None, rng=None, rect_corner=None,
                 frame_size=FRAME_SIZE, diameter=CIRCLE_DIAMETER):
    """Render one frame: blue circle on black, plus the optional feature."""
    img = np.zeros((frame_size, frame_size, 3), dtype=np.float32)
    disk = circle_mask(center, frame_size, diameter)
    circle_color = BLUE
    if feature is not None:
        if feature.kind is FeatureKind.BACKGROUND:
            img[~disk] = feature.color
        elif feature.kind is FeatureKind.OBJECT:
            if rect_corner is None:
                if rng is None:
                    raise ValueError("object placement needs rng or rect_corner")
                rect_corner = sample_rect_corner(
                    center, rng, feature.object_size, frame_size, diameter)
            top, left = rect_corner
            img[top:top + feature.object_size,
                left:left + feature.object_size] = feature.color
        elif feature.kind is FeatureKind.ATTRIBUTE:
            circle_color = feature.color
    img[disk] = circle_color
    return img


def render_sequence(sample, config):
    """Materialize all frames of a sample as an (n, H, W, 3) float32 array."""
    if sample.frames is not None:
        return sample.frames
    frames = []
    for i, center in enumerate(sample.centers):
        feat = config.feature if sample.feature_flags[i] else None
        corner = tuple(sample.rect_corners[i]) if sample.rect_corners[i][0] >= 0 else None
        frames.append(render_frame(center, feat, rect_corner=corner,
                                   frame_size=config.frame_size,
                                   diameter=config.circle_diameter))
    return np.stack(frames)


def _phi(q, r, p):
    """Association of the 2x2 (bias class x feature) table in probabilities."""
    m = p * q + (1.0 - p) * r
    if m <= 0.0 or m >= 1.0:
        return 0.0
    return np.sqrt(p * (1.0 - p)) * (q - r) / np.sqrt(m * (1.0 - m))


def max_achievable_v(q_south, p_class=0.25):
    return _phi(q_south, 0.0, p_class)


def min_q_for_target(target_v, p_class=0.25):
    """Smallest feature prevalence on the bias class that can reach target_v."""
    t2 = target_v * target_v
    return t2 / ((1.0 - p_class) + p_class * t2)


def solve_prevalence(target_v, q_south=0.9, p_class=0.25, tol=1e-3):
    """Off-class feature rate r such that the implied 2x2 table has Cramer's V
    equal to target_v.  phi is strictly decreasing in r on [0, q_south]."""
    if not 0.0 <= target_v < 1.0:
        raise ValueError("target_v must lie in [0, 1)")
    if not 0.0 < q_south <= 1.0:
        raise ValueError("q_south must lie in (0, 1]")
    if target_v == 0.0:
        return q_south  # independence
    v_max = max_achievable_v(q_south, p_class)
    if target_v > v_max:
        raise PrevalenceInfeasibleError(target_v, q_south, v_max)
    lo, hi = 0.0, q_south
    for _ in range(80):
        midpoint = 0.5 * (lo + hi)
        if _phi(q_south, midpoint, p_class) > target_v:
            lo = midpoint
        else:
            hi = midpoint
    r = 0.5 * (lo + hi)
    assert abs(_phi(q_south, r, p_class) - target_v) < tol
    return r


# headroom added to q_south when the configured value cannot reach the target;
# keeps the solved r strictly positive so the off-class feature rate is nonzero
_Q_ESCALATION_MARGIN = 0.03


def resolve_prevalences(config):
    """(q_effective, r_other) for a config, escalating q_south when needed."""
    try:
        r = solve_prevalence(config.target_cramers_v, config.q_south)
        return config.q_south, r
    except PrevalenceInfeasibleError:
        q_eff = min(1.0, min_q_for_target(config.target_cramers_v)
                    + _Q_ESCALATION_MARGIN)
        return q_eff, solve_prevalence(config.target_cramers_v, q_eff)


_SPLIT_INDEX = {"train": 0, "val": 1, "test": 2}


def _balanced_labels(count, rng):
    per = count // 4
    labels = np.repeat(np.arange(4), per)
    labels = np.concatenate([labels, np.arange(count - 4 * per)])
    rng.shuffle(labels)
    return labels


def _generate_split(config, name, count, q, r):
    seed = config.rng_seed
    split_idx = _SPLIT_INDEX[name]
    labels = _balanced_labels(count, np.random.default_rng((seed, split_idx)))
    n, v = config.seq_len, config.feature_span
    samples = []
    for i in range(count):
        rng = np.random.default_rng((seed, split_idx, i))
        label = MotionLabel(int(labels[i]))
        centers = sample_trajectory(label, n, rng, config.step_size,
                                    config.frame_size, config.circle_diameter)
        flags = np.zeros(n, dtype=bool)
        corners = np.full((n, 2), -1, dtype=int)
        if config.feature is not None:
            rate = q if label == MotionLabel.SOUTH else r
            if rng.random() < rate:
                start = int(rng.integers(0, n - v + 1))
                flags[start:start + v] = True
                if config.feature.kind is FeatureKind.OBJECT:
                    for j in range(start, start + v):
                        corners[j] = sample_rect_corner(
                            centers[j], rng, config.feature.object_size,
                            config.frame_size, config.circle_diameter)
        samples.append(SequenceSample(label=label, centers=centers,
                                      feature_flags=flags, rect_corners=corners,
                                      caption=label.caption))
    return samples


def generate_dataset(config):
    """Generate balanced train/val/test splits with the configured bias."""
    config.validate()
    if config.feature is None:
        q, r = 0.0, 0.0
    else:
        q, r = resolve_prevalences(config)
    splits = {name: _generate_split(config, name, count, q, r)
              for name, count in (("train", config.n_train),
                                  ("val", config.n_val),
                                  ("test", config.n_test))}
    realized = cramers_v(splits["train"]) if config.feature is not None else 0.0
    return Dataset(train=splits["train"], val=splits["val"],
                   test=splits["test"], config=config,
                   realized_cramers_v=realized, q_effective=q, r_other=r)


def cramers_v_from_table(a, b, c, d):
    """V = sqrt(chi2 / N) for the 2x2 table [[a, b], [c, d]]."""
    n = a + b + c + d
    row1, row2 = a + b, c + d
    col1, col2 = a + c, b + d
    denom = row1 * row2 * col1 * col2
    if n == 0 or denom == 0:
        return 0.0
    chi2 = n * (a * d - b * c) ** 2 / denom
    return float(np.sqrt(chi2 / n))


def cramers_v(samples):
    """Empirical association between the bias class and feature presence."""
    if not samples:
        raise ValueError("split is empty")
    south = np.array([s.label == MotionLabel.SOUTH for s in samples])
    flagged = np.array([s.has_feature for s in samples])
    a = int(np.sum(south & flagged))
    b = int(np.sum(south & ~flagged))
    c = int(np.sum(~south & flagged))
    d = int(np.sum(~south & ~flagged))
    return cramers_v_from_table(a, b, c, d)


def config_to_dict(config):
    d = asdict(config)
    if config.feature is not None:
        d["feature"]["kind"] = config.feature.kind.value
        d["feature"]["color"] = list(config.feature.color)
    return d


def config_from_dict(d):
    d = dict(d)
    feat = d.pop("feature", None)
    if feat is not None:
        feat = FeatureSpec(kind=FeatureKind(feat["kind"]),
                           color=tuple(feat.get("color", RED)),
                           object_size=int(feat.get("object_size", 15)))
    return DatasetConfig(feature=feat, **d)
