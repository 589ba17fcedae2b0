import numpy as np
import pytest

from seqbias import synth
from seqbias.synth import (BLUE, RED, DatasetConfig, FeatureKind, FeatureSpec,
                           MotionLabel, PrevalenceInfeasibleError,
                           circle_mask, cramers_v, cramers_v_from_table,
                           generate_dataset, render_frame, render_sequence,
                           sample_rect_corner, sample_trajectory,
                           solve_prevalence)


def rng(seed=0):
    return np.random.default_rng(seed)


# ---- trajectories -----------------------------------------------------------

def test_south_second_center_below_first():
    centers = sample_trajectory(MotionLabel.SOUTH, 2, rng(), step_size=4)
    assert centers[1, 0] == centers[0, 0] + 4
    assert centers[1, 1] == centers[0, 1]


def test_north_rows_strictly_decreasing():
    centers = sample_trajectory(MotionLabel.NORTH, 5, rng(1))
    rows = centers[:, 0]
    assert np.all(np.diff(rows) < 0)
    assert np.all(centers[:, 1] == centers[0, 1])


def test_east_total_displacement():
    centers = sample_trajectory(MotionLabel.EAST, 10, rng(2), step_size=4)
    assert centers[-1, 1] - centers[0, 1] == 36


@pytest.mark.parametrize("label", list(MotionLabel))
def test_trajectory_stays_inside_frame(label):
    for seed in range(20):
        centers = sample_trajectory(label, 10, rng(seed), step_size=4)
        assert centers.min() >= 5
        assert centers.max() <= 54


def test_infeasible_step_rejected():
    with pytest.raises(ValueError, match="no valid start"):
        sample_trajectory(MotionLabel.EAST, 10, rng(), step_size=10)


def test_midpoint_distribution_is_direction_free():
    # the middle frame's center must not leak the label
    mids = {}
    for label in MotionLabel:
        pts = [sample_trajectory(label, 5, rng(100 + i))[2] for i in range(300)]
        mids[label] = np.array(pts)
    lows = {label: pts.min(axis=0) for label, pts in mids.items()}
    highs = {label: pts.max(axis=0) for label, pts in mids.items()}
    for label in MotionLabel:
        assert np.all(lows[label] >= 13) and np.all(highs[label] <= 46)


# ---- rendering --------------------------------------------------------------

def test_plain_frame_blue_circle_black_corner():
    img = render_frame((30, 30))
    assert tuple(img[30, 30]) == BLUE
    assert tuple(img[0, 0]) == (0.0, 0.0, 0.0)


def test_background_feature_all_outside_red():
    center = (20, 40)
    img = render_frame(center, FeatureSpec(FeatureKind.BACKGROUND))
    disk = circle_mask(center)
    assert np.all(img[~disk] == np.array(RED, dtype=np.float32))
    assert tuple(img[center]) == BLUE


def test_attribute_feature_no_blue_pixels():
    img = render_frame((30, 30), FeatureSpec(FeatureKind.ATTRIBUTE))
    assert not np.any(img[:, :, 2] > 0)
    assert tuple(img[30, 30]) == RED


def test_object_feature_rect_avoids_circle():
    center = (30, 30)
    for seed in range(10):
        img = render_frame(center, FeatureSpec(FeatureKind.OBJECT), rng(seed))
        disk = circle_mask(center)
        red = (img[:, :, 0] == 1.0) & (img[:, :, 2] == 0.0)
        assert red.sum() == 15 * 15
        assert not np.any(red & disk)


def test_object_placement_exhaustion_errors():
    # a rectangle that large always overlaps a centered circle
    with pytest.raises(RuntimeError, match="retries"):
        sample_rect_corner((30, 30), rng(), object_size=50)


def test_flagged_frame_differs_only_in_feature_pixels():
    spec = FeatureSpec(FeatureKind.BACKGROUND)
    center = (25, 35)
    flagged = render_frame(center, spec)
    clean = render_frame(center, None)
    disk = circle_mask(center)
    assert np.array_equal(flagged[disk], clean[disk])
    assert np.all(flagged[~disk] == np.array(RED, dtype=np.float32))


# ---- prevalence solving -----------------------------------------------------

def _chi2_v(q, r, p=0.25, n=10**9):
    """Independent oracle: build the scaled contingency table and apply the
    textbook chi-square formula."""
    a, b = n * p * q, n * p * (1 - q)
    c, d = n * (1 - p) * r, n * (1 - p) * (1 - r)
    total = a + b + c + d
    chi2 = 0.0
    for row in ((a, b), (c, d)):
        for j, cell in enumerate(row):
            exp = sum(row) * (a + c if j == 0 else b + d) / total
            chi2 += (cell - exp) ** 2 / exp
    return np.sqrt(chi2 / total)


def test_perfect_association():
    assert solve_prevalence(0.999999, q_south=1.0) < 1e-3


def test_independence():
    assert solve_prevalence(0.0, q_south=0.9) == 0.9


def test_solver_matches_grid_oracle():
    r = solve_prevalence(0.9, q_south=0.95)
    grid = np.linspace(0.0, 0.95, 20001)
    vals = np.array([_chi2_v(0.95, g) for g in grid])
    r_oracle = grid[np.argmin(np.abs(vals - 0.9))]
    assert abs(r - r_oracle) < 1e-3
    assert abs(_chi2_v(0.95, r) - 0.9) < 1e-3


def test_infeasible_target_reports_max():
    with pytest.raises(PrevalenceInfeasibleError) as err:
        solve_prevalence(0.99, q_south=0.5)
    assert 0 < err.value.max_v < 0.99


# ---- dataset generation -----------------------------------------------------

def test_realized_v_matches_oracle_and_target():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.BACKGROUND),
                        seq_len=3, feature_span=1, target_cramers_v=0.95,
                        rng_seed=11)
    ds = generate_dataset(cfg)
    south = np.array([s.label == MotionLabel.SOUTH for s in ds.train])
    flagged = np.array([s.has_feature for s in ds.train])
    a = int((south & flagged).sum())
    b = int((south & ~flagged).sum())
    c = int((~south & flagged).sum())
    d = int((~south & ~flagged).sum())
    n = a + b + c + d
    chi2 = 0.0
    for cell, rsum, csum in ((a, a + b, a + c), (b, a + b, b + d),
                             (c, c + d, a + c), (d, c + d, b + d)):
        exp = rsum * csum / n
        chi2 += (cell - exp) ** 2 / exp
    oracle = np.sqrt(chi2 / n)
    assert abs(ds.realized_cramers_v - oracle) < 1e-9
    assert 0.93 <= ds.realized_cramers_v <= 0.97
    assert abs(ds.realized_cramers_v - 0.95) <= 0.02


def test_class_balance_uniform():
    cfg = DatasetConfig(feature=None, seq_len=2, n_train=400, n_val=200,
                        n_test=200, rng_seed=1)
    ds = generate_dataset(cfg)
    for split in ("train", "val", "test"):
        labels = [int(s.label) for s in ds.split(split)]
        assert np.bincount(labels, minlength=4).tolist() == [len(labels) // 4] * 4


def test_full_span_flags_every_frame():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.ATTRIBUTE), seq_len=3,
                        feature_span=3, n_train=200, n_val=100, n_test=100,
                        rng_seed=2)
    ds = generate_dataset(cfg)
    for s in ds.train:
        if s.has_feature:
            assert s.feature_flags.all()


def test_degenerate_prevalences_feature_iff_south():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.BACKGROUND), seq_len=2,
                        feature_span=1, n_train=200, n_val=100, n_test=100,
                        rng_seed=3)
    samples = synth._generate_split(cfg, "train", 200, q=1.0, r=0.0)
    for s in samples:
        assert s.has_feature == (s.label == MotionLabel.SOUTH)


def test_flags_contiguous_run():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.OBJECT), seq_len=10,
                        feature_span=4, target_cramers_v=0.9, n_train=200,
                        n_val=100, n_test=100, rng_seed=4)
    ds = generate_dataset(cfg)
    for s in ds.train + ds.val + ds.test:
        f = s.feature_flags.astype(int)
        runs = np.flatnonzero(np.diff(np.concatenate(([0], f, [0]))))
        if s.has_feature:
            assert len(runs) == 2 and runs[1] - runs[0] == 4
        else:
            assert len(runs) == 0


def test_generation_deterministic():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.OBJECT), seq_len=3,
                        feature_span=2, target_cramers_v=0.9, n_train=120,
                        n_val=60, n_test=60, rng_seed=5)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    for sa, sb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
        assert sa.label == sb.label
        assert np.array_equal(sa.centers, sb.centers)
        assert np.array_equal(sa.feature_flags, sb.feature_flags)
        assert np.array_equal(sa.rect_corners, sb.rect_corners)
        fa = render_sequence(sa, cfg)
        fb = render_sequence(sb, cfg)
        assert fa.tobytes() == fb.tobytes()


def test_unflagged_frames_contain_no_red():
    cfg = DatasetConfig(feature=FeatureSpec(FeatureKind.BACKGROUND), seq_len=3,
                        feature_span=1, target_cramers_v=0.9, n_train=80,
                        n_val=40, n_test=40, rng_seed=6)
    ds = generate_dataset(cfg)
    for s in ds.train[:40]:
        frames = render_sequence(s, cfg)
        for i, img in enumerate(frames):
            red = (img[:, :, 0] > 0).any()
            assert red == bool(s.feature_flags[i])


# ---- empirical association --------------------------------------------------

def test_cramers_v_hand_table():
    # 8 sequences: south 3 flagged + 1 clean, other 1 flagged + 3 clean
    a, b, c, d = 3, 1, 1, 3
    n = a + b + c + d
    expected = np.sqrt((n * (a * d - b * c) ** 2
                        / ((a + b) * (c + d) * (a + c) * (b + d))) / n)
    assert abs(cramers_v_from_table(a, b, c, d) - expected) < 1e-12
    assert abs(cramers_v_from_table(3, 1, 1, 3) - 0.5) < 1e-12


def test_cramers_v_perfect_and_independent():
    assert cramers_v_from_table(4, 0, 0, 12) == 1.0
    assert cramers_v_from_table(2, 2, 6, 6) == 0.0


def test_cramers_v_zero_marginal():
    assert cramers_v_from_table(0, 4, 0, 12) == 0.0


def test_cramers_v_empty_split_rejected():
    with pytest.raises(ValueError):
        cramers_v([])


def test_config_validation():
    with pytest.raises(ValueError):
        DatasetConfig(seq_len=1).validate()
    with pytest.raises(ValueError):
        DatasetConfig(feature=FeatureSpec(FeatureKind.OBJECT), seq_len=3, feature_span=4).validate()
    with pytest.raises(ValueError):
        DatasetConfig(seq_len=10, step_size=11).validate()
