import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightarena.calib import (
    CountMismatchError, Correspondence, DegenerateConfigurationError, Homography, PointAtInfinityError,
    SingularHomographyError, calibrate_from_fiducials, estimate_homography, fiducial_grid, grid_sort,
    invert_homography, map_point, refine_dot_centers,
)
from lightarena.detect import HoughParams, detect_circles
from lightarena.image import CameraModel, ImageBuffer, render_camera_view


def random_h(rng) -> np.ndarray:
    """Well-conditioned projective map on the [0, 1000]^2 square (w stays in [0.8, 1.2])."""
    return np.array([
        [rng.uniform(0.5, 2.0), rng.uniform(-0.3, 0.3), rng.uniform(-200, 200)],
        [rng.uniform(-0.3, 0.3), rng.uniform(0.5, 2.0), rng.uniform(-200, 200)],
        [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
    ])


def apply(h, pts):
    """Independent mapping oracle in homogeneous coordinates."""
    p = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(h).T
    return p[:, :2] / p[:, 2:]


# -- map / invert ------------------------------------------------------------

@pytest.mark.parametrize("rows, p, expected", [
    ([[1, 0, 0], [0, 1, 0], [0, 0, 1]], (3, 4), (3, 4)),
    ([[1, 0, 5], [0, 1, -2], [0, 0, 1]], (3, 4), (8, 2)),
    ([[1, 0, 0], [0, 1, 0], [0.1, 0, 1]], (10, 0), (5, 0)),
])
def test_map_point_examples(rows, p, expected):
    assert map_point(Homography(np.array(rows, float)), p) == pytest.approx(expected, abs=1e-15)


def test_point_at_infinity():
    H = Homography(np.array([[1, 0, 0], [0, 1, 0], [0.1, 0, 1.0]]))
    with pytest.raises(PointAtInfinityError):
        map_point(H, (-10, 0))
    with pytest.raises(PointAtInfinityError):
        H.map([[-10, 0]])


def test_normalised_to_unit_corner():
    assert Homography(np.full((3, 3), 2.0)).h[2, 2] == 1.0


def test_invert_examples():
    assert np.array_equal(invert_homography(Homography.identity()).h, np.eye(3))
    inv = invert_homography(Homography(np.array([[1, 0, 5], [0, 1, -2], [0, 0, 1.0]])))
    np.testing.assert_allclose(inv.h, [[1, 0, -5], [0, 1, 2], [0, 0, 1]], atol=1e-15)


def test_invert_singular():
    with pytest.raises(SingularHomographyError):
        invert_homography(Homography(np.array([[1, 2, 3], [2, 4, 6], [0, 0, 1.0]])))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    H = Homography(random_h(rng))
    pts = rng.uniform(0, 1000, (100, 2))
    back = invert_homography(H).map(H.map(pts))
    assert np.max(np.abs(back - pts)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cross_ratio_preserved(seed):
    rng = np.random.default_rng(seed)
    H = Homography(random_h(rng))
    a, d = rng.uniform(0, 1000, 2), rng.uniform(0, 1000, 2)
    ts = np.sort(rng.uniform(0, 1, 4))
    pts = a + ts[:, None] * (d - a)

    def cross(p):
        s = np.hypot(*(p - p[0]).T)  # signed positions along the line are monotone here
        return ((s[2] - s[0]) * (s[3] - s[1])) / ((s[2] - s[1]) * (s[3] - s[0]))

    assert cross(H.map(pts)) == pytest.approx(cross(pts), rel=1e-6)


def test_map_agrees_with_map_point_and_text_round_trip():
    H = Homography(random_h(np.random.default_rng(3)))
    pts = np.random.default_rng(4).uniform(0, 500, (10, 2))
    np.testing.assert_array_equal(H.map(pts), np.array([map_point(H, tuple(p)) for p in pts]))
    again = Homography.from_list([float(t) for t in H.to_text().split()])
    assert np.array_equal(again.h, H.h)
    assert len(H.to_text().split()) == 9


# -- estimation --------------------------------------------------------------

def test_exact_four_points():
    h = random_h(np.random.default_rng(0))
    src = np.array([[0, 0], [1000, 0], [1000, 800], [0, 800.0]])
    H, rms = estimate_homography([Correspondence(tuple(s), tuple(d)) for s, d in zip(src, apply(h, src))])
    np.testing.assert_allclose(H.h, h / h[2, 2], rtol=1e-9, atol=1e-12)
    assert rms < 1e-9


def test_accepts_plain_pairs():
    src = [(0, 0), (1, 0), (1, 1), (0, 1)]
    H, rms = estimate_homography([(s, s) for s in src])
    np.testing.assert_allclose(H.h, np.eye(3), atol=1e-12)


def test_noisy_sixteen_points_monte_carlo():
    rms_all, max_all = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        h = random_h(rng)
        src = np.stack(np.meshgrid(np.linspace(100, 900, 4), np.linspace(100, 700, 4)), -1).reshape(-1, 2)
        dst = apply(h, src) + rng.normal(0, 0.3, (16, 2))
        H, rms = estimate_homography(list(zip(src, dst)))
        rms_all.append(rms)
        max_all.append(np.max(np.hypot(*(H.map(src) - dst).T)))
    assert np.percentile(rms_all, 95) <= 0.6
    assert np.percentile(max_all, 95) <= 1.5


def test_too_few_points():
    with pytest.raises(ValueError, match="at least 4"):
        estimate_homography([((0, 0), (0, 0))] * 3)


def test_three_collinear_sources_degenerate():
    src = [(0, 0), (1, 1), (2, 2), (0, 5)]
    with pytest.raises(DegenerateConfigurationError):
        estimate_homography([(s, (s[0] + 1, s[1])) for s in src])


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        estimate_homography([((0, 0), (0, 0)), ((1, 0), (1, 0)), ((0, 1), (0, 1)), ((1, 1), (np.nan, 1))])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 12))
def test_exact_recovery_property(seed, n):
    rng = np.random.default_rng(seed)
    h = random_h(rng)
    src = rng.uniform(0, 1000, (n, 2))
    H, rms = estimate_homography(list(zip(src, apply(h, src))))
    probe = rng.uniform(0, 1000, (50, 2))
    assert np.max(np.hypot(*(H.map(probe) - apply(h, probe)).T)) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-np.pi, np.pi))
def test_similarity_pre_transform(seed, s, theta):
    rng = np.random.default_rng(seed)
    h = random_h(rng)
    src = rng.uniform(0, 1000, (8, 2))
    dst = apply(h, src) + rng.normal(0, 0.5, (8, 2))
    H, _ = estimate_homography(list(zip(src, dst)))
    c, si = np.cos(theta), np.sin(theta)
    S = np.array([[s * c, -s * si, 30.0], [s * si, s * c, -40.0], [0, 0, 1]])
    H2, _ = estimate_homography(list(zip(apply(S, src), dst)))
    composed = H2 @ Homography(S)
    probe = rng.uniform(0, 1000, (20, 2))
    assert np.max(np.abs(composed.map(probe) - H.map(probe))) < 1e-7


# -- fiducials ---------------------------------------------------------------

W2C = np.array([[0.9, 0.05, 40.0], [-0.04, 0.85, 30.0], [2e-5, -1e-5, 1.0]])
PARAMS = HoughParams(r_min=12, r_max=26, dp=2, center_threshold=40, min_center_dist=20)


def _fiducial_frame(drop=None):
    dots = fiducial_grid(3, 3, 1024, 768)
    world = [(d, 20.0) for i, d in enumerate(dots) if i != drop]
    cam = CameraModel(width=1024, height=768, world_to_camera=W2C)
    return dots, render_camera_view(world, cam, 0)


def test_fiducial_calibration_recovers_map():
    dots, frame = _fiducial_frame()
    H, rms = calibrate_from_fiducials(dots, frame, PARAMS)
    truth = np.linalg.inv(W2C)
    probe = np.random.default_rng(0).uniform([0, 0], [1023, 767], (100, 2))
    assert np.max(np.hypot(*(H.map(probe) - apply(truth, probe)).T)) < 0.5
    assert rms < 0.5


def test_dot_refinement_beats_vote_grid_centres():
    dots, frame = _fiducial_frame()
    truth = apply(W2C, np.array(dots))
    found = detect_circles(frame, PARAMS)
    coarse = np.array([[d.cx, d.cy] for d in found])
    fine = refine_dot_centers(frame, coarse, [d.r for d in found])
    err = lambda pts: np.max([np.min(np.hypot(*(pts - t).T)) for t in truth])
    assert err(fine) < 0.05 < err(coarse)


def test_blank_frame_count_mismatch():
    with pytest.raises(CountMismatchError) as e:
        calibrate_from_fiducials(fiducial_grid(3, 3, 1024, 768),
                                 ImageBuffer(np.full((768, 1024), 40, np.uint8)), PARAMS)
    assert (e.value.detected, e.value.expected) == (0, 9)


def test_occluded_dot_count_mismatch():
    dots, frame = _fiducial_frame(drop=4)
    with pytest.raises(CountMismatchError) as e:
        calibrate_from_fiducials(dots, frame, PARAMS)
    assert (e.value.detected, e.value.expected) == (8, 9)


def test_dots_must_form_grid():
    with pytest.raises(ValueError):
        calibrate_from_fiducials([(0, 0), (10, 0), (0, 10)], ImageBuffer(np.zeros((5, 5), np.uint8)), PARAMS)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.floats(-0.6, 0.6), st.integers(0, 2**32 - 1))
def test_grid_sort_recovers_row_major_order(rows, cols, angle, seed):
    rng = np.random.default_rng(seed)
    grid = np.array([(50.0 * c, 40.0 * r) for r in range(rows) for c in range(cols)])
    c, s = np.cos(angle), np.sin(angle)
    pts = grid @ np.array([[c, -s], [s, c]]).T + rng.normal(0, 0.5, grid.shape)
    perm = rng.permutation(len(pts))
    order = grid_sort(pts[perm], rows, cols)
    assert np.array_equal(perm[order], np.arange(rows * cols))
